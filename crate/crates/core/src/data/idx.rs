//! IDX (MNIST) file format: big-endian magic, dimension counts, raw bytes.
//! Files ending in `.gz` are decompressed transparently.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, Split};
use crate::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf).map_err(io_err)?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated IDX header ({what})")))
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, "count")? as usize;
    let rows = be_u32(bytes, 8, "rows")? as usize;
    let cols = be_u32(bytes, 12, "cols")? as usize;
    let need = count * rows * cols;
    let pixels = &bytes[16..];
    if pixels.len() != need {
        return Err(Error::Format(format!(
            "IDX image payload has {} bytes, header implies {need}",
            pixels.len()
        )));
    }
    Ok((count, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, "count")? as usize;
    let labels = &bytes[8..];
    if labels.len() != count {
        return Err(Error::Format(format!(
            "IDX label payload has {} bytes, header implies {count}",
            labels.len()
        )));
    }
    Ok(labels)
}

/// Loads an MNIST image/label pair; pixels are scaled by `1/255`.
pub fn load_mnist(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let image_bytes = read_all(images)?;
    let label_bytes = read_all(labels)?;
    let (count, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(Error::Format(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(10);
    let features = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let labels = labels.iter().map(|&l| l as usize).collect();
    let ds = Dataset::new(features, labels, rows * cols, n_classes, split)?;
    if rows == cols {
        ds.with_image_side(rows)
    } else {
        Ok(ds)
    }
}

pub fn write_idx_images(out: &mut impl Write, count: usize, rows: usize, cols: usize, pixels: &[u8]) -> std::io::Result<()> {
    out.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    for d in [count, rows, cols] {
        out.write_all(&(d as u32).to_be_bytes())?;
    }
    out.write_all(pixels)
}

pub fn write_idx_labels(out: &mut impl Write, labels: &[u8]) -> std::io::Result<()> {
    out.write_all(&LABEL_MAGIC.to_be_bytes())?;
    out.write_all(&(labels.len() as u32).to_be_bytes())?;
    out.write_all(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_images() -> Vec<u8> {
        let mut buf = Vec::new();
        write_idx_images(&mut buf, 2, 2, 2, &[0, 255, 128, 1, 2, 3, 4, 5]).unwrap();
        buf
    }

    #[test]
    fn parses_header_and_payload() {
        let bytes = tiny_images();
        let (count, rows, cols, px) = parse_idx_images(&bytes).unwrap();
        assert_eq!((count, rows, cols), (2, 2, 2));
        assert_eq!(px[1], 255);
    }

    #[test]
    fn wrong_label_magic() {
        let mut buf = Vec::new();
        write_idx_labels(&mut buf, &[1, 2]).unwrap();
        buf[3] = 0x03;
        assert!(matches!(parse_idx_labels(&buf), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_images() {
        let bytes = tiny_images();
        assert!(parse_idx_images(&bytes[..bytes.len() - 1]).is_err());
        assert!(parse_idx_images(&bytes[..6]).is_err());
    }

    #[test]
    fn count_mismatch_and_scaling() {
        let dir = std::env::temp_dir().join(format!("idx-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let img = dir.join("img");
        let lab = dir.join("lab");
        std::fs::write(&img, tiny_images()).unwrap();
        let mut lbytes = Vec::new();
        write_idx_labels(&mut lbytes, &[3]).unwrap();
        std::fs::write(&lab, &lbytes).unwrap();
        assert!(matches!(load_mnist(&img, &lab, Split::Train), Err(Error::Format(_))));

        let mut lbytes = Vec::new();
        write_idx_labels(&mut lbytes, &[3, 9]).unwrap();
        std::fs::write(&lab, &lbytes).unwrap();
        let ds = load_mnist(&img, &lab, Split::Train).unwrap();
        assert_eq!(ds.features(0)[1], 1.0);
        assert_eq!(ds.features(0)[0], 0.0);
        assert_eq!(ds.n_classes(), 10);
        assert_eq!(ds.image_side(), Some(2));
        std::fs::remove_dir_all(&dir).ok();
    }
}
