use serde::Serialize;

use super::{argmax, quantize_sample, LdcModel};
use crate::bipolar::{packed_len, BipolarVector, BundleAccumulator};
use crate::data::Example;
use crate::numerics::Scalar;
use crate::{Error, Result};

pub const LDC_MAGIC: &[u8; 4] = b"LDC1";
/// Magic plus four `u32` fields.
pub const HEADER_BYTES: usize = 20;

/// Inference-only LDC: the value lookup table and packed binary layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BakedModel {
    pub value_lut: Vec<BipolarVector>,
    pub feature_vectors: Vec<BipolarVector>,
    pub class_vectors: Vec<BipolarVector>,
    dim: usize,
}

/// Byte breakdown of a packed model file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SizeReport {
    pub header_bytes: usize,
    pub lut_bytes: usize,
    pub feature_bytes: usize,
    pub class_bytes: usize,
}

impl SizeReport {
    pub fn new(header: usize, lut_rows: usize, n: usize, c: usize, dim: usize) -> Self {
        let row = packed_len(dim);
        Self {
            header_bytes: header,
            lut_bytes: lut_rows * row,
            feature_bytes: n * row,
            class_bytes: c * row,
        }
    }

    /// Feature and class bits only; the LUT counts as encoder memory.
    pub fn feature_class_bytes(&self) -> usize {
        self.feature_bytes + self.class_bytes
    }

    pub fn payload_bytes(&self) -> usize {
        self.lut_bytes + self.feature_bytes + self.class_bytes
    }

    pub fn file_bytes(&self) -> usize {
        self.header_bytes + self.payload_bytes()
    }
}

pub(crate) fn write_envelope(magic: &[u8; 4], fields: [usize; 4], rows: &[&[BipolarVector]]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    for f in fields {
        out.extend_from_slice(&(f as u32).to_le_bytes());
    }
    for block in rows {
        for r in *block {
            r.write_bytes(&mut out);
        }
    }
    out
}

/// Parses the shared envelope: magic, four `u32` fields, then `counts[k]`
/// packed rows of `dim` bits for each block `k`.
pub(crate) fn read_envelope(
    magic: &[u8; 4],
    bytes: &[u8],
    dim_of: impl Fn([usize; 4]) -> usize,
    counts_of: impl Fn([usize; 4]) -> [usize; 3],
) -> Result<([usize; 4], [Vec<BipolarVector>; 3])> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Format(format!("stream of {} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut fields = [0usize; 4];
    for (k, f) in fields.iter_mut().enumerate() {
        let at = 4 + 4 * k;
        *f = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    }
    let dim = dim_of(fields);
    if dim == 0 {
        return Err(Error::Format("zero vector dimension".into()));
    }
    let counts = counts_of(fields);
    let row = packed_len(dim);
    let expected = counts
        .iter()
        .try_fold(HEADER_BYTES, |acc, &c| c.checked_mul(row).and_then(|b| b.checked_add(acc)))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "stream has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut at = HEADER_BYTES;
    let mut take = |count: usize| -> Result<Vec<BipolarVector>> {
        (0..count)
            .map(|_| {
                let v = BipolarVector::from_bytes(dim, &bytes[at..at + row]);
                at += row;
                v
            })
            .collect()
    };
    let blocks = [take(counts[0])?, take(counts[1])?, take(counts[2])?];
    Ok((fields, blocks))
}

impl BakedModel {
    pub fn from_model<S: Scalar>(model: &LdcModel<S>) -> Self {
        let view = model.encoder_view();
        let d = model.dim();
        let value_lut = view
            .value_signs
            .chunks(d)
            .map(|r| BipolarVector::from_signs(r).expect("signs are ±1"))
            .collect();
        Self {
            value_lut,
            feature_vectors: model.feature_layer.binarized(),
            class_vectors: model.class_layer.class_vectors(),
            dim: d,
        }
    }

    pub fn new(
        value_lut: Vec<BipolarVector>,
        feature_vectors: Vec<BipolarVector>,
        class_vectors: Vec<BipolarVector>,
    ) -> Result<Self> {
        let dim = value_lut.first().map(BipolarVector::dim).unwrap_or(0);
        if value_lut.len() < 2 || feature_vectors.is_empty() || class_vectors.len() < 2 || dim == 0 {
            return Err(Error::Input("baked model needs Q ≥ 2, n ≥ 1, C ≥ 2 and D ≥ 1".into()));
        }
        for v in value_lut.iter().chain(&feature_vectors).chain(&class_vectors) {
            if v.dim() != dim {
                return Err(Error::dim("baked model rows", dim, v.dim()));
            }
        }
        Ok(Self {
            value_lut,
            feature_vectors,
            class_vectors,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.value_lut.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_vectors.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_vectors.len()
    }

    /// Binary encoding: LUT lookup, XNOR binding, lane-counter bundling, sign.
    pub fn encode(&self, x: &[f32]) -> Result<BipolarVector> {
        let mut acc = BundleAccumulator::new(self.dim);
        self.encode_with(x, &mut acc)
    }

    fn encode_with(&self, x: &[f32], acc: &mut BundleAccumulator) -> Result<BipolarVector> {
        if x.len() != self.n_features() {
            return Err(Error::dim("input features", self.n_features(), x.len()));
        }
        let levels = quantize_sample(x, self.levels())?;
        acc.reset();
        for (f, &l) in self.feature_vectors.iter().zip(&levels) {
            acc.add_bound(f, &self.value_lut[l]);
        }
        Ok(acc.sign())
    }

    pub fn scores(&self, h: &BipolarVector) -> Result<Vec<i32>> {
        self.class_vectors.iter().map(|c| c.dot(h)).collect()
    }

    pub fn predict(&self, x: &[f32]) -> Result<usize> {
        let h = self.encode(x)?;
        Ok(argmax(&self.scores(&h)?))
    }

    pub fn predict_batch(&self, xs: &[Example]) -> Result<Vec<usize>> {
        let mut acc = BundleAccumulator::new(self.dim);
        xs.iter()
            .map(|e| {
                let h = self.encode_with(&e.features, &mut acc)?;
                Ok(argmax(&self.scores(&h)?))
            })
            .collect()
    }

    /// Fraction of examples classified correctly; 0 for an empty slice.
    pub fn accuracy(&self, xs: &[Example]) -> Result<f64> {
        if xs.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict_batch(xs)?;
        let hits = preds.iter().zip(xs).filter(|(p, e)| **p == e.label).count();
        Ok(hits as f64 / xs.len() as f64)
    }

    pub fn size_report(&self) -> SizeReport {
        SizeReport::new(HEADER_BYTES, self.levels(), self.n_features(), self.n_classes(), self.dim)
    }

    /// `LDC1` stream: magic, `u32` LE `n, D, C, Q`, then LUT, feature and
    /// class rows, each padded to a byte boundary.
    pub fn to_bytes(&self) -> Vec<u8> {
        write_envelope(
            LDC_MAGIC,
            [self.n_features(), self.dim, self.n_classes(), self.levels()],
            &[&self.value_lut, &self.feature_vectors, &self.class_vectors],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (fields, [lut, feats, classes]) = read_envelope(LDC_MAGIC, bytes, |f| f[1], |f| [f[3], f[0], f[2]])?;
        let [n, _, c, q] = fields;
        if n == 0 || c < 2 || q < 2 {
            return Err(Error::Format(format!("inconsistent header n={n} C={c} Q={q}")));
        }
        Self::new(lut, feats, classes).map_err(|e| Error::Format(e.to_string()))
    }
}
