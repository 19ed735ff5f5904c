//! HDC baseline behaviour against brute-force references.

use metaldc::bipolar::BipolarVector;
use metaldc::data::Example;
use metaldc::hdc::{HdcConfig, HdcModel};
use metaldc::ldc::quantize_sample;
use metaldc::numerics::seeded_rng;
use rand::Rng;

fn cfg(dim: usize) -> HdcConfig {
    HdcConfig {
        dim,
        levels: 8,
        ..HdcConfig::default()
    }
}

fn examples(n: usize, c: usize, count: usize, seed: u64) -> Vec<Example> {
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|i| {
            let label = i % c;
            // Class-dependent mean so training has something to find.
            let features = (0..n)
                .map(|f| {
                    let centre = if (f + label).is_multiple_of(c) { 0.8 } else { 0.2 };
                    (centre + rng.gen_range(-0.15..0.15f32)).clamp(0.0, 1.0)
                })
                .collect();
            Example { features, label }
        })
        .collect()
}

/// Majority of `F_i ⊙ V(x_i)` computed entry by entry, ties to `+1`.
fn reference_encode(m: &HdcModel, x: &[f32]) -> BipolarVector {
    let levels = quantize_sample(x, m.levels()).unwrap();
    let sums: Vec<i32> = (0..m.dim())
        .map(|d| {
            m.feature_hvs
                .iter()
                .zip(&levels)
                .map(|(f, &l)| (f.get(d) * m.value_hvs[l].get(d)) as i32)
                .sum()
        })
        .collect();
    BipolarVector::from_ints(&sums)
}

#[test]
fn encoding_matches_reference() {
    let m = HdcModel::init(12, 8, 3, &cfg(300)).unwrap();
    let mut data = examples(12, 3, 30, 1);
    // Inputs dominated by one level go through the shared-level shortcut.
    data.push(Example { features: vec![0.0; 12], label: 0 });
    data.push(Example { features: [vec![1.0; 10], vec![0.3, 0.6]].concat(), label: 1 });
    let batch = m.encode_all(&data).unwrap();
    for (e, h) in data.iter().zip(&batch) {
        let want = reference_encode(&m, &e.features);
        assert_eq!(m.encode(&e.features).unwrap(), want);
        assert_eq!(h, &want);
    }
}

#[test]
fn item_memory_is_fixed_by_training() {
    let data = examples(10, 4, 80, 2);
    let mut m = HdcModel::init(10, 8, 4, &cfg(512)).unwrap();
    let before = m.item_memory_bytes();
    m.train(&data).unwrap();
    m.retrain(&data, 5, 1.0).unwrap();
    assert_eq!(m.item_memory_bytes(), before);
    let again = HdcModel::init(10, 8, 4, &cfg(512)).unwrap();
    assert_eq!(again.item_memory_bytes(), before);
}

#[test]
fn class_hypervectors_are_signs_of_accumulators() {
    let data = examples(10, 4, 80, 3);
    let mut m = HdcModel::init(10, 8, 4, &cfg(256)).unwrap();
    m.train(&data).unwrap();
    let check = |m: &HdcModel| {
        for (acc, hv) in m.class_accumulators.iter().zip(&m.class_hvs) {
            for (d, &a) in acc.iter().enumerate() {
                assert_eq!(hv.get(d), if a >= 0.0 { 1 } else { -1 });
            }
        }
    };
    check(&m);
    // Accumulators hold exactly the per-class sums of encodings.
    let enc = m.encode_all(&data).unwrap();
    for j in 0..4 {
        for d in 0..256 {
            let s: f64 = enc.iter().zip(&data).filter(|(_, e)| e.label == j).map(|(h, _)| h.get(d) as f64).sum();
            assert_eq!(m.class_accumulators[j][d], s);
        }
    }
    m.retrain(&data, 3, 0.5).unwrap();
    check(&m);
}

#[test]
fn separable_data_is_learned() {
    let train = examples(16, 3, 90, 4);
    let test = examples(16, 3, 60, 5);
    let mut m = HdcModel::init(16, 8, 3, &cfg(2000)).unwrap();
    m.train(&train).unwrap();
    assert!(m.accuracy(&test).unwrap() > 0.9);
}

#[test]
fn hdc1_round_trip() {
    let data = examples(6, 3, 30, 6);
    let mut m = HdcModel::init(6, 8, 3, &cfg(100)).unwrap();
    m.train(&data).unwrap();
    let bytes = m.to_bytes();
    assert_eq!(&bytes[..4], b"HDC1");
    assert_eq!(bytes.len(), m.size_report().file_bytes());
    let back = HdcModel::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.item_memory_bytes(), m.item_memory_bytes());
    assert_eq!(back.class_hvs, m.class_hvs);
    for e in &data {
        assert_eq!(back.infer(&e.features).unwrap(), m.infer(&e.features).unwrap());
    }
    let mut ldc = bytes.clone();
    ldc[..4].copy_from_slice(b"LDC1");
    assert!(HdcModel::from_bytes(&ldc).is_err());
    assert!(HdcModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}
