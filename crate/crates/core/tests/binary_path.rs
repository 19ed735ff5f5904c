//! Bit-exact agreement between the float model, its baked form and the
//! `LDC1` stream.

use metaldc::bipolar::BipolarVector;
use metaldc::ldc::{BakedModel, LdcConfig, LdcModel, HEADER_BYTES, LDC_MAGIC};
use metaldc::numerics::seeded_rng;
use proptest::prelude::*;

fn model(n: usize, c: usize, cfg: LdcConfig, seed: u64) -> LdcModel<f32> {
    LdcModel::init(n, c, cfg, &mut seeded_rng(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn baked_agrees_with_float_model(
        n in 1usize..20,
        c in 2usize..6,
        dim in 1usize..80,
        levels in 2usize..20,
        hidden in 1usize..6,
        seed in any::<u64>(),
        xs in prop::collection::vec(prop::collection::vec(0.0f32..=1.0, 20), 1..8),
    ) {
        let m = model(n, c, LdcConfig { dim, levels, hidden }, seed);
        let b = m.bake();
        let back = BakedModel::from_bytes(&b.to_bytes()).unwrap();
        for x in &xs {
            let x = &x[..n];
            let (_, h) = m.encode_sample(x).unwrap();
            prop_assert_eq!(&b.encode(x).unwrap(), &h);
            prop_assert_eq!(b.scores(&h).unwrap(), m.class_scores(&h).unwrap());
            prop_assert_eq!(back.predict(x).unwrap(), m.predict(x).unwrap());
        }
    }
}

#[test]
fn header_layout_is_fixed() {
    let b = model(3, 2, LdcConfig { dim: 10, levels: 4, hidden: 2 }, 7).bake();
    let bytes = b.to_bytes();
    let expected_header: [u8; HEADER_BYTES] = [
        b'L', b'D', b'C', b'1', //
        3, 0, 0, 0, // n
        10, 0, 0, 0, // D
        2, 0, 0, 0, // C
        4, 0, 0, 0, // Q
    ];
    assert_eq!(&bytes[..4], LDC_MAGIC);
    assert_eq!(bytes[..HEADER_BYTES], expected_header);
    // Four LUT rows, three feature rows, two class rows of two bytes each.
    assert_eq!(bytes.len(), HEADER_BYTES + (4 + 3 + 2) * 2);
    // Rows appear in LUT, feature, class order.
    let mut at = HEADER_BYTES;
    for row in b.value_lut.iter().chain(&b.feature_vectors).chain(&b.class_vectors) {
        assert_eq!(&bytes[at..at + 2], row.to_bytes().as_slice());
        at += 2;
    }
}

#[test]
fn row_bits_are_little_endian_per_byte() {
    // +1 at entries 0, 3 and 9 of a 10-entry row.
    let v = BipolarVector::from_fn(10, |i| matches!(i, 0 | 3 | 9));
    assert_eq!(v.to_bytes(), vec![0b0000_1001, 0b0000_0010]);
    // A set padding bit is rejected.
    assert!(BipolarVector::from_bytes(10, &[0, 0b0000_0100]).is_err());
}

#[test]
fn round_trip_is_byte_identical() {
    for (seed, dim) in [(0u64, 64usize), (1, 65), (2, 7)] {
        let b = model(11, 4, LdcConfig { dim, levels: 9, hidden: 3 }, seed).bake();
        let bytes = b.to_bytes();
        let back = BakedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(bytes.len(), b.size_report().file_bytes());
    }
}

#[test]
fn corrupt_streams_are_rejected() {
    let bytes = model(5, 3, LdcConfig { dim: 16, levels: 4, hidden: 2 }, 3).bake().to_bytes();
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(BakedModel::from_bytes(&extra).is_err());
    let mut one_class = bytes.clone();
    one_class[12] = 1;
    assert!(BakedModel::from_bytes(&one_class).is_err());
    let mut hdc = bytes.clone();
    hdc[..4].copy_from_slice(b"HDC1");
    assert!(BakedModel::from_bytes(&hdc).is_err());
    assert!(BakedModel::from_bytes(&[]).is_err());
}
