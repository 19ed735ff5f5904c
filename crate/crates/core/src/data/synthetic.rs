//! Generated datasets for tests and for runs without the real ISOLET files.

use rand::Rng;

use super::isolet::{ISOLET_CLASSES, ISOLET_FEATURES};
use super::{Dataset, Split};
use crate::numerics::seeded_rng;

/// Approximately standard normal via the sum of twelve uniforms.
fn gaussian<R: Rng>(rng: &mut R) -> f32 {
    (0..12).map(|_| rng.gen::<f32>()).sum::<f32>() - 6.0
}

/// ISOLET-shaped data: 617 features, 26 classes, `train_per_class` and
/// `test_per_class` examples per class.
///
/// Every class prototype mixes the same few smooth factors, so classes never
/// seen in training still live in the subspace the training classes span.
/// Examples add a random gain and per-feature noise.
pub fn synthetic_isolet(train_per_class: usize, test_per_class: usize, seed: u64) -> (Dataset, Dataset) {
    const FACTORS: usize = 12;
    let mut rng = seeded_rng(seed);
    let basis: Vec<Vec<f32>> = (0..FACTORS)
        .map(|_| {
            let raw: Vec<f32> = (0..ISOLET_FEATURES).map(|_| gaussian(&mut rng)).collect();
            // A short moving average gives neighbouring features shared structure.
            (0..ISOLET_FEATURES)
                .map(|i| {
                    let lo = i.saturating_sub(2);
                    let hi = (i + 3).min(ISOLET_FEATURES);
                    raw[lo..hi].iter().sum::<f32>() / ((hi - lo) as f32).sqrt()
                })
                .collect()
        })
        .collect();
    let prototypes: Vec<Vec<f32>> = (0..ISOLET_CLASSES)
        .map(|_| {
            let coef: Vec<f32> = (0..FACTORS).map(|_| gaussian(&mut rng)).collect();
            (0..ISOLET_FEATURES)
                .map(|i| {
                    let mix: f32 = coef.iter().zip(&basis).map(|(a, b)| a * b[i]).sum();
                    0.5 + 0.15 * mix / (FACTORS as f32).sqrt()
                })
                .collect()
        })
        .collect();
    let mut draw = |per_class: usize, split: Split| {
        let mut feats = Vec::with_capacity(per_class * ISOLET_CLASSES * ISOLET_FEATURES);
        let mut labels = Vec::with_capacity(per_class * ISOLET_CLASSES);
        for i in 0..per_class * ISOLET_CLASSES {
            let c = i % ISOLET_CLASSES;
            let gain = 1.0 + 0.15 * gaussian(&mut rng);
            for &p in &prototypes[c] {
                let v = 0.5 + gain * (p - 0.5) + 0.3 * gaussian(&mut rng);
                feats.push(v.clamp(0.0, 1.0));
            }
            labels.push(c);
        }
        Dataset::new(feats, labels, ISOLET_FEATURES, ISOLET_CLASSES, split).expect("generated data is valid")
    };
    let train = draw(train_per_class, Split::Train);
    let test = draw(test_per_class, Split::Test);
    (train, test)
}

/// Two classes separated by a known template `t`: class 0 sits near
/// `0.1 + 0.8 t`, class 1 near its complement. `w = 2t - 1` separates them.
pub fn separable_two_class(n_features: usize, per_class: usize, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed);
    let template: Vec<bool> = (0..n_features).map(|_| rng.gen()).collect();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * per_class {
        let c = i % 2;
        for &t in &template {
            let hi = t == (c == 0);
            let centre = if hi { 0.9 } else { 0.1 };
            feats.push((centre + 0.05 * gaussian(&mut rng)).clamp(0.0, 1.0));
        }
        labels.push(c);
    }
    Dataset::new(feats, labels, n_features, 2, Split::Train).expect("generated data is valid")
}
