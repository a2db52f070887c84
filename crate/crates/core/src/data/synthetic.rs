use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Labels, Split};
use crate::error::{Error, Result};
use crate::model::Matrix;
use crate::rng::rng_from;

/// Isotropic Gaussian blobs centred on the unit circle, split 80/20 per class.
///
/// Each class contributes `floor(0.8 * n_per_class)` training points and the
/// rest to the test split. Both splits are shuffled deterministically.
pub fn make_synthetic_classification(
    n_classes: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_classes < 2 {
        return Err(Error::Precondition("n_classes must be >= 2".into()));
    }
    if !(spread > 0.0) {
        return Err(Error::Precondition("spread must be > 0".into()));
    }
    let n_train = n_per_class * 8 / 10;
    if n_train == 0 || n_train == n_per_class {
        return Err(Error::Precondition(format!(
            "n_per_class = {n_per_class} leaves an empty split"
        )));
    }
    let mut rng = rng_from(seed);
    let noise = Normal::new(0.0, spread).expect("spread > 0");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..n_classes {
        let angle = 2.0 * PI * class as f64 / n_classes as f64;
        let (cx, cy) = (angle.cos(), angle.sin());
        for i in 0..n_per_class {
            let x = (cx + noise.sample(&mut rng)) as f32;
            let y = (cy + noise.sample(&mut rng)) as f32;
            let point = ([x, y], class as u32);
            if i < n_train {
                train.push(point);
            } else {
                test.push(point);
            }
        }
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    let build = |points: Vec<([f32; 2], u32)>, name: &str, split| {
        let inputs = points.iter().flat_map(|(p, _)| *p).collect();
        let labels = points.iter().map(|(_, c)| *c).collect();
        Dataset::new(
            name,
            split,
            vec![2],
            Matrix::from_vec(points.len(), 2, inputs)?,
            Labels::Classes(labels),
        )
    };
    Ok((
        build(train, "blobs-train", Split::Train)?,
        build(test, "blobs-test", Split::StrongTest)?,
    ))
}

/// Smooth target over `[-1, 1]^2`.
fn regression_target(x1: f64, x2: f64) -> f64 {
    0.5 * (PI * x1).sin() + 0.5 * x2 * x2
}

/// Points uniform on `[-1, 1]^2` with target
/// `0.5 sin(pi x1) + 0.5 x2^2 + N(0, noise^2)`; the first 80% form the
/// training split.
pub fn make_synthetic_regression(n: usize, noise: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(noise >= 0.0) {
        return Err(Error::Precondition("noise must be >= 0".into()));
    }
    let n_train = n * 8 / 10;
    if n_train == 0 || n_train == n {
        return Err(Error::Precondition(format!(
            "n = {n} leaves an empty split"
        )));
    }
    let mut rng = rng_from(seed);
    let mut inputs = Vec::with_capacity(n * 2);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = rng.random_range(-1.0..=1.0);
        let x2: f64 = rng.random_range(-1.0..=1.0);
        let eps = if noise > 0.0 {
            Normal::new(0.0, noise).expect("noise > 0").sample(&mut rng)
        } else {
            0.0
        };
        inputs.extend([x1 as f32, x2 as f32]);
        targets.push((regression_target(x1, x2) + eps) as f32);
    }
    let split = |lo: usize, hi: usize, name: &str, split| {
        Dataset::new(
            name,
            split,
            vec![2],
            Matrix::from_vec(hi - lo, 2, inputs[lo * 2..hi * 2].to_vec())?,
            Labels::Targets(Matrix::from_vec(hi - lo, 1, targets[lo..hi].to_vec())?),
        )
    };
    Ok((
        split(0, n_train, "regression-train", Split::Train)?,
        split(n_train, n, "regression-test", Split::StrongTest)?,
    ))
}
