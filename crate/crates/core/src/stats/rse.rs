use serde::{Deserialize, Serialize};

use super::{mean, sample_variance, EvaluationSample};

pub const DEFAULT_RSE_THRESHOLD: f64 = 0.05;

/// Mean, spread and relative standard error of a metric sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub mu: f64,
    pub sigma: f64,
    pub se: f64,
    /// `se / mu`; `None` when the mean is zero.
    pub rse: Option<f64>,
    pub n_instances: usize,
    pub stable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// RSE after each batch of instances, when built incrementally.
    #[serde(default)]
    pub trace: Vec<Option<f64>>,
}

/// `SE = σ / sqrt(n)`, `RSE = SE / μ` with Bessel-corrected `σ`.
pub fn rse_of(values: &[f64], threshold: f64) -> StabilityReport {
    let n = values.len();
    let mu = if n == 0 { 0.0 } else { mean(values) };
    let sigma = sample_variance(values).sqrt();
    let se = if n == 0 {
        0.0
    } else {
        sigma / (n as f64).sqrt()
    };
    let (rse, stable, reason) = if n < 2 {
        (None, false, Some("fewer than two values".to_string()))
    } else if mu == 0.0 {
        (None, false, Some("zero-mean metric".to_string()))
    } else {
        let r = se / mu.abs();
        (Some(r), r < threshold, None)
    };
    StabilityReport {
        mu,
        sigma,
        se,
        rse,
        n_instances: n,
        stable,
        reason,
        trace: vec![rse],
    }
}

pub fn rse(sample: &EvaluationSample, threshold: f64) -> StabilityReport {
    rse_of(&sample.values, threshold)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn constant_sample_is_stable() {
        let r = rse_of(&[0.9; 20], DEFAULT_RSE_THRESHOLD);
        assert_eq!((r.sigma, r.se, r.rse), (0.0, 0.0, Some(0.0)));
        assert!(r.stable);
    }

    #[test]
    fn hand_computed_case() {
        // mu = 0.9, sigma = sqrt(0.04 / 3), se = sigma / 2
        let r = rse_of(&[0.8, 1.0, 0.8, 1.0], DEFAULT_RSE_THRESHOLD);
        let sigma = (0.04f64 / 3.0).sqrt();
        assert!((r.mu - 0.9).abs() < 1e-12);
        assert!((r.sigma - sigma).abs() < 1e-12);
        assert!((r.se - sigma / 2.0).abs() < 1e-12);
        assert!((r.rse.unwrap() - 0.06415).abs() < 1e-5);
        assert!(!r.stable);
    }

    #[test]
    fn zero_mean_is_unstable_with_reason() {
        let r = rse_of(&[0.0, 0.0, 0.0], DEFAULT_RSE_THRESHOLD);
        assert_eq!(r.rse, None);
        assert!(!r.stable);
        assert_eq!(r.reason.as_deref(), Some("zero-mean metric"));
    }

    proptest! {
        #[test]
        fn scale_invariant(values in prop::collection::vec(0.05f64..1.0, 2..60), c in 0.1f64..10.0) {
            let a = rse_of(&values, 0.05).rse.unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            let b = rse_of(&scaled, 0.05).rse.unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
