//! Jittering: additive Gaussian noise on feature columns.

use serde::{Deserialize, Serialize};

use crate::dataset::StandardizationStats;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RandomSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterConfig {
    /// Noise stddev of column j is `sigma_scale * std_j`.
    pub sigma_scale: f64,
    /// Jittered replicas appended per original row.
    pub copies: usize,
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig {
            sigma_scale: 0.01,
            copies: 1,
        }
    }
}

/// `X'_ij = X_ij + eps_ij`, `eps_ij ~ N(0, sigma_j^2)`, drawn row-major.
pub fn jitter(x: &Matrix, sigma_per_column: &[f64], rng: &mut RandomSource) -> Result<Matrix> {
    if sigma_per_column.len() != x.cols() {
        return Err(Error::Shape(format!(
            "{} sigmas for {} columns",
            sigma_per_column.len(),
            x.cols()
        )));
    }
    if let Some(s) = sigma_per_column.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Parameter(format!("noise stddev must be >= 0, got {s}")));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (v, &s) in out.row_mut(r).iter_mut().zip(sigma_per_column) {
            let eps = rng.standard_normal();
            if s > 0.0 {
                *v += s * eps;
            }
        }
    }
    Ok(out)
}

/// Originals followed by `copies` jittered replicas; targets are repeated
/// unchanged. `stats` describes the columns of `x` as passed in.
pub fn augment_training_set(
    x: &Matrix,
    y: &[f64],
    config: &JitterConfig,
    stats: &StandardizationStats,
    rng: &mut RandomSource,
) -> Result<(Matrix, Vec<f64>)> {
    if x.rows() != y.len() {
        return Err(Error::Shape(format!(
            "X has {} rows but y has {} values",
            x.rows(),
            y.len()
        )));
    }
    if !(config.sigma_scale >= 0.0) {
        return Err(Error::Parameter(format!(
            "sigma_scale must be >= 0, got {}",
            config.sigma_scale
        )));
    }
    if stats.std.len() != x.cols() {
        return Err(Error::Shape("stats do not match X columns".into()));
    }
    let sigma: Vec<f64> = stats.std.iter().map(|s| config.sigma_scale * s).collect();
    let mut out_x = x.clone();
    let mut out_y = y.to_vec();
    for _ in 0..config.copies {
        out_x = out_x.vstack(&jitter(x, &sigma, rng)?)?;
        out_y.extend_from_slice(y);
    }
    Ok((out_x, out_y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> (Matrix, Vec<f64>) {
        let mut rng = RandomSource::new(5);
        let x = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.standard_normal()).collect()).unwrap();
        (x, (0..n).map(|i| i as f64).collect())
    }

    #[test]
    fn zero_sigma_is_identity() {
        let (x, _) = sample(10);
        let out = jitter(&x, &[0.0; 3], &mut RandomSource::new(1)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn negative_sigma_rejected() {
        let (x, _) = sample(4);
        assert!(matches!(
            jitter(&x, &[0.0, -1.0, 0.0], &mut RandomSource::new(1)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn unit_sigma_noise_moments() {
        let x = Matrix::zeros(100_000, 1);
        let out = jitter(&x, &[1.0], &mut RandomSource::new(3)).unwrap();
        let d = out.as_slice();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.02);
        assert!((sd - 1.0).abs() < 0.02);
    }

    #[test]
    fn same_seed_same_noise() {
        let (x, _) = sample(20);
        let a = jitter(&x, &[0.5; 3], &mut RandomSource::new(8)).unwrap();
        let b = jitter(&x, &[0.5; 3], &mut RandomSource::new(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn augmentation_layout() {
        let (x, y) = sample(100);
        let stats = StandardizationStats {
            mean: vec![0.0; 3],
            std: vec![1.0; 3],
        };
        let cfg0 = JitterConfig {
            sigma_scale: 0.1,
            copies: 0,
        };
        let (x0, y0) = augment_training_set(&x, &y, &cfg0, &stats, &mut RandomSource::new(1)).unwrap();
        assert_eq!((x0, y0.clone()), (x.clone(), y.clone()));

        let cfg = JitterConfig {
            sigma_scale: 0.1,
            copies: 2,
        };
        let (xa, ya) = augment_training_set(&x, &y, &cfg, &stats, &mut RandomSource::new(1)).unwrap();
        assert_eq!(xa.rows(), 300);
        assert_eq!(xa.select_rows(&(0..100).collect::<Vec<_>>()), x);
        assert_eq!(&ya[100..200], &y[..]);
        assert_eq!(&ya[200..], &y[..]);
        assert_ne!(xa.row(100), x.row(0));
    }

    #[test]
    fn zero_scale_gives_duplicates() {
        let (x, y) = sample(10);
        let stats = StandardizationStats {
            mean: vec![0.0; 3],
            std: vec![2.0; 3],
        };
        let cfg = JitterConfig {
            sigma_scale: 0.0,
            copies: 3,
        };
        let (xa, _) = augment_training_set(&x, &y, &cfg, &stats, &mut RandomSource::new(2)).unwrap();
        for r in 0..xa.rows() {
            assert_eq!(xa.row(r), x.row(r % 10));
        }
    }
}
