//! Dense, batch-normalization and dropout layers.

use serde::{Deserialize, Serialize};

use super::params::BatchNormParams;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RandomSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// `activation(W x + b)`
pub fn dense_forward(x: &[f64], w: &Matrix, b: &[f64], activation: Activation) -> Result<Vec<f64>> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::Shape(format!(
            "dense layer {}x{} with bias {} applied to input {}",
            w.rows(),
            w.cols(),
            b.len(),
            x.len()
        )));
    }
    let mut out = b.to_vec();
    w.matvec_acc(x, &mut out);
    if activation == Activation::Relu {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(out)
}

/// Row-wise affine map of a batch: `out[s] = W a[s] + b`.
pub(crate) fn dense_batch(a: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), w.rows());
    for s in 0..a.rows() {
        let row = out.row_mut(s);
        row.copy_from_slice(b);
        w.matvec_acc(a.row(s), row);
    }
    out
}

/// Normalized activations and the inverse std used, for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct BatchNormCache {
    pub x_hat: Matrix,
    pub inv_std: Vec<f64>,
    /// Statistics used for normalizing (batch mean and biased variance in
    /// train mode).
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Output of a batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormOutput {
    pub y: Matrix,
    /// Updated running mean/variance (train mode only).
    pub running: Option<(Vec<f64>, Vec<f64>)>,
    pub(crate) cache: BatchNormCache,
}

/// Train mode normalizes with batch statistics (biased variance) and returns
/// running statistics blended as `momentum·old + (1−momentum)·batch`, using
/// the unbiased batch variance. Infer mode normalizes with the running
/// statistics.
pub fn batchnorm_forward(
    x: &Matrix,
    bn: &BatchNormParams,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<BatchNormOutput> {
    let (b, w) = x.shape();
    if bn.gamma.len() != w || bn.beta.len() != w {
        return Err(Error::Shape(format!(
            "batch norm over {} features applied to width {w}",
            bn.gamma.len()
        )));
    }
    let (mean, var, running) = match mode {
        Mode::Train => {
            if b < 2 {
                return Err(Error::BatchSize(b));
            }
            let n = b as f64;
            let mut mean = vec![0.0; w];
            for row in x.iter_rows() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; w];
            for row in x.iter_rows() {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n);
            let rm = bn
                .running_mean
                .iter()
                .zip(&mean)
                .map(|(r, m)| momentum * r + (1.0 - momentum) * m)
                .collect();
            let rv = bn
                .running_var
                .iter()
                .zip(&var)
                .map(|(r, v)| momentum * r + (1.0 - momentum) * v * n / (n - 1.0))
                .collect();
            (mean, var, Some((rm, rv)))
        }
        Mode::Infer => (bn.running_mean.clone(), bn.running_var.clone(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = x.clone();
    let mut y = x.clone();
    for s in 0..b {
        let xh = x_hat.row_mut(s);
        for j in 0..w {
            xh[j] = (xh[j] - mean[j]) * inv_std[j];
        }
        let yr = y.row_mut(s);
        for j in 0..w {
            yr[j] = bn.gamma[j] * x_hat[(s, j)] + bn.beta[j];
        }
    }
    Ok(BatchNormOutput {
        y,
        running,
        cache: BatchNormCache { x_hat, inv_std, mean, var },
    })
}

/// Batch-norm backward. Returns `dX`; adds into `d_gamma`, `d_beta`.
/// With `frozen` the normalizing statistics are treated as constants.
pub(crate) fn batchnorm_backward(
    dy: &Matrix,
    gamma: &[f64],
    cache: &BatchNormCache,
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
    frozen: bool,
) -> Matrix {
    let (b, w) = dy.shape();
    let n = b as f64;
    if frozen {
        let mut dx = dy.clone();
        for s in 0..b {
            for j in 0..w {
                d_gamma[j] += dy[(s, j)] * cache.x_hat[(s, j)];
                d_beta[j] += dy[(s, j)];
                dx[(s, j)] *= gamma[j] * cache.inv_std[j];
            }
        }
        return dx;
    }
    let mut sum_dxh = vec![0.0; w];
    let mut sum_dxh_xh = vec![0.0; w];
    for s in 0..b {
        for j in 0..w {
            let g = dy[(s, j)];
            let xh = cache.x_hat[(s, j)];
            d_gamma[j] += g * xh;
            d_beta[j] += g;
            let dxh = g * gamma[j];
            sum_dxh[j] += dxh;
            sum_dxh_xh[j] += dxh * xh;
        }
    }
    let mut dx = Matrix::zeros(b, w);
    for s in 0..b {
        for j in 0..w {
            let dxh = dy[(s, j)] * gamma[j];
            dx[(s, j)] = cache.inv_std[j] / n
                * (n * dxh - sum_dxh[j] - cache.x_hat[(s, j)] * sum_dxh_xh[j]);
        }
    }
    // the exact gradient sums to zero over the batch (shift invariance);
    // re-centering removes the rounding residue
    for j in 0..w {
        let m = (0..b).map(|s| dx[(s, j)]).sum::<f64>() / n;
        for s in 0..b {
            dx[(s, j)] -= m;
        }
    }
    dx
}

/// Inverted dropout. The returned mask holds `0` or `1/(1−rate)` and is what
/// multiplies the input; infer mode returns the input and an all-ones mask.
pub fn dropout_forward(
    x: &[f64],
    rate: f64,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    let mask = dropout_mask(x.len(), rate, mode, rng);
    let out = x.iter().zip(&mask).map(|(a, m)| a * m).collect();
    Ok((out, mask))
}

pub(crate) fn dropout_mask(n: usize, rate: f64, mode: Mode, rng: &mut RandomSource) -> Vec<f64> {
    if mode == Mode::Infer || rate == 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps() {
        let out = dense_forward(&[-1.0, 0.0, 2.0], &Matrix::identity(3), &[0.0; 3], Activation::Relu).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 2.0]);
        let lin = dense_forward(&[-1.0, 0.5], &Matrix::identity(2), &[0.0; 2], Activation::Linear).unwrap();
        assert_eq!(lin, vec![-1.0, 0.5]);
    }

    #[test]
    fn dense_hand_computed() {
        let w = Matrix::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.25, -0.5]]).unwrap();
        let out = dense_forward(&[2.0, 4.0, 1.0], &w, &[0.1, -0.2], Activation::Linear).unwrap();
        assert_eq!(out, vec![0.5 * 2.0 - 4.0 + 2.0 + 0.1, 3.0 + 1.0 - 0.5 - 0.2]);
        assert!(dense_forward(&[1.0], &w, &[0.0; 2], Activation::Linear).is_err());
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let x = Matrix::from_rows(&[[1.0, 10.0], [2.0, -3.0], [7.0, 0.5], [-4.0, 2.0]]).unwrap();
        let bn = BatchNormParams::new(2);
        let out = batchnorm_forward(&x, &bn, Mode::Train, 0.9, 1e-5).unwrap();
        for j in 0..2 {
            let col = out.y.column(j);
            let m = col.iter().sum::<f64>() / 4.0;
            let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-6, "var {v}");
        }
        assert!(out.running.is_some());
    }

    #[test]
    fn batchnorm_constant_column() {
        let x = Matrix::from_rows(&[[3.0], [3.0], [3.0]]).unwrap();
        let mut bn = BatchNormParams::new(1);
        bn.beta[0] = 5.0;
        let out = batchnorm_forward(&x, &bn, Mode::Train, 0.9, 1e-5).unwrap();
        assert!(out.y.as_slice().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn batchnorm_infer_uses_running_stats() {
        let mut bn = BatchNormParams::new(2);
        bn.running_mean = vec![1.5, -2.0];
        bn.beta = vec![0.25, 0.0];
        let x = Matrix::from_rows(&[[1.5, -2.0]]).unwrap();
        let out = batchnorm_forward(&x, &bn, Mode::Infer, 0.9, 1e-5).unwrap();
        assert_eq!(out.y.as_slice(), &[0.25, 0.0]);
    }

    #[test]
    fn batchnorm_train_needs_two_rows() {
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(matches!(
            batchnorm_forward(&x, &BatchNormParams::new(1), Mode::Train, 0.9, 1e-5),
            Err(Error::BatchSize(1))
        ));
    }

    #[test]
    fn running_stats_blend() {
        let x = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let bn = BatchNormParams::new(1);
        let out = batchnorm_forward(&x, &bn, Mode::Train, 0.9, 1e-5).unwrap();
        let (rm, rv) = out.running.unwrap();
        assert!((rm[0] - 0.1).abs() < 1e-15);
        // unbiased batch variance is 2
        assert!((rv[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = RandomSource::new(8);
        let (b, w) = (8, 3);
        let x = Matrix::from_vec(b, w, (0..b * w).map(|_| rng.standard_normal()).collect()).unwrap();
        let c = Matrix::from_vec(b, w, (0..b * w).map(|_| rng.standard_normal()).collect()).unwrap();
        let mut bn = BatchNormParams::new(w);
        bn.gamma = vec![0.7, 1.3, -0.4];
        bn.beta = vec![0.1, -0.2, 0.3];
        let loss = |x: &Matrix, bn: &BatchNormParams| {
            let y = batchnorm_forward(x, bn, Mode::Train, 0.9, 1e-5).unwrap().y;
            y.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b * a).sum::<f64>()
        };
        let out = batchnorm_forward(&x, &bn, Mode::Train, 0.9, 1e-5).unwrap();
        let mut dy = c.clone();
        for (d, y) in dy.as_mut_slice().iter_mut().zip(out.y.as_slice()) {
            *d *= 2.0 * y;
        }
        let (mut dg, mut db) = (vec![0.0; w], vec![0.0; w]);
        let dx = batchnorm_backward(&dy, &bn.gamma, &out.cache, &mut dg, &mut db, false);
        let eps = 1e-5;
        for i in 0..b * w {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.as_mut_slice()[i] += eps;
            xm.as_mut_slice()[i] -= eps;
            let num = (loss(&xp, &bn) - loss(&xm, &bn)) / (2.0 * eps);
            assert!((num - dx.as_slice()[i]).abs() < 1e-7 * num.abs().max(1.0), "x[{i}]");
        }
        for j in 0..w {
            let (mut bp, mut bm) = (bn.clone(), bn.clone());
            bp.gamma[j] += eps;
            bm.gamma[j] -= eps;
            let num = (loss(&x, &bp) - loss(&x, &bm)) / (2.0 * eps);
            assert!((num - dg[j]).abs() < 1e-7 * num.abs().max(1.0), "gamma[{j}]");
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = RandomSource::new(1);
        let x = [1.0, 2.0, 3.0];
        let (out, mask) = dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!((out, mask), (x.to_vec(), vec![1.0; 3]));
        let (out, _) = dropout_forward(&x, 0.9, Mode::Infer, &mut rng).unwrap();
        assert_eq!(out, x.to_vec());
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = RandomSource::new(2);
        let trials = 100_000;
        let mut sums = [0.0; 4];
        for _ in 0..trials {
            let (out, _) = dropout_forward(&[1.0; 4], 0.3, Mode::Train, &mut rng).unwrap();
            for (s, v) in sums.iter_mut().zip(out) {
                *s += v;
            }
        }
        for s in sums {
            assert!((s / trials as f64 - 1.0).abs() < 0.02);
        }
    }
}
