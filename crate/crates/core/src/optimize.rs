//! Adam with exponential learning-rate decay, early stopping, and the direct
//! solvers used by the linear baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::nn::ParamBlocks;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    pub decay_steps: u64,
    pub staircase: bool,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 0.001,
            decay_factor: 0.9,
            decay_steps: 10_000,
            staircase: true,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0) || !(self.decay_factor > 0.0 && self.decay_factor < 1.0) || self.decay_steps == 0 {
            return Err(Error::Config(format!(
                "learning rate needs initial > 0, 0 < decay_factor < 1, decay_steps >= 1; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn lr_at_step(&self, step: u64) -> f64 {
        let exponent = if self.staircase {
            (step / self.decay_steps) as f64
        } else {
            step as f64 / self.decay_steps as f64
        };
        self.initial * self.decay_factor.powf(exponent)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter block, and the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &impl ParamBlocks, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.blocks().iter().map(|(_, b)| vec![0.0; b.len()]).collect();
        AdamState {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of `params` along `grads`.
pub fn adam_step<P: ParamBlocks, G: ParamBlocks>(
    params: &mut P,
    grads: &G,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let g_blocks = grads.blocks();
    let mut p_blocks = params.blocks_mut();
    let congruent = p_blocks.len() == g_blocks.len()
        && p_blocks.len() == state.m.len()
        && p_blocks
            .iter()
            .zip(&g_blocks)
            .zip(&state.m)
            .all(|((p, g), m)| p.1.len() == g.1.len() && p.1.len() == m.len());
    if !congruent {
        return Err(Error::Shape("parameters, gradients and Adam moments disagree in shape".into()));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powf(state.t as f64);
    let bc2 = 1.0 - beta2.powf(state.t as f64);
    for (((_, p), (_, g)), (m, v)) in p_blocks
        .iter_mut()
        .zip(&g_blocks)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience-based early stopping on a validation loss, keeping a snapshot of
/// the best parameters seen.
#[derive(Clone, Debug)]
pub struct EarlyStopping<T> {
    pub patience: usize,
    pub min_delta: f64,
    best_loss: f64,
    best_epoch: usize,
    epochs_seen: usize,
    since_improvement: usize,
    snapshot: Option<T>,
}

impl<T: Clone> EarlyStopping<T> {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_seen: 0,
            since_improvement: 0,
            snapshot: None,
        }
    }

    /// Improvement means `best − val_loss > min_delta`. Stops once more than
    /// `patience` consecutive epochs fail to improve.
    pub fn update(&mut self, val_loss: f64, params: &T) -> Result<StopDecision> {
        if val_loss.is_nan() {
            return Err(Error::Numeric(format!(
                "validation loss is NaN at epoch {}",
                self.epochs_seen + 1
            )));
        }
        self.epochs_seen += 1;
        if self.best_loss - val_loss > self.min_delta {
            self.best_loss = val_loss;
            self.best_epoch = self.epochs_seen;
            self.since_improvement = 0;
            self.snapshot = Some(params.clone());
        } else {
            self.since_improvement += 1;
        }
        Ok(if self.since_improvement > self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        })
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    /// 1-based epoch of the best loss (0 before any update).
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    pub fn best(&self) -> Option<&T> {
        self.snapshot.as_ref()
    }

    pub fn into_best(self) -> Option<T> {
        self.snapshot
    }
}

/// Least squares `min ‖Xw − y‖²` by Householder QR. No intercept is added.
pub fn solve_lls(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = x.shape();
    if y.len() != m {
        return Err(Error::Shape(format!("design has {m} rows, target has {}", y.len())));
    }
    if n == 0 || m == 0 {
        return Err(Error::EmptyInput("least squares on an empty design".into()));
    }
    if m < n {
        return Err(Error::Rank { rank: m, cols: n });
    }
    let mut a = x.clone();
    let mut b = y.to_vec();
    let mut diag = vec![0.0; n];
    for k in 0..n {
        let norm: f64 = (k..m).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[k] = 0.0;
            continue;
        }
        let alpha = if a[(k, k)] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm_sq = dot(&v, &v);
        if vnorm_sq == 0.0 {
            diag[k] = a[(k, k)];
            continue;
        }
        let beta = 2.0 / vnorm_sq;
        for j in k..n {
            let s: f64 = v.iter().enumerate().map(|(r, vi)| vi * a[(k + r, j)]).sum();
            for (r, vi) in v.iter().enumerate() {
                a[(k + r, j)] -= beta * s * vi;
            }
        }
        let s: f64 = v.iter().enumerate().map(|(r, vi)| vi * b[k + r]).sum();
        for (r, vi) in v.iter().enumerate() {
            b[k + r] -= beta * s * vi;
        }
        diag[k] = a[(k, k)];
    }
    let scale = diag.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    let tol = scale * (m.max(n) as f64) * f64::EPSILON * 10.0;
    let rank = diag.iter().filter(|d| d.abs() > tol).count();
    if rank < n || scale == 0.0 {
        return Err(Error::Rank { rank, cols: n });
    }
    let mut w = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[(k, j)] * w[j]).sum();
        w[k] = (b[k] - s) / a[(k, k)];
    }
    Ok(w)
}

/// Result of a conjugate-gradient solve.
#[derive(Clone, Debug, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// ‖Ax − b‖ / ‖b‖ at exit.
    pub rel_residual: f64,
}

/// Conjugate gradient for SPD `A` from `x₀ = 0`, stopping when
/// `‖Ax − b‖/‖b‖ ≤ tol` or after `max_iter` iterations.
pub fn solve_cg(a: &Matrix, b: &[f64], tol: f64, max_iter: usize) -> Result<CgSolution> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(Error::Shape(format!(
            "CG needs a square system, got {}x{} with rhs {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(Error::Symmetry(asym));
    }
    let b_norm = norm2(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut iterations = 0;
    while iterations < max_iter && rs.sqrt() / b_norm > tol {
        let ap = a.matvec(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Definiteness(pap, iterations));
        }
        let alpha = rs / pap;
        crate::linalg::axpy(alpha, &p, &mut x);
        crate::linalg::axpy(-alpha, &ap, &mut r);
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
        iterations += 1;
    }
    // report the true residual rather than the recursively updated one
    let ax = a.matvec(&x)?;
    let true_res: f64 = ax.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    Ok(CgSolution {
        x,
        iterations,
        rel_residual: true_res / b_norm,
    })
}

/// `XᵀX` and `Xᵀy`, with the Gram matrix filled symmetrically.
pub fn normal_equations(x: &Matrix, y: &[f64]) -> Result<(Matrix, Vec<f64>)> {
    let (m, n) = x.shape();
    if y.len() != m {
        return Err(Error::Shape(format!("design has {m} rows, target has {}", y.len())));
    }
    let mut gram = Matrix::zeros(n, n);
    let mut rhs = vec![0.0; n];
    for row in x.iter_rows() {
        for i in 0..n {
            for j in i..n {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    for (row, &t) in x.iter_rows().zip(y) {
        crate::linalg::axpy(t, row, &mut rhs);
    }
    Ok((gram, rhs))
}

/// Ridge regression `min ‖Xw − y‖² + λ Σ_{j≠c} w_j²`, where `c` is the
/// optional unpenalized intercept column. Solved as least squares on the
/// augmented system `[X; √λ·E]`, `[y; 0]`.
pub fn solve_ridge(x: &Matrix, y: &[f64], lambda: f64, intercept_col: Option<usize>) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!("ridge lambda must be finite and >= 0, got {lambda}")));
    }
    let (m, n) = x.shape();
    if let Some(c) = intercept_col {
        if c >= n {
            return Err(Error::Parameter(format!("intercept column {c} out of range for {n} columns")));
        }
    }
    if lambda == 0.0 {
        return solve_lls(x, y);
    }
    let root = lambda.sqrt();
    let penalized: Vec<usize> = (0..n).filter(|&j| Some(j) != intercept_col).collect();
    let mut aug = Matrix::zeros(m + penalized.len(), n);
    for r in 0..m {
        aug.row_mut(r).copy_from_slice(x.row(r));
    }
    for (k, &j) in penalized.iter().enumerate() {
        aug[(m + k, j)] = root;
    }
    let mut rhs = y.to_vec();
    rhs.resize(m + penalized.len(), 0.0);
    solve_lls(&aug, &rhs)
}
