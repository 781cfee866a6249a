//! Central finite-difference check of the analytic gradients.
//!
//! Dropout masks are sampled once and then held fixed for every perturbed
//! evaluation, and batch norm keeps the batch statistics of the unperturbed
//! pass. The gradient of the full training-mode batch norm, statistics
//! included, is checked separately at the layer level.
//!
//! Entries whose perturbation moves a hidden pre-activation across the ReLU
//! kink have no derivative there; they are skipped and counted.
//!
//! `L(θ+ε) − L(θ−ε)` is accumulated term by term in factored form,
//! `(a−b)(a+b)`, instead of subtracting two rounded totals, so that small
//! gradient entries are not swamped by the rounding error of the loss.

use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::model::{forward_batch, model_backward_frozen_bn, MaskSource};
use super::params::{ModelGrads, ModelParams, NetConfig, ParamBlocks};
use crate::error::{Error, Result};
use crate::linalg::RandomSource;

/// Worst entry of one parameter block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub blocks: Vec<BlockError>,
    pub checked: usize,
    pub kink_skips: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&BlockError> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// A batch of sequences with targets for gradient checking.
#[derive(Clone, Debug)]
pub struct CheckBatch {
    pub seqs: Vec<Vec<f64>>,
    pub t: usize,
    pub targets: Vec<f64>,
}

pub fn grad_check(
    p: &ModelParams,
    batch: &CheckBatch,
    eps: f64,
    rng: &mut RandomSource,
) -> Result<GradCheckReport> {
    grad_check_with(p, batch, eps, rng, |_| {})
}

/// As [`grad_check`], with a hook that may tamper with the analytic
/// gradients before comparison.
pub fn grad_check_with(
    p: &ModelParams,
    batch: &CheckBatch,
    eps: f64,
    rng: &mut RandomSource,
    tamper: impl Fn(&mut ModelGrads),
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be > 0, got {eps}")));
    }
    let refs: Vec<&[f64]> = batch.seqs.iter().map(|s| s.as_slice()).collect();
    let cache = forward_batch(p, &refs, batch.t, Mode::Train, MaskSource::Sample(rng))?;
    let masks = cache.masks().to_vec();
    let (_, mut grads) = model_backward_frozen_bn(&cache, &batch.targets, p)?;
    tamper(&mut grads);
    let frozen = cache.frozen_params(p);

    let pattern = cache.relu_pattern();
    let eval_at = |q: &ModelParams| -> Result<(Vec<f64>, Vec<f64>, bool)> {
        let c = forward_batch(q, &refs, batch.t, Mode::Infer, MaskSource::Fixed(&masks))?;
        let dense: Vec<f64> = q.dense.iter().flat_map(|d| d.w.as_slice().iter().copied()).collect();
        let smooth = c.relu_pattern() == pattern;
        Ok((c.predictions, dense, smooth))
    };
    let n_batch = batch.targets.len() as f64;
    let l2 = p.config.l2;

    let analytic: Vec<(String, Vec<f64>)> = grads
        .blocks()
        .into_iter()
        .map(|(n, b)| (n, b.to_vec()))
        .collect();
    let mut work = frozen;
    let mut blocks = Vec::with_capacity(analytic.len());
    let (mut checked, mut kink_skips) = (0, 0);
    for (b, (name, a_block)) in analytic.iter().enumerate() {
        let mut worst = BlockError {
            name: name.clone(),
            max_rel_error: 0.0,
            index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, &a) in a_block.iter().enumerate() {
            let orig = work.blocks()[b].1[i];
            work.blocks_mut()[b].1[i] = orig + eps;
            let (pred_p, dense_p, smooth_p) = eval_at(&work)?;
            work.blocks_mut()[b].1[i] = orig - eps;
            let (pred_m, dense_m, smooth_m) = eval_at(&work)?;
            work.blocks_mut()[b].1[i] = orig;
            if !(smooth_p && smooth_m) {
                kink_skips += 1;
                continue;
            }
            checked += 1;
            let data: f64 = pred_p
                .iter()
                .zip(&pred_m)
                .zip(&batch.targets)
                .map(|((a, b), y)| (a - b) * (a + b - 2.0 * y))
                .sum::<f64>()
                / n_batch;
            let penalty: f64 = dense_p.iter().zip(&dense_m).map(|(a, b)| (a - b) * (a + b)).sum();
            let n = (data + l2 * penalty) / (2.0 * eps);
            let e = relative_error(a, n);
            if e >= worst.max_rel_error {
                worst.max_rel_error = e;
                worst.index = i;
                worst.analytic = a;
                worst.numeric = n;
            }
        }
        blocks.push(worst);
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        blocks,
        checked,
        kink_skips,
    })
}

/// Configuration of the small models used for gradient checking:
/// 4 units per direction, attention width 3, dense widths 6 and 4.
pub fn tiny_config() -> NetConfig {
    NetConfig {
        input_dim: 1,
        units: 4,
        attention_dim: 3,
        dense_widths: vec![6, 4],
        dropout: 0.3,
        l2: 0.01,
        ..Default::default()
    }
}

/// Random tiny model with non-trivial biases and batch-norm affine terms,
/// and a random batch of `batch_size` sequences of length `t`.
///
/// Targets are drawn wide (sd 10) so the residuals dominate the loss
/// curvature; with residuals near zero, per-sample gradient terms often
/// cancel and the O(ε²) truncation error of the central difference shows up
/// in the relative error.
pub fn random_instance(seed: u64, t: usize, batch_size: usize) -> (ModelParams, CheckBatch) {
    let mut rng = RandomSource::new(seed);
    let mut p = ModelParams::init(&tiny_config(), &mut rng).expect("tiny config is valid");
    for (name, block) in p.blocks_mut() {
        if name.ends_with(".gamma") {
            block.iter_mut().for_each(|v| *v = rng.uniform_range(0.5, 1.5));
        } else if name.contains(".b") {
            block.iter_mut().for_each(|v| *v = rng.uniform_range(-0.5, 0.5));
        }
    }
    let seqs = (0..batch_size)
        .map(|_| (0..t).map(|_| rng.standard_normal()).collect())
        .collect();
    let targets = (0..batch_size).map(|_| 10.0 * rng.standard_normal()).collect();
    (p, CheckBatch { seqs, t, targets })
}
