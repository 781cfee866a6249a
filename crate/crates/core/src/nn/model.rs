//! Full network: BiLSTM → attention → [dense(ReLU) → batch norm → dropout]* →
//! linear output neuron, with its hand-written backward pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{batchnorm_backward, batchnorm_forward, dense_batch, dropout_mask, BatchNormCache, Mode};
use super::params::{AttentionParams, ModelGrads, ModelParams};
use super::recurrent::{chunk_backward, chunk_forward, context_matrix, ChunkCache, StackedGrad, StackedLstm};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, RandomSource};

/// Samples per work unit in the parallel recurrent passes. Fixed so that
/// gradient sums do not depend on the thread count.
const CHUNK: usize = 32;

/// Where dropout masks come from.
pub enum MaskSource<'a> {
    Sample(&'a mut RandomSource),
    /// One `batch × width` mask per hidden layer, reused verbatim.
    Fixed(&'a [Matrix]),
}

/// Running tally of normalization checks made during forward passes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormAudit {
    pub forward_passes: u64,
    pub attention_checks: u64,
    pub attention_violations: u64,
    pub max_attention_sum_error: f64,
    pub bn_checks: u64,
    pub max_bn_batch_mean: f64,
}

impl NormAudit {
    pub const ATTENTION_TOL: f64 = 1e-9;

    pub fn merge(&mut self, other: &NormAudit) {
        self.forward_passes += other.forward_passes;
        self.attention_checks += other.attention_checks;
        self.attention_violations += other.attention_violations;
        self.max_attention_sum_error = self.max_attention_sum_error.max(other.max_attention_sum_error);
        self.bn_checks += other.bn_checks;
        self.max_bn_batch_mean = self.max_bn_batch_mean.max(other.max_bn_batch_mean);
    }
}

/// Intermediates of a batch forward pass.
pub struct ForwardCache {
    mode: Mode,
    batch: usize,
    hidden: usize,
    chunks: Vec<ChunkCache>,
    /// Input to hidden layer `l` (`batch × in`).
    inputs: Vec<Matrix>,
    pre_activation: Vec<Matrix>,
    norm: Vec<BatchNormCache>,
    masks: Vec<Matrix>,
    last: Matrix,
    pub predictions: Vec<f64>,
    /// Updated batch-norm running statistics per layer (train mode).
    pub running: Vec<(Vec<f64>, Vec<f64>)>,
    pub audit: NormAudit,
}

impl ForwardCache {
    pub fn masks(&self) -> &[Matrix] {
        &self.masks
    }

    pub fn alphas(&self, sample: usize) -> &[f64] {
        let c = &self.chunks[sample / CHUNK];
        let s = sample % CHUNK;
        &c.alphas[s * c.t..(s + 1) * c.t]
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Copy of `p` whose batch-norm running statistics are this pass's
    /// normalizing statistics, so inference mode reproduces the pass.
    pub fn frozen_params(&self, p: &ModelParams) -> ModelParams {
        let mut q = p.clone();
        for (n, c) in q.norm.iter_mut().zip(&self.norm) {
            n.running_mean = c.mean.clone();
            n.running_var = c.var.clone();
        }
        q
    }

    /// Sign pattern of every hidden pre-activation (`z > 0`).
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        self.pre_activation
            .iter()
            .flat_map(|z| z.as_slice().iter().map(|&v| v > 0.0))
            .collect()
    }
}

fn check_inputs(p: &ModelParams, seqs: &[&[f64]], t: usize) -> Result<()> {
    if seqs.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if t == 0 {
        return Err(Error::EmptyInput("sequence length is zero".into()));
    }
    let want = t * p.config.input_dim;
    if let Some((i, s)) = seqs.iter().enumerate().find(|(_, s)| s.len() != want) {
        return Err(Error::Shape(format!(
            "sample {i} has {} values, expected {t} steps of {}",
            s.len(),
            p.config.input_dim
        )));
    }
    Ok(())
}

/// Batch forward pass. Each entry of `seqs` is a `t × input_dim` row-major
/// sequence.
pub fn forward_batch(
    p: &ModelParams,
    seqs: &[&[f64]],
    t: usize,
    mode: Mode,
    masks: MaskSource<'_>,
) -> Result<ForwardCache> {
    check_inputs(p, seqs, t)?;
    let batch = seqs.len();
    let hidden = p.hidden_dim();
    let fwd = StackedLstm::new(&p.lstm_fwd);
    let bwd = StackedLstm::new(&p.lstm_bwd);
    let chunks: Vec<ChunkCache> = seqs
        .par_chunks(CHUNK)
        .map(|c| chunk_forward(&fwd, &bwd, &p.attention, c, t))
        .collect();

    let mut audit = NormAudit {
        forward_passes: 1,
        ..Default::default()
    };
    for c in &chunks {
        for al in c.alphas.chunks(t) {
            let sum: f64 = al.iter().sum();
            let err = (sum - 1.0).abs();
            audit.attention_checks += 1;
            audit.max_attention_sum_error = audit.max_attention_sum_error.max(err);
            if err > NormAudit::ATTENTION_TOL || al.iter().any(|&a| a < 0.0) {
                audit.attention_violations += 1;
            }
        }
    }
    let context = context_matrix(&chunks, hidden);

    let n_layers = p.dense.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre_activation = Vec::with_capacity(n_layers);
    let mut norm = Vec::with_capacity(n_layers);
    let mut used_masks = Vec::with_capacity(n_layers);
    let mut running = Vec::with_capacity(n_layers);
    let mut rng_masks = masks;
    let mut a = context;
    for l in 0..n_layers {
        let z = dense_batch(&a, &p.dense[l].w, &p.dense[l].b);
        let mut r = z.clone();
        r.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let bn = batchnorm_forward(&r, &p.norm[l], mode, p.config.bn_momentum, p.config.bn_eps)?;
        if mode == Mode::Train {
            for j in 0..bn.cache.x_hat.cols() {
                let m = bn.cache.x_hat.column(j).iter().sum::<f64>() / batch as f64;
                audit.bn_checks += 1;
                audit.max_bn_batch_mean = audit.max_bn_batch_mean.max(m.abs());
            }
        }
        let width = p.dense[l].w.rows();
        let mask = match &mut rng_masks {
            MaskSource::Sample(rng) => {
                let data = dropout_mask(batch * width, p.config.dropout, mode, rng);
                Matrix::from_vec(batch, width, data)?
            }
            MaskSource::Fixed(ms) => {
                let m = ms.get(l).ok_or_else(|| Error::Shape(format!("no dropout mask for layer {l}")))?;
                if m.shape() != (batch, width) {
                    return Err(Error::Shape(format!(
                        "dropout mask {:?} for layer {l}, expected {:?}",
                        m.shape(),
                        (batch, width)
                    )));
                }
                m.clone()
            }
        };
        let mut out = bn.y;
        for (v, m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *v *= m;
        }
        if let Some(rs) = bn.running {
            running.push(rs);
        }
        inputs.push(a);
        pre_activation.push(z);
        norm.push(bn.cache);
        used_masks.push(mask);
        a = out;
    }
    let predictions: Vec<f64> = a
        .iter_rows()
        .map(|row| dot(p.output.w.row(0), row) + p.output.b[0])
        .collect();
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite prediction".into()));
    }
    Ok(ForwardCache {
        mode,
        batch,
        hidden,
        chunks,
        inputs,
        pre_activation,
        norm,
        masks: used_masks,
        last: a,
        predictions,
        running,
        audit,
    })
}

/// Single-sequence forward pass. Training mode needs a batch of at least two
/// whenever the network has batch-norm layers.
pub fn model_forward(
    x: &[f64],
    t: usize,
    p: &ModelParams,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<(f64, ForwardCache)> {
    let cache = forward_batch(p, &[x], t, mode, MaskSource::Sample(rng))?;
    Ok((cache.predictions[0], cache))
}

/// Inference-mode predictions, processed in blocks to bound cache memory.
pub fn predict(p: &ModelParams, seqs: &[&[f64]], t: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(seqs.len());
    let mut dummy = RandomSource::new(0);
    for block in seqs.chunks(512) {
        let c = forward_batch(p, block, t, Mode::Infer, MaskSource::Sample(&mut dummy))?;
        out.extend(c.predictions);
    }
    Ok(out)
}

/// Mean squared error over the batch plus `l2 · Σ‖W_dense‖²`.
pub fn batch_loss(p: &ModelParams, predictions: &[f64], targets: &[f64]) -> f64 {
    let n = predictions.len() as f64;
    let data: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    data + p.config.l2 * p.dense_weight_sq()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Loss and gradients for a training-mode forward pass over `targets`.
/// The dropout masks recorded in `cache` are reused.
pub fn model_backward(
    cache: &ForwardCache,
    targets: &[f64],
    p: &ModelParams,
) -> Result<(f64, ModelGrads)> {
    backward(cache, targets, p, false)
}

/// As [`model_backward`], treating the batch-norm batch statistics as
/// constants. Matches the function evaluated by
/// [`ForwardCache::frozen_params`] in inference mode.
pub fn model_backward_frozen_bn(
    cache: &ForwardCache,
    targets: &[f64],
    p: &ModelParams,
) -> Result<(f64, ModelGrads)> {
    backward(cache, targets, p, true)
}

fn backward(
    cache: &ForwardCache,
    targets: &[f64],
    p: &ModelParams,
    frozen_bn: bool,
) -> Result<(f64, ModelGrads)> {
    if cache.mode != Mode::Train {
        return Err(Error::State("backward needs a training-mode forward cache".into()));
    }
    let batch = cache.batch;
    if targets.len() != batch {
        return Err(Error::Shape(format!(
            "{} targets for a batch of {batch}",
            targets.len()
        )));
    }
    if cache.inputs.len() != p.dense.len()
        || cache.hidden != p.hidden_dim()
        || cache.last.cols() != p.output.w.cols()
    {
        return Err(Error::State("forward cache was produced by different parameters".into()));
    }
    let loss = batch_loss(p, &cache.predictions, targets);
    let mut g = ModelGrads::zeros_like(p);
    let l2 = p.config.l2;

    let dy: Vec<f64> = cache
        .predictions
        .iter()
        .zip(targets)
        .map(|(a, b)| 2.0 * (a - b) / batch as f64)
        .collect();
    let mut d_a = Matrix::zeros(batch, cache.last.cols());
    for s in 0..batch {
        crate::linalg::axpy(dy[s], cache.last.row(s), g.output.w.row_mut(0));
        g.output.b[0] += dy[s];
        crate::linalg::axpy(dy[s], p.output.w.row(0), d_a.row_mut(s));
    }

    for l in (0..p.dense.len()).rev() {
        let mut d_bn = d_a;
        for (v, m) in d_bn.as_mut_slice().iter_mut().zip(cache.masks[l].as_slice()) {
            *v *= m;
        }
        let mut d_z = batchnorm_backward(&d_bn, &p.norm[l].gamma, &cache.norm[l], &mut g.gamma[l], &mut g.beta[l], frozen_bn);
        for (v, z) in d_z.as_mut_slice().iter_mut().zip(cache.pre_activation[l].as_slice()) {
            if *z <= 0.0 {
                *v = 0.0;
            }
        }
        let input = &cache.inputs[l];
        let w = &p.dense[l].w;
        let gd = &mut g.dense[l];
        let mut d_in = Matrix::zeros(batch, w.cols());
        for s in 0..batch {
            gd.w.add_outer(d_z.row(s), input.row(s));
            add_into(&mut gd.b, d_z.row(s));
            w.matvec_t_acc(d_z.row(s), d_in.row_mut(s));
        }
        for (gw, pw) in gd.w.as_mut_slice().iter_mut().zip(w.as_slice()) {
            *gw += 2.0 * l2 * pw;
        }
        d_a = d_in;
    }

    // d_a now holds dLoss/dcontext per sample
    let fwd = StackedLstm::new(&p.lstm_fwd);
    let bwd = StackedLstm::new(&p.lstm_bwd);
    let hid = p.hidden_dim();
    let partials: Vec<(StackedGrad, StackedGrad, AttentionParams)> = cache
        .chunks
        .par_iter()
        .enumerate()
        .map(|(c, chunk)| {
            let mut gf = StackedGrad::zeros(&fwd);
            let mut gb = StackedGrad::zeros(&bwd);
            let mut ga = AttentionParams::zeros(p.config.attention_dim, hid);
            let rows = &d_a.as_slice()[c * CHUNK * hid..(c * CHUNK + chunk.batch) * hid];
            chunk_backward(&fwd, &bwd, &p.attention, chunk, rows, &mut gf, &mut gb, &mut ga);
            (gf, gb, ga)
        })
        .collect();
    for (gf, gb, ga) in &partials {
        gf.add_to(&mut g.lstm_fwd);
        gb.add_to(&mut g.lstm_bwd);
        add_into(g.attention.w_a.as_mut_slice(), ga.w_a.as_slice());
        add_into(&mut g.attention.v_a, &ga.v_a);
    }
    Ok((loss, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{NetConfig, ParamBlocks};

    fn tiny() -> NetConfig {
        NetConfig {
            units: 4,
            attention_dim: 3,
            dense_widths: vec![6, 4],
            ..Default::default()
        }
    }

    #[test]
    fn zero_params_predict_output_bias() {
        let mut p = ModelParams::zeros(&tiny()).unwrap();
        p.output.b[0] = 2.5;
        let (y, _) = model_forward(&[0.3, 0.1, -0.8], 3, &p, Mode::Infer, &mut RandomSource::new(0)).unwrap();
        assert_eq!(y, 2.5);
    }

    #[test]
    fn inference_is_deterministic() {
        let p = ModelParams::init(&tiny(), &mut RandomSource::new(4)).unwrap();
        let x = [0.5, -1.0, 0.25, 2.0, 0.0];
        let a = model_forward(&x, 5, &p, Mode::Infer, &mut RandomSource::new(1)).unwrap().0;
        let b = model_forward(&x, 5, &p, Mode::Infer, &mut RandomSource::new(2)).unwrap().0;
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a.is_finite());
    }

    #[test]
    fn single_sample_train_mode_hits_batch_norm() {
        let p = ModelParams::init(&tiny(), &mut RandomSource::new(4)).unwrap();
        assert!(matches!(
            model_forward(&[0.1; 5], 5, &p, Mode::Train, &mut RandomSource::new(1)),
            Err(Error::BatchSize(1))
        ));
    }

    #[test]
    fn infer_cache_cannot_backprop() {
        let p = ModelParams::init(&tiny(), &mut RandomSource::new(4)).unwrap();
        let (_, cache) = model_forward(&[0.1; 5], 5, &p, Mode::Infer, &mut RandomSource::new(1)).unwrap();
        assert!(matches!(model_backward(&cache, &[1.0], &p), Err(Error::State(_))));
    }

    #[test]
    fn perfect_fit_has_zero_output_gradient() {
        let mut p = ModelParams::init(&tiny(), &mut RandomSource::new(6)).unwrap();
        p.config.l2 = 0.0;
        let seqs: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64 * 0.3; 5]).collect();
        let refs: Vec<&[f64]> = seqs.iter().map(|s| s.as_slice()).collect();
        let cache = forward_batch(&p, &refs, 5, Mode::Train, MaskSource::Sample(&mut RandomSource::new(1))).unwrap();
        let targets = cache.predictions.clone();
        let (loss, g) = model_backward(&cache, &targets, &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.output.w.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(g.output.b[0], 0.0);
    }

    #[test]
    fn l2_only_gradient() {
        let mut p = ModelParams::init(&tiny(), &mut RandomSource::new(6)).unwrap();
        p.config.l2 = 0.05;
        let seqs = [vec![0.2; 5], vec![-0.4; 5]];
        let refs: Vec<&[f64]> = seqs.iter().map(|s| s.as_slice()).collect();
        let cache = forward_batch(&p, &refs, 5, Mode::Train, MaskSource::Sample(&mut RandomSource::new(1))).unwrap();
        let targets = cache.predictions.clone();
        let (_, g) = model_backward(&cache, &targets, &p).unwrap();
        for (gw, w) in g.dense[0].w.as_slice().iter().zip(p.dense[0].w.as_slice()) {
            assert!((gw - 2.0 * 0.05 * w).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_audit_clean() {
        let p = ModelParams::init(&tiny(), &mut RandomSource::new(8)).unwrap();
        let seqs: Vec<Vec<f64>> = (0..20).map(|i| (0..5).map(|j| ((i * j) as f64).sin()).collect()).collect();
        let refs: Vec<&[f64]> = seqs.iter().map(|s| s.as_slice()).collect();
        let cache = forward_batch(&p, &refs, 5, Mode::Train, MaskSource::Sample(&mut RandomSource::new(3))).unwrap();
        assert_eq!(cache.audit.attention_checks, 20);
        assert_eq!(cache.audit.attention_violations, 0);
        assert!(cache.audit.max_bn_batch_mean < 1e-6);
        for s in 0..20 {
            assert!((cache.alphas(s).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // blocks stay finite
        let (_, g) = model_backward(&cache, &[0.0; 20], &p).unwrap();
        assert!(g.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite())));
    }
}
