use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RandomSource};

/// Architecture and regularization settings of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Values per time step.
    pub input_dim: usize,
    /// LSTM units per direction.
    pub units: usize,
    pub attention_dim: usize,
    /// Hidden dense layer widths, each followed by batch norm and dropout.
    pub dense_widths: Vec<usize>,
    pub dropout: f64,
    /// L2 coefficient on hidden dense weights.
    pub l2: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_dim: 1,
            units: 100,
            attention_dim: 64,
            dense_widths: vec![64, 32],
            dropout: 0.3,
            l2: 1e-4,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.units == 0 || self.attention_dim == 0 {
            return Err(Error::Config("input_dim, units and attention_dim must be >= 1".into()));
        }
        if self.dense_widths.contains(&0) {
            return Err(Error::Config("dense widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.l2 >= 0.0) || !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("l2 >= 0, bn_eps > 0 and bn_momentum in [0, 1] required".into()));
        }
        Ok(())
    }
}

/// Weights of one LSTM direction. Every gate matrix is
/// `units × (units + input_dim)` acting on `[h_{t-1}, x_t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(units: usize, input_dim: usize) -> Self {
        let w = Matrix::zeros(units, units + input_dim);
        LstmParams {
            w_f: w.clone(),
            w_i: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_f: vec![0.0; units],
            b_i: vec![0.0; units],
            b_c: vec![0.0; units],
            b_o: vec![0.0; units],
        }
    }

    /// Glorot-uniform weights, zero biases except a forget bias of one.
    pub fn init(units: usize, input_dim: usize, rng: &mut RandomSource) -> Self {
        let mut p = LstmParams::zeros(units, input_dim);
        for w in [&mut p.w_f, &mut p.w_i, &mut p.w_c, &mut p.w_o] {
            glorot(w, rng);
        }
        p.b_f.fill(1.0);
        p
    }

    pub fn units(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_f.cols() - self.w_f.rows()
    }

    pub fn check(&self) -> Result<()> {
        let shape = self.w_f.shape();
        let u = shape.0;
        let ok = [&self.w_i, &self.w_c, &self.w_o].iter().all(|w| w.shape() == shape)
            && [&self.b_f, &self.b_i, &self.b_c, &self.b_o].iter().all(|b| b.len() == u)
            && shape.1 > u;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("LSTM gate weights/biases disagree in shape".into()))
        }
    }
}

/// Additive attention: `score(h) = v_aᵀ tanh(W_a h)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_a: Matrix,
    pub v_a: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(attn_dim: usize, hidden_dim: usize) -> Self {
        AttentionParams {
            w_a: Matrix::zeros(attn_dim, hidden_dim),
            v_a: vec![0.0; attn_dim],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    /// `out × in`
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseParams {
            w: Matrix::zeros(output, input),
            b: vec![0.0; output],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormParams {
    pub fn new(width: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

/// Every weight of the network plus its configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: NetConfig,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    pub attention: AttentionParams,
    pub dense: Vec<DenseParams>,
    pub norm: Vec<BatchNormParams>,
    pub output: DenseParams,
}

fn glorot(w: &mut Matrix, rng: &mut RandomSource) {
    let (fan_out, fan_in) = w.shape();
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w.as_mut_slice() {
        *v = rng.uniform_range(-limit, limit);
    }
}

impl ModelParams {
    /// All-zero weights (batch norm at identity: gamma 1, beta 0).
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let hidden = 2 * config.units;
        let mut dense = Vec::new();
        let mut norm = Vec::new();
        let mut width = hidden;
        for &w in &config.dense_widths {
            dense.push(DenseParams::zeros(width, w));
            norm.push(BatchNormParams::new(w));
            width = w;
        }
        Ok(ModelParams {
            config: config.clone(),
            lstm_fwd: LstmParams::zeros(config.units, config.input_dim),
            lstm_bwd: LstmParams::zeros(config.units, config.input_dim),
            attention: AttentionParams::zeros(config.attention_dim, hidden),
            dense,
            norm,
            output: DenseParams::zeros(width, 1),
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero
    /// biases, forget-gate bias 1.
    pub fn init(config: &NetConfig, rng: &mut RandomSource) -> Result<Self> {
        let mut p = ModelParams::zeros(config)?;
        p.lstm_fwd = LstmParams::init(config.units, config.input_dim, rng);
        p.lstm_bwd = LstmParams::init(config.units, config.input_dim, rng);
        glorot(&mut p.attention.w_a, rng);
        let limit = (6.0 / (config.attention_dim + 1) as f64).sqrt();
        for v in &mut p.attention.v_a {
            *v = rng.uniform_range(-limit, limit);
        }
        for d in &mut p.dense {
            glorot(&mut d.w, rng);
        }
        glorot(&mut p.output.w, rng);
        Ok(p)
    }

    pub fn hidden_dim(&self) -> usize {
        2 * self.config.units
    }

    pub fn check(&self) -> Result<()> {
        self.lstm_fwd.check()?;
        self.lstm_bwd.check()?;
        let template = ModelParams::zeros(&self.config)?;
        let same = self.blocks().iter().zip(template.blocks()).all(|(a, b)| a.1.len() == b.1.len())
            && self.dense.len() == template.dense.len()
            && self.norm.iter().zip(&template.norm).all(|(a, b)| {
                a.running_mean.len() == b.running_mean.len() && a.running_var.len() == b.running_var.len()
            });
        if same {
            Ok(())
        } else {
            Err(Error::Shape("parameters do not match their configuration".into()))
        }
    }

    /// Sum of squared hidden dense weights (the L2 penalty base).
    pub fn dense_weight_sq(&self) -> f64 {
        // Neumaier summation: finite-difference checks resolve changes of
        // order 1e-6 in this total
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for v in self.dense.iter().flat_map(|d| d.w.as_slice()) {
            let term = v * v;
            let t = sum + term;
            if sum.abs() >= term {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
        }
        sum + comp
    }
}

/// Gradient container, shape-congruent with the trainable part of
/// [`ModelParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelGrads {
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    pub attention: AttentionParams,
    pub dense: Vec<DenseParams>,
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub output: DenseParams,
}

impl ModelGrads {
    pub fn zeros_like(p: &ModelParams) -> Self {
        let c = &p.config;
        ModelGrads {
            lstm_fwd: LstmParams::zeros(c.units, c.input_dim),
            lstm_bwd: LstmParams::zeros(c.units, c.input_dim),
            attention: AttentionParams::zeros(c.attention_dim, 2 * c.units),
            dense: p.dense.iter().map(|d| DenseParams::zeros(d.w.cols(), d.w.rows())).collect(),
            gamma: p.norm.iter().map(|n| vec![0.0; n.gamma.len()]).collect(),
            beta: p.norm.iter().map(|n| vec![0.0; n.beta.len()]).collect(),
            output: DenseParams::zeros(p.output.w.cols(), 1),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Named flat views over trainable parameter blocks, in a fixed order shared
/// by [`ModelParams`] and [`ModelGrads`].
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<(String, &[f64])>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;
}

macro_rules! lstm_blocks {
    ($out:ident, $prefix:expr, $l:expr, $as:ident) => {
        $out.push((format!("{}.W_f", $prefix), $l.w_f.$as()));
        $out.push((format!("{}.W_i", $prefix), $l.w_i.$as()));
        $out.push((format!("{}.W_C", $prefix), $l.w_c.$as()));
        $out.push((format!("{}.W_o", $prefix), $l.w_o.$as()));
    };
}

fn lstm_views<'a>(prefix: &str, l: &'a LstmParams, out: &mut Vec<(String, &'a [f64])>) {
    lstm_blocks!(out, prefix, l, as_slice);
    out.push((format!("{prefix}.b_f"), &l.b_f));
    out.push((format!("{prefix}.b_i"), &l.b_i));
    out.push((format!("{prefix}.b_C"), &l.b_c));
    out.push((format!("{prefix}.b_o"), &l.b_o));
}

fn lstm_views_mut<'a>(prefix: &str, l: &'a mut LstmParams, out: &mut Vec<(String, &'a mut [f64])>) {
    lstm_blocks!(out, prefix, l, as_mut_slice);
    out.push((format!("{prefix}.b_f"), &mut l.b_f));
    out.push((format!("{prefix}.b_i"), &mut l.b_i));
    out.push((format!("{prefix}.b_C"), &mut l.b_c));
    out.push((format!("{prefix}.b_o"), &mut l.b_o));
}

impl ParamBlocks for ModelParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        lstm_views("lstm_fwd", &self.lstm_fwd, &mut out);
        lstm_views("lstm_bwd", &self.lstm_bwd, &mut out);
        out.push(("attention.W_a".into(), self.attention.w_a.as_slice()));
        out.push(("attention.v_a".into(), &self.attention.v_a));
        for (l, (d, n)) in self.dense.iter().zip(&self.norm).enumerate() {
            out.push((format!("dense{l}.W"), d.w.as_slice()));
            out.push((format!("dense{l}.b"), &d.b));
            out.push((format!("bn{l}.gamma"), &n.gamma));
            out.push((format!("bn{l}.beta"), &n.beta));
        }
        out.push(("output.W".into(), self.output.w.as_slice()));
        out.push(("output.b".into(), &self.output.b));
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        lstm_views_mut("lstm_fwd", &mut self.lstm_fwd, &mut out);
        lstm_views_mut("lstm_bwd", &mut self.lstm_bwd, &mut out);
        out.push(("attention.W_a".into(), self.attention.w_a.as_mut_slice()));
        out.push(("attention.v_a".into(), &mut self.attention.v_a));
        for (l, (d, n)) in self.dense.iter_mut().zip(&mut self.norm).enumerate() {
            out.push((format!("dense{l}.W"), d.w.as_mut_slice()));
            out.push((format!("dense{l}.b"), &mut d.b));
            out.push((format!("bn{l}.gamma"), &mut n.gamma));
            out.push((format!("bn{l}.beta"), &mut n.beta));
        }
        out.push(("output.W".into(), self.output.w.as_mut_slice()));
        out.push(("output.b".into(), &mut self.output.b));
        out
    }
}

impl ParamBlocks for ModelGrads {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        lstm_views("lstm_fwd", &self.lstm_fwd, &mut out);
        lstm_views("lstm_bwd", &self.lstm_bwd, &mut out);
        out.push(("attention.W_a".into(), self.attention.w_a.as_slice()));
        out.push(("attention.v_a".into(), &self.attention.v_a));
        for l in 0..self.dense.len() {
            out.push((format!("dense{l}.W"), self.dense[l].w.as_slice()));
            out.push((format!("dense{l}.b"), &self.dense[l].b));
            out.push((format!("bn{l}.gamma"), &self.gamma[l]));
            out.push((format!("bn{l}.beta"), &self.beta[l]));
        }
        out.push(("output.W".into(), self.output.w.as_slice()));
        out.push(("output.b".into(), &self.output.b));
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        lstm_views_mut("lstm_fwd", &mut self.lstm_fwd, &mut out);
        lstm_views_mut("lstm_bwd", &mut self.lstm_bwd, &mut out);
        out.push(("attention.W_a".into(), self.attention.w_a.as_mut_slice()));
        out.push(("attention.v_a".into(), &mut self.attention.v_a));
        for ((l, d), (g, b)) in self
            .dense
            .iter_mut()
            .enumerate()
            .zip(self.gamma.iter_mut().zip(self.beta.iter_mut()))
        {
            out.push((format!("dense{l}.W"), d.w.as_mut_slice()));
            out.push((format!("dense{l}.b"), &mut d.b));
            out.push((format!("bn{l}.gamma"), g));
            out.push((format!("bn{l}.beta"), b));
        }
        out.push(("output.W".into(), self.output.w.as_mut_slice()));
        out.push(("output.b".into(), &mut self.output.b));
        out
    }
}

impl ParamBlocks for Vec<f64> {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        vec![("w".into(), self.as_slice())]
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("w".into(), self.as_mut_slice())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_match_param_blocks() {
        let cfg = NetConfig {
            units: 4,
            attention_dim: 3,
            dense_widths: vec![6, 4],
            ..Default::default()
        };
        let p = ModelParams::init(&cfg, &mut RandomSource::new(1)).unwrap();
        let g = ModelGrads::zeros_like(&p);
        let pb = p.blocks();
        let gb = g.blocks();
        assert_eq!(pb.len(), gb.len());
        for (a, b) in pb.iter().zip(&gb) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.len(), b.1.len());
        }
        p.check().unwrap();
    }

    #[test]
    fn init_ranges() {
        let cfg = NetConfig::default();
        let p = ModelParams::init(&cfg, &mut RandomSource::new(2)).unwrap();
        let limit = (6.0f64 / 201.0).sqrt();
        assert!(p.lstm_fwd.w_f.as_slice().iter().all(|v| v.abs() <= limit));
        assert!(p.lstm_fwd.b_f.iter().all(|&v| v == 1.0));
        assert!(p.lstm_fwd.b_i.iter().all(|&v| v == 0.0));
        assert_eq!(p.output.w.shape(), (1, 32));
        assert_eq!(p.config.dropout, 0.3);
        assert_eq!(p.lstm_fwd.units(), 100);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = NetConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(ModelParams::zeros(&cfg).is_err());
    }
}
