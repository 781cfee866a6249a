//! LSTM cell, one-direction unrolling, the bidirectional layer, and BPTT.

use serde::{Deserialize, Serialize};

use super::params::LstmParams;
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, Matrix};

/// State after one step, with everything backprop needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    /// `[h_{t-1}, x_t]`
    pub z: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub c_tilde: Vec<f64>,
    pub o: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn gate(w: &Matrix, b: &[f64], z: &[f64], act: fn(f64) -> f64) -> Vec<f64> {
    let mut out = b.to_vec();
    w.matvec_acc(z, &mut out);
    out.iter_mut().for_each(|v| *v = act(*v));
    out
}

fn step(x_t: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> LstmState {
    let mut z = Vec::with_capacity(h_prev.len() + x_t.len());
    z.extend_from_slice(h_prev);
    z.extend_from_slice(x_t);
    let f = gate(&p.w_f, &p.b_f, &z, sigmoid);
    let i = gate(&p.w_i, &p.b_i, &z, sigmoid);
    let c_tilde = gate(&p.w_c, &p.b_c, &z, f64::tanh);
    let o = gate(&p.w_o, &p.b_o, &z, sigmoid);
    let c: Vec<f64> = (0..f.len())
        .map(|k| f[k] * c_prev[k] + i[k] * c_tilde[k])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
    LstmState {
        z,
        f,
        i,
        c_tilde,
        o,
        c_prev: c_prev.to_vec(),
        c,
        tanh_c,
        h,
    }
}

/// One LSTM step:
/// `f = σ(W_f[h,x]+b_f)`, `i = σ(W_i[h,x]+b_i)`, `C̃ = tanh(W_C[h,x]+b_C)`,
/// `C = f∘C_prev + i∘C̃`, `o = σ(W_o[h,x]+b_o)`, `h = o∘tanh(C)`.
pub fn lstm_cell_forward(
    x_t: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> Result<LstmState> {
    p.check()?;
    let u = p.units();
    if h_prev.len() != u || c_prev.len() != u || x_t.len() != p.input_dim() {
        return Err(Error::Shape(format!(
            "cell expects h, c of length {u} and x of length {}, got {}, {}, {}",
            p.input_dim(),
            h_prev.len(),
            c_prev.len(),
            x_t.len()
        )));
    }
    Ok(step(x_t, h_prev, c_prev, p))
}

/// Unrolls one direction over `seq` (`t × d`, row-major) from zero state.
/// With `reverse` the steps consume rows `t-1, …, 0`. States are returned in
/// processing order.
pub(crate) fn run_direction(p: &LstmParams, seq: &[f64], t: usize, reverse: bool) -> Vec<LstmState> {
    let d = p.input_dim();
    let u = p.units();
    let mut states: Vec<LstmState> = Vec::with_capacity(t);
    let zero = vec![0.0; u];
    for j in 0..t {
        let row = if reverse { t - 1 - j } else { j };
        let x_t = &seq[row * d..(row + 1) * d];
        let st = match states.last() {
            Some(prev) => step(x_t, &prev.h, &prev.c, p),
            None => step(x_t, &zero, &zero, p),
        };
        states.push(st);
    }
    states
}

pub(crate) fn bilstm_run(
    seq: &[f64],
    t: usize,
    p_fwd: &LstmParams,
    p_bwd: &LstmParams,
) -> Matrix {
    let fwd = run_direction(p_fwd, seq, t, false);
    let bwd = run_direction(p_bwd, seq, t, true);
    let u = p_fwd.units();
    let mut h = Matrix::zeros(t, 2 * u);
    for r in 0..t {
        let row = h.row_mut(r);
        row[..u].copy_from_slice(&fwd[r].h);
        row[u..].copy_from_slice(&bwd[t - 1 - r].h);
    }
    h
}

/// Hidden-state matrix `H` (`t × 2·units`): row `r` is
/// `[h_r^fwd ‖ h_r^bwd]`, where the backward direction reads the sequence
/// reversed, so its state at row `r` has consumed rows `t-1, …, r`.
pub fn bilstm_forward(
    seq: &[f64],
    t: usize,
    p_fwd: &LstmParams,
    p_bwd: &LstmParams,
) -> Result<Matrix> {
    p_fwd.check()?;
    p_bwd.check()?;
    if p_fwd.w_f.shape() != p_bwd.w_f.shape() {
        return Err(Error::Shape("forward and backward LSTM shapes differ".into()));
    }
    if t == 0 || seq.len() != t * p_fwd.input_dim() {
        return Err(Error::Shape(format!(
            "sequence of {} values is not {t} steps of {}",
            seq.len(),
            p_fwd.input_dim()
        )));
    }
    Ok(bilstm_run(seq, t, p_fwd, p_bwd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RandomSource;

    fn random_params(u: usize, d: usize, seed: u64) -> LstmParams {
        let mut rng = RandomSource::new(seed);
        let mut p = LstmParams::init(u, d, &mut rng);
        for b in [&mut p.b_f, &mut p.b_i, &mut p.b_c, &mut p.b_o] {
            b.iter_mut().for_each(|v| *v = rng.uniform_range(-0.5, 0.5));
        }
        p
    }

    #[test]
    fn zero_params_fix_gates() {
        let p = LstmParams::zeros(3, 2);
        let st = lstm_cell_forward(&[0.7, -1.2], &[0.0; 3], &[0.0; 3], &p).unwrap();
        assert!(st.f.iter().chain(&st.i).chain(&st.o).all(|&v| v == 0.5));
        assert!(st.c_tilde.iter().chain(&st.c).chain(&st.h).all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LstmParams::zeros(3, 1);
        p.b_f.fill(100.0);
        let c = [0.3, -0.8, 1.5];
        let st = lstm_cell_forward(&[2.0], &[0.0; 3], &c, &p).unwrap();
        for k in 0..3 {
            assert!((st.c[k] - c[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_matches_scalar_recomputation() {
        let p = random_params(3, 2, 5);
        let x = [0.4, -0.9];
        let h = [0.1, -0.2, 0.3];
        let c = [0.5, 0.0, -0.7];
        let st = lstm_cell_forward(&x, &h, &c, &p).unwrap();
        let z = [h[0], h[1], h[2], x[0], x[1]];
        let lin = |w: &Matrix, b: &[f64], k: usize| {
            let mut s = b[k];
            for j in 0..5 {
                s += w[(k, j)] * z[j];
            }
            s
        };
        for k in 0..3 {
            let f = 1.0 / (1.0 + (-lin(&p.w_f, &p.b_f, k)).exp());
            let i = 1.0 / (1.0 + (-lin(&p.w_i, &p.b_i, k)).exp());
            let g = lin(&p.w_c, &p.b_c, k).tanh();
            let o = 1.0 / (1.0 + (-lin(&p.w_o, &p.b_o, k)).exp());
            let c_new = f * c[k] + i * g;
            let h_new = o * c_new.tanh();
            assert!((st.c[k] - c_new).abs() < 1e-12);
            assert!((st.h[k] - h_new).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_shape_errors() {
        let p = LstmParams::zeros(3, 1);
        assert!(lstm_cell_forward(&[1.0, 2.0], &[0.0; 3], &[0.0; 3], &p).is_err());
        assert!(lstm_cell_forward(&[1.0], &[0.0; 2], &[0.0; 3], &p).is_err());
    }

    #[test]
    fn single_step_bilstm() {
        let p = random_params(4, 1, 3);
        let h = bilstm_forward(&[0.8], 1, &p, &p).unwrap();
        assert_eq!(h.shape(), (1, 8));
        assert_eq!(h.row(0)[..4], h.row(0)[4..]);
    }

    #[test]
    fn palindrome_symmetry() {
        let p = random_params(4, 1, 9);
        let seq = [0.3, -1.0, 2.0, -1.0, 0.3];
        let h = bilstm_forward(&seq, 5, &p, &p).unwrap();
        for t in 0..5 {
            for k in 0..4 {
                assert!((h[(t, k)] - h[(4 - t, 4 + k)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_params_zero_hidden() {
        let p = LstmParams::zeros(3, 1);
        let h = bilstm_forward(&[1.0, 2.0, 3.0], 3, &p, &p).unwrap();
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gates_stay_in_open_interval() {
        let p = random_params(5, 1, 11);
        let seq: Vec<f64> = (0..8).map(|i| (i as f64 - 4.0) * 0.7).collect();
        for st in run_direction(&p, &seq, 8, false) {
            assert!(st.f.iter().chain(&st.i).chain(&st.o).all(|&v| v > 0.0 && v < 1.0));
            assert!(st.c_tilde.iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }
}
