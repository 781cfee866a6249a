//! Additive attention pooling over the BiLSTM outputs.

use super::params::AttentionParams;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Max-subtracted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn attention_run(h: &Matrix, p: &AttentionParams) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = h
        .iter_rows()
        .map(|row| {
            let mut a = vec![0.0; p.w_a.rows()];
            p.w_a.matvec_acc(row, &mut a);
            a.iter_mut().for_each(|v| *v = v.tanh());
            dot(&p.v_a, &a)
        })
        .collect();
    let alphas = softmax(&scores);
    let mut context = vec![0.0; h.cols()];
    for (row, &a) in h.iter_rows().zip(&alphas) {
        crate::linalg::axpy(a, row, &mut context);
    }
    (context, alphas)
}

/// Scores `v_aᵀ tanh(W_a h_t)`, weights `α = softmax(scores)` and the context
/// vector `Σ α_t h_t`.
pub fn attention_forward(h: &Matrix, p: &AttentionParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if h.rows() == 0 {
        return Err(Error::EmptyInput("attention over zero time steps".into()));
    }
    if p.w_a.cols() != h.cols() || p.v_a.len() != p.w_a.rows() {
        return Err(Error::Shape(format!(
            "attention W_a is {}x{} with v_a of {}, hidden width is {}",
            p.w_a.rows(),
            p.w_a.cols(),
            p.v_a.len(),
            h.cols()
        )));
    }
    Ok(attention_run(h, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RandomSource;

    fn random(attn: usize, hid: usize, seed: u64) -> AttentionParams {
        let mut rng = RandomSource::new(seed);
        AttentionParams {
            w_a: Matrix::from_vec(
                attn,
                hid,
                (0..attn * hid).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            )
            .unwrap(),
            v_a: (0..attn).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        }
    }

    #[test]
    fn identical_rows_uniform_weights() {
        let h = Matrix::from_rows(&[[0.2, -0.4, 1.0]; 4]).unwrap();
        let (ctx, alpha) = attention_forward(&h, &random(2, 3, 1)).unwrap();
        for a in &alpha {
            assert!((a - 0.25).abs() < 1e-15);
        }
        for (c, v) in ctx.iter().zip([0.2, -0.4, 1.0]) {
            assert!((c - v).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_scores_pick_last_row() {
        // W_a = I, v_a = (1000): score_t = 1000 * tanh(h_t0)
        let p = AttentionParams {
            w_a: Matrix::from_rows(&[[1.0, 0.0]]).unwrap(),
            v_a: vec![1000.0],
        };
        let h = Matrix::from_rows(&[[0.0, 5.0], [3.0, -2.0]]).unwrap();
        let (ctx, alpha) = attention_forward(&h, &p).unwrap();
        assert!(alpha[0] < 1e-6 && (alpha[1] - 1.0).abs() < 1e-6);
        assert!((ctx[0] - 3.0).abs() < 1e-6 && (ctx[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn matches_scalar_recomputation() {
        let mut rng = RandomSource::new(17);
        let p = random(3, 4, 2);
        let h = Matrix::from_vec(3, 4, (0..12).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let (ctx, alpha) = attention_forward(&h, &p).unwrap();
        let mut scores = [0.0; 3];
        for t in 0..3 {
            for a in 0..3 {
                let mut s = 0.0;
                for j in 0..4 {
                    s += p.w_a[(a, j)] * h[(t, j)];
                }
                scores[t] += p.v_a[a] * s.tanh();
            }
        }
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for t in 0..3 {
            assert!((alpha[t] - scores[t].exp() / z).abs() < 1e-12);
        }
        for j in 0..4 {
            let c: f64 = (0..3).map(|t| scores[t].exp() / z * h[(t, j)]).sum();
            assert!((ctx[j] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_h_errors() {
        assert!(matches!(
            attention_forward(&Matrix::zeros(0, 2), &random(2, 2, 1)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn softmax_shift_invariance() {
        let s = [0.3, -2.0, 4.1, 0.0];
        let shifted: Vec<f64> = s.iter().map(|v| v + 123.4).collect();
        let a = softmax(&s);
        let b = softmax(&shifted);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
