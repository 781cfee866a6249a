//! Batched BiLSTM and attention passes used by the model. Same equations as
//! the per-sample functions in `lstm` and `attention`, with the samples of a
//! chunk stacked so each step is a matrix product.

use super::params::{AttentionParams, LstmParams};
use crate::linalg::{dot, gemm, sigmoid, Matrix};

/// Gate weights stacked as rows `[f; i; C̃; o]`, shape `4u × (u + d)`.
pub(crate) struct StackedLstm {
    units: usize,
    input_dim: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl StackedLstm {
    pub fn new(p: &LstmParams) -> Self {
        let mut w = Vec::with_capacity(4 * p.w_f.as_slice().len());
        let mut b = Vec::with_capacity(4 * p.units());
        for (wm, bv) in [(&p.w_f, &p.b_f), (&p.w_i, &p.b_i), (&p.w_c, &p.b_c), (&p.w_o, &p.b_o)] {
            w.extend_from_slice(wm.as_slice());
            b.extend_from_slice(bv);
        }
        StackedLstm {
            units: p.units(),
            input_dim: p.input_dim(),
            w,
            b,
        }
    }

    fn zc(&self) -> usize {
        self.units + self.input_dim
    }
}

/// Per processing step, all `B × ·` row-major.
pub(crate) struct DirCache {
    z: Vec<Vec<f64>>,
    /// Activated gates, `B × 4u` in `[f, i, C̃, o]` column blocks.
    gates: Vec<Vec<f64>>,
    c_prev: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
}

pub(crate) struct ChunkCache {
    pub batch: usize,
    pub t: usize,
    /// `(B·T) × 2u`, row `s·T + r` is `[h_r^fwd ‖ h_r^bwd]` of sample `s`.
    pub h: Vec<f64>,
    fwd: DirCache,
    bwd: DirCache,
    /// `tanh(W_a h)` per row of `h`.
    u: Vec<f64>,
    /// `B·T` attention weights.
    pub alphas: Vec<f64>,
    /// `B × 2u`
    pub context: Vec<f64>,
}

fn run_direction(p: &StackedLstm, seqs: &[&[f64]], t: usize, reverse: bool) -> (DirCache, Vec<Vec<f64>>) {
    let (u, d, zc, nb) = (p.units, p.input_dim, p.zc(), seqs.len());
    let mut h = vec![0.0; nb * u];
    let mut c = vec![0.0; nb * u];
    let mut cache = DirCache {
        z: Vec::with_capacity(t),
        gates: Vec::with_capacity(t),
        c_prev: Vec::with_capacity(t),
        tanh_c: Vec::with_capacity(t),
    };
    let mut hs = Vec::with_capacity(t);
    for j in 0..t {
        let row = if reverse { t - 1 - j } else { j };
        let mut z = vec![0.0; nb * zc];
        for (s, seq) in seqs.iter().enumerate() {
            z[s * zc..s * zc + u].copy_from_slice(&h[s * u..(s + 1) * u]);
            z[s * zc + u..(s + 1) * zc].copy_from_slice(&seq[row * d..(row + 1) * d]);
        }
        let mut g = Vec::with_capacity(nb * 4 * u);
        for _ in 0..nb {
            g.extend_from_slice(&p.b);
        }
        gemm(nb, zc, 4 * u, 1.0, &z, false, &p.w, true, 1.0, &mut g);
        let mut tanh_c = vec![0.0; nb * u];
        let c_prev = c.clone();
        for s in 0..nb {
            let gs = &mut g[s * 4 * u..(s + 1) * 4 * u];
            for v in &mut gs[..2 * u] {
                *v = sigmoid(*v);
            }
            for v in &mut gs[2 * u..3 * u] {
                *v = v.tanh();
            }
            for v in &mut gs[3 * u..] {
                *v = sigmoid(*v);
            }
            for k in 0..u {
                let cn = gs[k] * c_prev[s * u + k] + gs[u + k] * gs[2 * u + k];
                let tc = cn.tanh();
                c[s * u + k] = cn;
                tanh_c[s * u + k] = tc;
                h[s * u + k] = gs[3 * u + k] * tc;
            }
        }
        cache.z.push(z);
        cache.gates.push(g);
        cache.c_prev.push(c_prev);
        cache.tanh_c.push(tanh_c);
        hs.push(h.clone());
    }
    (cache, hs)
}

/// BiLSTM and attention over one chunk of equal-length sequences.
pub(crate) fn chunk_forward(
    fwd: &StackedLstm,
    bwd: &StackedLstm,
    att: &AttentionParams,
    seqs: &[&[f64]],
    t: usize,
) -> ChunkCache {
    let (u, nb) = (fwd.units, seqs.len());
    let hid = 2 * u;
    let (fc, hf) = run_direction(fwd, seqs, t, false);
    let (bc, hb) = run_direction(bwd, seqs, t, true);
    let mut h = vec![0.0; nb * t * hid];
    for s in 0..nb {
        for r in 0..t {
            let row = &mut h[(s * t + r) * hid..(s * t + r + 1) * hid];
            row[..u].copy_from_slice(&hf[r][s * u..(s + 1) * u]);
            row[u..].copy_from_slice(&hb[t - 1 - r][s * u..(s + 1) * u]);
        }
    }
    let a = att.w_a.rows();
    let rows = nb * t;
    let mut ua = vec![0.0; rows * a];
    gemm(rows, hid, a, 1.0, &h, false, att.w_a.as_slice(), true, 0.0, &mut ua);
    ua.iter_mut().for_each(|v| *v = v.tanh());
    let mut alphas = Vec::with_capacity(rows);
    let mut context = vec![0.0; nb * hid];
    for s in 0..nb {
        let scores: Vec<f64> = (0..t).map(|r| dot(&att.v_a, &ua[(s * t + r) * a..(s * t + r + 1) * a])).collect();
        let w = super::attention::softmax(&scores);
        let ctx = &mut context[s * hid..(s + 1) * hid];
        for (r, &al) in w.iter().enumerate() {
            crate::linalg::axpy(al, &h[(s * t + r) * hid..(s * t + r + 1) * hid], ctx);
        }
        alphas.extend(w);
    }
    ChunkCache {
        batch: nb,
        t,
        h,
        fwd: fc,
        bwd: bc,
        u: ua,
        alphas,
        context,
    }
}

/// Gradients of the stacked LSTM parameters.
pub(crate) struct StackedGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl StackedGrad {
    pub fn zeros(p: &StackedLstm) -> Self {
        StackedGrad {
            w: vec![0.0; p.w.len()],
            b: vec![0.0; p.b.len()],
        }
    }

    /// Adds into the per-gate blocks of `g`.
    pub fn add_to(&self, g: &mut LstmParams) {
        let (n, u) = (g.w_f.as_slice().len(), g.units());
        for (q, (wm, bv)) in [
            (&mut g.w_f, &mut g.b_f),
            (&mut g.w_i, &mut g.b_i),
            (&mut g.w_c, &mut g.b_c),
            (&mut g.w_o, &mut g.b_o),
        ]
        .into_iter()
        .enumerate()
        {
            for (d, s) in wm.as_mut_slice().iter_mut().zip(&self.w[q * n..(q + 1) * n]) {
                *d += s;
            }
            for (d, s) in bv.iter_mut().zip(&self.b[q * u..(q + 1) * u]) {
                *d += s;
            }
        }
    }
}

/// `dh_at(j)` gives the upstream `B × u` gradient on the hidden output of
/// processing step `j`.
fn backward_direction(p: &StackedLstm, c: &DirCache, nb: usize, dh_at: impl Fn(usize) -> Vec<f64>, g: &mut StackedGrad) {
    let (u, zc) = (p.units, p.zc());
    let t = c.z.len();
    let mut dh_next = vec![0.0; nb * u];
    let mut dc_next = vec![0.0; nb * u];
    let mut act = vec![0.0; nb * 4 * u];
    let mut dz = vec![0.0; nb * zc];
    for j in (0..t).rev() {
        let dh = dh_at(j);
        let (gates, c_prev, tanh_c) = (&c.gates[j], &c.c_prev[j], &c.tanh_c[j]);
        for s in 0..nb {
            let gs = &gates[s * 4 * u..(s + 1) * 4 * u];
            let a = &mut act[s * 4 * u..(s + 1) * 4 * u];
            for k in 0..u {
                let i = s * u + k;
                let (f, ig, gt, o) = (gs[k], gs[u + k], gs[2 * u + k], gs[3 * u + k]);
                let tc = tanh_c[i];
                let dh_k = dh[i] + dh_next[i];
                let dc = dc_next[i] + dh_k * o * (1.0 - tc * tc);
                dc_next[i] = dc * f;
                a[k] = dc * c_prev[i] * f * (1.0 - f);
                a[u + k] = dc * gt * ig * (1.0 - ig);
                a[2 * u + k] = dc * ig * (1.0 - gt * gt);
                a[3 * u + k] = dh_k * tc * o * (1.0 - o);
            }
        }
        gemm(4 * u, nb, zc, 1.0, &act, true, &c.z[j], false, 1.0, &mut g.w);
        for s in 0..nb {
            for (gb, a) in g.b.iter_mut().zip(&act[s * 4 * u..(s + 1) * 4 * u]) {
                *gb += a;
            }
        }
        if j > 0 {
            gemm(nb, 4 * u, zc, 1.0, &act, false, &p.w, false, 0.0, &mut dz);
            for s in 0..nb {
                dh_next[s * u..(s + 1) * u].copy_from_slice(&dz[s * zc..s * zc + u]);
            }
        }
    }
}

/// Backprop from `d_context` (`B × 2u`) through attention and both LSTM
/// directions, adding into the given gradient accumulators.
#[allow(clippy::too_many_arguments)]
pub(crate) fn chunk_backward(
    fwd: &StackedLstm,
    bwd: &StackedLstm,
    att: &AttentionParams,
    cache: &ChunkCache,
    d_context: &[f64],
    g_fwd: &mut StackedGrad,
    g_bwd: &mut StackedGrad,
    g_att: &mut AttentionParams,
) {
    let (nb, t, u) = (cache.batch, cache.t, fwd.units);
    let hid = 2 * u;
    let a = att.w_a.rows();
    let rows = nb * t;
    let h = &cache.h;
    let mut dh = vec![0.0; rows * hid];
    let mut da = vec![0.0; rows * a];
    for s in 0..nb {
        let dctx = &d_context[s * hid..(s + 1) * hid];
        let al = &cache.alphas[s * t..(s + 1) * t];
        let d_alpha: Vec<f64> = (0..t).map(|r| dot(&h[(s * t + r) * hid..(s * t + r + 1) * hid], dctx)).collect();
        let weighted: f64 = al.iter().zip(&d_alpha).map(|(x, y)| x * y).sum();
        for r in 0..t {
            let row = s * t + r;
            let d_score = al[r] * (d_alpha[r] - weighted);
            let ur = &cache.u[row * a..(row + 1) * a];
            crate::linalg::axpy(d_score, ur, &mut g_att.v_a);
            for k in 0..a {
                da[row * a + k] = d_score * att.v_a[k] * (1.0 - ur[k] * ur[k]);
            }
            crate::linalg::axpy(al[r], dctx, &mut dh[row * hid..(row + 1) * hid]);
        }
    }
    gemm(a, rows, hid, 1.0, &da, true, h, false, 1.0, g_att.w_a.as_mut_slice());
    gemm(rows, a, hid, 1.0, &da, false, att.w_a.as_slice(), false, 1.0, &mut dh);

    // columns [off, off + u) of row r of every sample, as B × u
    let gather = |r: usize, off: usize| -> Vec<f64> {
        let mut out = vec![0.0; nb * u];
        for s in 0..nb {
            let src = &dh[(s * t + r) * hid + off..(s * t + r) * hid + off + u];
            out[s * u..(s + 1) * u].copy_from_slice(src);
        }
        out
    };
    backward_direction(fwd, &cache.fwd, nb, |j| gather(j, 0), g_fwd);
    backward_direction(bwd, &cache.bwd, nb, |j| gather(t - 1 - j, u), g_bwd);
}

/// `B × 2u` context rows as a matrix.
pub(crate) fn context_matrix(chunks: &[ChunkCache], hid: usize) -> Matrix {
    let n: usize = chunks.iter().map(|c| c.batch).sum();
    let mut data = Vec::with_capacity(n * hid);
    for c in chunks {
        data.extend_from_slice(&c.context);
    }
    Matrix::from_vec(n, hid, data).expect("context rows have the hidden width")
}
