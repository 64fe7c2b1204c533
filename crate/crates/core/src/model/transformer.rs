//! Forward pass and hand-derived backward pass of the decoder.
//!
//! Pre-norm blocks with parameter-free RMS normalization:
//!
//! ```text
//! x0 = E[tok] + P[pos]
//! h  = x + Attn(rms(x)) Wo        (causal, multi-head)
//! y  = h + gelu(rms(h) W1) W2
//! logits = rms(y_last_layer) Wout
//! ```
//!
//! Matrices are row-major and act on row vectors (`x W`).

use super::params::{Offsets, Params};
use crate::microworld::vocab::special;

const RMS_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `c = alpha * op(a) * op(b) + beta * c` over strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: (&mut [f64], isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        (rows.saturating_sub(1)) * rs as usize + (cols.saturating_sub(1)) * cs as usize + 1
    };
    assert!(a.0.len() >= span(m, k, a.1, a.2) || k == 0);
    assert!(b.0.len() >= span(k, n, b.1, b.2) || k == 0);
    assert!(c.0.len() >= span(m, n, c.1, c.2));
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.0.as_mut_ptr(),
            c.1,
            c.2,
        );
    }
}

/// Row-major `m x n` matrix view.
fn rm(s: &[f64], n: usize) -> (&[f64], isize, isize) {
    (s, n as isize, 1)
}

/// Transposed view of a row-major matrix with `n` columns.
fn tr(s: &[f64], n: usize) -> (&[f64], isize, isize) {
    (s, 1, n as isize)
}

fn rms_forward(x: &[f64], d: usize, u: &mut [f64], r: &mut [f64]) {
    for (t, row) in x.chunks_exact(d).enumerate() {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let rt = (ms + RMS_EPS).sqrt();
        r[t] = rt;
        for (o, v) in u[t * d..(t + 1) * d].iter_mut().zip(row) {
            *o = v / rt;
        }
    }
}

/// Accumulates `dx += d rms(x) / dx · du`.
fn rms_backward(du: &[f64], u: &[f64], r: &[f64], d: usize, dx: &mut [f64]) {
    for t in 0..r.len() {
        let (dur, ur) = (&du[t * d..(t + 1) * d], &u[t * d..(t + 1) * d]);
        let dot = dur.iter().zip(ur).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for ((o, a), b) in dx[t * d..(t + 1) * d].iter_mut().zip(dur).zip(ur) {
            *o += (a - b * dot) / r[t];
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

struct LayerCache {
    r1: Vec<f64>,
    u1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>,
    ctx: Vec<f64>,
    r2: Vec<f64>,
    u2: Vec<f64>,
    g: Vec<f64>,
    ga: Vec<f64>,
}

/// Activations of one forward pass, kept for the backward pass.
pub(crate) struct Trace {
    tokens: Vec<usize>,
    pos_offset: usize,
    layers: Vec<LayerCache>,
    rf: Vec<f64>,
    uf: Vec<f64>,
    pub logit_from: usize,
    /// Rows `logit_from..n`, each of length `vocab`.
    pub logits: Vec<f64>,
}

impl Trace {
    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    pub fn logits_at(&self, pos: usize, vocab: usize) -> &[f64] {
        let i = pos - self.logit_from;
        &self.logits[i * vocab..(i + 1) * vocab]
    }
}

/// 0 up to and including the first separator (the scene), 1 after it.
fn segment_of(tokens: &[usize], t: usize) -> usize {
    usize::from(tokens[..t].contains(&special::SEP.id()))
}

/// Runs the decoder over `tokens`, producing logits for positions
/// `logit_from..tokens.len()`. Token `t` uses positional row `pos_offset + t`.
/// Token ids and length must already be checked.
pub(crate) fn forward(params: &Params, tokens: &[usize], pos_offset: usize, logit_from: usize) -> Trace {
    let cfg = &params.config;
    let off = Offsets::new(cfg);
    let (n, d, f, vsz) = (tokens.len(), cfg.d_model, cfg.ff_dim(), cfg.vocab);
    let (nh, dh) = (cfg.n_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let w = &params.data;
    debug_assert!(pos_offset + n <= cfg.max_len && logit_from < n);

    let mut x = vec![0.0; n * d];
    for (t, &tok) in tokens.iter().enumerate() {
        let e = &w[off.embedding + tok * d..off.embedding + (tok + 1) * d];
        let p = &w[off.positional + (pos_offset + t) * d..off.positional + (pos_offset + t + 1) * d];
        let sg = segment_of(tokens, t);
        let s = &w[off.segment + sg * d..off.segment + (sg + 1) * d];
        for (((o, a), b), c) in x[t * d..(t + 1) * d].iter_mut().zip(e).zip(p).zip(s) {
            *o = a + b + c;
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lo in &off.layers {
        let mut r1 = vec![0.0; n];
        let mut u1 = vec![0.0; n * d];
        rms_forward(&x, d, &mut u1, &mut r1);
        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        gemm(n, d, d, 1.0, rm(&u1, d), rm(&w[lo.wq..], d), 0.0, (&mut q, d as isize, 1));
        gemm(n, d, d, 1.0, rm(&u1, d), rm(&w[lo.wk..], d), 0.0, (&mut k, d as isize, 1));
        gemm(n, d, d, 1.0, rm(&u1, d), rm(&w[lo.wv..], d), 0.0, (&mut v, d as isize, 1));

        let mut att = vec![0.0; nh * n * n];
        let mut ctx = vec![0.0; n * d];
        for hd in 0..nh {
            let a = &mut att[hd * n * n..(hd + 1) * n * n];
            gemm(
                n,
                dh,
                n,
                scale,
                (&q[hd * dh..], d as isize, 1),
                (&k[hd * dh..], 1, d as isize),
                0.0,
                (a, n as isize, 1),
            );
            let bias = &w[lo.relpos + hd * cfg.max_len..lo.relpos + (hd + 1) * cfg.max_len];
            for t in 0..n {
                let row = &mut a[t * n..(t + 1) * n];
                for (j, z) in row[..=t].iter_mut().enumerate() {
                    *z += bias[t - j];
                }
                let m = row[..=t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for z in &mut row[..=t] {
                    *z = (*z - m).exp();
                    s += *z;
                }
                for z in &mut row[..=t] {
                    *z /= s;
                }
                row[t + 1..].iter_mut().for_each(|z| *z = 0.0);
            }
            gemm(n, n, dh, 1.0, rm(a, n), (&v[hd * dh..], d as isize, 1), 0.0, (&mut ctx[hd * dh..], d as isize, 1));
        }

        let mut h = x.clone();
        gemm(n, d, d, 1.0, rm(&ctx, d), rm(&w[lo.wo..], d), 1.0, (&mut h, d as isize, 1));
        let mut r2 = vec![0.0; n];
        let mut u2 = vec![0.0; n * d];
        rms_forward(&h, d, &mut u2, &mut r2);
        let mut g = vec![0.0; n * f];
        gemm(n, d, f, 1.0, rm(&u2, d), rm(&w[lo.w1..], f), 0.0, (&mut g, f as isize, 1));
        let ga: Vec<f64> = g.iter().map(|&z| gelu(z)).collect();
        let mut y = h.clone();
        gemm(n, f, d, 1.0, rm(&ga, f), rm(&w[lo.w2..], d), 1.0, (&mut y, d as isize, 1));

        x = y;
        layers.push(LayerCache { r1, u1, q, k, v, att, ctx, r2, u2, g, ga });
    }

    let mut rf = vec![0.0; n];
    let mut uf = vec![0.0; n * d];
    rms_forward(&x, d, &mut uf, &mut rf);
    let m = n - logit_from;
    let mut logits = vec![0.0; m * vsz];
    gemm(m, d, vsz, 1.0, rm(&uf[logit_from * d..], d), rm(&w[off.output..], vsz), 0.0, (&mut logits, vsz as isize, 1));

    Trace { tokens: tokens.to_vec(), pos_offset, layers, rf, uf, logit_from, logits }
}

/// Accumulates into `grad` the parameter gradient of `sum(dlogits ⊙ logits)`.
pub(crate) fn backward(params: &Params, trace: &Trace, dlogits: &[f64], grad: &mut [f64]) {
    let cfg = &params.config;
    let off = Offsets::new(cfg);
    let (n, d, f, vsz) = (trace.n(), cfg.d_model, cfg.ff_dim(), cfg.vocab);
    let (nh, dh) = (cfg.n_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let w = &params.data;
    let lf = trace.logit_from;
    let m = n - lf;
    debug_assert_eq!(dlogits.len(), m * vsz);

    gemm(d, m, vsz, 1.0, tr(&trace.uf[lf * d..], d), rm(dlogits, vsz), 1.0, (&mut grad[off.output..], vsz as isize, 1));
    let mut duf = vec![0.0; n * d];
    gemm(m, vsz, d, 1.0, rm(dlogits, vsz), tr(&w[off.output..], vsz), 0.0, (&mut duf[lf * d..], d as isize, 1));
    let mut dy = vec![0.0; n * d];
    rms_backward(&duf, &trace.uf, &trace.rf, d, &mut dy);

    for (lc, lo) in trace.layers.iter().zip(&off.layers).rev() {
        // y = h + gelu(rms(h) W1) W2
        gemm(f, n, d, 1.0, tr(&lc.ga, f), rm(&dy, d), 1.0, (&mut grad[lo.w2..], d as isize, 1));
        let mut dg = vec![0.0; n * f];
        gemm(n, d, f, 1.0, rm(&dy, d), tr(&w[lo.w2..], d), 0.0, (&mut dg, f as isize, 1));
        for (dz, &z) in dg.iter_mut().zip(&lc.g) {
            *dz *= gelu_grad(z);
        }
        gemm(d, n, f, 1.0, tr(&lc.u2, d), rm(&dg, f), 1.0, (&mut grad[lo.w1..], f as isize, 1));
        let mut du2 = vec![0.0; n * d];
        gemm(n, f, d, 1.0, rm(&dg, f), tr(&w[lo.w1..], f), 0.0, (&mut du2, d as isize, 1));
        let mut dh_ = dy;
        rms_backward(&du2, &lc.u2, &lc.r2, d, &mut dh_);

        // h = x + ctx Wo
        gemm(d, n, d, 1.0, tr(&lc.ctx, d), rm(&dh_, d), 1.0, (&mut grad[lo.wo..], d as isize, 1));
        let mut dctx = vec![0.0; n * d];
        gemm(n, d, d, 1.0, rm(&dh_, d), tr(&w[lo.wo..], d), 0.0, (&mut dctx, d as isize, 1));

        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut da = vec![0.0; n * n];
        for hd in 0..nh {
            let a = &lc.att[hd * n * n..(hd + 1) * n * n];
            // dA = dctx_h V_h^T
            gemm(n, dh, n, 1.0, (&dctx[hd * dh..], d as isize, 1), (&lc.v[hd * dh..], 1, d as isize), 0.0, (&mut da, n as isize, 1));
            // dV_h = A^T dctx_h
            gemm(n, n, dh, 1.0, tr(a, n), (&dctx[hd * dh..], d as isize, 1), 0.0, (&mut dv[hd * dh..], d as isize, 1));
            for t in 0..n {
                let ar = &a[t * n..(t + 1) * n];
                let dr = &mut da[t * n..(t + 1) * n];
                let dot: f64 = ar[..=t].iter().zip(&dr[..=t]).map(|(x, y)| x * y).sum();
                for j in 0..=t {
                    dr[j] = ar[j] * (dr[j] - dot);
                }
                dr[t + 1..].iter_mut().for_each(|z| *z = 0.0);
                let gb = &mut grad[lo.relpos + hd * cfg.max_len..];
                for j in 0..=t {
                    gb[t - j] += dr[j];
                }
            }
            gemm(n, n, dh, scale, rm(&da, n), (&lc.k[hd * dh..], d as isize, 1), 0.0, (&mut dq[hd * dh..], d as isize, 1));
            gemm(n, n, dh, scale, tr(&da, n), (&lc.q[hd * dh..], d as isize, 1), 0.0, (&mut dk[hd * dh..], d as isize, 1));
        }

        let mut du1 = vec![0.0; n * d];
        for (dm, wo) in [(&dq, lo.wq), (&dk, lo.wk), (&dv, lo.wv)] {
            gemm(d, n, d, 1.0, tr(&lc.u1, d), rm(dm, d), 1.0, (&mut grad[wo..], d as isize, 1));
            gemm(n, d, d, 1.0, rm(dm, d), tr(&w[wo..], d), 1.0, (&mut du1, d as isize, 1));
        }
        let mut dx = dh_;
        rms_backward(&du1, &lc.u1, &lc.r1, d, &mut dx);
        dy = dx;
    }

    for (t, &tok) in trace.tokens.iter().enumerate() {
        let src = &dy[t * d..(t + 1) * d];
        for (g, s) in grad[off.embedding + tok * d..off.embedding + (tok + 1) * d].iter_mut().zip(src) {
            *g += s;
        }
        let pt = trace.pos_offset + t;
        for (g, s) in grad[off.positional + pt * d..off.positional + (pt + 1) * d].iter_mut().zip(src) {
            *g += s;
        }
        let sg = segment_of(&trace.tokens, t);
        for (g, s) in grad[off.segment + sg * d..off.segment + (sg + 1) * d].iter_mut().zip(src) {
            *g += s;
        }
    }
}
