//! Forward and backward kernels on raw row-major slices. Shared by the
//! autodiff tape and the incremental decoder.

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// `c = op(a) * op(b) + beta * c` where `op(a)` is `m x k` and `op(b)` is
/// `k x n`. A transposed operand is stored with its two dims swapped.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays in
    // bounds of the respective slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Adds `bias` to every row of `x`.
pub fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Normalizes each row; returns (output, normalized input, 1/std per row).
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = gain.len();
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (xr[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, xhat, rstd)
}

pub fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gain: &[f64],
    dx: Option<&mut [f64]>,
    dgain: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
) {
    let d = gain.len();
    if let Some(dg) = dgain {
        for (dyr, xr) in dy.chunks_exact(d).zip(xhat.chunks_exact(d)) {
            for j in 0..d {
                dg[j] += dyr[j] * xr[j];
            }
        }
    }
    if let Some(db) = dbias {
        for dyr in dy.chunks_exact(d) {
            for j in 0..d {
                db[j] += dyr[j];
            }
        }
    }
    if let Some(dx) = dx {
        for (r, &rs) in rstd.iter().enumerate() {
            let dyr = &dy[r * d..(r + 1) * d];
            let xr = &xhat[r * d..(r + 1) * d];
            let mut mean_g = 0.0;
            let mut mean_gx = 0.0;
            for j in 0..d {
                let g = dyr[j] * gain[j];
                mean_g += g;
                mean_gx += g * xr[j];
            }
            mean_g /= d as f64;
            mean_gx /= d as f64;
            let dxr = &mut dx[r * d..(r + 1) * d];
            for j in 0..d {
                let g = dyr[j] * gain[j];
                dxr[j] += rs * (g - mean_g - xr[j] * mean_gx);
            }
        }
    }
}

/// In-place softmax over a row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// In-place log-softmax over a row.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Shape and masking of one multi-head attention call over a padded batch.
///
/// Queries are `[batch * query_len, d]`, keys and values
/// `[batch * key_len, d]`. Key `j` of sequence `b` is visible when
/// `j < key_lens[b]` and, for causal attention, `j <= i`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionShape {
    pub batch: usize,
    pub query_len: usize,
    pub key_len: usize,
    pub heads: usize,
    pub dim: usize,
    pub causal: bool,
    pub key_lens: Vec<usize>,
}

impl AttentionShape {
    fn visible(&self, b: usize, i: usize) -> usize {
        let lim = self.key_lens[b].min(self.key_len);
        if self.causal {
            lim.min(i + 1)
        } else {
            lim
        }
    }
}

/// Returns the attended output and the attention probabilities
/// (`[batch, heads, query_len, key_len]`, zero where masked).
pub fn attention(q: &[f64], k: &[f64], v: &[f64], s: &AttentionShape) -> (Vec<f64>, Vec<f64>) {
    let (d, h) = (s.dim, s.heads);
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; s.batch * s.query_len * d];
    let mut probs = vec![0.0; s.batch * h * s.query_len * s.key_len];
    let mut scores = vec![0.0; s.key_len];
    for b in 0..s.batch {
        for head in 0..h {
            let off = head * dh;
            for i in 0..s.query_len {
                let n = s.visible(b, i);
                let qi = &q[(b * s.query_len + i) * d + off..][..dh];
                for (j, sc) in scores[..n].iter_mut().enumerate() {
                    let kj = &k[(b * s.key_len + j) * d + off..][..dh];
                    *sc = scale * qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>();
                }
                softmax_in_place(&mut scores[..n]);
                let prow = ((b * h + head) * s.query_len + i) * s.key_len;
                probs[prow..prow + n].copy_from_slice(&scores[..n]);
                let o = &mut out[(b * s.query_len + i) * d + off..][..dh];
                for (j, &p) in scores[..n].iter().enumerate() {
                    let vj = &v[(b * s.key_len + j) * d + off..][..dh];
                    for (oo, vv) in o.iter_mut().zip(vj) {
                        *oo += p * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Accumulates gradients of [`attention`] into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    dout: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    s: &AttentionShape,
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let (d, h) = (s.dim, s.heads);
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dp = vec![0.0; s.key_len];
    for b in 0..s.batch {
        for head in 0..h {
            let off = head * dh;
            for i in 0..s.query_len {
                let n = s.visible(b, i);
                let prow = ((b * h + head) * s.query_len + i) * s.key_len;
                let p = &probs[prow..prow + n];
                let doi = &dout[(b * s.query_len + i) * d + off..][..dh];
                let mut dot = 0.0;
                for j in 0..n {
                    let vj = &v[(b * s.key_len + j) * d + off..][..dh];
                    dp[j] = doi.iter().zip(vj).map(|(a, c)| a * c).sum();
                    dot += p[j] * dp[j];
                    let dvj = &mut dv[(b * s.key_len + j) * d + off..][..dh];
                    for (g, o) in dvj.iter_mut().zip(doi) {
                        *g += p[j] * o;
                    }
                }
                let qi_off = (b * s.query_len + i) * d + off;
                for j in 0..n {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj_off = (b * s.key_len + j) * d + off;
                    for t in 0..dh {
                        dq[qi_off + t] += ds * k[kj_off + t];
                        dk[kj_off + t] += ds * q[qi_off + t];
                    }
                }
            }
        }
    }
}

/// Sinusoidal position encoding for one position.
pub fn position_encoding(pos: usize, d: usize, out: &mut [f64]) {
    for i in 0..d / 2 {
        let freq = (10_000f64).powf(-((2 * i) as f64) / d as f64);
        let angle = pos as f64 * freq;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    if d % 2 == 1 {
        out[d - 1] = 0.0;
    }
}
