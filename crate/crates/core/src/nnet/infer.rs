//! Incremental decoding: the source is encoded once and decoder self-attention
//! keys and values are cached per hypothesis, so each step costs one row per
//! live hypothesis instead of a full re-run of the prefix.

use rand_chacha::ChaCha8Rng;

use super::graph::Graph;
use super::kernels::{self, gemm};
use super::model::{AttnIdx, FfIdx, Forward, NormIdx, PaddedBatch, TransformerModel};
use super::tensor::Tensor;
use crate::error::Result;

/// Per-layer cross-attention keys and values for one encoded source.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    src_len: usize,
    cross_k: Vec<Vec<f64>>,
    cross_v: Vec<Vec<f64>>,
}

impl EncodedSource {
    pub fn src_len(&self) -> usize {
        self.src_len
    }
}

/// Decoder state for a set of live hypotheses sharing one source.
#[derive(Clone, Debug)]
pub struct DecoderState {
    /// `self_k[layer][hyp]` holds `steps * d` values.
    self_k: Vec<Vec<Vec<f64>>>,
    self_v: Vec<Vec<Vec<f64>>>,
    steps: usize,
}

impl DecoderState {
    pub fn num_hypotheses(&self) -> usize {
        self.self_k.first().map_or(0, Vec::len)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Keeps hypotheses `parents[i]` as the new hypothesis `i`.
    pub fn reorder(&mut self, parents: &[usize]) {
        for layer in self.self_k.iter_mut().chain(self.self_v.iter_mut()) {
            let next: Vec<Vec<f64>> = parents.iter().map(|&p| layer[p].clone()).collect();
            *layer = next;
        }
    }
}

fn linear(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (k, n) = (w.rows(), w.cols());
    let mut out = vec![0.0; rows * n];
    gemm(rows, k, n, x, false, w.data(), false, &mut out, 0.0);
    kernels::add_bias(&mut out, b.data());
    out
}

fn norm(model: &TransformerModel, x: &[f64], n: NormIdx) -> Vec<f64> {
    kernels::layer_norm(x, model.param(n.gain).data(), model.param(n.bias).data()).0
}

fn add_in_place(x: &mut [f64], y: &[f64]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

/// Single-query attention of `q` (`d` values) over `len` cached rows.
fn attend_one(q: &[f64], keys: &[f64], values: &[f64], len: usize, heads: usize, out: &mut [f64], scores: &mut Vec<f64>) {
    let d = q.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    scores.resize(len, 0.0);
    for h in 0..heads {
        let off = h * dh;
        let qh = &q[off..off + dh];
        for (j, s) in scores.iter_mut().enumerate() {
            let kj = &keys[j * d + off..j * d + off + dh];
            *s = scale * qh.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
        }
        kernels::softmax_in_place(scores);
        let o = &mut out[off..off + dh];
        o.iter_mut().for_each(|v| *v = 0.0);
        for (j, &p) in scores.iter().enumerate() {
            let vj = &values[j * d + off..j * d + off + dh];
            for (a, b) in o.iter_mut().zip(vj) {
                *a += p * b;
            }
        }
    }
}

pub struct IncrementalDecoder<'m> {
    model: &'m TransformerModel,
}

impl<'m> IncrementalDecoder<'m> {
    pub fn new(model: &'m TransformerModel) -> Self {
        IncrementalDecoder { model }
    }

    pub fn model(&self) -> &TransformerModel {
        self.model
    }

    pub fn encode(&self, source_ids: &[u32]) -> Result<EncodedSource> {
        self.model.check_ids(source_ids, "source")?;
        let out = encoder_output(self.model, source_ids);
        let s = source_ids.len();
        let model = self.model;
        let mut cross_k = Vec::new();
        let mut cross_v = Vec::new();
        for layer in &model.layout.dec {
            let a = layer.cross_attn;
            cross_k.push(linear(out.data(), s, model.param(a.wk), model.param(a.bk)));
            cross_v.push(linear(out.data(), s, model.param(a.wv), model.param(a.bv)));
        }
        Ok(EncodedSource {
            src_len: s,
            cross_k,
            cross_v,
        })
    }

    /// State with `n` empty hypotheses.
    pub fn start(&self, n: usize) -> DecoderState {
        let layers = self.model.layout.dec.len();
        DecoderState {
            self_k: vec![vec![Vec::new(); n]; layers],
            self_v: vec![vec![Vec::new(); n]; layers],
            steps: 0,
        }
    }

    /// Feeds `tokens[i]` to hypothesis `i` and returns log-probabilities of
    /// the next token, `[n, vocab]` row-major.
    pub fn step(&self, enc: &EncodedSource, state: &mut DecoderState, tokens: &[u32]) -> Vec<f64> {
        let model = self.model;
        let arch = model.arch();
        let (d, heads) = (arch.hidden_dim, arch.num_heads);
        let n = tokens.len();
        assert_eq!(n, state.num_hypotheses(), "token count differs from hypothesis count");
        let t = state.steps;
        let mut pos = vec![0.0; d];
        kernels::position_encoding(t, d, &mut pos);
        let embed = model.param(model.layout.embed);
        let escale = (d as f64).sqrt();
        let mut x = Vec::with_capacity(n * d);
        for &tok in tokens {
            x.extend(embed.row(tok as usize).iter().zip(&pos).map(|(e, p)| e * escale + p));
        }
        let mut ctx = vec![0.0; n * d];
        let mut scores = Vec::new();
        for (l, layer) in model.layout.dec.iter().enumerate() {
            let h = norm(model, &x, layer.norm1);
            let a: AttnIdx = layer.self_attn;
            let q = linear(&h, n, model.param(a.wq), model.param(a.bq));
            let k = linear(&h, n, model.param(a.wk), model.param(a.bk));
            let v = linear(&h, n, model.param(a.wv), model.param(a.bv));
            for i in 0..n {
                state.self_k[l][i].extend_from_slice(&k[i * d..(i + 1) * d]);
                state.self_v[l][i].extend_from_slice(&v[i * d..(i + 1) * d]);
                attend_one(
                    &q[i * d..(i + 1) * d],
                    &state.self_k[l][i],
                    &state.self_v[l][i],
                    t + 1,
                    heads,
                    &mut ctx[i * d..(i + 1) * d],
                    &mut scores,
                );
            }
            add_in_place(&mut x, &linear(&ctx, n, model.param(a.wo), model.param(a.bo)));

            let h = norm(model, &x, layer.norm2);
            let a: AttnIdx = layer.cross_attn;
            let q = linear(&h, n, model.param(a.wq), model.param(a.bq));
            for i in 0..n {
                attend_one(
                    &q[i * d..(i + 1) * d],
                    &enc.cross_k[l],
                    &enc.cross_v[l],
                    enc.src_len,
                    heads,
                    &mut ctx[i * d..(i + 1) * d],
                    &mut scores,
                );
            }
            add_in_place(&mut x, &linear(&ctx, n, model.param(a.wo), model.param(a.bo)));

            let h = norm(model, &x, layer.norm3);
            let f: FfIdx = layer.ff;
            let mut hid = linear(&h, n, model.param(f.w1), model.param(f.b1));
            hid.iter_mut().for_each(|v| *v = v.max(0.0));
            add_in_place(&mut x, &linear(&hid, n, model.param(f.w2), model.param(f.b2)));
        }
        let h = norm(model, &x, model.layout.dec_norm);
        let mut logits = linear(&h, n, model.param(model.layout.out_w), model.param(model.layout.out_b));
        for row in logits.chunks_exact_mut(model.vocab_size()) {
            kernels::log_softmax_in_place(row);
        }
        state.steps += 1;
        logits
    }
}

pub(crate) fn encoder_output(model: &TransformerModel, source_ids: &[u32]) -> Tensor {
    let pb = PaddedBatch {
        batch: 1,
        src_len: source_ids.len(),
        tgt_len: 0,
        src_ids: source_ids.to_vec(),
        src_lens: vec![source_ids.len()],
        dec_in: Vec::new(),
        dec_out: Vec::new(),
        dec_lens: Vec::new(),
    };
    let mut g = Graph::new();
    let mut f = Forward::<ChaCha8Rng>::new(&mut g, model, None);
    let memory = f.encode(&pb);
    g.value(memory).clone()
}
