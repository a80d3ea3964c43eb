//! Encoder-decoder transformer in four size classes.
//!
//! Pre-norm residual blocks, fixed sinusoidal positions, one embedding table
//! shared by source and target, separate output projection.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{CrossEntropyOut, Graph, Var};
use super::kernels::{self, AttentionShape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::tokenizer::SpecialTokens;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeClass {
    Tiny,
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 4] = [SizeClass::Large, SizeClass::Medium, SizeClass::Small, SizeClass::Tiny];

    /// `(total layers, feed-forward dim, hidden dim)` before scaling.
    pub fn full_scale_dims(self) -> (usize, usize, usize) {
        match self {
            SizeClass::Large => (12, 2048, 512),
            SizeClass::Medium => (6, 2048, 512),
            SizeClass::Small => (6, 1024, 256),
            SizeClass::Tiny => (2, 1024, 256),
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeClass::Large => "Large",
            SizeClass::Medium => "Medium",
            SizeClass::Small => "Small",
            SizeClass::Tiny => "Tiny",
        })
    }
}

impl FromStr for SizeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "large" => Ok(SizeClass::Large),
            "medium" => Ok(SizeClass::Medium),
            "small" => Ok(SizeClass::Small),
            "tiny" => Ok(SizeClass::Tiny),
            _ => Err(Error::validation("size_class", format!("unknown size {s:?}"))),
        }
    }
}

/// Default divisor applied to every dimension at desk scale.
pub const DESK_SCALE_FACTOR: usize = 4;
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub size_class: SizeClass,
    /// Encoder plus decoder layers, split evenly.
    pub total_layers: usize,
    pub ff_dim: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub dropout: f64,
    /// Divisor that produced `ff_dim` and `hidden_dim` from the full-scale
    /// preset (1 for full scale).
    pub scale_factor: usize,
}

impl ArchConfig {
    /// Preset for `size` with `ff_dim` and `hidden_dim` divided by
    /// `scale_factor`. Heads follow the 64-wide convention of the unscaled
    /// hidden size and stay fixed under scaling.
    pub fn preset(size: SizeClass, scale_factor: usize) -> Result<Self> {
        if scale_factor == 0 {
            return Err(Error::validation("scale_factor", "must be >= 1"));
        }
        let (layers, ff, hidden) = size.full_scale_dims();
        if ff % scale_factor != 0 || hidden % scale_factor != 0 {
            return Err(Error::validation(
                "scale_factor",
                format!("{scale_factor} does not divide the {size} dimensions"),
            ));
        }
        let arch = ArchConfig {
            size_class: size,
            total_layers: layers,
            ff_dim: ff / scale_factor,
            hidden_dim: hidden / scale_factor,
            num_heads: hidden / 64,
            dropout: DEFAULT_DROPOUT,
            scale_factor,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn full_scale(size: SizeClass) -> Self {
        ArchConfig::preset(size, 1).expect("full-scale presets are valid")
    }

    pub fn desk(size: SizeClass) -> Self {
        ArchConfig::preset(size, DESK_SCALE_FACTOR).expect("desk presets are valid")
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_layers == 0 || self.total_layers % 2 != 0 {
            return Err(Error::validation("total_layers", "must be a positive even number"));
        }
        if self.hidden_dim == 0 || self.ff_dim == 0 || self.num_heads == 0 {
            return Err(Error::validation("hidden_dim", "dimensions must be positive"));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::validation(
                "hidden_dim",
                format!("{} is not divisible by {} heads", self.hidden_dim, self.num_heads),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout", "must be within [0, 1)"));
        }
        Ok(())
    }

    pub fn encoder_layers(&self) -> usize {
        self.total_layers / 2
    }

    pub fn decoder_layers(&self) -> usize {
        self.total_layers / 2
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FfIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct EncLayerIdx {
    pub norm1: NormIdx,
    pub attn: AttnIdx,
    pub norm2: NormIdx,
    pub ff: FfIdx,
}

#[derive(Clone, Debug)]
pub(crate) struct DecLayerIdx {
    pub norm1: NormIdx,
    pub self_attn: AttnIdx,
    pub norm2: NormIdx,
    pub cross_attn: AttnIdx,
    pub norm3: NormIdx,
    pub ff: FfIdx,
}

/// Positions of every parameter in the model's flat list.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub embed: usize,
    pub enc: Vec<EncLayerIdx>,
    pub enc_norm: NormIdx,
    pub dec: Vec<DecLayerIdx>,
    pub dec_norm: NormIdx,
    pub out_w: usize,
    pub out_b: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

struct LayoutBuilder {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.specs.push((name, shape.to_vec(), init));
        self.specs.len() - 1
    }

    fn norm(&mut self, p: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.add(format!("{p}.gain"), &[d], Init::Ones),
            bias: self.add(format!("{p}.bias"), &[d], Init::Zeros),
        }
    }

    fn attn(&mut self, p: &str, d: usize) -> AttnIdx {
        let w = Init::Uniform { fan_in: d };
        AttnIdx {
            wq: self.add(format!("{p}.wq"), &[d, d], w),
            bq: self.add(format!("{p}.bq"), &[d], Init::Zeros),
            wk: self.add(format!("{p}.wk"), &[d, d], w),
            bk: self.add(format!("{p}.bk"), &[d], Init::Zeros),
            wv: self.add(format!("{p}.wv"), &[d, d], w),
            bv: self.add(format!("{p}.bv"), &[d], Init::Zeros),
            wo: self.add(format!("{p}.wo"), &[d, d], w),
            bo: self.add(format!("{p}.bo"), &[d], Init::Zeros),
        }
    }

    fn ff(&mut self, p: &str, d: usize, f: usize) -> FfIdx {
        FfIdx {
            w1: self.add(format!("{p}.w1"), &[d, f], Init::Uniform { fan_in: d }),
            b1: self.add(format!("{p}.b1"), &[f], Init::Zeros),
            w2: self.add(format!("{p}.w2"), &[f, d], Init::Uniform { fan_in: f }),
            b2: self.add(format!("{p}.b2"), &[d], Init::Zeros),
        }
    }
}

fn build_layout(arch: &ArchConfig, vocab: usize) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
    let (d, f) = (arch.hidden_dim, arch.ff_dim);
    let mut b = LayoutBuilder { specs: Vec::new() };
    let embed = b.add("embed".into(), &[vocab, d], Init::Uniform { fan_in: d });
    let enc = (0..arch.encoder_layers())
        .map(|l| EncLayerIdx {
            norm1: b.norm(&format!("enc.{l}.norm1"), d),
            attn: b.attn(&format!("enc.{l}.attn"), d),
            norm2: b.norm(&format!("enc.{l}.norm2"), d),
            ff: b.ff(&format!("enc.{l}.ff"), d, f),
        })
        .collect();
    let enc_norm = b.norm("enc.norm", d);
    let dec = (0..arch.decoder_layers())
        .map(|l| DecLayerIdx {
            norm1: b.norm(&format!("dec.{l}.norm1"), d),
            self_attn: b.attn(&format!("dec.{l}.self"), d),
            norm2: b.norm(&format!("dec.{l}.norm2"), d),
            cross_attn: b.attn(&format!("dec.{l}.cross"), d),
            norm3: b.norm(&format!("dec.{l}.norm3"), d),
            ff: b.ff(&format!("dec.{l}.ff"), d, f),
        })
        .collect();
    let dec_norm = b.norm("dec.norm", d);
    let out_w = b.add("out.w".into(), &[d, vocab], Init::Uniform { fan_in: d });
    let out_b = b.add("out.b".into(), &[vocab], Init::Zeros);
    (
        Layout {
            embed,
            enc,
            enc_norm,
            dec,
            dec_norm,
            out_w,
            out_b,
        },
        b.specs,
    )
}

/// Transformer weights in a fixed, named order.
#[derive(Clone, Debug)]
pub struct TransformerModel {
    arch: ArchConfig,
    vocab_size: usize,
    names: Vec<String>,
    params: Vec<Tensor>,
    pub(crate) layout: Layout,
}

impl PartialEq for TransformerModel {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.vocab_size == other.vocab_size && self.params == other.params
    }
}

/// Builds a model initialized uniformly in `±sqrt(3 / fan_in)`, biases and
/// norm offsets at zero, norm gains at one.
pub fn build_model(arch: &ArchConfig, vocab_size: usize, seed: u64) -> Result<TransformerModel> {
    arch.validate()?;
    if vocab_size <= SpecialTokens::COUNT {
        return Err(Error::validation(
            "vocab_size",
            format!("must exceed the {} special tokens", SpecialTokens::COUNT),
        ));
    }
    let (layout, specs) = build_layout(arch, vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::with_capacity(specs.len());
    let mut params = Vec::with_capacity(specs.len());
    for (name, shape, init) in specs {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform { fan_in } => {
                let a = (3.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
        };
        names.push(name);
        params.push(Tensor::from_vec(&shape, data));
    }
    Ok(TransformerModel {
        arch: arch.clone(),
        vocab_size,
        names,
        params,
        layout,
    })
}

impl TransformerModel {
    /// Rebuilds a model from named tensors (e.g. read from a checkpoint).
    pub fn from_parameters(arch: &ArchConfig, vocab_size: usize, named: Vec<(String, Tensor)>) -> Result<Self> {
        arch.validate()?;
        let (layout, specs) = build_layout(arch, vocab_size);
        if specs.len() != named.len() {
            return Err(Error::validation(
                "parameters",
                format!("expected {} tensors, found {}", specs.len(), named.len()),
            ));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut params = Vec::with_capacity(named.len());
        for ((want, shape, _), (name, t)) in specs.into_iter().zip(named) {
            if want != name || shape != t.shape() {
                return Err(Error::validation(
                    "parameters",
                    format!("expected {want} {shape:?}, found {name} {:?}", t.shape()),
                ));
            }
            names.push(name);
            params.push(t);
        }
        Ok(TransformerModel {
            arch: arch.clone(),
            vocab_size,
            names,
            params,
            layout,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, i: usize) -> &Tensor {
        &self.params[i]
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Rounds every weight to the nearest `f32`, matching what a
    /// checkpoint file stores.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub(crate) fn check_ids(&self, ids: &[u32], what: &str) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::validation(what, "sequence is empty"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.vocab_size) {
            return Err(Error::validation(
                what,
                format!("token id {bad} out of range for vocabulary of {}", self.vocab_size),
            ));
        }
        Ok(())
    }
}

/// Number of parameters for an architecture, without allocating it.
pub fn parameter_count(arch: &ArchConfig, vocab_size: usize) -> usize {
    build_layout(arch, vocab_size)
        .1
        .iter()
        .map(|(_, s, _)| s.iter().product::<usize>())
        .sum()
}

/// Source/target sequences (without BOS/EOS) for one training step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub source: Vec<Vec<u32>>,
    pub target: Vec<Vec<u32>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// Padded id matrices for one batch.
pub(crate) struct PaddedBatch {
    pub batch: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src_ids: Vec<u32>,
    pub src_lens: Vec<usize>,
    pub dec_in: Vec<u32>,
    pub dec_out: Vec<Option<u32>>,
    pub dec_lens: Vec<usize>,
}

impl PaddedBatch {
    /// Decoder input is `BOS y`, decoder output `y EOS`.
    pub fn new(batch: &Batch) -> Self {
        let b = batch.len();
        let src_len = batch.source.iter().map(Vec::len).max().unwrap_or(0);
        let tgt_len = batch.target.iter().map(|t| t.len() + 1).max().unwrap_or(1);
        let mut src_ids = vec![SpecialTokens::PAD; b * src_len];
        let mut dec_in = vec![SpecialTokens::PAD; b * tgt_len];
        let mut dec_out = vec![None; b * tgt_len];
        for (i, (s, t)) in batch.source.iter().zip(&batch.target).enumerate() {
            src_ids[i * src_len..i * src_len + s.len()].copy_from_slice(s);
            dec_in[i * tgt_len] = SpecialTokens::BOS;
            for (j, &y) in t.iter().enumerate() {
                dec_in[i * tgt_len + j + 1] = y;
                dec_out[i * tgt_len + j] = (y != SpecialTokens::PAD).then_some(y);
            }
            dec_out[i * tgt_len + t.len()] = Some(SpecialTokens::EOS);
        }
        PaddedBatch {
            batch: b,
            src_len,
            tgt_len,
            src_ids,
            src_lens: batch.source.iter().map(Vec::len).collect(),
            dec_in,
            dec_out,
            dec_lens: batch.target.iter().map(|t| t.len() + 1).collect(),
        }
    }
}

/// Sinusoidal positions for `batch` sequences of length `len`, flattened.
pub(crate) fn positions(batch: usize, len: usize, d: usize) -> Tensor {
    let mut one = vec![0.0; len * d];
    for p in 0..len {
        kernels::position_encoding(p, d, &mut one[p * d..(p + 1) * d]);
    }
    let mut all = Vec::with_capacity(batch * len * d);
    for _ in 0..batch {
        all.extend_from_slice(&one);
    }
    Tensor::from_vec(&[batch * len, d], all)
}

/// Builds the forward pass on a tape. Dropout is applied only when an RNG
/// is supplied.
pub(crate) struct Forward<'g, 'a, R: Rng> {
    pub g: &'g mut Graph<'a>,
    pub p: Vec<Var>,
    pub arch: &'a ArchConfig,
    pub layout: &'a Layout,
    pub rng: Option<&'g mut R>,
}

impl<'g, 'a, R: Rng> Forward<'g, 'a, R> {
    pub fn new(g: &'g mut Graph<'a>, model: &'a TransformerModel, rng: Option<&'g mut R>) -> Self {
        let p = model.params.iter().map(|t| g.param(t)).collect();
        Forward {
            g,
            p,
            arch: &model.arch,
            layout: &model.layout,
            rng,
        }
    }

    fn dropout(&mut self, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.arch.dropout > 0.0 => self.g.dropout(x, self.arch.dropout, rng),
            _ => x,
        }
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Var {
        let y = self.g.matmul(x, self.p[w]);
        self.g.add_bias(y, self.p[b])
    }

    fn norm(&mut self, x: Var, n: NormIdx) -> Var {
        self.g.layer_norm(x, self.p[n.gain], self.p[n.bias])
    }

    fn attention(&mut self, xq: Var, xkv: Var, a: AttnIdx, shape: AttentionShape) -> Var {
        let q = self.linear(xq, a.wq, a.bq);
        let k = self.linear(xkv, a.wk, a.bk);
        let v = self.linear(xkv, a.wv, a.bv);
        let ctx = self.g.attention(q, k, v, shape);
        self.linear(ctx, a.wo, a.bo)
    }

    fn feed_forward(&mut self, x: Var, f: FfIdx) -> Var {
        let h = self.linear(x, f.w1, f.b1);
        let h = self.g.relu(h);
        let h = self.dropout(h);
        self.linear(h, f.w2, f.b2)
    }

    fn residual(&mut self, x: Var, y: Var) -> Var {
        let y = self.dropout(y);
        self.g.add(x, y)
    }

    fn embed(&mut self, ids: &[u32], batch: usize, len: usize) -> Var {
        let d = self.arch.hidden_dim;
        let e = self.g.embedding(self.p[self.layout.embed], ids, (d as f64).sqrt());
        let x = self.g.add_const(e, &positions(batch, len, d));
        self.dropout(x)
    }

    /// Encoder output, `[batch * src_len, d]`.
    pub fn encode(&mut self, pb: &PaddedBatch) -> Var {
        let (d, h) = (self.arch.hidden_dim, self.arch.num_heads);
        let mut x = self.embed(&pb.src_ids, pb.batch, pb.src_len);
        let shape = AttentionShape {
            batch: pb.batch,
            query_len: pb.src_len,
            key_len: pb.src_len,
            heads: h,
            dim: d,
            causal: false,
            key_lens: pb.src_lens.clone(),
        };
        for l in 0..self.layout.enc.len() {
            let layer = self.layout.enc[l].clone();
            let n = self.norm(x, layer.norm1);
            let a = self.attention(n, n, layer.attn, shape.clone());
            x = self.residual(x, a);
            let n = self.norm(x, layer.norm2);
            let f = self.feed_forward(n, layer.ff);
            x = self.residual(x, f);
        }
        self.norm(x, self.layout.enc_norm)
    }

    /// Logits `[batch * tgt_len, vocab]`.
    pub fn decode(&mut self, pb: &PaddedBatch, memory: Var) -> Var {
        let (d, h) = (self.arch.hidden_dim, self.arch.num_heads);
        let mut y = self.embed(&pb.dec_in, pb.batch, pb.tgt_len);
        let self_shape = AttentionShape {
            batch: pb.batch,
            query_len: pb.tgt_len,
            key_len: pb.tgt_len,
            heads: h,
            dim: d,
            causal: true,
            key_lens: pb.dec_lens.clone(),
        };
        let cross_shape = AttentionShape {
            batch: pb.batch,
            query_len: pb.tgt_len,
            key_len: pb.src_len,
            heads: h,
            dim: d,
            causal: false,
            key_lens: pb.src_lens.clone(),
        };
        for l in 0..self.layout.dec.len() {
            let layer = self.layout.dec[l].clone();
            let n = self.norm(y, layer.norm1);
            let a = self.attention(n, n, layer.self_attn, self_shape.clone());
            y = self.residual(y, a);
            let n = self.norm(y, layer.norm2);
            let a = self.attention(n, memory, layer.cross_attn, cross_shape.clone());
            y = self.residual(y, a);
            let n = self.norm(y, layer.norm3);
            let f = self.feed_forward(n, layer.ff);
            y = self.residual(y, f);
        }
        let y = self.norm(y, self.layout.dec_norm);
        self.linear(y, self.layout.out_w, self.layout.out_b)
    }
}

/// Decoder logits for every position of `target_prefix` given the full
/// source; row `t` depends only on prefix positions `<= t`.
pub fn forward(model: &TransformerModel, source_ids: &[u32], target_prefix_ids: &[u32]) -> Result<Tensor> {
    model.check_ids(source_ids, "source")?;
    model.check_ids(target_prefix_ids, "target_prefix")?;
    let pb = PaddedBatch {
        batch: 1,
        src_len: source_ids.len(),
        tgt_len: target_prefix_ids.len(),
        src_ids: source_ids.to_vec(),
        src_lens: vec![source_ids.len()],
        dec_in: target_prefix_ids.to_vec(),
        dec_out: vec![None; target_prefix_ids.len()],
        dec_lens: vec![target_prefix_ids.len()],
    };
    let mut g = Graph::new();
    let mut f = Forward::<ChaCha8Rng>::new(&mut g, model, None);
    let memory = f.encode(&pb);
    let logits = f.decode(&pb, memory);
    Ok(g.value(logits).clone())
}

/// Training objective options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub label_smoothing: f64,
    /// Seed for dropout masks; `None` disables dropout.
    pub dropout_seed: Option<u64>,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            label_smoothing: 0.0,
            dropout_seed: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean smoothed cross-entropy over non-pad target tokens.
    pub loss: f64,
    /// Mean gold-token negative log-likelihood.
    pub nll: f64,
    pub tokens: usize,
    /// One gradient per parameter, in model order.
    pub gradients: Vec<Tensor>,
}

pub fn loss_and_gradients(model: &TransformerModel, batch: &Batch, opts: &LossOptions) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::validation("batch", "batch is empty"));
    }
    if batch.source.len() != batch.target.len() {
        return Err(Error::Alignment {
            what: "batch source and target counts".into(),
            left: batch.source.len(),
            right: batch.target.len(),
        });
    }
    for (s, t) in batch.source.iter().zip(&batch.target) {
        model.check_ids(s, "source")?;
        model.check_ids(t, "target")?;
        if t.iter().all(|&y| y == SpecialTokens::PAD) {
            return Err(Error::validation("target", "target consists only of padding"));
        }
    }
    let pb = PaddedBatch::new(batch);
    let mut rng = opts.dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let mut g = Graph::new();
    let (ce, params): (CrossEntropyOut, Vec<Var>) = {
        let mut f = Forward::new(&mut g, model, rng.as_mut());
        let memory = f.encode(&pb);
        let logits = f.decode(&pb, memory);
        let p = f.p.clone();
        (f.g.cross_entropy(logits, &pb.dec_out, opts.label_smoothing), p)
    };
    g.backward(ce.loss);
    let loss = g.value(ce.loss).item();
    let gradients = params
        .iter()
        .zip(&model.params)
        .map(|(&v, t)| {
            let data = g.take_grad(v).unwrap_or_else(|| vec![0.0; t.len()]);
            Tensor::from_vec(t.shape(), data)
        })
        .collect();
    Ok(LossOutput {
        loss,
        nll: ce.nll,
        tokens: ce.count,
        gradients,
    })
}

/// Loss only, no backward pass.
pub fn loss(model: &TransformerModel, batch: &Batch, opts: &LossOptions) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::validation("batch", "batch is empty"));
    }
    let pb = PaddedBatch::new(batch);
    let mut rng = opts.dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let mut g = Graph::new();
    let mut f = Forward::new(&mut g, model, rng.as_mut());
    let memory = f.encode(&pb);
    let logits = f.decode(&pb, memory);
    let ce = f.g.cross_entropy(logits, &pb.dec_out, opts.label_smoothing);
    Ok(g.value(ce.loss).item())
}
