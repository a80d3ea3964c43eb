//! Length-normalized beam search over the incremental decoder.

use std::cmp::Ordering;
use std::thread;

use crate::corpus::{ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::nnet::{IncrementalDecoder, TransformerModel};
use crate::tokenizer::{BpeModel, SpecialTokens};

pub const DEFAULT_BEAM_SIZE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Output length limit is `max_len_factor * source_len + max_len_offset`
    /// tokens, end-of-sentence included.
    pub max_len_factor: f64,
    pub max_len_offset: usize,
    pub length_penalty_alpha: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: DEFAULT_BEAM_SIZE,
            max_len_factor: 2.0,
            max_len_offset: 10,
            length_penalty_alpha: 1.0,
        }
    }
}

impl BeamConfig {
    pub fn with_beam(beam_size: usize) -> Self {
        BeamConfig {
            beam_size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::validation("beam_size", "must be >= 1"));
        }
        if !(self.max_len_factor > 0.0) || !self.max_len_factor.is_finite() {
            return Err(Error::validation("max_len_factor", "must be a positive number"));
        }
        if !self.length_penalty_alpha.is_finite() {
            return Err(Error::validation("length_penalty_alpha", "must be finite"));
        }
        Ok(())
    }

    pub fn max_len(&self, source_len: usize) -> usize {
        ((self.max_len_factor * source_len as f64).floor() as usize + self.max_len_offset).max(1)
    }

    pub fn normalize(&self, log_prob: f64, len: usize) -> f64 {
        if self.length_penalty_alpha == 0.0 {
            log_prob
        } else {
            log_prob / (len.max(1) as f64).powf(self.length_penalty_alpha)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated ids; the last one is EOS unless the length limit was hit.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub score: f64,
}

impl Hypothesis {
    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[u32] {
        match self.tokens.split_last() {
            Some((&SpecialTokens::EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.tokens.last() == Some(&SpecialTokens::EOS)
    }
}

/// Whether `token` may be emitted at generation step `step`. BOS and PAD are
/// never produced, and EOS is barred first so no output is empty.
pub fn allowed(token: u32, step: usize) -> bool {
    match token {
        SpecialTokens::BOS | SpecialTokens::PAD => false,
        SpecialTokens::EOS => step > 0,
        _ => true,
    }
}

struct Candidate {
    log_prob: f64,
    parent: usize,
    token: u32,
}

/// Higher log-probability first, then lower token id, then earlier parent.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then(a.token.cmp(&b.token))
        .then(a.parent.cmp(&b.parent))
}

/// Beam search in which every finished hypothesis permanently takes one beam
/// slot; the search ends when all slots are finished or the length limit is
/// reached. Returns the finished hypothesis with the best normalized score
/// (earliest finished on ties).
pub fn beam_decode(model: &TransformerModel, source_ids: &[u32], config: &BeamConfig) -> Result<Hypothesis> {
    config.validate()?;
    let dec = IncrementalDecoder::new(model);
    let enc = dec.encode(source_ids)?;
    let vocab = model.vocab_size();
    let max_len = config.max_len(source_ids.len());
    let mut state = dec.start(1);
    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..max_len {
        let inputs: Vec<u32> = live
            .iter()
            .map(|(t, _)| t.last().copied().unwrap_or(SpecialTokens::BOS))
            .collect();
        let log_probs = dec.step(&enc, &mut state, &inputs);
        let slots = config.beam_size - finished.len();
        let mut cands: Vec<Candidate> = Vec::with_capacity(live.len() * vocab);
        for (parent, (_, lp)) in live.iter().enumerate() {
            let row = &log_probs[parent * vocab..(parent + 1) * vocab];
            for (token, &l) in row.iter().enumerate() {
                if allowed(token as u32, step) {
                    cands.push(Candidate {
                        log_prob: lp + l,
                        parent,
                        token: token as u32,
                    });
                }
            }
        }
        if cands.len() > slots {
            cands.select_nth_unstable_by(slots - 1, rank);
            cands.truncate(slots);
        }
        cands.sort_by(rank);
        let last = step + 1 == max_len;
        let mut parents = Vec::new();
        let mut next = Vec::new();
        for c in cands {
            let mut tokens = live[c.parent].0.clone();
            tokens.push(c.token);
            if c.token == SpecialTokens::EOS || last {
                let score = config.normalize(c.log_prob, tokens.len());
                finished.push(Hypothesis {
                    tokens,
                    log_prob: c.log_prob,
                    score,
                });
            } else {
                parents.push(c.parent);
                next.push((tokens, c.log_prob));
            }
        }
        if next.is_empty() {
            break;
        }
        state.reorder(&parents);
        live = next;
    }
    let mut best = 0;
    for (i, h) in finished.iter().enumerate() {
        if h.score > finished[best].score {
            best = i;
        }
    }
    Ok(finished.swap_remove(best))
}

/// Greedy argmax decoding, equivalent to a beam of one.
pub fn greedy_decode(model: &TransformerModel, source_ids: &[u32], config: &BeamConfig) -> Result<Hypothesis> {
    beam_decode(model, source_ids, &BeamConfig { beam_size: 1, ..*config })
}

/// Decodes every source sentence; `threads` shards are decoded concurrently
/// and reassembled by index.
pub fn decode_ids(
    model: &TransformerModel,
    sources: &[Vec<u32>],
    config: &BeamConfig,
    threads: usize,
) -> Result<Vec<Hypothesis>> {
    config.validate()?;
    let threads = threads.clamp(1, sources.len().max(1));
    if threads == 1 {
        return sources.iter().map(|s| beam_decode(model, s, config)).collect();
    }
    let chunk = sources.len().div_ceil(threads);
    thread::scope(|scope| {
        let handles: Vec<_> = sources
            .chunks(chunk)
            .map(|shard| scope.spawn(move || shard.iter().map(|s| beam_decode(model, s, config)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(sources.len());
        for h in handles {
            out.extend(h.join().expect("decoder thread panicked")?);
        }
        Ok(out)
    })
}

/// Checks that `model` was trained on the vocabulary of `bpe` and that
/// `corpus` is encoded with it.
pub fn check_vocab(model: &TransformerModel, bpe: &BpeModel, corpus: &ParallelCorpus) -> Result<()> {
    if model.vocab_size() != bpe.vocab().len() {
        return Err(Error::protocol(format!(
            "model vocabulary has {} entries, BPE model {} has {}",
            model.vocab_size(),
            bpe.id(),
            bpe.vocab().len()
        )));
    }
    bpe.check_encoded(corpus, &format!("corpus {}", corpus.name()))
}

/// Replaces each target with the decoded hypothesis for its source. Output
/// keeps the sources, order, role and vocabulary of `corpus`.
pub fn decode_corpus(
    model: &TransformerModel,
    bpe: &BpeModel,
    corpus: &ParallelCorpus,
    config: &BeamConfig,
    threads: usize,
) -> Result<ParallelCorpus> {
    check_vocab(model, bpe, corpus)?;
    let vocab = bpe.vocab();
    let sources: Vec<Vec<u32>> = corpus.pairs().iter().map(|p| vocab.encode(p.source())).collect();
    let hyps = decode_ids(model, &sources, config, threads)?;
    let pairs = corpus
        .pairs()
        .iter()
        .zip(&hyps)
        .map(|(p, h)| SentencePair::new(p.source().to_vec(), vocab.decode(h.content())))
        .collect::<Result<Vec<_>>>()?;
    Ok(corpus.derive(format!("{}.decoded", corpus.name()), pairs))
}
