//! Full-width beam search against exhaustive enumeration of every output
//! sequence, scored with the teacher-forced forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqkd::decoder::{beam_decode, BeamConfig};
use seqkd::nnet::{build_model, forward, ArchConfig, SizeClass, TransformerModel};
use seqkd::tokenizer::SpecialTokens;

pub const CASES: u64 = 50;
const VOCAB: usize = 5;
const MAX_LEN: usize = 4;
/// Tokens that may appear before the end: everything but BOS, EOS and PAD.
const CONTENT: [u32; 2] = [3, 4];

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    row.iter().map(|v| v - z).collect()
}

fn sequence_log_prob(model: &TransformerModel, src: &[u32], seq: &[u32]) -> f64 {
    let mut prefix = vec![SpecialTokens::BOS];
    prefix.extend_from_slice(&seq[..seq.len() - 1]);
    let logits = forward(model, src, &prefix).unwrap();
    (0..seq.len())
        .map(|t| log_softmax(logits.row(t))[seq[t] as usize])
        .sum()
}

/// Every output the decoder may produce: a non-empty content prefix followed
/// by EOS, or a content sequence cut at the length limit.
fn all_outputs() -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<u32>> = vec![Vec::new()];
    for len in 1..=MAX_LEN {
        let mut next = Vec::new();
        for p in &frontier {
            for &t in &CONTENT {
                let mut s = p.clone();
                s.push(t);
                next.push(s);
            }
        }
        for p in &frontier {
            if !p.is_empty() {
                let mut s = p.clone();
                s.push(SpecialTokens::EOS);
                out.push(s);
            }
        }
        if len == MAX_LEN {
            out.extend(next.iter().cloned());
        }
        frontier = next;
    }
    out
}

pub struct Outcome {
    pub passed: u64,
    pub worst_gap: f64,
}

pub fn run() -> Outcome {
    let outputs = all_outputs();
    let config = BeamConfig {
        beam_size: outputs.len(),
        max_len_factor: 1e-9,
        max_len_offset: MAX_LEN,
        length_penalty_alpha: 0.0,
    };
    let mut passed = 0;
    let mut worst_gap = 0.0f64;
    for case in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + case);
        let arch = ArchConfig::preset(SizeClass::Tiny, 16).unwrap().with_dropout(0.0);
        let mut model = build_model(&arch, VOCAB, case).unwrap();
        // Sharpen the random initialization so the argmax is not a near tie.
        let gain = rng.gen_range(1.5..4.0);
        for p in model.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= gain);
        }
        let src_len = rng.gen_range(1..=3);
        let src: Vec<u32> = (0..src_len).map(|_| CONTENT[rng.gen_range(0..2)]).collect();
        assert_eq!(config.max_len(src.len()), MAX_LEN);
        let scored: Vec<(f64, &Vec<u32>)> = outputs.iter().map(|s| (sequence_log_prob(&model, &src, s), s)).collect();
        let (best_lp, best) = scored
            .iter()
            .cloned()
            .fold((f64::NEG_INFINITY, &outputs[0]), |a, b| if b.0 > a.0 { b } else { a });
        let hyp = beam_decode(&model, &src, &config).unwrap();
        let gap = (hyp.log_prob - best_lp).abs();
        worst_gap = worst_gap.max(gap);
        if hyp.tokens == *best && gap < 1e-9 {
            passed += 1;
        } else {
            eprintln!(
                "case {case}: beam {:?} ({:.12}) enumeration {:?} ({:.12})",
                hyp.tokens, hyp.log_prob, best, best_lp
            );
        }
    }
    Outcome { passed, worst_gap }
}

