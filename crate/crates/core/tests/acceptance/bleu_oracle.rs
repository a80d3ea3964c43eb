//! Brute-force corpus BLEU written without hashing: every n-gram is counted
//! by scanning, and the geometric mean is taken in product form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqkd::bleu::corpus_bleu;

pub const CORPORA: usize = 200;
pub const TOLERANCE: f64 = 1e-9;

fn occurrences(tokens: &[String], gram: &[String]) -> u64 {
    if tokens.len() < gram.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len())
        .filter(|&i| tokens[i..i + gram.len()] == *gram)
        .count() as u64
}

/// Clipped matches and hypothesis n-gram count of one sentence.
fn sentence_counts(hyp: &[String], reference: &[String], n: usize) -> (u64, u64) {
    if hyp.len() < n {
        return (0, 0);
    }
    let mut matched = 0;
    for i in 0..=hyp.len() - n {
        let gram = &hyp[i..i + n];
        let first = (0..i).all(|j| hyp[j..j + n] != *gram);
        if first {
            matched += occurrences(hyp, gram).min(occurrences(reference, gram));
        }
    }
    (matched, (hyp.len() - n + 1) as u64)
}

pub fn oracle_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    if c == 0 {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 1..=4 {
        let (mut m, mut t) = (0u64, 0u64);
        for (h, rf) in hyps.iter().zip(refs) {
            let (a, b) = sentence_counts(h, rf, n);
            m += a;
            t += b;
        }
        if m == 0 {
            return 0.0;
        }
        product *= m as f64 / t as f64;
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    100.0 * bp * product.powf(0.25)
}

fn sentence(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<String> {
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
}

pub struct Outcome {
    pub worst: f64,
    pub mismatches: usize,
    pub identity_ok: bool,
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    let mut identity_ok = true;
    for case in 0..CORPORA {
        let vocab = rng.gen_range(2..8);
        let max_len = rng.gen_range(1..14);
        let n = rng.gen_range(1..25);
        let refs: Vec<Vec<String>> = (0..n).map(|_| sentence(&mut rng, vocab, max_len)).collect();
        let hyps: Vec<Vec<String>> = refs
            .iter()
            .map(|r| match rng.gen_range(0..6) {
                0 => Vec::new(),
                1 => r.clone(),
                2 => {
                    let mut h = r.clone();
                    if !h.is_empty() {
                        let i = rng.gen_range(0..h.len());
                        h[i] = format!("w{}", rng.gen_range(0..vocab));
                    }
                    h
                }
                _ => sentence(&mut rng, vocab, max_len),
            })
            .collect();
        let got = corpus_bleu(&hyps, &refs).unwrap().bleu;
        let want = oracle_bleu(&hyps, &refs);
        let err = (got - want).abs();
        worst = worst.max(err);
        if !(err <= TOLERANCE) {
            mismatches += 1;
            eprintln!("case {case}: corpus_bleu {got} oracle {want}");
        }
        if refs.iter().any(|r| r.len() >= 4) {
            let id = corpus_bleu(&refs, &refs).unwrap().bleu;
            if id != 100.0 {
                identity_ok = false;
                eprintln!("case {case}: identity scored {id}");
            }
        }
    }
    Outcome {
        worst,
        mismatches,
        identity_ok,
    }
}
