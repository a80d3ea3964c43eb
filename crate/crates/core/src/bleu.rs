//! Corpus BLEU with the semantics of Moses' `multi-bleu.perl`: single
//! reference, case-sensitive, clipped n-gram counts aggregated over the
//! corpus, no smoothing.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Raw matched/total n-gram counts; shards merge by addition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BleuStats {
    pub matched: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matched[n] += o.matched[n];
            self.total[n] += o.total[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    m
}

impl BleuStats {
    pub fn sentence<T: AsRef<str>, U: AsRef<str>>(hyp: &[T], reference: &[U]) -> Self {
        let mut s = BleuStats {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            s.total[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
            s.matched[n - 1] = h
                .iter()
                .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn report(&self) -> BleuReport {
        let mut precisions = [0.0; MAX_ORDER];
        for n in 0..MAX_ORDER {
            precisions[n] = if self.total[n] > 0 {
                self.matched[n] as f64 / self.total[n] as f64
            } else {
                0.0
            };
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let brevity_penalty = if self.hyp_len == 0 {
            0.0
        } else if c < r {
            (1.0 - r / c).exp()
        } else {
            1.0
        };
        let bleu = if precisions.iter().all(|&p| p > 0.0) {
            let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            100.0 * brevity_penalty * mean_log.exp()
        } else {
            0.0
        };
        BleuReport {
            bleu,
            precisions,
            brevity_penalty,
            hyp_length: self.hyp_len,
            ref_length: self.ref_len,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BleuReport {
    /// Score on the 0-100 scale.
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    /// `exp(1 - r/c)` when the hypotheses are shorter, else 1. Reported as 0
    /// for an empty hypothesis side.
    pub brevity_penalty: f64,
    pub hyp_length: u64,
    pub ref_length: u64,
}

impl BleuReport {
    pub fn ratio(&self) -> f64 {
        if self.ref_length == 0 {
            0.0
        } else {
            self.hyp_length as f64 / self.ref_length as f64
        }
    }
}

impl fmt::Display for BleuReport {
    /// The `multi-bleu.perl` summary line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.precisions.map(|x| 100.0 * x);
        write!(
            f,
            "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.bleu,
            p[0],
            p[1],
            p[2],
            p[3],
            self.brevity_penalty,
            self.ratio(),
            self.hyp_length,
            self.ref_length
        )
    }
}

/// Scores aligned hypothesis and reference sentences.
pub fn corpus_bleu<H, R>(hypotheses: &[H], references: &[R]) -> Result<BleuReport>
where
    H: AsRef<[String]>,
    R: AsRef<[String]>,
{
    Ok(corpus_stats(hypotheses, references)?.report())
}

pub fn corpus_stats<H, R>(hypotheses: &[H], references: &[R]) -> Result<BleuStats>
where
    H: AsRef<[String]>,
    R: AsRef<[String]>,
{
    if hypotheses.len() != references.len() {
        return Err(Error::Alignment {
            what: "hypothesis and reference sentence counts".into(),
            left: hypotheses.len(),
            right: references.len(),
        });
    }
    let mut stats = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats += BleuStats::sentence(h.as_ref(), r.as_ref());
    }
    Ok(stats)
}
