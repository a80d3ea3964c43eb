//! Deterministic inputs shared by the benchmarks.

use seqkd::corpus::{generate_domain, DomainSpec, ParallelCorpus};
use seqkd::nnet::{build_model, ArchConfig, Batch, SizeClass, TransformerModel};

/// Synthetic general-domain corpus of `size` pairs.
pub fn corpus(size: usize) -> ParallelCorpus {
    generate_domain(&DomainSpec {
        size,
        ..DomainSpec::general(7)
    })
    .expect("default spec is valid")
}

/// Desk-scale model of `size` over a `vocab`-entry vocabulary.
pub fn model(size: SizeClass, vocab: usize) -> TransformerModel {
    build_model(&ArchConfig::desk(size), vocab, 1).expect("desk presets are valid")
}

/// `n` pairs of `len` ids cycling through the non-special range.
pub fn batch(n: usize, len: usize, vocab: usize) -> Batch {
    let ids = |off: usize| -> Vec<u32> { (0..len).map(|i| (4 + (i * 7 + off) % (vocab - 4)) as u32).collect() };
    Batch {
        source: (0..n).map(ids).collect(),
        target: (0..n).map(|i| ids(i + 3)).collect(),
    }
}
