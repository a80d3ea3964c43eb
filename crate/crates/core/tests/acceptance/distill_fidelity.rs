//! Distilled targets against sentence-by-sentence beam decoding of the same
//! teacher, and the distilled source side against the input bytes.

use std::fs;

use seqkd::corpus::{generate_domain, prefix_path, save_prefix, split_dev, DomainSpec};
use seqkd::decoder::{beam_decode, BeamConfig};
use seqkd::distiller::distill;
use seqkd::nnet::{build_model, ArchConfig, SizeClass};
use seqkd::tokenizer::{apply_bpe, learn_bpe};
use seqkd::trainer::{train, TrainConfig};

pub struct Outcome {
    pub pairs: usize,
    pub target_mismatches: usize,
    pub sources_identical: bool,
    pub files_identical: bool,
    pub teacher_bleu: f64,
}

pub fn run() -> Outcome {
    let corpus = generate_domain(&DomainSpec {
        size: 600,
        vocab_size: 40,
        length_range: (3, 6),
        ..DomainSpec::general(41)
    })
    .unwrap();
    let (train_words, dev_words) = split_dev(&corpus, 100).unwrap();
    let bpe = learn_bpe(&train_words, 60).unwrap();
    let train_set = apply_bpe(&bpe, &train_words).unwrap();
    let arch = ArchConfig::desk(SizeClass::Tiny);
    let model = build_model(&arch, bpe.vocab().len(), 7).unwrap();
    let config = TrainConfig {
        max_updates: 300,
        checkpoint_interval_updates: 100,
        batch_tokens: 512,
        dev_beam: BeamConfig::with_beam(2),
        ..TrainConfig::desk()
    };
    let dev_set = apply_bpe(&bpe, &dev_words).unwrap();
    let report = train(&model, 7, &bpe, &train_set, &dev_set, &config).unwrap();
    let teacher = report.best;
    let beam = BeamConfig::default();
    let distilled = distill(&teacher, &bpe, &train_set, &beam, 2).unwrap();

    let vocab = bpe.vocab();
    let mut target_mismatches = 0;
    for (i, (orig, d)) in train_set.pairs().iter().zip(distilled.pairs()).enumerate() {
        let hyp = beam_decode(teacher.model(), &vocab.encode(orig.source()), &beam).unwrap();
        if vocab.decode(hyp.content()) != d.target() {
            target_mismatches += 1;
            eprintln!("pair {i}: distilled {:?} recomputed {:?}", d.target(), vocab.decode(hyp.content()));
        }
    }
    let sources_identical = train_set.len() == distilled.len()
        && train_set.pairs().iter().zip(distilled.pairs()).all(|(a, b)| a.source() == b.source());

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("input"), dir.path().join("distilled"));
    save_prefix(&train_set, &a).unwrap();
    save_prefix(&distilled, &b).unwrap();
    let files_identical = fs::read(prefix_path(&a, "src")).unwrap() == fs::read(prefix_path(&b, "src")).unwrap();

    Outcome {
        pairs: train_set.len(),
        target_mismatches,
        sources_identical,
        files_identical,
        teacher_bleu: teacher.dev_bleu(),
    }
}
