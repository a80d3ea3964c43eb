//! Sequence-level knowledge distillation: teacher beam decodes replace the
//! training targets, a student trains on them, and optionally continues on
//! the original references.

use crate::checkpoint::ModelCheckpoint;
use crate::corpus::{CorpusOrigin, ParallelCorpus};
use crate::decoder::{decode_corpus, BeamConfig};
use crate::error::{Error, Result};
use crate::hash::ContentHasher;
use crate::nnet::ArchConfig;
use crate::tokenizer::BpeModel;
use crate::trainer::{adapt, train_from, Init, TrainConfig, TrainReport};

/// Cache key of a distilled corpus.
pub fn distill_key(teacher_id: &str, corpus_id: &str, beam: &BeamConfig) -> String {
    let mut h = ContentHasher::new("distill");
    h.str(teacher_id)
        .str(corpus_id)
        .u64(beam.beam_size as u64)
        .f64(beam.max_len_factor)
        .u64(beam.max_len_offset as u64)
        .f64(beam.length_penalty_alpha);
    h.finish()
}

/// Decodes the source side of `corpus` with `teacher` and discards the
/// original targets. The result records the teacher, beam and original
/// corpus ids.
pub fn distill(
    teacher: &ModelCheckpoint,
    bpe: &BpeModel,
    corpus: &ParallelCorpus,
    beam: &BeamConfig,
    threads: usize,
) -> Result<ParallelCorpus> {
    if corpus.origin().is_distilled() {
        return Err(Error::protocol(format!(
            "corpus {} is already distilled; teacher-of-teacher chains are not allowed",
            corpus.name()
        )));
    }
    if teacher.vocab_id() != bpe.id() {
        return Err(Error::protocol(format!(
            "teacher {} uses vocabulary {}, expected {}",
            teacher.id(),
            teacher.vocab_id(),
            bpe.id()
        )));
    }
    let decoded = decode_corpus(teacher.model(), bpe, corpus, beam, threads)?;
    let origin = CorpusOrigin::Distilled {
        teacher_id: teacher.id().to_owned(),
        beam_size: beam.beam_size,
        original_id: corpus.id(),
    };
    Ok(decoded
        .derive(format!("{}.distilled", corpus.name()), decoded.pairs().to_vec())
        .with_origin(origin))
}

/// Trains a student on teacher outputs. Dev BLEU is always measured against
/// the original references.
pub fn train_student_distilled(
    init: Init<'_>,
    bpe: &BpeModel,
    distilled: &ParallelCorpus,
    dev: &ParallelCorpus,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if !distilled.origin().is_distilled() {
        return Err(Error::protocol(format!(
            "corpus {} is not a distilled corpus",
            distilled.name()
        )));
    }
    train_from(init, bpe, distilled, dev, config)
}

/// Which training phase the selected checkpoint came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Distilled,
    Original,
}

#[derive(Clone, Debug)]
pub struct ContinuedReport {
    /// Report of the continued phase on original data; its checkpoint 0 is
    /// the distilled-phase best.
    pub post: TrainReport,
    pub selected: ModelCheckpoint,
    pub phase: Phase,
}

impl ContinuedReport {
    pub fn selected_dev_bleu(&self) -> f64 {
        self.selected.dev_bleu()
    }
}

/// Resumes the student's best checkpoint on the un-distilled corpus it was
/// distilled from, and selects the best dev BLEU across both phases. A tie
/// keeps the distilled-phase checkpoint.
pub fn continue_on_original(
    student: &TrainReport,
    bpe: &BpeModel,
    original: &ParallelCorpus,
    dev: &ParallelCorpus,
    config: &TrainConfig,
) -> Result<ContinuedReport> {
    let CorpusOrigin::Distilled { original_id, .. } = &student.trained_on else {
        return Err(Error::protocol("student was not trained on a distilled corpus"));
    };
    let id = original.id();
    if *original_id != id {
        return Err(Error::protocol(format!(
            "student data was distilled from corpus {original_id}, not {id}"
        )));
    }
    let arch: ArchConfig = student.best.arch().clone();
    let post = adapt(&student.best, &arch, bpe, original, dev, config)?;
    let improved = post.best.dev_bleu() > student.best.dev_bleu();
    let (selected, phase) = if improved {
        (post.best.clone(), Phase::Original)
    } else {
        (student.best.clone(), Phase::Distilled)
    };
    Ok(ContinuedReport { post, selected, phase })
}
