pub mod bleu;
pub mod checkpoint;
pub mod corpus;
pub mod decoder;
pub mod distiller;
pub mod error;
pub mod hash;
pub mod nnet;
pub mod pipeline;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
pub use bleu::{corpus_bleu, BleuReport};
pub use checkpoint::{ModelCheckpoint, Provenance};
pub use corpus::{CorpusOrigin, DomainSpec, ParallelCorpus, ReorderRule, Role, SentencePair};
pub use decoder::{BeamConfig, Hypothesis};
pub use nnet::{ArchConfig, SizeClass, TransformerModel};
pub use pipeline::{ExperimentData, ExperimentPlan, JobGraph, RunManifest};
pub use tokenizer::BpeModel;
pub use trainer::{StopReason, TrainConfig, TrainReport};
