//! Experiment orchestration. A configuration number expands into a job
//! graph (learn BPE, train, adapt, distill, continue, score) which runs with
//! a content-addressed artifact cache, and finished runs feed comparison and
//! correlation reports.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use crate::bleu::{corpus_bleu, BleuReport};
use crate::checkpoint::ModelCheckpoint;
use crate::corpus::{prefix_path, save_prefix, load_prefix, ParallelCorpus};
use crate::decoder::{decode_ids, BeamConfig};
use crate::distiller::{continue_on_original, distill, ContinuedReport, Phase};
use crate::error::{Error, Result};
use crate::hash::ContentHasher;
use crate::nnet::{build_model, ArchConfig, SizeClass, DESK_SCALE_FACTOR};
use crate::tokenizer::{apply_bpe, detokenize_tokens, learn_bpe, BpeModel, DESK_NUM_MERGES};
use crate::trainer::{adapt, train, TrainConfig, TrainReport};

pub const MANIFEST_HEADER: &str = "#seqkd-manifest v1";
pub const COMPARISON_HEADER: &str = "#seqkd-comparison v1";
pub const CORRELATION_HEADER: &str = "#seqkd-correlation v1";
/// First line of a `.done` completion marker.
pub const JOB_HEADER: &str = "#seqkd-job v1";

/// Environment variable naming the artifact cache directory.
pub const ARTIFACT_DIR_ENV: &str = "SEQKD_ARTIFACT_DIR";
pub const DEFAULT_TIE_WINDOW: f64 = 0.1;

pub const NUM_CONFIGS: u8 = 9;
/// Recipe outcome when the distilled general-domain student wins.
pub const RECIPE_DISTILLED: u8 = 9;
pub const RECIPE_BASELINE: u8 = 6;

const TEACHER_BUDGET_NOTE: &str =
    "in-domain baseline and adapted teachers use the same in-domain training config";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    General,
    InDomain,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::General => "gd",
            Domain::InDomain => "id",
        })
    }
}

/// Initialization axis of the configuration matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitSource {
    Random,
    GdBaseline,
    GdStudent,
}

/// In-domain data axis: which teacher, if any, re-targets the in-domain data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeacherSource {
    None,
    InDomainBaseline,
    Adapted,
}

fn axes(config_id: u8) -> Result<(InitSource, TeacherSource)> {
    if !(1..=NUM_CONFIGS).contains(&config_id) {
        return Err(Error::validation(
            "config_id",
            format!("must be in 1..={NUM_CONFIGS}, got {config_id}"),
        ));
    }
    let i = config_id - 1;
    let init = [InitSource::Random, InitSource::GdBaseline, InitSource::GdStudent][(i / 3) as usize];
    let teacher = [TeacherSource::None, TeacherSource::InDomainBaseline, TeacherSource::Adapted][(i % 3) as usize];
    Ok((init, teacher))
}

/// Word-level corpora of one experiment. The BPE model is learned from
/// `gd_train` and applied to all four.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub gd_train: ParallelCorpus,
    pub gd_dev: ParallelCorpus,
    pub id_train: ParallelCorpus,
    pub id_dev: ParallelCorpus,
}

impl ExperimentData {
    pub fn new(
        gd_train: ParallelCorpus,
        gd_dev: ParallelCorpus,
        id_train: ParallelCorpus,
        id_dev: ParallelCorpus,
    ) -> Result<Self> {
        for (field, c) in [
            ("gd_train", &gd_train),
            ("gd_dev", &gd_dev),
            ("id_train", &id_train),
            ("id_dev", &id_dev),
        ] {
            if c.is_empty() {
                return Err(Error::validation(field, "corpus is empty"));
            }
            if c.vocab_id().is_some() || c.origin().is_distilled() {
                return Err(Error::protocol(format!(
                    "{field} must be an original word-level corpus, got {}",
                    c.name()
                )));
            }
        }
        Ok(ExperimentData {
            gd_train,
            gd_dev,
            id_train,
            id_dev,
        })
    }

    fn word_level(&self, domain: Domain, dev: bool) -> &ParallelCorpus {
        match (domain, dev) {
            (Domain::General, false) => &self.gd_train,
            (Domain::General, true) => &self.gd_dev,
            (Domain::InDomain, false) => &self.id_train,
            (Domain::InDomain, true) => &self.id_dev,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub config_id: u8,
    pub student: SizeClass,
    pub teacher: SizeClass,
    pub student_scale: usize,
    pub teacher_scale: usize,
    pub dropout: f64,
    pub num_merges: usize,
    /// Used by every job whose dev set is general-domain.
    pub gd_train: TrainConfig,
    /// Used by every in-domain job, both teachers included.
    pub id_train: TrainConfig,
    /// Beam for distillation and final scoring.
    pub beam: BeamConfig,
    pub seeds: Vec<u64>,
    /// Continue the general-domain student on the original general-domain
    /// data after distillation.
    pub continue_gd_student: bool,
    /// Continue in-domain students trained on distilled data on the original
    /// in-domain data.
    pub continue_id_student: bool,
    /// Maximum number of jobs running at once.
    pub concurrency: usize,
}

/// Half the available cores, at least one.
pub fn default_concurrency() -> usize {
    thread::available_parallelism().map_or(1, |n| (n.get() / 2).max(1))
}

impl ExperimentPlan {
    pub fn desk(config_id: u8, student: SizeClass) -> Self {
        ExperimentPlan {
            config_id,
            student,
            teacher: SizeClass::Large,
            student_scale: DESK_SCALE_FACTOR,
            teacher_scale: DESK_SCALE_FACTOR,
            dropout: crate::nnet::DEFAULT_DROPOUT,
            num_merges: DESK_NUM_MERGES,
            gd_train: TrainConfig::desk(),
            id_train: TrainConfig::desk(),
            beam: BeamConfig::default(),
            seeds: vec![1],
            continue_gd_student: false,
            continue_id_student: true,
            concurrency: default_concurrency(),
        }
    }

    pub fn with_config(&self, config_id: u8) -> Self {
        ExperimentPlan {
            config_id,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        axes(self.config_id)?;
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "at least one seed is required"));
        }
        let mut seen = HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::validation("seeds", format!("seed {s} is repeated")));
        }
        if self.num_merges == 0 {
            return Err(Error::validation("num_merges", "must be >= 1"));
        }
        if self.concurrency == 0 {
            return Err(Error::validation("concurrency", "must be >= 1"));
        }
        self.student_arch()?;
        self.teacher_arch()?;
        self.gd_train.validate(false)?;
        self.id_train.validate(false)?;
        self.beam.validate()
    }

    pub fn student_arch(&self) -> Result<ArchConfig> {
        Ok(ArchConfig::preset(self.student, self.student_scale)?.with_dropout(self.dropout))
    }

    pub fn teacher_arch(&self) -> Result<ArchConfig> {
        Ok(ArchConfig::preset(self.teacher, self.teacher_scale)?.with_dropout(self.dropout))
    }

    fn train_config(&self, dev: Domain, seed: u64) -> TrainConfig {
        let base = match dev {
            Domain::General => &self.gd_train,
            Domain::InDomain => &self.id_train,
        };
        TrainConfig { seed, ..base.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum JobKind {
    LearnBpe,
    Train,
    Adapt,
    Distill,
    ContinueOnOriginal,
    Score,
}

impl JobKind {
    /// Whether the job optimizes model weights.
    pub fn is_training(self) -> bool {
        matches!(self, JobKind::Train | JobKind::Adapt | JobKind::ContinueOnOriginal)
    }
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobKind::LearnBpe => "learn_bpe",
            JobKind::Train => "train",
            JobKind::Adapt => "adapt",
            JobKind::Distill => "distill",
            JobKind::ContinueOnOriginal => "continue_on_original",
            JobKind::Score => "score",
        })
    }
}

impl FromStr for JobKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "learn_bpe" => JobKind::LearnBpe,
            "train" => JobKind::Train,
            "adapt" => JobKind::Adapt,
            "distill" => JobKind::Distill,
            "continue_on_original" => JobKind::ContinueOnOriginal,
            "score" => JobKind::Score,
            other => return Err(Error::validation("job kind", format!("unknown kind {other:?}"))),
        })
    }
}

/// Training data of a job: an original split or the output of a distill job.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CorpusSource {
    Original(Domain),
    Distilled(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub name: String,
    pub kind: JobKind,
    pub seed: Option<u64>,
    /// Architecture of a freshly built model (`train` only).
    pub arch: Option<ArchConfig>,
    /// Job whose checkpoint initializes this one (`adapt`,
    /// `continue_on_original`); `None` means random initialization.
    pub init: Option<String>,
    /// Training data, or the corpus to distill.
    pub data: Option<CorpusSource>,
    pub dev: Option<Domain>,
    /// Teacher checkpoint job (`distill`).
    pub teacher: Option<String>,
    /// Checkpoint job to evaluate (`score`).
    pub model: Option<String>,
}

impl Job {
    fn new(name: String, kind: JobKind, seed: Option<u64>) -> Self {
        Job {
            name,
            kind,
            seed,
            arch: None,
            init: None,
            data: None,
            dev: None,
            teacher: None,
            model: None,
        }
    }

    /// Jobs whose outputs this job reads.
    pub fn dependencies(&self) -> Vec<&str> {
        let mut d = Vec::new();
        if self.kind != JobKind::LearnBpe {
            d.push(BPE_JOB);
        }
        d.extend(self.init.as_deref());
        if let Some(CorpusSource::Distilled(j)) = &self.data {
            d.push(j);
        }
        d.extend(self.teacher.as_deref());
        d.extend(self.model.as_deref());
        d
    }
}

pub const BPE_JOB: &str = "bpe";

/// Jobs in topological order plus their dependency edges `(from, to)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JobGraph {
    pub jobs: Vec<Job>,
    pub edges: Vec<(String, String)>,
}

impl JobGraph {
    fn from_jobs(jobs: Vec<Job>) -> Result<Self> {
        let mut seen: HashSet<&str> = HashSet::new();
        let mut edges = Vec::new();
        for j in &jobs {
            for d in j.dependencies() {
                if !seen.contains(d) {
                    return Err(Error::protocol(format!("job {} depends on {d}, which does not precede it", j.name)));
                }
                edges.push((d.to_owned(), j.name.clone()));
            }
            if !seen.insert(&j.name) {
                return Err(Error::protocol(format!("job {} is defined twice", j.name)));
            }
        }
        Ok(JobGraph { jobs, edges })
    }

    pub fn job(&self, name: &str) -> Option<&Job> {
        self.jobs.iter().find(|j| j.name == name)
    }

    fn get(&self, name: &str) -> &Job {
        self.job(name).unwrap_or_else(|| panic!("job {name} is not in the graph"))
    }

    /// The named jobs and everything they depend on.
    pub fn restrict(&self, targets: &[&str]) -> Result<JobGraph> {
        let mut keep: HashSet<&str> = HashSet::new();
        let mut stack: Vec<&str> = targets.to_vec();
        while let Some(n) = stack.pop() {
            let job = self
                .job(n)
                .ok_or_else(|| Error::validation("job", format!("{n} is not in the graph")))?;
            if keep.insert(&job.name) {
                stack.extend(job.dependencies());
            }
        }
        JobGraph::from_jobs(self.jobs.iter().filter(|j| keep.contains(j.name.as_str())).cloned().collect())
    }

    pub fn count(&self, kind: JobKind) -> usize {
        self.jobs.iter().filter(|j| j.kind == kind).count()
    }

    /// Final score job of a seed.
    pub fn score_job(seed: u64) -> String {
        job_name(seed, "score")
    }

    /// Checkpoint job evaluated by a seed's score job.
    pub fn final_student(&self, seed: u64) -> Option<&Job> {
        let score = self.job(&JobGraph::score_job(seed))?;
        self.job(score.model.as_deref()?)
    }

    /// Classifies where the seed's in-domain student got its initial weights,
    /// by walking the graph.
    pub fn init_source(&self, seed: u64) -> Option<InitSource> {
        let mut student = self.final_student(seed)?;
        while student.kind == JobKind::ContinueOnOriginal {
            student = self.job(student.init.as_deref()?)?;
        }
        let Some(parent) = student.init.as_deref() else {
            return Some(InitSource::Random);
        };
        let mut parent = self.job(parent)?;
        while parent.kind == JobKind::ContinueOnOriginal {
            parent = self.job(parent.init.as_deref()?)?;
        }
        match (&parent.kind, &parent.data) {
            (JobKind::Train, Some(CorpusSource::Original(Domain::General))) => Some(InitSource::GdBaseline),
            (JobKind::Train, Some(CorpusSource::Distilled(d))) => {
                let d = self.job(d)?;
                (d.data == Some(CorpusSource::Original(Domain::General))).then_some(InitSource::GdStudent)
            }
            _ => None,
        }
    }

    /// Classifies the teacher that produced the seed's in-domain training
    /// targets.
    pub fn teacher_source(&self, seed: u64) -> Option<TeacherSource> {
        let mut student = self.final_student(seed)?;
        while student.kind == JobKind::ContinueOnOriginal {
            student = self.job(student.init.as_deref()?)?;
        }
        match student.data.as_ref()? {
            CorpusSource::Original(Domain::InDomain) => Some(TeacherSource::None),
            CorpusSource::Original(Domain::General) => None,
            CorpusSource::Distilled(d) => {
                let teacher = self.job(self.job(d)?.teacher.as_deref()?)?;
                match (teacher.kind, &teacher.data, teacher.init.as_deref()) {
                    (JobKind::Train, Some(CorpusSource::Original(Domain::InDomain)), None) => {
                        Some(TeacherSource::InDomainBaseline)
                    }
                    (JobKind::Adapt, Some(CorpusSource::Original(Domain::InDomain)), Some(p)) => {
                        let p = self.job(p)?;
                        (p.kind == JobKind::Train && p.data == Some(CorpusSource::Original(Domain::General)))
                            .then_some(TeacherSource::Adapted)
                    }
                    _ => None,
                }
            }
        }
    }

    /// Seed-independent description of how a job's output is produced.
    pub fn lineage_signature(&self, name: &str) -> String {
        let j = self.get(name);
        let data = |g: &Self| match j.data.as_ref() {
            Some(CorpusSource::Original(d)) => d.to_string(),
            Some(CorpusSource::Distilled(x)) => g.lineage_signature(x),
            None => "-".into(),
        };
        match j.kind {
            JobKind::LearnBpe => "bpe(gd)".into(),
            JobKind::Train => format!(
                "train[{}]({})",
                j.arch.as_ref().map_or("?".into(), |a| a.size_class.to_string()),
                data(self)
            ),
            JobKind::Adapt => format!("adapt({}, {})", self.lineage_signature(j.init.as_deref().unwrap_or("?")), data(self)),
            JobKind::ContinueOnOriginal => format!(
                "continue({}, {})",
                self.lineage_signature(j.init.as_deref().unwrap_or("?")),
                data(self)
            ),
            JobKind::Distill => format!(
                "distill({}, {})",
                self.lineage_signature(j.teacher.as_deref().unwrap_or("?")),
                data(self)
            ),
            JobKind::Score => self.lineage_signature(j.model.as_deref().unwrap_or("?")),
        }
    }
}

/// Name of a per-seed job, e.g. `s1.gd-teacher`.
pub fn job_name(seed: u64, role: &str) -> String {
    format!("s{seed}.{role}")
}

struct Builder<'p> {
    plan: &'p ExperimentPlan,
    jobs: Vec<Job>,
}

impl Builder<'_> {
    fn push(&mut self, job: Job) -> String {
        let name = job.name.clone();
        if !self.jobs.iter().any(|j| j.name == name) {
            self.jobs.push(job);
        }
        name
    }

    fn bpe(&mut self) -> String {
        self.push(Job::new(BPE_JOB.into(), JobKind::LearnBpe, None))
    }

    fn train(&mut self, seed: u64, role: &str, arch: ArchConfig, data: CorpusSource, dev: Domain) -> String {
        let mut j = Job::new(job_name(seed, role), JobKind::Train, Some(seed));
        j.arch = Some(arch);
        j.data = Some(data);
        j.dev = Some(dev);
        self.push(j)
    }

    fn adapt(&mut self, seed: u64, role: &str, init: String, data: CorpusSource, dev: Domain) -> String {
        let mut j = Job::new(job_name(seed, role), JobKind::Adapt, Some(seed));
        j.init = Some(init);
        j.data = Some(data);
        j.dev = Some(dev);
        self.push(j)
    }

    fn distill(&mut self, seed: u64, role: &str, teacher: String, domain: Domain) -> String {
        let mut j = Job::new(job_name(seed, role), JobKind::Distill, Some(seed));
        j.teacher = Some(teacher);
        j.data = Some(CorpusSource::Original(domain));
        self.push(j)
    }

    fn continued(&mut self, seed: u64, role: &str, init: String, domain: Domain) -> String {
        let mut j = Job::new(job_name(seed, role), JobKind::ContinueOnOriginal, Some(seed));
        j.init = Some(init);
        j.data = Some(CorpusSource::Original(domain));
        j.dev = Some(domain);
        self.push(j)
    }

    fn gd_teacher(&mut self, seed: u64) -> Result<String> {
        let arch = self.plan.teacher_arch()?;
        Ok(self.train(seed, "gd-teacher", arch, CorpusSource::Original(Domain::General), Domain::General))
    }

    fn gd_baseline(&mut self, seed: u64) -> Result<String> {
        let arch = self.plan.student_arch()?;
        Ok(self.train(seed, "gd-baseline", arch, CorpusSource::Original(Domain::General), Domain::General))
    }

    /// General-domain student distilled from the general-domain teacher; the
    /// returned job holds its final checkpoint.
    fn gd_student(&mut self, seed: u64) -> Result<String> {
        let teacher = self.gd_teacher(seed)?;
        let distilled = self.distill(seed, "gd-distill", teacher, Domain::General);
        let arch = self.plan.student_arch()?;
        let student = self.train(seed, "gd-student", arch, CorpusSource::Distilled(distilled), Domain::General);
        Ok(if self.plan.continue_gd_student {
            self.continued(seed, "gd-student-continued", student, Domain::General)
        } else {
            student
        })
    }

    fn seed(&mut self, seed: u64) -> Result<()> {
        let (init, teacher) = axes(self.plan.config_id)?;
        let init = match init {
            InitSource::Random => None,
            InitSource::GdBaseline => Some(self.gd_baseline(seed)?),
            InitSource::GdStudent => Some(self.gd_student(seed)?),
        };
        let data = match teacher {
            TeacherSource::None => CorpusSource::Original(Domain::InDomain),
            TeacherSource::InDomainBaseline => {
                let arch = self.plan.teacher_arch()?;
                let t = self.train(seed, "id-teacher", arch, CorpusSource::Original(Domain::InDomain), Domain::InDomain);
                CorpusSource::Distilled(self.distill(seed, "id-distill", t, Domain::InDomain))
            }
            TeacherSource::Adapted => {
                let gd = self.gd_teacher(seed)?;
                let t = self.adapt(seed, "adapted-teacher", gd, CorpusSource::Original(Domain::InDomain), Domain::InDomain);
                CorpusSource::Distilled(self.distill(seed, "id-distill", t, Domain::InDomain))
            }
        };
        let distilled = matches!(data, CorpusSource::Distilled(_));
        let student = match init {
            None => {
                let arch = self.plan.student_arch()?;
                self.train(seed, "student", arch, data, Domain::InDomain)
            }
            Some(parent) => self.adapt(seed, "student", parent, data, Domain::InDomain),
        };
        let fin = if distilled && self.plan.continue_id_student {
            self.continued(seed, "student-continued", student, Domain::InDomain)
        } else {
            student
        };
        let mut score = Job::new(JobGraph::score_job(seed), JobKind::Score, Some(seed));
        score.model = Some(fin);
        score.dev = Some(Domain::InDomain);
        self.push(score);
        Ok(())
    }
}

/// Expands a plan into the jobs of its configuration, for every seed.
pub fn expand_plan(plan: &ExperimentPlan) -> Result<JobGraph> {
    plan.validate()?;
    let mut b = Builder {
        plan,
        jobs: Vec::new(),
    };
    b.bpe();
    for &seed in &plan.seeds {
        b.seed(seed)?;
    }
    JobGraph::from_jobs(b.jobs)
}

/// First recipe step: the general-domain baseline and the distilled
/// general-domain student, for every seed.
pub fn expand_recipe_stage(plan: &ExperimentPlan) -> Result<JobGraph> {
    plan.validate()?;
    let mut b = Builder {
        plan,
        jobs: Vec::new(),
    };
    b.bpe();
    for &seed in &plan.seeds {
        b.gd_student(seed)?;
        b.gd_baseline(seed)?;
    }
    JobGraph::from_jobs(b.jobs)
}

/// Configuration chosen by the distill-adapt-distill recipe: the distilled
/// student's lineage when it beats the baseline on general-domain dev BLEU,
/// otherwise the baseline's.
pub fn recipe_config(gd_student_bleu: f64, gd_baseline_bleu: f64) -> u8 {
    if gd_student_bleu > gd_baseline_bleu {
        RECIPE_DISTILLED
    } else {
        RECIPE_BASELINE
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JobStatus {
    Ran,
    Cached,
    Failed,
    Skipped,
}

impl JobStatus {
    pub fn succeeded(self) -> bool {
        matches!(self, JobStatus::Ran | JobStatus::Cached)
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobStatus::Ran => "ran",
            JobStatus::Cached => "cached",
            JobStatus::Failed => "failed",
            JobStatus::Skipped => "skipped",
        })
    }
}

impl FromStr for JobStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ran" => JobStatus::Ran,
            "cached" => JobStatus::Cached,
            "failed" => JobStatus::Failed,
            "skipped" => JobStatus::Skipped,
            other => return Err(Error::validation("status", format!("unknown status {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobRecord {
    pub name: String,
    pub kind: JobKind,
    pub status: JobStatus,
    /// Content hash of the job's inputs, config and seed.
    pub key: String,
    /// Id of the produced checkpoint, corpus or vocabulary.
    pub output: Option<String>,
    pub dev_bleu: Option<f64>,
    /// Seconds spent optimizing; zero for cache hits and non-training jobs.
    pub train_seconds: f64,
    /// Checkpoint lineage, root first.
    pub lineage: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub config_id: u8,
    pub student: SizeClass,
    pub teacher: SizeClass,
    pub seeds: Vec<u64>,
    pub gd_corpus: String,
    pub id_corpus: String,
    pub notes: Vec<String>,
    /// Seed-independent lineage of the scored student.
    pub signature: String,
    pub jobs: Vec<JobRecord>,
    pub wall_seconds: f64,
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("-".into(), |v| v.to_string())
}

impl RunManifest {
    pub fn job(&self, name: &str) -> Option<&JobRecord> {
        self.jobs.iter().find(|j| j.name == name)
    }

    pub fn train_seconds(&self) -> f64 {
        self.jobs.iter().map(|j| j.train_seconds).sum()
    }

    pub fn succeeded(&self) -> bool {
        self.jobs.iter().all(|j| j.status.succeeded())
    }

    /// Jobs that executed rather than being served from the cache.
    pub fn executed(&self) -> Vec<&JobRecord> {
        self.jobs.iter().filter(|j| j.status == JobStatus::Ran).collect()
    }

    pub fn dev_bleu(&self, seed: u64, role: &str) -> Option<f64> {
        self.job(&job_name(seed, role))?.dev_bleu
    }

    /// Final in-domain dev BLEU of a seed.
    pub fn score(&self, seed: u64) -> Option<f64> {
        self.job(&JobGraph::score_job(seed))?.dev_bleu
    }

    /// Field-by-field format:
    ///
    /// ```text
    /// #seqkd-manifest v1
    /// config <n>
    /// student <size>
    /// teacher <size>
    /// seeds <s1,s2,...>
    /// gd_corpus <id>
    /// id_corpus <id>
    /// signature <lineage signature>
    /// note <free text>                       (repeatable)
    /// job <name> kind <k> status <s> key <hash> output <id|-> dev_bleu <b|-> train_seconds <t>
    /// lineage <name> <entry> | <entry> ...   (after its job line)
    /// error <name> <message>                 (after its job line)
    /// train_seconds <total>
    /// wall_seconds <total>
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        s.push_str(&format!("config {}\nstudent {}\nteacher {}\n", self.config_id, self.student, self.teacher));
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        s.push_str(&format!("seeds {}\n", seeds.join(",")));
        s.push_str(&format!("gd_corpus {}\nid_corpus {}\n", self.gd_corpus, self.id_corpus));
        s.push_str(&format!("signature {}\n", self.signature));
        for n in &self.notes {
            s.push_str(&format!("note {n}\n"));
        }
        for j in &self.jobs {
            s.push_str(&format!(
                "job {} kind {} status {} key {} output {} dev_bleu {} train_seconds {}\n",
                j.name,
                j.kind,
                j.status,
                j.key,
                opt(&j.output),
                opt(&j.dev_bleu),
                j.train_seconds
            ));
            if !j.lineage.is_empty() {
                s.push_str(&format!("lineage {} {}\n", j.name, j.lineage.join(" | ")));
            }
            if let Some(e) = &j.error {
                s.push_str(&format!("error {} {}\n", j.name, e.replace('\n', " ")));
            }
        }
        s.push_str(&format!("train_seconds {}\nwall_seconds {}\n", self.train_seconds(), self.wall_seconds));
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some(MANIFEST_HEADER) {
            return Err(Error::format(path, 1, format!("expected header {MANIFEST_HEADER:?}")));
        }
        let mut m = RunManifest {
            config_id: 0,
            student: SizeClass::Tiny,
            teacher: SizeClass::Large,
            seeds: Vec::new(),
            gd_corpus: String::new(),
            id_corpus: String::new(),
            notes: Vec::new(),
            signature: String::new(),
            jobs: Vec::new(),
            wall_seconds: 0.0,
        };
        for (i, line) in lines {
            let n = i + 1;
            let bad = |why: &str| Error::format(path, n, format!("{why}: {line:?}"));
            let (key, rest) = line.split_once(' ').ok_or_else(|| bad("missing value"))?;
            match key {
                "config" => m.config_id = rest.parse().map_err(|_| bad("bad config"))?,
                "student" => m.student = rest.parse()?,
                "teacher" => m.teacher = rest.parse()?,
                "seeds" => {
                    m.seeds = rest
                        .split(',')
                        .map(|s| s.parse().map_err(|_| bad("bad seed")))
                        .collect::<Result<_>>()?
                }
                "gd_corpus" => m.gd_corpus = rest.into(),
                "id_corpus" => m.id_corpus = rest.into(),
                "signature" => m.signature = rest.into(),
                "note" => m.notes.push(rest.into()),
                "job" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    let ["kind", kind, "status", status, "key", k, "output", out, "dev_bleu", b, "train_seconds", t] =
                        f[1..]
                    else {
                        return Err(bad("malformed job line"));
                    };
                    m.jobs.push(JobRecord {
                        name: f[0].into(),
                        kind: kind.parse()?,
                        status: status.parse()?,
                        key: k.into(),
                        output: (out != "-").then(|| out.to_owned()),
                        dev_bleu: if b == "-" { None } else { Some(b.parse().map_err(|_| bad("bad dev_bleu"))?) },
                        train_seconds: t.parse().map_err(|_| bad("bad train_seconds"))?,
                        lineage: Vec::new(),
                        error: None,
                    });
                }
                "lineage" | "error" => {
                    let (name, value) = rest.split_once(' ').ok_or_else(|| bad("missing value"))?;
                    let j = m.jobs.last_mut().filter(|j| j.name == name).ok_or_else(|| bad("does not follow its job"))?;
                    if key == "lineage" {
                        j.lineage = value.split(" | ").map(str::to_owned).collect();
                    } else {
                        j.error = Some(value.into());
                    }
                }
                "train_seconds" => {}
                "wall_seconds" => m.wall_seconds = rest.parse().map_err(|_| bad("bad wall_seconds"))?,
                _ => return Err(bad("unknown key")),
            }
        }
        axes(m.config_id).map_err(|_| Error::format(path, 0, "missing or invalid config"))?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunManifest::from_text(&text, path)
    }
}

/// Reads the artifact directory from [`ARTIFACT_DIR_ENV`], creating it if
/// needed.
pub fn artifact_dir_from_env() -> Result<PathBuf> {
    let dir = std::env::var_os(ARTIFACT_DIR_ENV)
        .ok_or_else(|| Error::validation(ARTIFACT_DIR_ENV, "environment variable is not set"))?;
    let dir = PathBuf::from(dir);
    ensure_writable(&dir)?;
    Ok(dir)
}

pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(format!(".tmp{}", std::process::id()));
    PathBuf::from(s)
}

fn rename(from: &Path, to: &Path) -> Result<()> {
    fs::rename(from, to).map_err(|e| Error::io(to, e))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    rename(&tmp, path)
}

fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    let tmp = tmp_path(path);
    ckpt.save(&tmp)?;
    rename(&tmp, path)
}

fn save_corpus_atomic(corpus: &ParallelCorpus, prefix: &Path) -> Result<()> {
    let tmp = tmp_path(prefix);
    save_prefix(corpus, &tmp)?;
    for ext in ["src", "tgt", "meta"] {
        rename(&prefix_path(&tmp, ext), &prefix_path(prefix, ext))?;
    }
    Ok(())
}

#[derive(Clone)]
enum Output {
    Bpe(Arc<BpeModel>),
    Trained(Arc<TrainReport>),
    Continued(Arc<ContinuedReport>),
    Corpus(Arc<ParallelCorpus>),
    Score(BleuReport),
}

impl Output {
    fn checkpoint(&self) -> Option<&ModelCheckpoint> {
        match self {
            Output::Trained(r) => Some(&r.best),
            Output::Continued(c) => Some(&c.selected),
            _ => None,
        }
    }

    fn id(&self) -> String {
        match self {
            Output::Bpe(b) => b.id().to_owned(),
            Output::Corpus(c) => c.id(),
            Output::Score(r) => format!("{:.4}", r.bleu),
            _ => self.checkpoint().map(|c| c.id().to_owned()).unwrap_or_default(),
        }
    }

    fn dev_bleu(&self) -> Option<f64> {
        match self {
            Output::Score(r) => Some(r.bleu),
            _ => self.checkpoint().map(ModelCheckpoint::dev_bleu),
        }
    }
}

/// BPE-encoded splits, available once the vocabulary job has finished.
struct Encoded {
    bpe: Arc<BpeModel>,
    train: HashMap<Domain, ParallelCorpus>,
    dev: HashMap<Domain, ParallelCorpus>,
}

impl Encoded {
    fn new(bpe: Arc<BpeModel>, data: &ExperimentData) -> Result<Self> {
        let mut train = HashMap::new();
        let mut dev = HashMap::new();
        for d in [Domain::General, Domain::InDomain] {
            train.insert(d, apply_bpe(&bpe, data.word_level(d, false))?);
            dev.insert(d, apply_bpe(&bpe, data.word_level(d, true))?);
        }
        Ok(Encoded { bpe, train, dev })
    }
}

struct Runner<'a> {
    plan: &'a ExperimentPlan,
    data: &'a ExperimentData,
    dir: &'a Path,
}

impl Runner<'_> {
    fn key(&self, job: &Job, keys: &HashMap<String, String>) -> String {
        let mut h = ContentHasher::new("job");
        h.str(&job.kind.to_string());
        if job.kind == JobKind::LearnBpe {
            h.str(&self.data.gd_train.id()).u64(self.plan.num_merges as u64);
            return h.finish();
        }
        let seed = job.seed.unwrap_or(0);
        h.u64(seed);
        for d in job.dependencies() {
            h.str(&keys[d]);
        }
        if let Some(CorpusSource::Original(d)) = &job.data {
            h.str(&self.data.word_level(*d, false).id());
        }
        if let Some(d) = job.dev {
            h.str(&self.data.word_level(d, true).id());
        }
        if let Some(a) = &job.arch {
            h.str(&format!("{a:?}"));
        }
        if job.kind.is_training() {
            let c = TrainConfig {
                decode_threads: 1,
                ..self.plan.train_config(job.dev.unwrap_or(Domain::InDomain), seed)
            };
            h.str(&format!("{c:?}"));
        }
        if matches!(job.kind, JobKind::Distill | JobKind::Score) {
            h.str(&format!("{:?}", self.plan.beam));
        }
        h.finish()
    }

    fn path(&self, key: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{key}.{ext}"))
    }

    fn threads(&self, job: &Job) -> usize {
        self.plan.train_config(job.dev.unwrap_or(Domain::InDomain), 0).decode_threads
    }

    fn checkpoint<'o>(outputs: &'o HashMap<String, Output>, name: &str) -> Result<&'o ModelCheckpoint> {
        outputs
            .get(name)
            .and_then(Output::checkpoint)
            .ok_or_else(|| Error::protocol(format!("job {name} produced no checkpoint")))
    }

    fn corpus(&self, job: &Job, enc: &Encoded, outputs: &HashMap<String, Output>) -> Result<ParallelCorpus> {
        match job.data.as_ref() {
            Some(CorpusSource::Original(d)) => Ok(enc.train[d].clone()),
            Some(CorpusSource::Distilled(j)) => match outputs.get(j) {
                Some(Output::Corpus(c)) => Ok((**c).clone()),
                _ => Err(Error::protocol(format!("job {j} produced no corpus"))),
            },
            None => Err(Error::protocol(format!("job {} has no data", job.name))),
        }
    }

    /// Loads a finished job's outputs, verifying the recorded key.
    fn load(&self, job: &Job, key: &str, outputs: &HashMap<String, Output>) -> Result<Option<Output>> {
        let done = self.path(key, "done");
        let Ok(text) = fs::read_to_string(&done) else {
            return Ok(None);
        };
        let fields: HashMap<&str, &str> = text.lines().skip(1).filter_map(|l| l.split_once(' ')).collect();
        if text.lines().next() != Some(JOB_HEADER) || fields.get("key") != Some(&key) {
            return Err(Error::protocol(format!(
                "cache entry {} does not record key {key}",
                done.display()
            )));
        }
        let trained = |ckpt: &str, log: &str| -> Result<TrainReport> {
            let best = ModelCheckpoint::load(self.path(key, ckpt))?;
            let p = self.path(key, log);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            TrainReport::from_log(&text, best, &p)
        };
        let out = match job.kind {
            JobKind::LearnBpe => Output::Bpe(Arc::new(BpeModel::load(self.path(key, "merges"))?)),
            JobKind::Train | JobKind::Adapt => Output::Trained(Arc::new(trained("ckpt", "log")?)),
            JobKind::ContinueOnOriginal => {
                let post = trained("post.ckpt", "log")?;
                let phase = match fields.get("phase") {
                    Some(&"original") => Phase::Original,
                    Some(&"distilled") => Phase::Distilled,
                    _ => return Err(Error::format(&done, 0, "missing phase")),
                };
                let selected = match phase {
                    Phase::Original => post.best.clone(),
                    Phase::Distilled => Self::checkpoint(outputs, job.init.as_deref().unwrap_or_default())?.clone(),
                };
                Output::Continued(Arc::new(ContinuedReport { post, selected, phase }))
            }
            JobKind::Distill => Output::Corpus(Arc::new(load_prefix(self.dir.join(key))?)),
            JobKind::Score => {
                let hyp_path = self.path(key, "hyp");
                let hyp = fs::read_to_string(&hyp_path).map_err(|e| Error::io(&hyp_path, e))?;
                let hyps: Vec<Vec<String>> = hyp.lines().map(|l| l.split_whitespace().map(str::to_owned).collect()).collect();
                let refs = self.data.word_level(Domain::InDomain, true);
                let refs: Vec<&[String]> = refs.pairs().iter().map(|p| p.target()).collect();
                Output::Score(corpus_bleu(&hyps, &refs)?)
            }
        };
        if fields.get("output").copied() != Some(out.id().as_str()) {
            return Err(Error::protocol(format!(
                "cache entry {} names output {:?}, loaded {}",
                done.display(),
                fields.get("output"),
                out.id()
            )));
        }
        Ok(Some(out))
    }

    /// Runs a job and writes its artifacts; the `.done` marker goes last.
    fn execute(&self, job: &Job, key: &str, enc: Option<&Encoded>, outputs: &HashMap<String, Output>) -> Result<Output> {
        let mut extra = String::new();
        let out = match job.kind {
            JobKind::LearnBpe => {
                let bpe = learn_bpe(&self.data.gd_train, self.plan.num_merges)?;
                write_atomic(&self.path(key, "merges"), bpe.to_merge_file().as_bytes())?;
                Output::Bpe(Arc::new(bpe))
            }
            _ => {
                let enc = enc.ok_or_else(|| Error::protocol("vocabulary is not available"))?;
                let bpe = &*enc.bpe;
                let seed = job.seed.unwrap_or(0);
                let dev = job.dev.map(|d| &enc.dev[&d]);
                match job.kind {
                    JobKind::Train | JobKind::Adapt => {
                        let corpus = self.corpus(job, enc, outputs)?;
                        let config = self.plan.train_config(job.dev.unwrap_or(Domain::InDomain), seed);
                        let dev = dev.ok_or_else(|| Error::protocol("training job without dev set"))?;
                        let report = match (&job.arch, job.init.as_deref()) {
                            (Some(arch), None) => {
                                let model = build_model(arch, bpe.vocab().len(), seed)?;
                                train(&model, seed, bpe, &corpus, dev, &config)?
                            }
                            (None, Some(parent)) => {
                                let parent = Self::checkpoint(outputs, parent)?;
                                adapt(parent, parent.arch(), bpe, &corpus, dev, &config)?
                            }
                            _ => return Err(Error::protocol(format!("job {} needs exactly one of arch and init", job.name))),
                        };
                        save_checkpoint(&report.best, &self.path(key, "ckpt"))?;
                        write_atomic(&self.path(key, "log"), report.to_log().as_bytes())?;
                        Output::Trained(Arc::new(report))
                    }
                    JobKind::ContinueOnOriginal => {
                        let parent = job.init.as_deref().unwrap_or_default();
                        let Some(Output::Trained(student)) = outputs.get(parent) else {
                            return Err(Error::protocol(format!("job {parent} produced no training report")));
                        };
                        let corpus = self.corpus(job, enc, outputs)?;
                        let config = self.plan.train_config(job.dev.unwrap_or(Domain::InDomain), seed);
                        let dev = dev.ok_or_else(|| Error::protocol("training job without dev set"))?;
                        let c = continue_on_original(student, bpe, &corpus, dev, &config)?;
                        save_checkpoint(&c.post.best, &self.path(key, "post.ckpt"))?;
                        write_atomic(&self.path(key, "log"), c.post.to_log().as_bytes())?;
                        let phase = match c.phase {
                            Phase::Original => "original",
                            Phase::Distilled => "distilled",
                        };
                        extra.push_str(&format!("phase {phase}\n"));
                        Output::Continued(Arc::new(c))
                    }
                    JobKind::Distill => {
                        let teacher = Self::checkpoint(outputs, job.teacher.as_deref().unwrap_or_default())?;
                        let corpus = self.corpus(job, enc, outputs)?;
                        let d = distill(teacher, bpe, &corpus, &self.plan.beam, self.threads(job))?;
                        save_corpus_atomic(&d, &self.dir.join(key))?;
                        Output::Corpus(Arc::new(d))
                    }
                    JobKind::Score => {
                        let model = Self::checkpoint(outputs, job.model.as_deref().unwrap_or_default())?;
                        let dev = dev.ok_or_else(|| Error::protocol("score job without dev set"))?;
                        let vocab = bpe.vocab();
                        let sources: Vec<Vec<u32>> = dev.pairs().iter().map(|p| vocab.encode(p.source())).collect();
                        let hyps = decode_ids(model.model(), &sources, &self.plan.beam, self.threads(job))?;
                        let words: Vec<Vec<String>> =
                            hyps.iter().map(|h| detokenize_tokens(&vocab.decode(h.content()))).collect();
                        let refs = self.data.word_level(Domain::InDomain, true);
                        let refs: Vec<&[String]> = refs.pairs().iter().map(|p| p.target()).collect();
                        let report = corpus_bleu(&words, &refs)?;
                        let text: String = words.iter().map(|w| w.join(" ") + "\n").collect();
                        write_atomic(&self.path(key, "hyp"), text.as_bytes())?;
                        write_atomic(&self.path(key, "score"), format!("{report}\n").as_bytes())?;
                        Output::Score(report)
                    }
                    JobKind::LearnBpe => unreachable!(),
                }
            }
        };
        let done = format!("{JOB_HEADER}\nkey {key}\nkind {}\noutput {}\n{extra}", job.kind, out.id());
        write_atomic(&self.path(key, "done"), done.as_bytes())?;
        Ok(out)
    }

    fn record(&self, job: &Job, key: String, result: &Result<(Output, JobStatus, f64)>) -> JobRecord {
        let mut r = JobRecord {
            name: job.name.clone(),
            kind: job.kind,
            status: JobStatus::Failed,
            key,
            output: None,
            dev_bleu: None,
            train_seconds: 0.0,
            lineage: Vec::new(),
            error: None,
        };
        match result {
            Ok((out, status, secs)) => {
                r.status = *status;
                r.output = Some(out.id());
                r.dev_bleu = out.dev_bleu();
                r.train_seconds = if job.kind.is_training() { *secs } else { 0.0 };
                if let Some(c) = out.checkpoint() {
                    r.lineage = c.lineage().iter().map(ToString::to_string).collect();
                }
            }
            Err(e) => r.error = Some(format!("error[{}] {e}", e.category())),
        }
        r
    }
}

/// Executes `graph` in dependency waves, at most `plan.concurrency` jobs at a
/// time. Finished jobs are served from `dir` when their key matches; a failed
/// job marks everything downstream as skipped.
pub fn run_graph(graph: &JobGraph, plan: &ExperimentPlan, data: &ExperimentData, dir: &Path) -> Result<Vec<JobRecord>> {
    plan.validate()?;
    ensure_writable(dir)?;
    let runner = Runner { plan, data, dir };
    let mut keys: HashMap<String, String> = HashMap::new();
    for j in &graph.jobs {
        let k = runner.key(j, &keys);
        keys.insert(j.name.clone(), k);
    }
    let mut records: HashMap<String, JobRecord> = HashMap::new();
    let mut outputs: HashMap<String, Output> = HashMap::new();
    let mut encoded: Option<Encoded> = None;
    let mut pending: Vec<&Job> = graph.jobs.iter().collect();
    while !pending.is_empty() {
        let mut ready = Vec::new();
        let mut waiting = Vec::new();
        for j in pending {
            let deps = j.dependencies();
            if deps.iter().any(|d| records.get(*d).is_some_and(|r| !r.status.succeeded())) {
                let mut r = runner.record(j, keys[&j.name].clone(), &Err(Error::protocol("upstream job did not succeed")));
                r.status = JobStatus::Skipped;
                r.error = None;
                records.insert(j.name.clone(), r);
            } else if deps.iter().all(|d| records.contains_key(*d)) {
                ready.push(j);
            } else {
                waiting.push(j);
            }
        }
        for chunk in ready.chunks(plan.concurrency) {
            let results: Vec<Result<(Output, JobStatus, f64)>> = thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|j| {
                        let (runner, outputs, enc, key) = (&runner, &outputs, encoded.as_ref(), &keys[&j.name]);
                        scope.spawn(move || -> Result<(Output, JobStatus, f64)> {
                            if let Some(out) = runner.load(j, key, outputs)? {
                                return Ok((out, JobStatus::Cached, 0.0));
                            }
                            let t = Instant::now();
                            let out = runner.execute(j, key, enc, outputs)?;
                            Ok((out, JobStatus::Ran, t.elapsed().as_secs_f64()))
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::protocol("job thread panicked"))))
                    .collect()
            });
            for (j, mut res) in chunk.iter().zip(results) {
                if let Ok((Output::Bpe(b), _, _)) = &res {
                    match Encoded::new(Arc::clone(b), data) {
                        Ok(e) => encoded = Some(e),
                        Err(e) => res = Err(e),
                    }
                }
                let rec = runner.record(j, keys[&j.name].clone(), &res);
                match &res {
                    Ok(_) => log::info!("job {} {}", j.name, rec.status),
                    Err(e) => log::warn!("job {} failed: {e}", j.name),
                }
                if let Ok((out, _, _)) = res {
                    outputs.insert(j.name.clone(), out);
                }
                records.insert(j.name.clone(), rec);
            }
        }
        pending = waiting;
    }
    Ok(graph.jobs.iter().map(|j| records.remove(&j.name).expect("every job is recorded")).collect())
}

/// Expands and runs one configuration.
pub fn run_plan(plan: &ExperimentPlan, data: &ExperimentData, dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let graph = expand_plan(plan)?;
    let jobs = run_graph(&graph, plan, data, dir)?;
    let score = JobGraph::score_job(plan.seeds[0]);
    let mut notes = vec![TEACHER_BUDGET_NOTE.to_owned()];
    if let (Ok(s), Ok(t)) = (plan.student_arch(), plan.teacher_arch()) {
        notes.push(format!("student {}", crate::trainer::describe(&s)));
        notes.push(format!("teacher {}", crate::trainer::describe(&t)));
    }
    Ok(RunManifest {
        config_id: plan.config_id,
        student: plan.student,
        teacher: plan.teacher,
        seeds: plan.seeds.clone(),
        gd_corpus: data.gd_train.id(),
        id_corpus: data.id_train.id(),
        notes,
        signature: graph.lineage_signature(&score),
        jobs,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Step-1 scores of the recipe and the configuration they select.
#[derive(Clone, Debug, PartialEq)]
pub struct RecipeChoice {
    pub gd_student_bleu: f64,
    pub gd_baseline_bleu: f64,
    pub config_id: u8,
    pub graph: JobGraph,
}

/// Reads the median general-domain dev BLEU of the distilled student and
/// the baseline from step-1 job records and expands the chosen
/// configuration.
pub fn choose_recipe(base: &ExperimentPlan, stage: &[JobRecord]) -> Result<RecipeChoice> {
    let student_role = if base.continue_gd_student {
        "gd-student-continued"
    } else {
        "gd-student"
    };
    let median_of = |role: &str| -> Result<f64> {
        let scores = base
            .seeds
            .iter()
            .map(|&s| {
                let name = job_name(s, role);
                stage
                    .iter()
                    .find(|r| r.name == name && r.status.succeeded())
                    .and_then(|r| r.dev_bleu)
                    .ok_or_else(|| Error::protocol(format!("recipe step 1 job {name} did not finish")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(median(&scores).expect("plans have at least one seed"))
    };
    let gd_student_bleu = median_of(student_role)?;
    let gd_baseline_bleu = median_of("gd-baseline")?;
    let config_id = recipe_config(gd_student_bleu, gd_baseline_bleu);
    Ok(RecipeChoice {
        gd_student_bleu,
        gd_baseline_bleu,
        config_id,
        graph: expand_plan(&base.with_config(config_id))?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecipeOutcome {
    pub choice: RecipeChoice,
    pub stage: Vec<JobRecord>,
    pub manifest: RunManifest,
}

/// Trains the general-domain baseline and distilled student, picks the
/// configuration, then runs it (the step-1 jobs are cache hits).
pub fn run_recipe(base: &ExperimentPlan, data: &ExperimentData, dir: &Path) -> Result<RecipeOutcome> {
    let stage = run_graph(&expand_recipe_stage(base)?, base, data, dir)?;
    let choice = choose_recipe(base, &stage)?;
    let manifest = run_plan(&base.with_config(choice.config_id), data, dir)?;
    Ok(RecipeOutcome {
        choice,
        stage,
        manifest,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub domain: String,
    pub size: SizeClass,
    pub config_id: u8,
    /// Median final dev BLEU over seeds.
    pub dev_bleu: f64,
    pub best: bool,
    pub signature: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub tie_window: f64,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn best_configs(&self, size: SizeClass) -> Vec<u8> {
        self.rows.iter().filter(|r| r.size == size && r.best).map(|r| r.config_id).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{COMPARISON_HEADER}\ntie_window {}\n", self.tie_window);
        for r in &self.rows {
            s.push_str(&format!(
                "row domain {} size {} config {} dev_bleu {:.4} best {} lineage {}\n",
                r.domain, r.size, r.config_id, r.dev_bleu, r.best, r.signature
            ));
        }
        s
    }
}

/// Tabulates median dev BLEU per configuration for each student size and
/// marks every configuration within `tie_window` of the best.
pub fn compare_configs(manifests: &[RunManifest], tie_window: f64) -> Result<Comparison> {
    let Some(first) = manifests.first() else {
        return Err(Error::validation("manifests", "nothing to compare"));
    };
    if !(tie_window >= 0.0) {
        return Err(Error::validation("tie_window", "must be >= 0"));
    }
    for m in manifests {
        if m.gd_corpus != first.gd_corpus || m.id_corpus != first.id_corpus {
            return Err(Error::protocol(format!(
                "config {} used corpora {}/{}, config {} used {}/{}",
                m.config_id, m.gd_corpus, m.id_corpus, first.config_id, first.gd_corpus, first.id_corpus
            )));
        }
        if m.seeds != first.seeds {
            return Err(Error::protocol(format!(
                "config {} used seeds {:?}, config {} used {:?}",
                m.config_id, m.seeds, first.config_id, first.seeds
            )));
        }
    }
    let mut rows = Vec::new();
    for m in manifests {
        let scores: Vec<f64> = m.seeds.iter().filter_map(|&s| m.score(s)).collect();
        if scores.len() != m.seeds.len() {
            return Err(Error::protocol(format!("config {} has unfinished seeds", m.config_id)));
        }
        rows.push(ComparisonRow {
            domain: format!("id:{}", m.id_corpus),
            size: m.student,
            config_id: m.config_id,
            dev_bleu: median(&scores).unwrap_or(f64::NAN),
            best: false,
            signature: m.signature.clone(),
        });
    }
    rows.sort_by_key(|r| (r.size as u8, r.config_id));
    let sizes: Vec<SizeClass> = rows.iter().map(|r| r.size).collect();
    for size in sizes {
        let top = rows
            .iter()
            .filter(|r| r.size == size)
            .map(|r| r.dev_bleu)
            .fold(f64::NEG_INFINITY, f64::max);
        for r in rows.iter_mut().filter(|r| r.size == size) {
            r.best = r.dev_bleu >= top - tie_window - 1e-12;
        }
    }
    Ok(Comparison { tie_window, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum InitGroup {
    Baseline,
    Distilled,
}

impl fmt::Display for InitGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitGroup::Baseline => "baseline",
            InitGroup::Distilled => "distilled",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationPoint {
    pub group: InitGroup,
    pub label: String,
    pub gd_bleu: f64,
    pub id_bleu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through the points; `None` for fewer than 3 points or
/// no spread in x.
pub fn fit_line(points: &[(f64, f64)]) -> Option<LinearFit> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= f64::EPSILON * n as f64 * mx.abs().max(1.0) {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationReport {
    pub points: Vec<CorrelationPoint>,
    /// Fits for `all`, `baseline` and `distilled`.
    pub fits: Vec<(String, usize, Option<LinearFit>)>,
}

impl CorrelationReport {
    pub fn fit(&self, group: &str) -> Option<LinearFit> {
        self.fits.iter().find(|f| f.0 == group).and_then(|f| f.2)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{CORRELATION_HEADER}\n# point <group> <label> <gd_dev_bleu> <id_dev_bleu>\n");
        for p in &self.points {
            s.push_str(&format!("point {} {} {:.4} {:.4}\n", p.group, p.label, p.gd_bleu, p.id_bleu));
        }
        for (g, n, fit) in &self.fits {
            match fit {
                Some(f) => s.push_str(&format!(
                    "fit {g} n {n} slope {:.6} intercept {:.6} r2 {:.6}\n",
                    f.slope, f.intercept, f.r_squared
                )),
                None => s.push_str(&format!("fit {g} n {n} undefined\n")),
            }
        }
        s
    }
}

pub fn gd_vs_id_correlation(points: Vec<CorrelationPoint>) -> CorrelationReport {
    let xy = |g: Option<InitGroup>| -> Vec<(f64, f64)> {
        points
            .iter()
            .filter(|p| g.is_none_or(|g| p.group == g))
            .map(|p| (p.gd_bleu, p.id_bleu))
            .collect()
    };
    let fits = [("all", None), ("baseline", Some(InitGroup::Baseline)), ("distilled", Some(InitGroup::Distilled))]
        .into_iter()
        .map(|(name, g)| {
            let pts = xy(g);
            (name.to_owned(), pts.len(), fit_line(&pts))
        })
        .collect();
    CorrelationReport { points, fits }
}

/// Pairs each adapted student's in-domain score with the general-domain dev
/// BLEU of the model it was initialized from.
pub fn correlation_points(manifests: &[RunManifest]) -> Vec<CorrelationPoint> {
    let mut points = Vec::new();
    for m in manifests {
        let Ok((init, _)) = axes(m.config_id) else { continue };
        let (group, role) = match init {
            InitSource::Random => continue,
            InitSource::GdBaseline => (InitGroup::Baseline, "gd-baseline"),
            InitSource::GdStudent => (
                InitGroup::Distilled,
                if m.job(&job_name(m.seeds[0], "gd-student-continued")).is_some() {
                    "gd-student-continued"
                } else {
                    "gd-student"
                },
            ),
        };
        for &s in &m.seeds {
            if let (Some(gd), Some(id)) = (m.dev_bleu(s, role), m.score(s)) {
                points.push(CorrelationPoint {
                    group,
                    label: format!("config{}-{}-seed{s}", m.config_id, m.student),
                    gd_bleu: gd,
                    id_bleu: id,
                });
            }
        }
    }
    points
}
