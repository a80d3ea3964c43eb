//! Scaled trend runs: configs 1, 4, 7 and 9 plus the from-scratch in-domain
//! teacher, three seeds, one shared artifact cache.

use std::sync::OnceLock;
use std::time::Instant;

use seqkd::corpus::{generate_domain, split_dev, DomainSpec};
use seqkd::nnet::SizeClass;
use seqkd::pipeline::{expand_plan, job_name, median, run_graph, run_plan, ExperimentData, ExperimentPlan, JobStatus};
use seqkd::trainer::TrainConfig;

pub const SEEDS: [u64; 3] = [1, 2, 3];
pub const GD_PAIRS: usize = 50_000;
pub const ID_PAIRS: usize = 2_000;
pub const SHIFT: f64 = 0.3;
pub const BUDGET_SECONDS: f64 = 7200.0;

const VOCAB: usize = 400;
const MERGES: usize = 1600;
const GD_DEV: usize = 500;
const ID_DEV: usize = 200;

/// Per-seed dev BLEU of every quantity the trend criteria compare.
#[derive(Debug, Default)]
pub struct Trends {
    pub id_teacher: Vec<f64>,
    pub adapted_teacher: Vec<f64>,
    pub config: [Vec<f64>; 10],
    pub seconds: f64,
    pub failures: Vec<String>,
}

impl Trends {
    pub fn median(v: &[f64]) -> f64 {
        median(v).unwrap_or(f64::NAN)
    }

    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn data() -> ExperimentData {
    let gd = generate_domain(&DomainSpec {
        vocab_size: VOCAB,
        size: GD_PAIRS + GD_DEV,
        ..DomainSpec::general(101)
    })
    .unwrap();
    let id = generate_domain(&DomainSpec {
        vocab_size: VOCAB,
        size: ID_PAIRS + ID_DEV,
        domain_lexicon_fraction: SHIFT,
        ..DomainSpec::in_domain(202)
    })
    .unwrap();
    let (gd_train, gd_dev) = split_dev(&gd, GD_DEV).unwrap();
    let (id_train, id_dev) = split_dev(&id, ID_DEV).unwrap();
    ExperimentData::new(gd_train, gd_dev, id_train, id_dev).unwrap()
}

pub fn plan(config: u8) -> ExperimentPlan {
    let gd_train = TrainConfig {
        max_updates: 1200,
        ..TrainConfig::desk()
    };
    let id_train = TrainConfig {
        max_updates: 600,
        ..TrainConfig::desk()
    };
    ExperimentPlan {
        student_scale: 8,
        teacher_scale: 16,
        num_merges: MERGES,
        gd_train,
        id_train,
        seeds: SEEDS.to_vec(),
        concurrency: 1,
        ..ExperimentPlan::desk(config, SizeClass::Tiny)
    }
}

fn compute() -> Trends {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = data();
    let mut t = Trends::default();

    // The from-scratch in-domain teacher lives in config 2's graph; only
    // it is needed, not the rest of that configuration.
    let teachers: Vec<String> = SEEDS.iter().map(|&s| job_name(s, "id-teacher")).collect();
    let names: Vec<&str> = teachers.iter().map(String::as_str).collect();
    let graph = expand_plan(&plan(2)).unwrap().restrict(&names).unwrap();
    let records = run_graph(&graph, &plan(2), &data, dir.path()).unwrap();
    for name in &teachers {
        match records.iter().find(|r| &r.name == name).and_then(|r| r.dev_bleu) {
            Some(b) => t.id_teacher.push(b),
            None => t.failures.push(format!("{name} produced no score")),
        }
    }

    for c in [1u8, 4, 7, 9] {
        let m = run_plan(&plan(c), &data, dir.path()).unwrap();
        for j in m.jobs.iter().filter(|j| j.status == JobStatus::Failed) {
            t.failures.push(format!("config {c} {}: {}", j.name, j.error.as_deref().unwrap_or("")));
        }
        for &s in &SEEDS {
            match m.score(s) {
                Some(b) => t.config[c as usize].push(b),
                None => t.failures.push(format!("config {c} seed {s} has no score")),
            }
            if c == 9 {
                match m.dev_bleu(s, "adapted-teacher") {
                    Some(b) => t.adapted_teacher.push(b),
                    None => t.failures.push(format!("seed {s} adapted teacher has no score")),
                }
            }
        }
    }
    t.seconds = start.elapsed().as_secs_f64();
    eprintln!("trend runs: {t:?}");
    t
}

/// Runs once; the three trend criteria share the result.
pub fn trends() -> &'static Trends {
    static CELL: OnceLock<Trends> = OnceLock::new();
    CELL.get_or_init(compute)
}
