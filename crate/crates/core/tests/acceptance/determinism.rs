//! Reruns of all nine configurations against a warm cache, and fresh runs
//! in a second directory.

use std::fs;
use std::path::Path;

use seqkd::corpus::{generate_domain, split_dev, DomainSpec};
use seqkd::decoder::BeamConfig;
use seqkd::nnet::SizeClass;
use seqkd::pipeline::{
    compare_configs, correlation_points, gd_vs_id_correlation, run_plan, ExperimentData, ExperimentPlan, RunManifest,
    DEFAULT_TIE_WINDOW, JOB_HEADER,
};
use seqkd::trainer::{LrSchedule, TrainConfig};

pub const TOLERANCE: f64 = 1e-9;

fn data() -> ExperimentData {
    let spec = |d: DomainSpec, size| DomainSpec {
        vocab_size: 16,
        size,
        length_range: (3, 6),
        ..d
    };
    let gd = generate_domain(&spec(DomainSpec::general(31), 620)).unwrap();
    let id = generate_domain(&spec(DomainSpec::in_domain(32), 170)).unwrap();
    let (gd_train, gd_dev) = split_dev(&gd, 20).unwrap();
    let (id_train, id_dev) = split_dev(&id, 20).unwrap();
    ExperimentData::new(gd_train, gd_dev, id_train, id_dev).unwrap()
}

fn plan(config: u8) -> ExperimentPlan {
    let train = TrainConfig {
        max_updates: 150,
        checkpoint_interval_updates: 50,
        batch_tokens: 256,
        schedule: LrSchedule {
            peak: 5e-3,
            warmup_updates: 10,
        },
        dev_beam: BeamConfig::with_beam(2),
        ..TrainConfig::desk()
    };
    ExperimentPlan {
        student_scale: 4,
        teacher_scale: 16,
        num_merges: 30,
        gd_train: train.clone(),
        id_train: train,
        beam: BeamConfig::with_beam(3),
        seeds: vec![1, 2],
        concurrency: 2,
        ..ExperimentPlan::desk(config, SizeClass::Tiny)
    }
}

fn run_all(dir: &Path, data: &ExperimentData) -> Vec<RunManifest> {
    (1..=9).map(|c| run_plan(&plan(c), data, dir).unwrap()).collect()
}

fn reports(ms: &[RunManifest]) -> String {
    compare_configs(ms, DEFAULT_TIE_WINDOW).unwrap().to_text() + &gd_vs_id_correlation(correlation_points(ms)).to_text()
}

/// Dev BLEU per evaluation from a training job's log.
fn history(dir: &Path, key: &str) -> Vec<(u64, f64)> {
    let text = fs::read_to_string(dir.join(format!("{key}.log"))).unwrap();
    text.lines()
        .filter_map(|l| {
            let f: Vec<&str> = l.split(' ').collect();
            match f[..] {
                ["checkpoint", _, "updates", u, "dev_bleu", b] => Some((u.parse().unwrap(), b.parse().unwrap())),
                _ => None,
            }
        })
        .collect()
}

pub struct Outcome {
    pub failures: Vec<String>,
    pub jobs: usize,
    pub histories: usize,
    pub nonzero_evals: usize,
    pub worst_history_gap: f64,
}

pub fn run() -> Outcome {
    let d = data();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();

    let first = run_all(a.path(), &d);
    for m in &first {
        if !m.succeeded() {
            failures.push(format!("config {} failed:\n{}", m.config_id, m.to_text()));
        }
    }
    let again = run_all(a.path(), &d);
    let executed: usize = again.iter().map(|m| m.executed().len()).sum();
    let seconds: f64 = again.iter().map(RunManifest::train_seconds).sum();
    if executed != 0 || seconds != 0.0 {
        failures.push(format!("rerun executed {executed} jobs and trained {seconds}s"));
    }
    if reports(&first) != reports(&again) {
        failures.push("rerun reports differ".into());
    }
    let mut jobs = 0;
    for m in &again {
        for j in &m.jobs {
            jobs += 1;
            let done = fs::read_to_string(a.path().join(format!("{}.done", j.key))).unwrap_or_default();
            let mut lines = done.lines();
            if lines.next() != Some(JOB_HEADER) || !done.lines().any(|l| l == format!("key {}", j.key)) {
                failures.push(format!("{} has no matching completion marker", j.name));
            }
        }
    }

    let fresh = run_all(b.path(), &d);
    let (mut histories, mut nonzero_evals, mut worst) = (0, 0, 0.0f64);
    for (x, y) in first.iter().zip(&fresh) {
        for (jx, jy) in x.jobs.iter().zip(&y.jobs) {
            if jx.key != jy.key {
                failures.push(format!("{} key differs across directories", jx.name));
            }
            if !jx.kind.is_training() {
                continue;
            }
            let (hx, hy) = (history(a.path(), &jx.key), history(b.path(), &jy.key));
            histories += 1;
            nonzero_evals += hx.iter().filter(|e| e.1 > 0.0).count();
            if hx.len() != hy.len() || hx.is_empty() {
                failures.push(format!("{} history lengths {} vs {}", jx.name, hx.len(), hy.len()));
                continue;
            }
            for (ex, ey) in hx.iter().zip(&hy) {
                worst = worst.max((ex.1 - ey.1).abs());
                if ex.0 != ey.0 || (ex.1 - ey.1).abs() > TOLERANCE {
                    failures.push(format!("{} history {ex:?} vs {ey:?}", jx.name));
                }
            }
        }
    }
    if reports(&first) != reports(&fresh) {
        failures.push("fresh-run reports differ".into());
    }
    Outcome {
        failures,
        jobs,
        histories,
        nonzero_evals,
        worst_history_gap: worst,
    }
}
