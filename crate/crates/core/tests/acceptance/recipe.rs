//! Recipe selection from injected step-1 results.

use seqkd::nnet::SizeClass;
use seqkd::pipeline::{
    choose_recipe, job_name, ExperimentPlan, InitSource, JobKind, JobRecord, JobStatus, TeacherSource,
};

fn record(seed: u64, role: &str, kind: JobKind, bleu: f64) -> JobRecord {
    JobRecord {
        name: job_name(seed, role),
        kind,
        status: JobStatus::Cached,
        key: format!("stub{seed}{role}"),
        output: Some(format!("ckpt-{seed}-{role}")),
        dev_bleu: Some(bleu),
        train_seconds: 0.0,
        lineage: Vec::new(),
        error: None,
    }
}

fn stage(student_role: &str, student: &[f64], baseline: &[f64]) -> Vec<JobRecord> {
    let mut v = Vec::new();
    for (i, (&s, &b)) in student.iter().zip(baseline).enumerate() {
        let seed = i as u64 + 1;
        let kind = if student_role == "gd-student" {
            JobKind::Train
        } else {
            JobKind::ContinueOnOriginal
        };
        v.push(record(seed, student_role, kind, s));
        v.push(record(seed, "gd-baseline", JobKind::Train, b));
    }
    v
}

pub struct Case {
    pub name: &'static str,
    pub continue_gd: bool,
    pub student: [f64; 3],
    pub baseline: [f64; 3],
    pub expected: u8,
}

pub const CASES: [Case; 6] = [
    Case {
        name: "student ahead",
        continue_gd: true,
        student: [21.0, 22.5, 20.0],
        baseline: [19.0, 20.0, 18.5],
        expected: 9,
    },
    Case {
        name: "baseline ahead",
        continue_gd: true,
        student: [17.0, 18.0, 16.0],
        baseline: [19.0, 20.0, 18.5],
        expected: 6,
    },
    Case {
        name: "tie goes to the baseline",
        continue_gd: true,
        student: [20.0, 19.0, 21.0],
        baseline: [20.0, 20.0, 20.0],
        expected: 6,
    },
    Case {
        name: "median, not mean, decides (student)",
        continue_gd: true,
        student: [10.0, 30.0, 31.0],
        baseline: [29.0, 29.5, 40.0],
        expected: 9,
    },
    Case {
        name: "median, not mean, decides (baseline)",
        continue_gd: true,
        student: [29.0, 29.5, 40.0],
        baseline: [10.0, 30.0, 31.0],
        expected: 6,
    },
    Case {
        name: "uncontinued student",
        continue_gd: false,
        student: [25.0, 26.0, 24.0],
        baseline: [20.0, 21.0, 22.0],
        expected: 9,
    },
];

/// Returns a description of every failed check.
pub fn run() -> Vec<String> {
    let mut failures = Vec::new();
    for c in &CASES {
        let mut base = ExperimentPlan::desk(9, SizeClass::Tiny);
        base.seeds = vec![1, 2, 3];
        base.continue_gd_student = c.continue_gd;
        let role = if c.continue_gd { "gd-student-continued" } else { "gd-student" };
        let records = stage(role, &c.student, &c.baseline);
        match choose_recipe(&base, &records) {
            Ok(choice) => {
                let init = if c.expected == 9 {
                    InitSource::GdStudent
                } else {
                    InitSource::GdBaseline
                };
                let graph_ok = base.seeds.iter().all(|&s| {
                    choice.graph.init_source(s) == Some(init) && choice.graph.teacher_source(s) == Some(TeacherSource::Adapted)
                });
                if choice.config_id != c.expected || !graph_ok {
                    failures.push(format!("{}: chose {} (graph ok {graph_ok})", c.name, choice.config_id));
                }
            }
            Err(e) => failures.push(format!("{}: {e}", c.name)),
        }
    }
    // A missing or failed step-1 result must not silently pick a recipe.
    let mut base = ExperimentPlan::desk(9, SizeClass::Tiny);
    base.seeds = vec![1, 2, 3];
    let mut records = stage("gd-student", &[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]);
    records[2].status = JobStatus::Failed;
    records[2].dev_bleu = None;
    if choose_recipe(&base, &records).is_ok() {
        failures.push("a failed step-1 job still produced a choice".into());
    }
    failures
}
