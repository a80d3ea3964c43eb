//! The nine configurations: initialization source times in-domain teacher.

use seqkd::nnet::SizeClass;
use seqkd::pipeline::{expand_plan, job_name, ExperimentPlan, InitSource, JobKind, TeacherSource};

use InitSource::{GdBaseline, GdStudent, Random};
use TeacherSource::{Adapted, InDomainBaseline, None as Raw};

/// Config, init source, in-domain data, and the lineage signature of the
/// scored student.
pub const MATRIX: [(u8, InitSource, TeacherSource, &str); 9] = [
    (1, Random, Raw, "train[Tiny](id)"),
    (
        2,
        Random,
        InDomainBaseline,
        "continue(train[Tiny](distill(train[Large](id), id)), id)",
    ),
    (
        3,
        Random,
        Adapted,
        "continue(train[Tiny](distill(adapt(train[Large](gd), id), id)), id)",
    ),
    (4, GdBaseline, Raw, "adapt(train[Tiny](gd), id)"),
    (
        5,
        GdBaseline,
        InDomainBaseline,
        "continue(adapt(train[Tiny](gd), distill(train[Large](id), id)), id)",
    ),
    (
        6,
        GdBaseline,
        Adapted,
        "continue(adapt(train[Tiny](gd), distill(adapt(train[Large](gd), id), id)), id)",
    ),
    (
        7,
        GdStudent,
        Raw,
        "adapt(train[Tiny](distill(train[Large](gd), gd)), id)",
    ),
    (
        8,
        GdStudent,
        InDomainBaseline,
        "continue(adapt(train[Tiny](distill(train[Large](gd), gd)), distill(train[Large](id), id)), id)",
    ),
    (
        9,
        GdStudent,
        Adapted,
        "continue(adapt(train[Tiny](distill(train[Large](gd), gd)), distill(adapt(train[Large](gd), id), id)), id)",
    ),
];

/// Checks one configuration; returns a description of every discrepancy.
pub fn check(config: u8, init: InitSource, teacher: TeacherSource, signature: &str) -> Vec<String> {
    let mut plan = ExperimentPlan::desk(config, SizeClass::Tiny);
    plan.seeds = vec![1, 2];
    let g = match expand_plan(&plan) {
        Ok(g) => g,
        Err(e) => return vec![format!("expansion failed: {e}")],
    };
    let mut problems = Vec::new();
    for &seed in &plan.seeds {
        if g.init_source(seed) != Some(init) {
            problems.push(format!("seed {seed} init {:?}, expected {init:?}", g.init_source(seed)));
        }
        if g.teacher_source(seed) != Some(teacher) {
            problems.push(format!("seed {seed} teacher {:?}, expected {teacher:?}", g.teacher_source(seed)));
        }
        let got = g.lineage_signature(&job_name(seed, "score"));
        if got != signature {
            problems.push(format!("seed {seed} signature {got}"));
        }
    }
    let distills = match teacher {
        Raw => 0,
        _ => 1,
    } + usize::from(init == GdStudent);
    if g.count(JobKind::Distill) != distills * plan.seeds.len() {
        problems.push(format!("{} distill jobs, expected {}", g.count(JobKind::Distill), distills * plan.seeds.len()));
    }
    if g.count(JobKind::LearnBpe) != 1 {
        problems.push("vocabulary is not shared by all jobs".into());
    }
    let teachers_large = g
        .jobs
        .iter()
        .filter(|j| j.name.ends_with("teacher") && j.kind == JobKind::Train)
        .all(|j| j.arch.as_ref().is_some_and(|a| a.size_class == SizeClass::Large));
    if !teachers_large {
        problems.push("a from-scratch teacher is not Large".into());
    }
    problems
}
