//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line
//! per criterion; exits non-zero if any fails.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 1 3`.

mod beam_exact;
mod bleu_oracle;
mod config_matrix;
mod determinism;
mod distill_fidelity;
mod gradients;
mod recipe;
mod stopping;
mod trends;

use std::process::ExitCode;
use std::time::Instant;

struct Verdict {
    pass: bool,
    detail: String,
}

fn criterion_1() -> Verdict {
    let prim = gradients::primitives();
    let full = gradients::full_model();
    let pass = gradients::passes(&prim) && gradients::passes(&full);
    let detail = prim
        .worst
        .iter()
        .chain(&full.worst)
        .map(|(n, e)| format!("{n}={e:.1e}"))
        .collect::<Vec<_>>()
        .join(" ");
    Verdict {
        pass,
        detail: format!("max relative error: {detail}"),
    }
}

fn criterion_2() -> Verdict {
    let o = bleu_oracle::run();
    Verdict {
        pass: o.mismatches == 0 && o.identity_ok,
        detail: format!(
            "{} corpora, {} mismatches, max |diff| {:.1e}, identity == 100: {}",
            bleu_oracle::CORPORA,
            o.mismatches,
            o.worst,
            o.identity_ok
        ),
    }
}

fn criterion_3() -> Verdict {
    let o = beam_exact::run();
    Verdict {
        pass: o.passed == beam_exact::CASES,
        detail: format!(
            "{}/{} match the enumeration argmax, max log-prob gap {:.1e}",
            o.passed,
            beam_exact::CASES,
            o.worst_gap
        ),
    }
}

fn criterion_4() -> Verdict {
    let o = distill_fidelity::run();
    Verdict {
        pass: o.target_mismatches == 0 && o.sources_identical && o.files_identical,
        detail: format!(
            "{} pairs, {} target mismatches, sources identical {}, .src bytes identical {}, teacher dev BLEU {:.2}",
            o.pairs, o.target_mismatches, o.sources_identical, o.files_identical, o.teacher_bleu
        ),
    }
}

fn criterion_5() -> Verdict {
    let mut bad = Vec::new();
    for &(c, init, teacher, sig) in &config_matrix::MATRIX {
        let problems = config_matrix::check(c, init, teacher, sig);
        if !problems.is_empty() {
            eprintln!("config {c}: {}", problems.join("; "));
            bad.push(c);
        }
    }
    Verdict {
        pass: bad.is_empty(),
        detail: format!("{}/9 configurations match, failing {bad:?}", 9 - bad.len()),
    }
}

fn criterion_6() -> Verdict {
    let o = stopping::run();
    let all_reasons = o.reasons_seen.iter().all(|&n| n > 0);
    Verdict {
        pass: o.scenario_failures.is_empty() && o.random_mismatches == 0 && all_reasons,
        detail: format!(
            "{} named scenarios failing {:?}; {} random traces, {} disagree with the simulator (stops by max_updates/max_epochs/early_stop: {:?})",
            stopping::scenarios().len(),
            o.scenario_failures,
            stopping::RANDOM_TRACES,
            o.random_mismatches,
            o.reasons_seen
        ),
    }
}

fn seeds(v: &[f64]) -> String {
    v.iter().map(|b| format!("{b:.2}")).collect::<Vec<_>>().join("/")
}

fn criterion_7() -> Verdict {
    let t = trends::trends();
    let (adapted, scratch) = (trends::Trends::median(&t.adapted_teacher), trends::Trends::median(&t.id_teacher));
    Verdict {
        pass: t.complete() && adapted > scratch && t.seconds < trends::BUDGET_SECONDS,
        detail: format!(
            "median in-domain dev BLEU adapted {adapted:.2} [{}] vs from scratch {scratch:.2} [{}]; trend runs took {:.0}s; {:?}",
            seeds(&t.adapted_teacher),
            seeds(&t.id_teacher),
            t.seconds,
            t.failures
        ),
    }
}

fn criterion_8() -> Verdict {
    let t = trends::trends();
    let m = |c: usize| trends::Trends::median(&t.config[c]);
    Verdict {
        pass: t.complete() && m(4) >= m(1) + 2.0 && m(7) >= m(1) + 2.0,
        detail: format!(
            "median dev BLEU config 1 {:.2} [{}], config 4 {:.2} [{}], config 7 {:.2} [{}]",
            m(1),
            seeds(&t.config[1]),
            m(4),
            seeds(&t.config[4]),
            m(7),
            seeds(&t.config[7])
        ),
    }
}

fn criterion_9() -> Verdict {
    let t = trends::trends();
    let m = |c: usize| trends::Trends::median(&t.config[c]);
    Verdict {
        pass: t.complete() && m(9) >= m(7),
        detail: format!(
            "median dev BLEU config 9 {:.2} [{}] vs config 7 {:.2} [{}]",
            m(9),
            seeds(&t.config[9]),
            m(7),
            seeds(&t.config[7])
        ),
    }
}

fn criterion_10() -> Verdict {
    let o = determinism::run();
    for f in &o.failures {
        eprintln!("{f}");
    }
    Verdict {
        pass: o.failures.is_empty(),
        detail: format!(
            "{} cached jobs checked, {} training histories compared ({} non-zero evaluations), max gap {:.1e}, {} failures",
            o.jobs,
            o.histories,
            o.nonzero_evals,
            o.worst_history_gap,
            o.failures.len()
        ),
    }
}

fn criterion_11() -> Verdict {
    let failures = recipe::run();
    for f in &failures {
        eprintln!("{f}");
    }
    Verdict {
        pass: failures.is_empty(),
        detail: format!("{} stubbed orderings, {} failures", recipe::CASES.len() + 1, failures.len()),
    }
}

type Criterion = (u32, &'static str, fn() -> Verdict);

const CRITERIA: &[Criterion] = &[
    (1, "gradient correctness", criterion_1),
    (2, "BLEU oracle equivalence", criterion_2),
    (3, "beam-search exactness", criterion_3),
    (4, "distillation fidelity", criterion_4),
    (5, "configuration matrix", criterion_5),
    (6, "stopping rules", criterion_6),
    (7, "adapted teacher beats in-domain teacher", criterion_7),
    (8, "general-domain initialization beats random", criterion_8),
    (9, "second distillation does not hurt", criterion_9),
    (10, "determinism and cache soundness", criterion_10),
    (11, "recipe selection", criterion_11),
];

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for &(n, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {status} {name} ({:.1}s): {}", t.elapsed().as_secs_f64(), v.detail);
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
