//! Stopping rules on synthetic dev-score traces, including a brute-force
//! simulator that walks updates one at a time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqkd::trainer::{run_schedule, StopReason, TrainConfig};

pub const RANDOM_TRACES: u64 = 500;

/// What a schedule run produced, in comparable form.
#[derive(Debug, PartialEq)]
pub struct Run {
    pub reason: StopReason,
    pub updates: u64,
    pub epochs: u64,
    /// `(updates, epoch)` of every evaluation.
    pub evals: Vec<(u64, u64)>,
    pub best_index: usize,
}

fn config(max_updates: u64, max_epochs: u64, patience: usize, interval: u64) -> TrainConfig {
    TrainConfig {
        max_updates,
        max_epochs,
        patience_checkpoints: patience,
        checkpoint_interval_updates: interval,
        ..TrainConfig::desk()
    }
}

/// Runs the real schedule; the k-th evaluation scores `trace[k]` (the last
/// value repeats).
pub fn schedule(cfg: &TrainConfig, batches: usize, initial: bool, trace: &[f64]) -> Run {
    let mut k = 0;
    let out = run_schedule(
        cfg,
        batches,
        initial,
        |_, _, _| Ok(0.0),
        |u, e| {
            let s = trace[k.min(trace.len() - 1)];
            k += 1;
            Ok((s, (u, e)))
        },
    )
    .unwrap();
    Run {
        reason: out.stop_reason,
        updates: out.updates,
        epochs: out.epochs,
        evals: out.history.iter().map(|h| (h.updates, h.epoch)).collect(),
        best_index: out.best_index,
    }
}

/// Straight-line restatement of the rules: evaluate every `interval`
/// updates and at the update limit; after each update stop on the update
/// limit, then on exhausted patience at a scheduled evaluation; after each
/// epoch stop on the epoch limit (evaluating first if needed).
pub fn simulate(cfg: &TrainConfig, batches: usize, initial: bool, trace: &[f64]) -> Run {
    let batches = batches as u64;
    let mut evals = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut eval = |u: u64, e: u64, evals: &mut Vec<(u64, u64)>| {
        let s = trace[evals.len().min(trace.len() - 1)];
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((evals.len(), s));
        }
        evals.push((u, e));
        evals.len() - 1 - best.unwrap().0
    };
    let done = |reason, updates, epochs, evals: Vec<(u64, u64)>, best: usize| Run {
        reason,
        updates,
        epochs,
        evals,
        best_index: best,
    };
    if initial {
        eval(0, 0, &mut evals);
    }
    if cfg.max_updates == 0 {
        if !initial {
            eval(0, 0, &mut evals);
        }
        let b = best_of(trace, evals.len());
        return done(StopReason::MaxUpdates, 0, 0, evals, b);
    }
    let mut since_best = 0;
    let mut u = 0;
    loop {
        u += 1;
        let epoch = (u - 1) / batches;
        let scheduled = u % cfg.checkpoint_interval_updates == 0;
        if scheduled || u == cfg.max_updates {
            since_best = eval(u, epoch, &mut evals);
        }
        if u == cfg.max_updates {
            let b = best_of(trace, evals.len());
            return done(StopReason::MaxUpdates, u, epoch, evals, b);
        }
        if scheduled && since_best >= cfg.patience_checkpoints {
            let b = best_of(trace, evals.len());
            return done(StopReason::EarlyStop, u, epoch, evals, b);
        }
        if u % batches == 0 && u / batches >= cfg.max_epochs {
            if evals.last().map(|e| e.0) != Some(u) {
                eval(u, u / batches, &mut evals);
            }
            let b = best_of(trace, evals.len());
            return done(StopReason::MaxEpochs, u, u / batches, evals, b);
        }
    }
}

/// Index of the first maximum among the first `n` trace scores.
fn best_of(trace: &[f64], n: usize) -> usize {
    let mut best = 0;
    for i in 1..n {
        if trace[i.min(trace.len() - 1)] > trace[best.min(trace.len() - 1)] {
            best = i;
        }
    }
    best
}

/// Named scenarios with the expected outcome written out by hand.
pub fn scenarios() -> Vec<(&'static str, Run, Run)> {
    use StopReason::*;
    let rising: Vec<f64> = (0..100).map(f64::from).collect();
    let mut v = Vec::new();
    let mut case = |name, cfg: TrainConfig, batches, initial, trace: &[f64], want: Run| {
        v.push((name, schedule(&cfg, batches, initial, trace), want));
    };
    case(
        "update limit between checkpoints",
        config(23, 100, 3, 5),
        10,
        false,
        &rising,
        Run {
            reason: MaxUpdates,
            updates: 23,
            epochs: 2,
            evals: vec![(5, 0), (10, 0), (15, 1), (20, 1), (23, 2)],
            best_index: 4,
        },
    );
    case(
        "epoch limit between checkpoints",
        config(1000, 3, 3, 10),
        4,
        false,
        &rising,
        Run {
            reason: MaxEpochs,
            updates: 12,
            epochs: 3,
            evals: vec![(10, 2), (12, 3)],
            best_index: 1,
        },
    );
    case(
        "patience 1 stops at the first non-improvement",
        config(1000, 100, 1, 2),
        5,
        false,
        &[1.0, 2.0, 1.5],
        Run {
            reason: EarlyStop,
            updates: 6,
            epochs: 1,
            evals: vec![(2, 0), (4, 0), (6, 1)],
            best_index: 1,
        },
    );
    case(
        "a tie is not an improvement",
        config(1000, 100, 2, 1),
        50,
        false,
        &[3.0, 3.0, 3.0],
        Run {
            reason: EarlyStop,
            updates: 3,
            epochs: 0,
            evals: vec![(1, 0), (2, 0), (3, 0)],
            best_index: 0,
        },
    );
    case(
        "improvement one short of patience resets the count",
        config(1000, 100, 3, 1),
        50,
        false,
        &[5.0, 4.0, 4.0, 6.0, 1.0, 1.0, 1.0],
        Run {
            reason: EarlyStop,
            updates: 7,
            epochs: 0,
            evals: (1..=7).map(|u| (u, 0)).collect(),
            best_index: 3,
        },
    );
    case(
        "update limit wins over exhausted patience at the same checkpoint",
        config(4, 100, 1, 2),
        50,
        false,
        &[2.0, 1.0],
        Run {
            reason: MaxUpdates,
            updates: 4,
            epochs: 0,
            evals: vec![(2, 0), (4, 0)],
            best_index: 0,
        },
    );
    case(
        "update limit wins over the epoch limit at the same update",
        config(8, 2, 5, 3),
        4,
        false,
        &rising,
        Run {
            reason: MaxUpdates,
            updates: 8,
            epochs: 1,
            evals: vec![(3, 0), (6, 1), (8, 1)],
            best_index: 2,
        },
    );
    case(
        "patience exhausted on an epoch's last update stops early",
        config(1000, 2, 1, 4),
        4,
        false,
        &[2.0, 1.0],
        Run {
            reason: EarlyStop,
            updates: 8,
            epochs: 1,
            evals: vec![(4, 0), (8, 1)],
            best_index: 0,
        },
    );
    case(
        "continued training counts the parent as checkpoint 0",
        config(1000, 100, 2, 5),
        100,
        true,
        &[9.0, 8.0, 7.0],
        Run {
            reason: EarlyStop,
            updates: 10,
            epochs: 0,
            evals: vec![(0, 0), (5, 0), (10, 0)],
            best_index: 0,
        },
    );
    case(
        "zero updates evaluates the parent once",
        config(0, 100, 2, 5),
        3,
        true,
        &[4.0],
        Run {
            reason: MaxUpdates,
            updates: 0,
            epochs: 0,
            evals: vec![(0, 0)],
            best_index: 0,
        },
    );
    v
}

pub struct Outcome {
    pub scenario_failures: Vec<String>,
    pub random_mismatches: u64,
    pub reasons_seen: [u64; 3],
}

pub fn run() -> Outcome {
    let mut scenario_failures = Vec::new();
    for (name, got, want) in scenarios() {
        if got != want {
            eprintln!("{name}: got {got:?}, expected {want:?}");
            scenario_failures.push(name.to_owned());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut random_mismatches = 0;
    let mut reasons_seen = [0; 3];
    for case in 0..RANDOM_TRACES {
        let initial = rng.gen_bool(0.3);
        let cfg = config(
            rng.gen_range(u64::from(!initial)..120),
            rng.gen_range(1..8),
            rng.gen_range(1..5),
            rng.gen_range(1..12),
        );
        let batches = rng.gen_range(1..25);
        let trace: Vec<f64> = (0..rng.gen_range(1..40)).map(|_| f64::from(rng.gen_range(0..4))).collect();
        let got = schedule(&cfg, batches, initial, &trace);
        let want = simulate(&cfg, batches, initial, &trace);
        reasons_seen[got.reason as usize] += 1;
        if got != want {
            random_mismatches += 1;
            eprintln!("random case {case}: {cfg:?} batches {batches} initial {initial} trace {trace:?}\n got {got:?}\n want {want:?}");
        }
    }
    Outcome {
        scenario_failures,
        random_mismatches,
        reasons_seen,
    }
}
