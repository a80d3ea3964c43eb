use std::fs;
use std::path::{Path, PathBuf};

use seqkd::bleu::corpus_bleu;
use seqkd::checkpoint::{ModelCheckpoint, CHECKPOINT_HEADER};
use seqkd::corpus::{generate_domain, load_prefix, save_corpus, save_prefix, split_dev, DomainSpec, META_HEADER};
use seqkd::decoder::{decode_ids, BeamConfig};
use seqkd::nnet::{build_model, ArchConfig, DESK_SCALE_FACTOR};
use seqkd::pipeline::{
    self, artifact_dir_from_env, compare_configs, correlation_points, ensure_writable, gd_vs_id_correlation,
    run_plan, ExperimentData, ExperimentPlan, RunManifest, ARTIFACT_DIR_ENV, COMPARISON_HEADER, CORRELATION_HEADER,
    MANIFEST_HEADER,
};
use seqkd::tokenizer::{self, detokenize_tokens, BpeModel, FULL_SCALE_NUM_MERGES, MERGE_FILE_HEADER};
use seqkd::trainer::{adapt, describe, train as train_model, TrainConfig, TRAIN_REPORT_HEADER};
use seqkd::{Error, ParallelCorpus, ReorderRule, SizeClass};

use crate::{Failure, GlobalArgs, PlanArgs, TrainArgs};

type Outcome = Result<(), Failure>;

pub fn version_text() -> String {
    format!(
        "seqkd {}\ncheckpoint {CHECKPOINT_HEADER}\nmerges {MERGE_FILE_HEADER}\nmanifest {MANIFEST_HEADER}\n\
         train-report {TRAIN_REPORT_HEADER}\ncorpus-meta {META_HEADER}\ncomparison {COMPARISON_HEADER}\n\
         correlation {CORRELATION_HEADER}\n",
        env!("CARGO_PKG_VERSION")
    )
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Error::io(path, e).into()
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn artifact_dir(g: &GlobalArgs) -> Result<PathBuf, Failure> {
    match &g.artifact_dir {
        Some(d) => {
            ensure_writable(d)?;
            Ok(d.clone())
        }
        None => artifact_dir_from_env().map_err(|_| {
            Failure::new(
                "usage",
                format!("no artifact directory: pass --artifact-dir or set {ARTIFACT_DIR_ENV}"),
                2,
            )
        }),
    }
}

fn base_config(g: &GlobalArgs) -> TrainConfig {
    if g.full_scale {
        TrainConfig::full_scale()
    } else {
        TrainConfig::desk()
    }
}

fn default_scale(g: &GlobalArgs) -> usize {
    if g.full_scale {
        1
    } else {
        DESK_SCALE_FACTOR
    }
}

fn apply_train_args(c: &mut TrainConfig, a: &TrainArgs) {
    if let Some(v) = a.max_updates {
        c.max_updates = v;
    }
    if let Some(v) = a.max_epochs {
        c.max_epochs = v;
    }
    if let Some(v) = a.patience {
        c.patience_checkpoints = v;
    }
    if let Some(v) = a.interval {
        c.checkpoint_interval_updates = v;
    }
    if let Some(v) = a.batch_tokens {
        c.batch_tokens = v;
    }
    if let Some(v) = a.lr {
        c.schedule.peak = v;
    }
    if let Some(v) = a.warmup {
        c.schedule.warmup_updates = v;
    }
    if let Some(v) = a.dev_beam {
        c.dev_beam = BeamConfig::with_beam(v);
    }
    c.decode_threads = a.threads;
}

/// Loads a corpus prefix, segmenting it with `bpe` if it is word level.
fn load_encoded(prefix: &Path, bpe: &BpeModel) -> Result<ParallelCorpus, Failure> {
    let c = load_prefix(prefix)?;
    Ok(match c.vocab_id() {
        None => tokenizer::apply_bpe(bpe, &c)?,
        Some(_) => c,
    })
}

pub fn gen_corpus(
    seed: u64,
    size: usize,
    domain_fraction: f64,
    reorder: ReorderRule,
    vocab: usize,
    length_range: (usize, usize),
    out: &Path,
) -> Outcome {
    let spec = DomainSpec {
        seed,
        vocab_size: vocab,
        domain_lexicon_fraction: domain_fraction,
        reorder_rule: reorder,
        length_range,
        size,
    };
    let corpus = generate_domain(&spec)?;
    save_corpus(&corpus, seqkd::corpus::prefix_path(out, "src"), seqkd::corpus::prefix_path(out, "tgt"))?;
    println!("wrote {} pairs to {}.{{src,tgt}}", corpus.len(), out.display());
    Ok(())
}

pub fn learn_bpe(input: &Path, merges: usize, out: &Path) -> Outcome {
    let corpus = load_prefix(input)?;
    let bpe = tokenizer::learn_bpe(&corpus, merges)?;
    bpe.save(out)?;
    println!("bpe {} merges {} vocab {}", bpe.id(), bpe.merges().len(), bpe.vocab().len());
    Ok(())
}

pub fn apply_bpe(model: &Path, input: &Path, out: &Path) -> Outcome {
    let bpe = BpeModel::load(model)?;
    let corpus = load_prefix(input)?;
    let encoded = tokenizer::apply_bpe(&bpe, &corpus)?;
    save_prefix(&encoded, out)?;
    println!("wrote {} pairs to {}", encoded.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    g: &GlobalArgs,
    arch: SizeClass,
    train_prefix: &Path,
    dev_prefix: &Path,
    bpe_path: &Path,
    out: &Path,
    init: Option<&Path>,
    seed: u64,
    opts: &TrainArgs,
) -> Outcome {
    let bpe = BpeModel::load(bpe_path)?;
    let train_corpus = load_encoded(train_prefix, &bpe)?;
    let dev = load_encoded(dev_prefix, &bpe)?;
    let mut config = TrainConfig {
        seed,
        ..base_config(g)
    };
    apply_train_args(&mut config, opts);
    let report = match init {
        Some(path) => {
            let parent = ModelCheckpoint::load(path)?;
            if parent.arch().size_class != arch {
                return Err(Error::protocol(format!(
                    "--arch {arch} does not match the {} checkpoint {}",
                    describe(parent.arch()),
                    path.display()
                ))
                .into());
            }
            adapt(&parent, parent.arch(), &bpe, &train_corpus, &dev, &config)?
        }
        None => {
            let mut a = ArchConfig::preset(arch, opts.scale.unwrap_or(default_scale(g)))?;
            if let Some(d) = opts.dropout {
                a = a.with_dropout(d);
            }
            let model = build_model(&a, bpe.vocab().len(), seed)?;
            train_model(&model, seed, &bpe, &train_corpus, &dev, &config)?
        }
    };
    report.best.save(out)?;
    let log = seqkd::corpus::prefix_path(out, "log");
    write(&log, &report.to_log())?;
    println!(
        "best_checkpoint {} dev_bleu {:.2} stop_reason {} updates {} epochs {}",
        report.best.id(),
        report.best_dev_bleu(),
        report.stop_reason,
        report.updates,
        report.epochs
    );
    Ok(())
}

fn load_pair(ckpt: &Path, bpe_path: &Path) -> Result<(ModelCheckpoint, BpeModel), Failure> {
    let model = ModelCheckpoint::load(ckpt)?;
    let bpe = BpeModel::load(bpe_path)?;
    if model.vocab_id() != bpe.id() {
        return Err(Error::protocol(format!(
            "checkpoint {} uses vocabulary {}, {} is {}",
            model.id(),
            model.vocab_id(),
            bpe_path.display(),
            bpe.id()
        ))
        .into());
    }
    Ok((model, bpe))
}

pub fn decode(ckpt: &Path, input: &Path, beam: usize, bpe_path: &Path, out: &Path, threads: usize) -> Outcome {
    let (model, bpe) = load_pair(ckpt, bpe_path)?;
    let text = fs::read_to_string(input).map_err(|e| io_err(input, e))?;
    let mut cache = Default::default();
    let mut sources = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let words: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if words.is_empty() {
            return Err(Error::format(input, i + 1, "empty line").into());
        }
        sources.push(bpe.vocab().encode(&bpe.encode_sentence(&words, &mut cache)));
    }
    let hyps = decode_ids(model.model(), &sources, &BeamConfig::with_beam(beam), threads)?;
    let lines: String = hyps
        .iter()
        .map(|h| detokenize_tokens(&bpe.vocab().decode(h.content())).join(" ") + "\n")
        .collect();
    write(out, &lines)?;
    println!("decoded {} sentences to {}", hyps.len(), out.display());
    Ok(())
}

pub fn distill(teacher: &Path, input: &Path, beam: usize, bpe_path: &Path, out: &Path, threads: usize) -> Outcome {
    let (teacher, bpe) = load_pair(teacher, bpe_path)?;
    let corpus = load_encoded(input, &bpe)?;
    let distilled = seqkd::distiller::distill(&teacher, &bpe, &corpus, &BeamConfig::with_beam(beam), threads)?;
    save_prefix(&distilled, out)?;
    println!("distilled {} pairs to {} (teacher {})", distilled.len(), out.display(), teacher.id());
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect())
}

pub fn score(hyp: &Path, reference: &Path, json: bool) -> Outcome {
    let report = corpus_bleu(&read_lines(hyp)?, &read_lines(reference)?)?;
    if json {
        let s = serde_json::to_string(&report).map_err(|e| Failure::new("format", e.to_string(), 1))?;
        println!("{s}");
    } else {
        println!("{report}");
    }
    Ok(())
}

fn plan_from(g: &GlobalArgs, config: u8, a: &PlanArgs) -> Result<ExperimentPlan, Failure> {
    let mut p = ExperimentPlan::desk(config, a.student_size);
    let scale = a.train.scale.unwrap_or(default_scale(g));
    p.teacher = a.teacher_size;
    p.student_scale = scale;
    p.teacher_scale = a.teacher_scale.unwrap_or(scale);
    if let Some(d) = a.train.dropout {
        p.dropout = d;
    }
    p.num_merges = a.merges.unwrap_or(if g.full_scale {
        FULL_SCALE_NUM_MERGES
    } else {
        p.num_merges
    });
    let mut c = base_config(g);
    apply_train_args(&mut c, &a.train);
    p.gd_train = c.clone();
    p.id_train = c;
    p.beam = BeamConfig::with_beam(a.beam);
    p.seeds = a.seeds.clone();
    p.continue_gd_student = a.continue_gd;
    p.continue_id_student = !a.no_continue_id;
    if let Some(n) = a.concurrency {
        p.concurrency = n;
    }
    p.validate()?;
    Ok(p)
}

fn data_from(a: &PlanArgs) -> Result<ExperimentData, Failure> {
    let (gd_train, gd_dev) = split_dev(&load_prefix(&a.gd)?, a.gd_dev)?;
    let (id_train, id_dev) = split_dev(&load_prefix(&a.id)?, a.id_dev)?;
    Ok(ExperimentData::new(gd_train, gd_dev, id_train, id_dev)?)
}

fn summarize(m: &RunManifest) {
    for &s in &m.seeds {
        match m.score(s) {
            Some(b) => println!("config {} seed {s} dev_bleu {b:.2}", m.config_id),
            None => println!("config {} seed {s} unfinished", m.config_id),
        }
    }
    println!(
        "jobs {} executed {} train_seconds {:.1}",
        m.jobs.len(),
        m.executed().len(),
        m.train_seconds()
    );
}

fn failed_jobs(m: &RunManifest) -> Option<Failure> {
    let failed: Vec<&str> = m
        .jobs
        .iter()
        .filter(|j| j.status == pipeline::JobStatus::Failed)
        .map(|j| j.name.as_str())
        .collect();
    (!failed.is_empty()).then(|| {
        let first = m.jobs.iter().find_map(|j| j.error.clone()).unwrap_or_default();
        Failure::new(
            "job",
            format!("config {}: failed jobs {}; first error: {first}", m.config_id, failed.join(",")),
            1,
        )
    })
}

pub fn run_config(g: &GlobalArgs, config: u8, a: &PlanArgs, manifest: Option<&Path>) -> Outcome {
    let plan = plan_from(g, config, a)?;
    let dir = artifact_dir(g)?;
    let data = data_from(a)?;
    let m = run_plan(&plan, &data, &dir)?;
    let path = manifest.map_or_else(|| dir.join(format!("config-{config}.manifest")), Path::to_path_buf);
    m.save(&path)?;
    summarize(&m);
    println!("manifest {}", path.display());
    failed_jobs(&m).map_or(Ok(()), Err)
}

/// Parses `1..9`, `1,4,7..9` and similar lists.
pub fn parse_configs(s: &str) -> Result<Vec<u8>, Failure> {
    let bad = || Failure::new("usage", format!("cannot parse configuration list {s:?}"), 2);
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u8, u8) = (a.parse().map_err(|_| bad())?, b.trim_start_matches('=').parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    out.dedup();
    Ok(out)
}

fn write_reports(manifests: &[RunManifest], tie_window: f64, dir: Option<&Path>) -> Outcome {
    let comparison = compare_configs(manifests, tie_window)?;
    let correlation = gd_vs_id_correlation(correlation_points(manifests));
    print!("{}", comparison.to_text());
    print!("{}", correlation.to_text());
    if let Some(dir) = dir {
        write(&dir.join("comparison.txt"), &comparison.to_text())?;
        write(&dir.join("correlation.txt"), &correlation.to_text())?;
    }
    Ok(())
}

pub fn run_all(g: &GlobalArgs, configs: &str, a: &PlanArgs, out: Option<&Path>) -> Outcome {
    let configs = parse_configs(configs)?;
    let plans = configs
        .iter()
        .map(|&c| plan_from(g, c, a))
        .collect::<Result<Vec<_>, _>>()?;
    let dir = artifact_dir(g)?;
    let report_dir = out.map_or_else(|| dir.join("reports"), Path::to_path_buf);
    ensure_writable(&report_dir)?;
    let data = data_from(a)?;
    let mut finished = Vec::new();
    let mut failure = None;
    for plan in &plans {
        let m = run_plan(plan, &data, &dir)?;
        let path = report_dir.join(format!("config-{}.manifest", plan.config_id));
        m.save(&path)?;
        summarize(&m);
        match failed_jobs(&m) {
            Some(f) => failure = failure.or(Some(f)),
            None => finished.push(m),
        }
    }
    if !finished.is_empty() {
        write_reports(&finished, pipeline::DEFAULT_TIE_WINDOW, Some(&report_dir))?;
    }
    failure.map_or(Ok(()), Err)
}

pub fn report(manifests: &[PathBuf], tie_window: f64, correlation_out: Option<&Path>) -> Outcome {
    let ms = manifests
        .iter()
        .map(RunManifest::load)
        .collect::<Result<Vec<_>, _>>()?;
    write_reports(&ms, tie_window, None)?;
    if let Some(p) = correlation_out {
        write(p, &gd_vs_id_correlation(correlation_points(&ms)).to_text())?;
    }
    Ok(())
}
