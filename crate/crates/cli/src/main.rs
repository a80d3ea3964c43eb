//! `seqkd`: command-line front end for corpus generation, BPE, training,
//! decoding, distillation, scoring and whole-configuration runs.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seqkd::{ReorderRule, SizeClass};

#[derive(Parser, Debug)]
#[command(name = "seqkd", about = "Sequence-level distillation and domain adaptation for small translation models")]
#[command(disable_version_flag = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    /// Print the program version and the on-disk format versions.
    #[arg(long)]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Artifact cache directory; defaults to $SEQKD_ARTIFACT_DIR.
    #[arg(long, global = true)]
    pub artifact_dir: Option<PathBuf>,

    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Use the full-scale architectures and stopping limits instead of the
    /// desk-scale defaults.
    #[arg(long, global = true)]
    pub full_scale: bool,
}

/// Training knobs shared by `train`, `run-config` and `run-all`.
#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Architecture divisor for hidden and feed-forward sizes (desk default 4).
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub max_updates: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<u64>,
    /// Non-improving dev evaluations tolerated before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Updates between dev evaluations.
    #[arg(long)]
    pub interval: Option<u64>,
    #[arg(long)]
    pub batch_tokens: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Beam used for dev evaluation during training.
    #[arg(long)]
    pub dev_beam: Option<usize>,
    /// Decoding threads per job.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

/// Settings of a configuration run.
#[derive(Args, Debug, Clone)]
pub struct PlanArgs {
    /// General-domain corpus prefix (word level); its tail is the dev set.
    #[arg(long)]
    pub gd: PathBuf,
    /// In-domain corpus prefix (word level); its tail is the dev set.
    #[arg(long)]
    pub id: PathBuf,
    #[arg(long, default_value = "tiny")]
    pub student_size: SizeClass,
    #[arg(long, default_value = "large")]
    pub teacher_size: SizeClass,
    /// Scale divisor for the teacher; defaults to --scale.
    #[arg(long)]
    pub teacher_scale: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    /// Pairs carved from the end of the general-domain corpus for dev.
    #[arg(long, default_value_t = 500)]
    pub gd_dev: usize,
    /// Pairs carved from the end of the in-domain corpus for dev.
    #[arg(long, default_value_t = 200)]
    pub id_dev: usize,
    /// BPE merges learned on the general-domain training split.
    #[arg(long)]
    pub merges: Option<usize>,
    /// Beam for distillation and final scoring.
    #[arg(long, default_value_t = 10)]
    pub beam: usize,
    /// Jobs run concurrently; defaults to half the cores.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Continue the general-domain student on original data after distillation.
    #[arg(long)]
    pub continue_gd: bool,
    /// Skip continued training of in-domain students on original data.
    #[arg(long)]
    pub no_continue_id: bool,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic parallel corpus.
    GenCorpus {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        size: usize,
        /// Share of source words whose translation is domain-specific.
        #[arg(long, default_value_t = 0.0)]
        domain_fraction: f64,
        #[arg(long, default_value = "swap-adjacent")]
        reorder: ReorderRule,
        /// Number of source word types.
        #[arg(long, default_value_t = 100)]
        vocab: usize,
        #[arg(long, default_value_t = 3)]
        min_len: usize,
        #[arg(long, default_value_t = 8)]
        max_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn BPE merges from a training corpus.
    LearnBpe {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a word-level corpus with learned merges.
    ApplyBpe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model, or continue one with --init.
    Train {
        #[arg(long)]
        arch: SizeClass,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        bpe: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        opts: TrainArgs,
    },
    /// Beam-decode a source file.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        /// Word-level source file, one sentence per line.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        beam: usize,
        #[arg(long)]
        bpe: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Replace a corpus's targets with teacher beam outputs.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        beam: usize,
        #[arg(long)]
        bpe: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run one configuration (1-9) end to end.
    RunConfig {
        #[arg(long)]
        config: u8,
        /// Where to write the manifest; defaults to the artifact directory.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Run several configurations and write comparison reports.
    RunAll {
        /// Configurations, e.g. `1..9` or `1,4,7..9`.
        #[arg(long, default_value = "1..9")]
        configs: String,
        /// Report directory; defaults to `<artifact dir>/reports`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Comparison and correlation reports for finished runs.
    Report {
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
        #[arg(long, default_value_t = seqkd::pipeline::DEFAULT_TIE_WINDOW)]
        tie_window: f64,
        /// Also write the correlation data file here.
        #[arg(long)]
        correlation_out: Option<PathBuf>,
    },
}

/// How a failed command exits.
#[derive(Debug)]
pub struct Failure {
    pub category: String,
    pub message: String,
    pub code: u8,
}

impl Failure {
    pub fn new(category: &str, message: impl Into<String>, code: u8) -> Self {
        Failure {
            category: category.into(),
            message: message.into(),
            code,
        }
    }
}

impl From<seqkd::Error> for Failure {
    fn from(e: seqkd::Error) -> Self {
        let code = if matches!(e, seqkd::Error::Validation { .. }) { 2 } else { 1 };
        Failure::new(e.category(), e.to_string(), code)
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

fn run(cli: Cli) -> Result<(), Failure> {
    use commands as c;
    if cli.version {
        print!("{}", c::version_text());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::new("usage", "no subcommand given; see --help", 2));
    };
    let g = &cli.global;
    match command {
        Command::GenCorpus {
            seed,
            size,
            domain_fraction,
            reorder,
            vocab,
            min_len,
            max_len,
            out,
        } => c::gen_corpus(seed, size, domain_fraction, reorder, vocab, (min_len, max_len), &out),
        Command::LearnBpe { input, merges, out } => c::learn_bpe(&input, merges, &out),
        Command::ApplyBpe { model, input, out } => c::apply_bpe(&model, &input, &out),
        Command::Train {
            arch,
            train,
            dev,
            bpe,
            out,
            init,
            seed,
            opts,
        } => c::train(g, arch, &train, &dev, &bpe, &out, init.as_deref(), seed, &opts),
        Command::Decode {
            ckpt,
            input,
            beam,
            bpe,
            out,
            threads,
        } => c::decode(&ckpt, &input, beam, &bpe, &out, threads),
        Command::Distill {
            teacher,
            input,
            beam,
            bpe,
            out,
            threads,
        } => c::distill(&teacher, &input, beam, &bpe, &out, threads),
        Command::Score { hyp, reference, json } => c::score(&hyp, &reference, json),
        Command::RunConfig { config, manifest, plan } => c::run_config(g, config, &plan, manifest.as_deref()),
        Command::RunAll { configs, out, plan } => c::run_all(g, &configs, &plan, out.as_deref()),
        Command::Report {
            manifest,
            tie_window,
            correlation_out,
        } => c::report(&manifest, tie_window, correlation_out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage] {first}");
            return ExitCode::from(2);
        }
    };
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}] {}", f.category, f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
