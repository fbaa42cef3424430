use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sbvr_core::config::RunConfig;
use sbvr_core::embed::Stream;
use sbvr_core::pipeline::{self, RunLayout};
use sbvr_core::retrieval::{Mode, DETECTION_TOLERANCE};
use sbvr_core::synth::Split;
use sbvr_core::training::Supervision;
use sbvr_core::{Error, ErrorKind};

/// Fine-grained sketch-based video retrieval: data generation, training,
/// evaluation, detection and reporting.
#[derive(Parser)]
#[command(name = "sbvr", version)]
struct Cli {
    /// Run directory holding config, checkpoints, logs and metrics.
    #[arg(long, global = true, env = "SBVR_RUN_DIR", default_value = "runs/default")]
    run_dir: PathBuf,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SupervisionArg {
    Strong,
    Weak,
}

impl From<SupervisionArg> for Supervision {
    fn from(s: SupervisionArg) -> Self {
        match s {
            SupervisionArg::Strong => Supervision::Strong,
            SupervisionArg::Weak => Supervision::Weak,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StreamArg {
    Appearance,
    Motion,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    App,
    Motion,
    Rankfuse,
    Concat,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of sketch sequences and video clips.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one or both streams.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to the run directory's config.toml.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "strong")]
        supervision: SupervisionArg,
        #[arg(long, value_enum, default_value = "both")]
        stream: StreamArg,
        /// Continue from the last per-epoch checkpoint.
        #[arg(long)]
        resume: bool,
        /// Train with the triplet loss only.
        #[arg(long)]
        no_relation: bool,
    },
    /// Rank the gallery for every query and report acc@K.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "strong")]
        supervision: SupervisionArg,
        #[arg(long)]
        no_relation: bool,
        #[arg(long, value_enum, default_value = "all")]
        mode: ModeArg,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        k: Vec<usize>,
    },
    /// Locate each sketch page in its true clip.
    Detect {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "strong")]
        supervision: SupervisionArg,
        #[arg(long)]
        no_relation: bool,
        #[arg(long, value_enum, default_value = "concat")]
        mode: ModeArg,
    },
    /// Summarise every evaluated variant of the run directory.
    Report,
}

/// Exit codes: 2 configuration or usage, 3 data, 4 numerical, 1 anything else.
fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
        ErrorKind::Other => 1,
    }
}

fn run_config(explicit: Option<&Path>, layout: &RunLayout) -> Result<RunConfig, Error> {
    match explicit {
        Some(p) => RunConfig::load(p),
        None if layout.config().exists() => RunConfig::load(&layout.config()),
        None => Err(Error::Config(format!(
            "no --config given and {} does not exist",
            layout.config().display()
        ))),
    }
}

fn modes(arg: ModeArg) -> Vec<Mode> {
    match arg {
        ModeArg::App => vec![Mode::Appearance],
        ModeArg::Motion => vec![Mode::Motion],
        ModeArg::Rankfuse => vec![Mode::RankFuse],
        ModeArg::Concat => vec![Mode::Concat],
        ModeArg::All => Mode::ALL.to_vec(),
    }
}

fn with_relation(mut config: RunConfig, no_relation: bool) -> RunConfig {
    if no_relation {
        config.train.relation = false;
    }
    config
}

fn run(cli: Cli) -> Result<(), Error> {
    let layout = RunLayout::new(&cli.run_dir);
    match cli.command {
        Command::Generate { config, out, seed } => {
            let mut config = RunConfig::load(&config)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let manifest = pipeline::generate(&config, &out)?;
            config.save(&out.join("config.toml"))?;
            let pages: usize = manifest.entries.iter().map(|e| e.spec.segments.len()).sum();
            let split = |s| manifest.indices(Some(s)).len();
            println!("clips: {}", manifest.entries.len());
            println!("sketch sequences: {} ({pages} pages)", manifest.entries.len());
            println!(
                "splits: train {} / val {} / test {}",
                split(Split::Train),
                split(Split::Val),
                split(Split::Test)
            );
            println!("manifest digest: {}", pipeline::manifest_digest(&out)?);
        }
        Command::Train {
            dataset,
            config,
            supervision,
            stream,
            resume,
            no_relation,
        } => {
            let base = run_config(config.as_deref(), &layout)?;
            let streams = match stream {
                StreamArg::Appearance => vec![Stream::Appearance],
                StreamArg::Motion => vec![Stream::Motion],
                StreamArg::Both => Stream::ALL.to_vec(),
            };
            let reports = pipeline::run_train(&base, &dataset, &layout, supervision.into(), &streams, resume, !no_relation)?;
            let variant = pipeline::variant_name(supervision.into(), !no_relation);
            for (stream, report) in &reports {
                let last = report.epoch_mean_lt.last().copied().unwrap_or(f64::NAN);
                println!(
                    "{stream}: {} epochs, final mean L_t {last:.4}, checkpoint {}",
                    report.epoch_mean_lt.len(),
                    layout.checkpoint(&variant, *stream).display()
                );
                for r in &report.mil_rounds {
                    println!(
                        "  MIL round {}: flipped {}, positives remaining {}",
                        r.round, r.flipped, r.positives
                    );
                }
            }
        }
        Command::Evaluate {
            dataset,
            supervision,
            no_relation,
            mode,
            k,
        } => {
            let config = with_relation(run_config(None, &layout)?, no_relation);
            let variant = pipeline::variant_name(supervision.into(), !no_relation);
            let mut ks = k;
            ks.sort_unstable();
            ks.dedup();
            let eval = pipeline::run_evaluate(&config, &dataset, &layout, &variant, &modes(mode), &ks)?;
            println!("variant {variant}, λ₂ = {}", config.retrieval.lambda2);
            for m in eval.metrics.values() {
                let cells: Vec<String> = m.acc.iter().map(|(k, a)| format!("acc@{k} {a:.4}")).collect();
                println!("{:>9}: {}", m.mode.name(), cells.join("  "));
            }
        }
        Command::Detect {
            dataset,
            supervision,
            no_relation,
            mode,
        } => {
            let config = with_relation(run_config(None, &layout)?, no_relation);
            let variant = pipeline::variant_name(supervision.into(), !no_relation);
            let mode = match mode {
                ModeArg::All | ModeArg::Rankfuse => {
                    return Err(Error::Config("detection needs --mode app, motion or concat".into()))
                }
                m => modes(m)[0],
            };
            let eval = pipeline::run_evaluate(&config, &dataset, &layout, &variant, &[mode], &[1])?;
            let d = eval.metrics[&mode]
                .detection
                .as_ref()
                .expect("embedding modes report detection");
            println!("success: proposed frame within {DETECTION_TOLERANCE} frames of the annotated interval");
            println!("{mode}: {:.4} over {} pages", d.rate_all, d.pages);
            match d.rate_retrieved {
                Some(r) => println!("{mode}, correctly retrieved clips: {r:.4} over {} pages", d.retrieved_pages),
                None => println!("{mode}, correctly retrieved clips: none"),
            }
        }
        Command::Report => {
            print!("{}", pipeline::run_report(&layout)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
