use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use eyeauth::config::{RunConfig, DATA_ROOT_ENV};
use eyeauth::ingest::{read_recording, write_recording, ColumnMap, NamingRule, RecordingKey, Task, NATIVE_RATE_HZ};
use eyeauth::pipeline::{self, RunDir};
use eyeauth::signal::decimate;
use eyeauth::synth::SynthConfig;

#[derive(Parser)]
#[command(name = "eyeauth", version, about = "Eye-movement biometric authentication pipeline")]
struct Cli {
    /// Run configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Recording task (TEX, RAN, ...).
    #[arg(long, global = true)]
    task: Option<Task>,
    /// Target sampling rate in Hz.
    #[arg(long, global = true)]
    rate: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print (or write) the resolved configuration.
    Init {
        #[arg(long)]
        path: Option<PathBuf>,
    },
    /// Write a synthetic GazeBase-style dataset.
    Synth {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 24)]
        subjects: usize,
        /// Subjects that reach round 6 and form the test split.
        #[arg(long, default_value_t = 4)]
        test_subjects: usize,
        #[arg(long, default_value_t = 8.0)]
        duration: f64,
    },
    /// Index recordings under the data root.
    Scan,
    /// Assign the test split and cross-validation folds.
    Split,
    /// Fit per-fold statistics and cache transformed recordings.
    Preprocess {
        #[arg(long)]
        fold: Vec<u8>,
    },
    /// Decimate one 1000 Hz recording to `--rate`.
    Decimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one model per fold, keeping the best validation checkpoint.
    Train {
        #[arg(long)]
        fold: Vec<u8>,
    },
    /// Score the test split against each fold's checkpoint.
    Evaluate {
        #[arg(long)]
        fold: Vec<u8>,
        #[arg(long)]
        round: Vec<u8>,
        #[arg(long)]
        n: Vec<usize>,
    },
    /// Hyperparameter search: fixed point, random probes, then GP-UCB.
    Hpo {
        #[arg(long, default_value_t = 31)]
        budget: usize,
    },
    /// Aggregate per-fold metrics into mean (SD) cells.
    Report,
}

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut cfg = RunConfig::defaults(cli.task.unwrap_or(Task::Tex), cli.rate.unwrap_or(NATIVE_RATE_HZ));
            if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
                cfg.data.root = PathBuf::from(root);
            }
            cfg
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(task) = cli.task {
        cfg.data.task = task;
    }
    if let Some(rate) = cli.rate {
        cfg.data.rate = rate;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn folds_or_all(folds: &[u8], cfg: &RunConfig) -> Vec<u8> {
    if folds.is_empty() {
        (1..=cfg.data.n_folds as u8).collect()
    } else {
        folds.to_vec()
    }
}

fn decimate_file(input: &Path, output: &Path, rate: f64) -> anyhow::Result<usize> {
    let name = input.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let key = NamingRule::gazebase()
        .parse(name)
        .ok()
        .flatten()
        .unwrap_or_else(|| RecordingKey {
            subject_id: "000".into(),
            round: 1,
            session: 1,
            task: Task::Tex,
        });
    let columns = ColumnMap::gazebase();
    let rec = read_recording(input, &columns, key, NATIVE_RATE_HZ)?;
    let out = decimate(&rec, rate)?;
    std::fs::write(output, write_recording(&out, &columns)?).with_context(|| format!("writing {}", output.display()))?;
    Ok(out.samples.len())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = resolve_config(cli)?;
    let run = RunDir::new(&cfg.out);
    if !matches!(cli.command, Command::Init { .. } | Command::Synth { .. } | Command::Decimate { .. }) {
        std::fs::create_dir_all(cfg.out.join("provenance"))?;
        std::fs::write(cfg.out.join("provenance/config.toml"), cfg.to_toml())?;
    }

    match &cli.command {
        Command::Init { path } => match path {
            Some(p) => std::fs::write(p, cfg.to_toml())?,
            None => print!("{}", cfg.to_toml()),
        },
        Command::Synth {
            data,
            subjects,
            test_subjects,
            duration,
        } => {
            if test_subjects >= subjects {
                bail!("--test-subjects must be below --subjects");
            }
            let t = *test_subjects;
            let synth = SynthConfig {
                task: cfg.data.task,
                ..SynthConfig::nested(*subjects, |i| if i < t { 6 } else { 5 }, *duration, cfg.seed)
            };
            let n = synth.write_dataset(data)?;
            println!("wrote {n} recordings to {}", data.display());
        }
        Command::Scan => {
            let m = pipeline::scan(&cfg, &run)?;
            println!("{} recordings indexed", m.entries.len());
        }
        Command::Split => {
            let f = pipeline::split(&cfg, &run)?;
            println!("test: {} subjects", f.test_subjects.len());
            for (i, fold) in f.folds.iter().enumerate() {
                println!("fold {}: {} subjects", i + 1, fold.len());
            }
        }
        Command::Preprocess { fold } => {
            for f in folds_or_all(fold, &cfg) {
                let stats = pipeline::preprocess(&cfg, &run, f)?;
                println!("fold {f}: stats {}", stats.id());
            }
        }
        Command::Decimate { input, output } => {
            let n = decimate_file(input, output, cfg.data.rate)?;
            println!("{n} samples at {} Hz", cfg.data.rate);
        }
        Command::Train { fold } => {
            for f in folds_or_all(fold, &cfg) {
                let o = pipeline::train(&cfg, &run, f)?;
                match o.best_score {
                    Some(s) => println!("fold {f}: best validation EER {s:.4} at iteration {} ({:?})", o.best_iteration, o.stop),
                    None => println!("fold {f}: no validation score ({:?})", o.stop),
                }
            }
        }
        Command::Evaluate { fold, round, n } => {
            let rounds = if round.is_empty() { cfg.eval.rounds.clone() } else { round.clone() };
            let ns = if n.is_empty() { cfg.eval.n_values.clone() } else { n.clone() };
            let mut rows = Vec::new();
            for f in folds_or_all(fold, &cfg) {
                rows.extend(pipeline::evaluate(&cfg, &run, f, &rounds, &ns)?);
            }
            print!("{}", eyeauth::eval::metrics_csv(&rows));
        }
        Command::Hpo { budget } => {
            let r = pipeline::hpo(&cfg, &run, *budget)?;
            println!(
                "best valuation {:.4} at iteration {}: {:?}",
                r.best.valuation,
                r.best.iteration,
                r.best_hparams()
            );
        }
        Command::Report => {
            let files = pipeline::metrics_paths(&run, cfg.data.n_folds);
            if files.is_empty() {
                bail!(eyeauth::Error::InvalidInput("no metrics files in the run directory".into()));
            }
            let text = pipeline::report(&files)?;
            std::fs::write(cfg.out.join("report.csv"), &text)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn error_code(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<eyeauth::Error>())
        .map(|e| e.code())
        .unwrap_or("E_CLI")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Core errors already embed their source text; skip repeats.
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {msg}");
            eprintln!("ERROR {}", error_code(&e));
            ExitCode::FAILURE
        }
    }
}
