use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cyanocast::dataset::Split;
use cyanocast::impute::ImputeConfig;
use cyanocast::pipeline::{self, DatasetArgs, EvalArgs, ForecastArgs, RunConfig, TrainArgs};
use cyanocast::{Error, Result};
use serde_json::{json, Value};

/// Bloom-intensity forecasting pipeline.
///
/// Set CYANOCAST_LOG (error, warn, info, debug) for progress logs on stderr.
#[derive(Parser)]
#[command(name = "cyanocast", version)]
struct Cli {
    /// Run configuration (TOML). Required by every command except `config`.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variable {
    Ci,
    TempDay,
    TempNight,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic rasters for every configured segment.
    Synth,
    /// Gap-fill raster series. Without --in, processes every segment.
    Impute {
        #[arg(long = "in", requires_all = ["out", "variable"])]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        variable: Option<Variable>,
        /// Also restore bloom continuity (CI only).
        #[arg(long)]
        restore: bool,
    },
    /// Fit bin edges, thresholds and normalization; write daily records.
    Calibrate,
    /// Build the sample file for one split.
    Dataset {
        #[arg(long, value_enum)]
        split: SplitArg,
        #[arg(long, requires = "calib")]
        records: Option<PathBuf>,
        #[arg(long, requires = "records")]
        calib: Option<PathBuf>,
        #[arg(long, conflicts_with = "no_augment")]
        augment: bool,
        #[arg(long)]
        no_augment: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the forecaster and write a checkpoint plus history.csv.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint against the persistence baseline.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast the next days from a segment's latest records.
    Forecast {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        segment: Option<String>,
    },
    /// Every stage from synth to eval.
    Run,
    /// Print the effective configuration with all defaults.
    Config {
        #[arg(long)]
        dump: bool,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    let path = path
        .as_ref()
        .ok_or_else(|| Error::Config("--config <file> is required".into()))?;
    RunConfig::load(path)
}

fn impute_one(cfg: &RunConfig, input: PathBuf, out: PathBuf, variable: Variable, restore: bool) -> Result<Value> {
    if restore && !matches!(variable, Variable::Ci) {
        return Err(Error::Config("--restore applies to CI series only".into()));
    }
    let icfg: &ImputeConfig = &cfg.impute;
    let stages = pipeline::impute_dir(&input, &out, icfg, restore, None)?;
    let log: String = stages.iter().map(|v| format!("{v}\n")).collect();
    cyanocast::io::write_atomic(&out.join("impute_log.jsonl"), log.as_bytes())?;
    Ok(json!({ "stage": "impute", "stages": stages, "out": out.display().to_string() }))
}

fn run_all(cfg: &RunConfig) -> Result<Value> {
    let mut stages = vec![pipeline::synth(cfg)?, pipeline::impute(cfg)?, pipeline::calibrate(cfg)?];
    for split in [Split::Train, Split::Val, Split::Test] {
        stages.push(pipeline::dataset(cfg, split, &DatasetArgs::default())?);
    }
    stages.push(pipeline::train(cfg, &TrainArgs::default())?);
    stages.push(pipeline::eval(cfg, &EvalArgs::default())?);
    Ok(json!({ "stage": "run", "stages": stages }))
}

fn execute(cli: Cli) -> Result<()> {
    let summary = match cli.command {
        Command::Config { dump } => {
            let cfg = match &cli.config {
                Some(_) => load_config(&cli.config)?,
                None => RunConfig::example(),
            };
            if !dump {
                return Err(Error::Config("nothing to do; pass --dump".into()));
            }
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Command::Forecast { model, records, segment } => {
            let cfg = load_config(&cli.config)?;
            let f = pipeline::forecast(&cfg, &ForecastArgs { model, records, segment })?;
            for row in &f.labels {
                let line: Vec<String> = row.iter().map(u8::to_string).collect();
                println!("{}", line.join(" "));
            }
            println!("{}", serde_json::to_string(&f).expect("serializable"));
            return Ok(());
        }
        command => {
            let cfg = load_config(&cli.config)?;
            match command {
                Command::Synth => pipeline::synth(&cfg)?,
                Command::Impute { input: Some(input), out, variable, restore } => impute_one(
                    &cfg,
                    input,
                    out.expect("required by clap"),
                    variable.expect("required by clap"),
                    restore,
                )?,
                Command::Impute { .. } => pipeline::impute(&cfg)?,
                Command::Calibrate => pipeline::calibrate(&cfg)?,
                Command::Dataset { split, records, calib, augment, no_augment, seed, out } => {
                    let augment = if augment {
                        Some(true)
                    } else if no_augment {
                        Some(false)
                    } else {
                        None
                    };
                    let args = DatasetArgs { records, calibration: calib, augment, seed, out };
                    pipeline::dataset(&cfg, split.into(), &args)?
                }
                Command::Train { dataset, val, out } => pipeline::train(&cfg, &TrainArgs { dataset, val, out })?,
                Command::Eval { model, dataset, out } => pipeline::eval(&cfg, &EvalArgs { model, dataset, out })?,
                Command::Run => run_all(&cfg)?,
                Command::Config { .. } | Command::Forecast { .. } => unreachable!(),
            }
        }
    };
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CYANOCAST_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
