//! `labrr` command-line tool: synthesize data, train, benchmark, predict.
//!
//! Exit codes: 0 success (including training that stops without meeting the
//! error tolerance), 1 numerical failure or every benchmark trial failing,
//! 2 bad arguments or inputs, 3 I/O failure.
//!
//! `LABRR_LOG` = `quiet` | `info` (default) | `debug` controls how much is
//! printed; `debug` adds one line per training round on stderr.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use labrr::bench::{self, DataSource, ExperimentConfig};
use labrr::data::{self, SynthFunction};
use labrr::eval;
use labrr::kernels::ThetaBounds;
use labrr::trainer::{self, Optimizer, RoundRecord, SelectionStrategy, TrainConfig};
use labrr::{LabError, LabModel};

#[derive(Parser)]
#[command(name = "labrr", version, about = "Kernel ridgeless regression with locally adaptive bandwidths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic regression dataset to CSV.
    Synth(SynthArgs),
    /// Train on a whole CSV dataset and save the model.
    Train(TrainArgs),
    /// Repeated split/train/evaluate trials.
    Benchmark(BenchArgs),
    /// Predict labels for a feature CSV with a saved model.
    Predict(PredictArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// f1, f2 or f3.
    #[arg(long = "fn")]
    function: String,
    #[arg(long)]
    n: usize,
    /// Noise variance as a fraction of the clean label variance.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Training knobs; each overrides the config file when given.
#[derive(Args, Default)]
struct TrainFlags {
    /// Squared-error tolerance (normalized labels).
    #[arg(long = "B")]
    b: Option<f64>,
    /// Support points added per round.
    #[arg(long)]
    k: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    eta: Option<f64>,
    /// SGD steps per round.
    #[arg(long = "L")]
    l: Option<usize>,
    /// Initial support size.
    #[arg(long)]
    n0: Option<usize>,
    /// Initial bandwidth.
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    theta_min: Option<f64>,
    #[arg(long)]
    theta_max: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_support_ratio: Option<f64>,
    /// y_uniform, x_kmeans or extreme_y.
    #[arg(long)]
    selection: Option<String>,
    /// sgd, momentum or adam.
    #[arg(long)]
    optimizer: Option<String>,
    /// Momentum coefficient for `--optimizer momentum`.
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<(), LabError> {
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = self.$flag {
                    cfg.$field = v;
                }
            };
        }
        set!(b => error_tolerance);
        set!(k => grow_k);
        set!(eta => learning_rate);
        set!(l => inner_steps);
        set!(n0 => initial_support);
        set!(sigma0 => sigma0);
        set!(batch => batch_size);
        set!(seed => seed);
        set!(jitter => jitter);
        set!(max_outer => max_outer);
        set!(max_support_ratio => max_support_ratio);
        if self.theta_min.is_some() || self.theta_max.is_some() {
            cfg.theta_bounds = ThetaBounds::new(
                self.theta_min.unwrap_or(cfg.theta_bounds.min),
                self.theta_max.unwrap_or(cfg.theta_bounds.max),
            )?;
        }
        if let Some(s) = &self.selection {
            cfg.selection = s.parse::<SelectionStrategy>()?;
        }
        if let Some(o) = &self.optimizer {
            cfg.optimizer = match o.as_str() {
                "sgd" => Optimizer::Sgd,
                "momentum" => Optimizer::Momentum { beta: self.momentum },
                "adam" => Optimizer::ADAM,
                _ => {
                    return Err(LabError::InvalidConfig(format!(
                        "unknown optimizer {o:?} (expected sgd, momentum or adam)"
                    )))
                }
            };
        }
        cfg.validate()
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV (features then label).
    #[arg(long)]
    data: PathBuf,
    /// Where to write the model (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Optional per-round trace log (JSON lines).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// JSON file with training settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset CSV; alternatively use --fn for synthetic data.
    #[arg(long, conflicts_with = "function")]
    data: Option<PathBuf>,
    #[arg(long = "fn")]
    function: Option<String>,
    #[arg(long, default_value_t = 750)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Seed for synthetic data.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Fixed test set; every trial then trains on the full dataset.
    #[arg(long)]
    test_csv: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Clamp normalized predictions to [-M, M].
    #[arg(long)]
    clip: Option<f64>,
    /// Results file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// JSON experiment config; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature CSV; a trailing label column is accepted and ignored.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Clamp normalized predictions to [-M, M] before de-normalizing.
    #[arg(long)]
    clip: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum LogLevel {
    Quiet,
    Info,
    Debug,
}

impl LogLevel {
    fn from_env() -> Self {
        match std::env::var("LABRR_LOG").as_deref() {
            Ok("quiet") => LogLevel::Quiet,
            Ok("debug") => LogLevel::Debug,
            Ok("info") | Err(_) => LogLevel::Info,
            Ok(other) => {
                eprintln!("warning: LABRR_LOG={other:?} not recognized, using info");
                LogLevel::Info
            }
        }
    }
}

fn exit_code(e: &LabError) -> u8 {
    match e {
        LabError::Io(_) => 3,
        LabError::SingularSystem { .. } | LabError::NonFinite(_) => 1,
        _ => 2,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, LabError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_synth(a: &SynthArgs, log: LogLevel) -> Result<(), LabError> {
    let func: SynthFunction = a.function.parse()?;
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(LabError::InvalidConfig(format!("noise must be nonnegative, got {}", a.noise)));
    }
    let ds = data::synth(func, a.n, a.noise, a.seed)?;
    ds.save_csv(&a.out)?;
    if log >= LogLevel::Info {
        println!(
            "wrote {}: n = {}, d = {}, label variance = {:.6}",
            a.out.display(),
            ds.len(),
            ds.dim(),
            ds.label_variance()
        );
    }
    Ok(())
}

fn round_logger(log: LogLevel) -> impl FnMut(&RoundRecord) {
    move |r: &RoundRecord| {
        if log >= LogLevel::Debug {
            eprintln!(
                "round {:>4}  support {:>5}  max err {:.3e}  mean err {:.3e}",
                r.round, r.support_size, r.max_error, r.mean_error
            );
        }
    }
}

fn cmd_train(a: &TrainArgs, log: LogLevel) -> Result<(), LabError> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    a.flags.apply(&mut cfg)?;
    let ds = data::normalize(&data::load_csv(&a.data)?);
    let (model, trace) = trainer::train_with_observer(&ds, &cfg, round_logger(log))?;
    model.save(&a.out)?;
    if let Some(p) = &a.trace {
        let mut w = BufWriter::new(File::create(p)?);
        trace.write_jsonl(&mut w)?;
        w.flush()?;
    }
    if log >= LogLevel::Info {
        println!(
            "support {} of {} ({:.1}%), max training sq error {:.3e}, R0 {}, rounds {}",
            model.n_support(),
            ds.len(),
            100.0 * model.n_support() as f64 / ds.len() as f64,
            trace.final_max_sq_error,
            eval::sparsity_r0(&model),
            trace.rounds.len(),
        );
        if trace.converged() {
            println!("converged; model written to {}", a.out.display());
        } else {
            println!(
                "NoConvergence: stopped by {:?} with max error above B = {:.3e}; model written to {}",
                trace.stop_reason,
                cfg.error_tolerance,
                a.out.display()
            );
        }
    }
    Ok(())
}

fn cmd_benchmark(a: &BenchArgs, log: LogLevel) -> Result<bool, LabError> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &a.data {
        cfg.source = DataSource::Csv { path: p.clone() };
    } else if let Some(f) = &a.function {
        cfg.source = DataSource::Synth {
            function: f.parse()?,
            n: a.n,
            noise_ratio: a.noise,
            seed: a.data_seed.unwrap_or(0),
        };
    } else if a.config.is_none() {
        return Err(LabError::InvalidConfig("one of --data, --fn or --config is required".into()));
    }
    if a.test_csv.is_some() {
        cfg.test_csv = a.test_csv.clone();
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.split_seed {
        cfg.split_seed = s;
    }
    if let Some(f) = a.train_fraction {
        cfg.train_fraction = f;
    }
    if a.clip.is_some() {
        cfg.clip = a.clip;
    }
    a.flags.apply(&mut cfg.train)?;
    for p in std::iter::once(&cfg.test_csv).flatten().chain(match &cfg.source {
        DataSource::Csv { path } => Some(path),
        DataSource::Synth { .. } => None,
    }) {
        if !p.is_file() {
            return Err(LabError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} does not exist", p.display()),
            )));
        }
    }

    let results = bench::run_experiment(&cfg)?;
    results.save(&a.out)?;
    if log >= LogLevel::Info {
        print!("{}", results.table());
        println!("results written to {}", a.out.display());
    }
    if results.aggregate.n_ok == 0 {
        eprintln!("error: all {} trials failed", results.aggregate.n_trials);
        return Ok(false);
    }
    Ok(true)
}

fn cmd_predict(a: &PredictArgs, log: LogLevel) -> Result<(), LabError> {
    let model = LabModel::load(&a.model)?;
    let mut x = data::load_features_csv(&a.data)?;
    if x.cols() == model.dim() + 1 {
        let keep: Vec<f64> = x.row_iter().flat_map(|r| r[..model.dim()].to_vec()).collect();
        x = labrr::RealMatrix::new(x.rows(), model.dim(), keep)?;
    }
    if x.cols() != model.dim() {
        return Err(LabError::DimensionMismatch(format!(
            "model expects {} features, {} has {} columns",
            model.dim(),
            a.data.display(),
            x.cols()
        )));
    }
    if let Some(m) = a.clip {
        if !(m > 0.0 && m.is_finite()) {
            return Err(LabError::InvalidConfig(format!("clip bound must be positive, got {m}")));
        }
    }
    let pred = model.predict_original(&x, a.clip)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    writeln!(out, "prediction")?;
    for v in &pred {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    if log >= LogLevel::Info {
        if let Some(p) = &a.out {
            println!("wrote {} predictions to {}", pred.len(), p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = LogLevel::from_env();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a, log).map(|_| true),
        Command::Train(a) => cmd_train(a, log).map(|_| true),
        Command::Benchmark(a) => cmd_benchmark(a, log),
        Command::Predict(a) => cmd_predict(a, log).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
