use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use engnn_core::baselines::{Baseline, SolverConfig};
use engnn_core::chansim::{
    generate_dataset, read_dataset, write_dataset, ScenarioConfig, ScenarioInstance, ScenarioKind,
};
use engnn_core::harness::{
    evaluate, evaluate_instances, run_baseline, run_baseline_instances, sweep, train, write_metrics_csv,
    write_samples_csv, write_sweep_csv, Checkpoint, EvalResult, SweepAxis, TrainConfig,
};
use engnn_core::hetgraph::HetGraph;
use engnn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "engnn", version, about = "Edge-update GNN for radio resource management")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of scenario instances.
    Gen(GenArgs),
    /// Train a model; writes a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally against a baseline.
    Eval(EvalArgs),
    /// Evaluate a checkpoint along one generalisation axis.
    Sweep(SweepArgs),
    /// Run a baseline solver alone.
    Baseline(BaselineArgs),
    /// Print a default training config as TOML.
    Config {
        #[arg(long, value_parser = parse_kind)]
        scenario: ScenarioKind,
    },
}

#[derive(Args)]
struct ScenarioSource {
    /// Scenario TOML, or a training config whose scenario is used.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Built-in default scenario: ic, ibc or coop.
    #[arg(long, value_parser = parse_kind)]
    scenario: Option<ScenarioKind>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    source: ScenarioSource,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Train with the built-in defaults of this scenario.
    #[arg(long, value_parser = parse_kind)]
    scenario: Option<ScenarioKind>,
    /// Checkpoint path; overrides the config's.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test scenario; defaults to the one the checkpoint was trained on.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluate on a dataset written by `gen` instead of fresh samples.
    #[arg(long, conflicts_with = "config")]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "none", value_parser = parse_baseline)]
    baseline: Choice,
    /// Solver settings TOML for the baseline.
    #[arg(long)]
    solver: Option<PathBuf>,
    /// Per-sample CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = SweepAxis::parse)]
    axis: SweepAxis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "none", value_parser = parse_baseline)]
    baseline: Choice,
    #[arg(long)]
    solver: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    source: ScenarioSource,
    #[arg(long, conflicts_with_all = ["config", "scenario"])]
    data: Option<PathBuf>,
    /// wmmse or gp.
    #[arg(long, value_parser = parse_baseline)]
    baseline: Choice,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    solver: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<ScenarioKind> {
    ScenarioKind::parse(s)
}

/// `--baseline` value; `none` skips the baseline.
#[derive(Debug, Clone, Copy)]
struct Choice(Option<Baseline>);

fn parse_baseline(s: &str) -> Result<Choice> {
    Baseline::parse(s).map(Choice)
}

/// Accepts a bare scenario table or a full training config.
fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg = match toml::from_str::<ScenarioConfig>(&text) {
        Ok(s) => s,
        Err(e) => match TrainConfig::from_toml(&text) {
            Ok(t) => t.scenario,
            Err(_) => return Err(Error::Config(format!("{}: {e}", path.display()))),
        },
    };
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

fn resolve_scenario(src: &ScenarioSource) -> Result<ScenarioConfig> {
    match (&src.config, src.scenario) {
        (Some(p), _) => load_scenario(p),
        (None, Some(kind)) => Ok(ScenarioConfig::default_for(kind)),
        (None, None) => Err(Error::Config("pass --config <file> or --scenario <ic|ibc|coop>".into())),
    }
}

fn load_solver(path: Option<&Path>) -> Result<SolverConfig> {
    let cfg = match path {
        Some(p) => {
            toml::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SolverConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Writes to `path`, or to stdout when no path is given.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(&mut io::stdout().lock()),
    }
}

fn summarize(res: &EvalResult) {
    let mut line = format!(
        "samples={} engnn_sum_rate={:.6} engnn_residual_max={:.3e} engnn_us={:.1}",
        res.samples.len(),
        res.row.mean_sum_rate,
        res.row.residual_max,
        res.engnn_seconds * 1e6
    );
    if let (Some(b), Some(mean), Some(secs)) = (res.samples[0].baseline, res.baseline_mean, res.baseline_seconds) {
        line += &format!(
            " {b}_sum_rate={mean:.6} {b}_residual_max={:.3e} {b}_us={:.1} ratio={:.4}",
            res.baseline_residual_max.unwrap_or(0.0),
            secs * 1e6,
            res.row.mean_sum_rate / mean
        );
    }
    eprintln!("{line}");
}

fn read_data(path: &Path) -> Result<Vec<(ScenarioInstance, HetGraph)>> {
    let (_, data) = read_dataset(path)?;
    if data.is_empty() {
        return Err(Error::Config(format!("{}: dataset is empty", path.display())));
    }
    Ok(data)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Config { scenario } => {
            print!("{}", TrainConfig::default_for(scenario).to_toml()?);
        }
        Command::Gen(a) => {
            let cfg = resolve_scenario(&a.source)?;
            let data = generate_dataset(&cfg, a.seed, a.samples)?;
            write_dataset(&a.out, &cfg, &data)?;
            eprintln!(
                "wrote {} {} instances to {}",
                data.len(),
                cfg.kind.name(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let mut cfg = match (&a.config, a.scenario) {
                (Some(p), _) => TrainConfig::load(p)?,
                (None, Some(kind)) => TrainConfig::default_for(kind),
                (None, None) => return Err(Error::Config("pass --config <file> or --scenario <ic|ibc|coop>".into())),
            };
            if let Some(p) = a.checkpoint {
                cfg.checkpoint = Some(p);
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if cfg.checkpoint.is_none() {
                return Err(Error::Config(
                    "no checkpoint path: pass --checkpoint or set it in the config".into(),
                ));
            }
            let out = train(&cfg)?;
            if let Some(p) = a.out.as_deref() {
                with_output(Some(p), |w| write_metrics_csv(w, &out.history))?;
            }
            if let Some(last) = out.history.last() {
                eprintln!(
                    "epochs={} train_sum_rate={:.6} residual_max={:.3e} seconds={:.1}",
                    last.epoch, last.mean_sum_rate, last.residual_max, last.seconds
                );
            }
            eprintln!(
                "checkpoint {}",
                cfg.checkpoint.as_ref().expect("checked above").display()
            );
        }
        Command::Eval(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            let solver = load_solver(a.solver.as_deref())?;
            let baseline = a.baseline.0.map(|b| (b, &solver));
            let res = match &a.data {
                Some(p) => evaluate_instances(&ck.params, &read_data(p)?, baseline)?,
                None => {
                    let scenario = match &a.config {
                        Some(p) => load_scenario(p)?,
                        None => ck.train.scenario.clone(),
                    };
                    evaluate(&ck, &scenario, a.samples, a.seed, baseline)?
                }
            };
            summarize(&res);
            with_output(a.out.as_deref(), |w| write_samples_csv(w, &res.samples))?;
        }
        Command::Sweep(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            let base = match &a.config {
                Some(p) => load_scenario(p)?,
                None => ck.train.scenario.clone(),
            };
            let solver = load_solver(a.solver.as_deref())?;
            let rows = sweep(
                &ck,
                &base,
                a.axis,
                &a.values,
                a.samples,
                a.seed,
                a.baseline.0.map(|b| (b, &solver)),
            )?;
            with_output(a.out.as_deref(), |w| write_sweep_csv(w, &rows))?;
        }
        Command::Baseline(a) => {
            let b = a
                .baseline
                .0
                .ok_or_else(|| Error::Config("baseline needs --baseline wmmse or gp".into()))?;
            let solver = load_solver(a.solver.as_deref())?;
            let rows = match &a.data {
                Some(p) => run_baseline_instances(&read_data(p)?, b, &solver)?,
                None => {
                    let cfg = resolve_scenario(&a.source)?;
                    run_baseline(&cfg, a.samples, a.seed, b, &solver)?
                }
            };
            with_output(a.out.as_deref(), |w| write_samples_csv(w, &rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
