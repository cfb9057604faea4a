//! `flowpce` command-line driver.
//!
//! Every subcommand reads an experiment config and works inside its run
//! directory (`<out_dir>/<name>`), so the staged commands can be chained:
//! `gen-data`, `train-flow` or `fit-copula`, `build-pce`, `mc-ref`, `evaluate`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use flowpce::datagen;
use flowpce::fsutil::atomic_write;
use flowpce::metrics::TrajectoryStats;
use flowpce::pipeline::report::{self, Format};
use flowpce::pipeline::{self, ExperimentConfig, Mapper, MapperSpec, Report};
use flowpce::regression::TrajectorySurrogate;
use flowpce::Error;

#[derive(Parser)]
#[command(name = "flowpce", version, about = "Flow-based PCE uncertainty propagation experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed_data: Option<u64>,
    #[arg(long, global = true)]
    seed_train: Option<u64>,
    #[arg(long, global = true)]
    seed_eval: Option<u64>,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format for `arch-compare`, `bins-sweep` and `report`.
    #[arg(long, global = true, value_enum, default_value_t = Fmt::Csv)]
    format: Fmt,
    /// Regression penalty strength; overrides the config.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fmt {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the synthetic dataset and write `data.csv`.
    GenData,
    /// Train the config's flow and write `flow.json`.
    TrainFlow,
    /// Fit the config's Gaussian copula and write `copula.json`.
    FitCopula,
    /// Sample the latent space, simulate and fit the trajectory PCE.
    BuildPce,
    /// Monte-Carlo reference statistics on the data.
    McRef,
    /// Compare surrogate and reference; write `metrics.json` and the table.
    Evaluate,
    /// All stages in one go.
    Run,
    /// NSF, MAF and NICE under one budget.
    ArchCompare,
    /// NSF over a list of bin counts.
    BinsSweep {
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16, 32])]
        bins: Vec<usize>,
    },
    /// Collect `metrics.json` of run directories into one table.
    Report {
        /// Run directories; all of `--out` when omitted.
        runs: Vec<PathBuf>,
    },
}

/// Exit status for an error: 2 configuration, 3 numerical, 4 partial batch.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::PartialBatch { .. } => 4,
        Error::Config(_)
        | Error::Json(_)
        | Error::Io(_)
        | Error::InvalidInput(_)
        | Error::DimensionMismatch { .. }
        | Error::BasisTooLarge { .. } => 2,
        _ => 3,
    }
}

/// Completed while some simulations failed.
struct Partial(String);

type Outcome = Result<Option<Partial>, Error>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Partial(msg))) => {
            log::warn!("{msg}");
            ExitCode::from(4)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed_data {
        cfg.seeds.data = s;
    }
    if let Some(s) = cli.seed_train {
        cfg.seeds.train = s;
    }
    if let Some(s) = cli.seed_eval {
        cfg.seeds.eval = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if cli.lambda.is_some() {
        cfg.lambda = cli.lambda;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn formats(cli: &Cli) -> [Format; 1] {
    match cli.format {
        Fmt::Csv => [Format::Csv],
        Fmt::Json => [Format::Json],
    }
}

fn run_dir(cfg: &ExperimentConfig) -> Result<PathBuf, Error> {
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn partial(what: &str, failed: usize) -> Option<Partial> {
    (failed > 0).then(|| Partial(format!("{failed} {what} simulations failed; see the run directory")))
}

fn dispatch(cli: &Cli) -> Outcome {
    if let Command::Report { runs } = &cli.command {
        return collect_reports(cli, runs);
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData => gen_data(&cfg),
        Command::TrainFlow => fit(&cfg, true),
        Command::FitCopula => fit(&cfg, false),
        Command::BuildPce => build_pce(&cfg),
        Command::McRef => mc_ref(&cfg),
        Command::Evaluate => evaluate(&cfg),
        Command::Run => {
            let out = pipeline::run(&cfg)?;
            println!("{} NIRMSE {:.4e} ({})", out.report.method, out.report.nirmse, out.dir.display());
            let failed = out.report.failed_regression_samples.len() + out.report.failed_reference_samples.len();
            Ok(partial("regression or reference", failed))
        }
        Command::ArchCompare => {
            let rows = pipeline::arch_compare(&cfg)?;
            report::write_sweep(&run_dir(&cfg)?.join("arch_compare"), &rows, &formats(cli))?;
            print_rows(&rows);
            Ok(None)
        }
        Command::BinsSweep { bins } => {
            let rows = pipeline::bins_sweep(&cfg, bins)?;
            report::write_sweep(&run_dir(&cfg)?.join("bins_sweep"), &rows, &formats(cli))?;
            print_rows(&rows);
            Ok(None)
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn print_rows(rows: &[pipeline::SweepRow]) {
    for r in rows {
        let bins = r.bins.map(|b| format!(" bins={b}")).unwrap_or_default();
        match (&r.error, r.nirmse, r.msi) {
            (Some(e), _, _) => println!("{}{bins}: failed: {e}", r.label),
            (None, Some(n), Some(m)) => println!("{}{bins}: NIRMSE {n:.4e} MSI {m:.4}", r.label),
            _ => println!("{}{bins}: incomplete", r.label),
        }
    }
}

fn gen_data(cfg: &ExperimentConfig) -> Outcome {
    let inputs = pipeline::load_data(cfg)?;
    let header: Vec<String> = (0..inputs.data.ncols()).map(|j| format!("xi{j}")).collect();
    let path = run_dir(cfg)?.join("data.csv");
    datagen::write_csv(&path, inputs.data.view(), &header)?;
    println!("{} samples written to {}", inputs.data.nrows(), path.display());
    Ok(None)
}

fn fit(cfg: &ExperimentConfig, flow: bool) -> Outcome {
    let inputs = pipeline::load_data(cfg)?;
    match (&cfg.mapper, flow) {
        (MapperSpec::Copula { .. }, true) => return Err(Error::Config("config mapper is a copula; use fit-copula".into())),
        (MapperSpec::Flow { .. }, false) => return Err(Error::Config("config mapper is a flow; use train-flow".into())),
        _ => {}
    }
    let mapper = pipeline::fit_mapper(&cfg.mapper, inputs.data.view(), cfg.seeds.train)?;
    let path = mapper.save(&run_dir(cfg)?)?;
    if let Mapper::Flow(f) = &mapper {
        if let Some(nll) = f.trace().best_val_nll() {
            println!("best validation NLL {nll:.5} at epoch {}", f.trace().best_epoch);
        }
    }
    println!("{} written to {}", mapper.label(), path.display());
    Ok(None)
}

fn build_pce(cfg: &ExperimentConfig) -> Outcome {
    let dir = run_dir(cfg)?;
    let mapper = Mapper::load_for(&dir, &cfg.mapper)?;
    let sys = pipeline::load_simulator(cfg)?;
    let prop = pipeline::propagate(mapper.map(), &sys, cfg.regression_samples, cfg.seeds.eval, cfg.output_points)?;
    pipeline::save_propagation(&dir, &prop)?;
    let surrogate = pipeline::fit_surrogate(&prop, cfg.degree, cfg.penalty, cfg.lambda())?;
    let path = dir.join("surrogate.json");
    atomic_write(&path, surrogate.to_json()?.as_bytes())?;
    println!("surrogate with {} terms × {} steps written to {}", surrogate.index_set().len(), surrogate.steps(), path.display());
    Ok(partial("regression", prop.failures.len()))
}

fn mc_ref(cfg: &ExperimentConfig) -> Outcome {
    let dir = run_dir(cfg)?;
    let inputs = pipeline::load_data(cfg)?;
    let sys = pipeline::load_simulator(cfg)?;
    let (stats, failed) =
        pipeline::mc_reference(&sys, inputs.data.view(), cfg.mc_samples, cfg.output_points, Some(&cfg.out_dir.join("cache")))?;
    atomic_write(&dir.join("reference.json"), serde_json::to_string(&stats)?.as_bytes())?;
    println!("reference from {} runs written to {}", stats.count, dir.join("reference.json").display());
    Ok(partial("reference", failed.len()))
}

fn evaluate(cfg: &ExperimentConfig) -> Outcome {
    let dir = run_dir(cfg)?;
    let mapper = Mapper::load_for(&dir, &cfg.mapper)?;
    let surrogate = TrajectorySurrogate::from_json(&std::fs::read_to_string(dir.join("surrogate.json"))?)?;
    let reference: TrajectoryStats = serde_json::from_str(&std::fs::read_to_string(dir.join("reference.json"))?)?;
    let inputs = pipeline::load_data(cfg)?;
    let (z, _) = datagen::read_csv(&dir.join("latent_samples.csv"))?;
    let report = pipeline::evaluate(cfg, &mapper, &surrogate, &reference, &inputs, z.nrows())?;
    report::write_json(&dir.join("metrics.json"), &report)?;
    report::write_table(&dir.join("report"), std::slice::from_ref(&report), &[Format::Csv, Format::Json])?;
    println!("{} NIRMSE {:.4e} (mean {:.3e}, std {:.3e})", report.method, report.nirmse, report.mean_error, report.std_error);
    Ok(None)
}

fn collect_reports(cli: &Cli, runs: &[PathBuf]) -> Outcome {
    let out = match (&cli.out, &cli.config) {
        (Some(o), _) => o.clone(),
        (None, Some(_)) => load_config(cli)?.out_dir,
        (None, None) => PathBuf::from("out"),
    };
    let dirs: Vec<PathBuf> = if runs.is_empty() {
        let mut d: Vec<PathBuf> = std::fs::read_dir(&out)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("metrics.json").is_file())
            .collect();
        d.sort();
        d
    } else {
        runs.to_vec()
    };
    if dirs.is_empty() {
        return Err(Error::Config(format!("no run directories with metrics.json under {}", out.display())));
    }
    let reports = dirs.iter().map(|d| read_report(d)).collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(&out)?;
    report::write_table(&out.join("table"), &reports, &formats(cli))?;
    for r in &reports {
        println!("{:<24} {:<10} NIRMSE {:.4e}", r.name, r.method, r.nirmse);
    }
    Ok(None)
}

fn read_report(dir: &Path) -> Result<Report, Error> {
    let p = dir.join("metrics.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    Ok(serde_json::from_str(&text)?)
}
