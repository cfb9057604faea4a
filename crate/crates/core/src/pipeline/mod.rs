//! End-to-end experiments: learn a map from the data to a Gaussian latent
//! space, push latent draws through the simulator, fit a trajectory PCE on the
//! latent inputs and compare its statistics with a Monte-Carlo reference.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::basis::{assemble_design, build_index_set};
use crate::datagen::{self, SyntheticLaw};
use crate::dynsim::{cache, run_batch, SwingConfig, SwingSystem};
use crate::error::{Error, Result};
use crate::flow::{self, standard_normal, Arch, FlowConfig, FlowModel};
use crate::fsutil::atomic_write;
use crate::metrics::{self, BudgetOptions, Density, ErrorBudget, KlEstimate, MsiEstimate, MsiOptions, TrajectoryStats};
use crate::nataf::{fit_nataf, GaussianCopulaModel};
use crate::regression::TrajectorySurrogate;
use crate::transport::TransportMap;

pub use config::{DataSource, EvalOptions, ExperimentConfig, MapperSpec, Seeds};

// offsets that split the evaluation seed into independent streams
const SEED_SURROGATE_CHECK: u64 = 1;
const SEED_MODEL_SAMPLES: u64 = 2;
const SEED_KL: u64 = 3;
const SEED_MSI: u64 = 4;

/// Input data and, for synthetic sources, the law they were drawn from.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub data: Array2<f64>,
    pub law: Option<SyntheticLaw>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Inputs> {
    match &cfg.dataset {
        DataSource::Synthetic { spec } => {
            let ds = datagen::generate(&spec.clone().with_seed(cfg.seeds.data))?;
            if let Some(rate) = ds.acceptance_rate {
                log::info!("rejection sampling acceptance rate {rate:.4}");
            }
            Ok(Inputs { data: ds.samples, law: Some(ds.law) })
        }
        DataSource::Csv { path } => Ok(Inputs { data: datagen::read_csv(path)?.0, law: None }),
    }
}

pub fn load_simulator(cfg: &ExperimentConfig) -> Result<SwingSystem> {
    match &cfg.simulator {
        None => Ok(SwingSystem::benchmark()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            SwingSystem::new(SwingConfig::from_json(&text).map_err(|e| Error::Config(e.to_string()))?)
        }
    }
}

/// A fitted data-to-latent map of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Mapper {
    Flow(FlowModel),
    Copula(GaussianCopulaModel),
}

impl Mapper {
    pub fn map(&self) -> &dyn TransportMap {
        match self {
            Mapper::Flow(f) => f,
            Mapper::Copula(c) => c,
        }
    }

    pub fn density(&self) -> &dyn Density {
        match self {
            Mapper::Flow(f) => f,
            Mapper::Copula(c) => c,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Mapper::Flow(f) => format!("flow-{}", f.config().arch.label()),
            Mapper::Copula(_) => "copula".into(),
        }
    }

    fn file_name(&self) -> &'static str {
        match self {
            Mapper::Flow(_) => "flow.json",
            Mapper::Copula(_) => "copula.json",
        }
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(self.file_name());
        let text = match self {
            Mapper::Flow(f) => f.to_json()?,
            Mapper::Copula(c) => c.to_json()?,
        };
        atomic_write(&p, text.as_bytes())?;
        Ok(p)
    }

    /// Loads the mapper of the kind `spec` names from `dir`.
    pub fn load_for(dir: &Path, spec: &MapperSpec) -> Result<Self> {
        match spec {
            MapperSpec::Flow { .. } => Ok(Mapper::Flow(FlowModel::load(&dir.join("flow.json"))?)),
            MapperSpec::Copula { .. } => {
                Ok(Mapper::Copula(GaussianCopulaModel::from_json(&std::fs::read_to_string(dir.join("copula.json"))?)?))
            }
        }
    }

    /// Loads whichever mapper file exists in `dir`, preferring a flow.
    pub fn load(dir: &Path) -> Result<Self> {
        let flow = dir.join("flow.json");
        if flow.is_file() {
            return Ok(Mapper::Flow(FlowModel::load(&flow)?));
        }
        let cop = dir.join("copula.json");
        if cop.is_file() {
            return Ok(Mapper::Copula(GaussianCopulaModel::from_json(&std::fs::read_to_string(cop)?)?));
        }
        Err(Error::Config(format!("no flow.json or copula.json in {}", dir.display())))
    }
}

/// Step 1: fit the map on the data.
pub fn fit_mapper(spec: &MapperSpec, data: ArrayView2<'_, f64>, train_seed: u64) -> Result<Mapper> {
    match spec {
        MapperSpec::Flow { config } => {
            let cfg = FlowConfig { seed: train_seed, ..config.clone() };
            Ok(Mapper::Flow(flow::train(data, &cfg).map_err(|e| e.in_stage("train-flow"))?))
        }
        MapperSpec::Copula { marginals } => {
            Ok(Mapper::Copula(fit_nataf(data, marginals).map_err(|e| e.in_stage("fit-copula"))?))
        }
    }
}

/// `points` indices spread evenly over `0..len`, both ends included.
pub fn downsample_indices(len: usize, points: usize) -> Vec<usize> {
    if points >= len {
        return (0..len).collect();
    }
    (0..points).map(|k| ((k * (len - 1)) as f64 / (points - 1) as f64).round() as usize).collect()
}

/// Latent draws, their images and the simulated (downsampled) outputs.
/// Rows of failed simulations are dropped and listed in `failures`.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub z: Array2<f64>,
    pub xi: Array2<f64>,
    pub y: Array2<f64>,
    pub time: Vec<f64>,
    pub failures: Vec<(usize, String)>,
}

/// Steps 2–3: `z ~ N(0, I)`, `ξ = T(z)`, `y = simulate(ξ)`.
pub fn propagate(map: &dyn TransportMap, sys: &SwingSystem, n: usize, seed: u64, points: usize) -> Result<Propagation> {
    let z = standard_normal(n, map.dim(), seed);
    let xi = map.forward_batch(z.view()).map_err(|e| e.in_stage("sample-map"))?;
    let out = run_batch(sys, xi.view(), None);
    let keep = downsample_indices(sys.time_grid().len(), points);
    let grid = sys.time_grid();
    let time: Vec<f64> = keep.iter().map(|&k| grid[k]).collect();
    let y = out.trajectories.select(Axis(1), &keep);
    Ok(Propagation { z: z.select(Axis(0), &out.ok), xi: xi.select(Axis(0), &out.ok), y, time, failures: out.failed })
}

/// Steps 4–5: Hermite basis on the latent samples and the penalized fit.
pub fn fit_surrogate(p: &Propagation, degree: usize, penalty: crate::regression::Penalty, lambda: f64) -> Result<TrajectorySurrogate> {
    if p.z.nrows() == 0 {
        return Err(Error::Degenerate("no successful simulations to fit".into()).in_stage("fit-pce"));
    }
    let set = build_index_set(p.z.ncols(), degree).map_err(|e| e.in_stage("fit-pce"))?;
    let design = assemble_design(&set, p.z.view()).map_err(|e| e.in_stage("fit-pce"))?;
    TrajectorySurrogate::fit(&design, p.y.view(), penalty, lambda).map_err(|e| e.in_stage("fit-pce"))
}

/// Monte-Carlo statistics on the first `n_mc` data rows, cached under
/// `cache_dir` by a hash of the simulator, the rows and the grid.
pub fn mc_reference(
    sys: &SwingSystem,
    data: ArrayView2<'_, f64>,
    n_mc: usize,
    points: usize,
    cache_dir: Option<&Path>,
) -> Result<(TrajectoryStats, Vec<(usize, String)>)> {
    if n_mc < 2 {
        return Err(Error::Degenerate("a Monte-Carlo reference needs at least 2 samples".into()).in_stage("mc-reference"));
    }
    let n = n_mc.min(data.nrows());
    if n < n_mc {
        log::warn!("dataset has only {n} rows; Monte-Carlo reference uses all of them");
    }
    let rows = data.slice(s![0..n, ..]);
    let key = cache::content_key(&[
        &sys.fingerprint(),
        &cache::f64_bytes(rows.as_standard_layout().as_slice().expect("standard layout")),
        &(points as u64).to_le_bytes(),
    ]);
    let cached = cache_dir.map(|d| d.join(format!("mc_{key}.json")));
    if let Some(p) = &cached {
        if let Ok(text) = std::fs::read_to_string(p) {
            if let Ok(doc) = serde_json::from_str::<McDoc>(&text) {
                log::info!("Monte-Carlo reference served from cache");
                return Ok((doc.stats, doc.failures));
            }
        }
    }
    let out = run_batch(sys, rows, None);
    if out.ok.len() < 2 {
        return Err(out.partial_error().in_stage("mc-reference"));
    }
    let keep = downsample_indices(sys.time_grid().len(), points);
    let grid = sys.time_grid();
    let time: Vec<f64> = keep.iter().map(|&k| grid[k]).collect();
    let stats = TrajectoryStats::from_runs(time, out.trajectories.select(Axis(1), &keep).view())?;
    if let Some(p) = &cached {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let doc = McDoc { stats: stats.clone(), failures: out.failed.clone() };
        atomic_write(p, serde_json::to_string(&doc)?.as_bytes())?;
    }
    Ok((stats, out.failed))
}

#[derive(Serialize, Deserialize)]
struct McDoc {
    stats: TrajectoryStats,
    failures: Vec<(usize, String)>,
}

/// Surrogate-versus-reference metrics of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub method: String,
    pub nirmse: f64,
    pub mean_error: f64,
    pub std_error: f64,
    /// NIRMSE with surrogate statistics estimated by sampling instead of
    /// the closed form.
    pub nirmse_sampled: f64,
    pub wasserstein: f64,
    pub kl: Option<KlEstimate>,
    pub msi: MsiEstimate,
    pub budget: ErrorBudget,
    pub undersampled: bool,
    pub warnings: Vec<String>,
    pub failed_regression_samples: Vec<usize>,
    pub failed_reference_samples: Vec<usize>,
    pub seeds: Seeds,
    pub degree: usize,
    pub lambda: f64,
    pub timings: BTreeMap<String, f64>,
}

/// Step 6 onwards: compare the surrogate with the reference.
pub fn evaluate(
    cfg: &ExperimentConfig,
    mapper: &Mapper,
    surrogate: &TrajectorySurrogate,
    reference: &TrajectoryStats,
    inputs: &Inputs,
    regression_samples: usize,
) -> Result<Report> {
    let stage = |e: Error| e.in_stage("evaluate");
    let (mean, std) = surrogate.mean_std();
    let est = TrajectoryStats::new(reference.time.clone(), mean, std, regression_samples).map_err(stage)?;
    let opts = &cfg.eval;
    let e = cfg.seeds.eval;
    let zc = standard_normal(opts.surrogate_samples.max(2), surrogate.index_set().dim(), e + SEED_SURROGATE_CHECK);
    let sampled = TrajectoryStats::from_runs(reference.time.clone(), surrogate.predict_batch(zc.view()).map_err(stage)?.view())
        .map_err(stage)?;
    let msi_opts = MsiOptions { n: opts.msi_samples, seed: e + SEED_MSI, ..MsiOptions::default() };
    let n_data = opts.model_samples.min(inputs.data.nrows());
    let held = inputs.data.slice(s![inputs.data.nrows() - n_data.., ..]);
    let budget = metrics::error_budget(
        mapper.map(),
        surrogate,
        held,
        regression_samples,
        BudgetOptions {
            model_samples: opts.model_samples,
            projections: opts.projections,
            msi: msi_opts,
            seed: e + SEED_MODEL_SAMPLES,
        },
    )
    .map_err(stage)?;
    let msi = metrics::msi(mapper.map(), msi_opts).map_err(stage)?;
    let kl = match &inputs.law {
        Some(law) if opts.kl_samples >= 2 => Some(metrics::forward_kl(law, mapper.density(), opts.kl_samples, e + SEED_KL).map_err(stage)?),
        _ => None,
    };
    let undersampled = surrogate.diagnostics().iter().any(|d| d.undersampled);
    let mut warnings = Vec::new();
    if undersampled {
        warnings.push(format!(
            "N_s = {regression_samples} is below 2P = {} (rule of thumb)",
            2 * surrogate.index_set().len()
        ));
    }
    Ok(Report {
        name: cfg.name.clone(),
        method: mapper.label(),
        nirmse: metrics::nirmse(reference, &est).map_err(stage)?,
        mean_error: metrics::mean_error(reference, &est).map_err(stage)?,
        std_error: metrics::std_error(reference, &est).map_err(stage)?,
        nirmse_sampled: metrics::nirmse(reference, &sampled).map_err(stage)?,
        wasserstein: budget.w2_estimate,
        kl,
        msi,
        budget,
        undersampled,
        warnings,
        failed_regression_samples: vec![],
        failed_reference_samples: vec![],
        seeds: cfg.seeds,
        degree: cfg.degree,
        lambda: cfg.lambda(),
        timings: BTreeMap::new(),
    })
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub mapper: Mapper,
    pub surrogate: TrajectorySurrogate,
    pub reference: TrajectoryStats,
    pub propagation: Propagation,
    pub dir: PathBuf,
}

impl RunOutcome {
    /// Some simulation in the regression set or the reference failed.
    pub fn has_failures(&self) -> bool {
        !self.report.failed_regression_samples.is_empty() || !self.report.failed_reference_samples.is_empty()
    }
}

fn write_matrix(path: &Path, m: ArrayView2<'_, f64>, prefix: &str) -> Result<()> {
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    datagen::write_csv(path, m, &header)
}

/// Persists the regression triples `(z, ξ, y)`.
pub fn save_propagation(dir: &Path, p: &Propagation) -> Result<()> {
    write_matrix(&dir.join("latent_samples.csv"), p.z.view(), "z")?;
    write_matrix(&dir.join("mapped_samples.csv"), p.xi.view(), "xi")?;
    let header: Vec<String> = p.time.iter().map(|t| format!("t={t}")).collect();
    datagen::write_csv(&dir.join("regression_outputs.csv"), p.y.view(), &header)
}

/// Runs the whole experiment and writes its artifacts under `cfg.run_dir()`.
/// Artifacts of completed stages stay on disk when a later stage fails.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)?;
    atomic_write(&dir.join("config.json"), cfg.to_json()?.as_bytes())?;
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let inputs = load_data(cfg).map_err(|e| e.in_stage("load-data"))?;
    let sys = load_simulator(cfg).map_err(|e| e.in_stage("load-simulator"))?;
    if sys.input_dim() != inputs.data.ncols() {
        return Err(Error::DimensionMismatch { expected: sys.input_dim(), got: inputs.data.ncols() }.in_stage("load-data"));
    }
    lap("load", &mut timings);

    let mapper = fit_mapper(&cfg.mapper, inputs.data.view(), cfg.seeds.train)?;
    mapper.save(&dir)?;
    lap("map", &mut timings);

    let prop = propagate(mapper.map(), &sys, cfg.regression_samples, cfg.seeds.eval, cfg.output_points)?;
    if !prop.failures.is_empty() {
        log::warn!("{} of {} regression simulations failed", prop.failures.len(), cfg.regression_samples);
    }
    save_propagation(&dir, &prop)?;
    lap("simulate", &mut timings);

    let surrogate = fit_surrogate(&prop, cfg.degree, cfg.penalty, cfg.lambda())?;
    atomic_write(&dir.join("surrogate.json"), surrogate.to_json()?.as_bytes())?;
    lap("fit", &mut timings);

    let (reference, ref_failures) =
        mc_reference(&sys, inputs.data.view(), cfg.mc_samples, cfg.output_points, Some(&cfg.out_dir.join("cache")))?;
    atomic_write(&dir.join("reference.json"), serde_json::to_string(&reference)?.as_bytes())?;
    lap("reference", &mut timings);

    let mut report = evaluate(cfg, &mapper, &surrogate, &reference, &inputs, prop.z.nrows())?;
    lap("evaluate", &mut timings);
    report.failed_regression_samples = prop.failures.iter().map(|(i, _)| *i).collect();
    report.failed_reference_samples = ref_failures.iter().map(|(i, _)| *i).collect();
    if !prop.failures.is_empty() {
        report.warnings.push(format!("{} regression simulations failed", prop.failures.len()));
    }
    report.timings = timings;
    atomic_write(&dir.join("metrics.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    report::write_table(&dir.join("report"), std::slice::from_ref(&report), &[report::Format::Csv, report::Format::Json])?;
    log::info!("{}: {} NIRMSE {:.4e}", cfg.name, report.method, report.nirmse);
    Ok(RunOutcome { report, mapper, surrogate, reference, propagation: prop, dir })
}

/// Runs the experiment with a flow mapper.
pub fn run_flow_pce(cfg: &ExperimentConfig, flow: FlowConfig) -> Result<RunOutcome> {
    run(&cfg.with_mapper(MapperSpec::Flow { config: flow }))
}

/// Runs the experiment with a Gaussian-copula (Nataf) mapper.
pub fn run_copula_pce(cfg: &ExperimentConfig, marginals: Vec<crate::nataf::MarginalKind>) -> Result<RunOutcome> {
    run(&cfg.with_mapper(MapperSpec::Copula { marginals }))
}

/// One row of an architecture or bin-count comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub bins: Option<usize>,
    pub msi: Option<f64>,
    pub nirmse: Option<f64>,
    pub wasserstein: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn from(label: String, bins: Option<usize>, r: Result<RunOutcome>) -> Self {
        match r {
            Ok(o) => Self {
                label,
                bins,
                msi: Some(o.report.msi.value),
                nirmse: Some(o.report.nirmse),
                wasserstein: Some(o.report.wasserstein),
                error: None,
            },
            Err(e) => {
                log::error!("{label}: {e}");
                Self { label, bins, msi: None, nirmse: None, wasserstein: None, error: Some(e.to_string()) }
            }
        }
    }
}

fn flow_base(cfg: &ExperimentConfig) -> FlowConfig {
    match &cfg.mapper {
        MapperSpec::Flow { config } => config.clone(),
        MapperSpec::Copula { .. } => FlowConfig::default(),
    }
}

/// Trains NSF, MAF and NICE under one budget and seed set; a failing
/// architecture yields an error row instead of aborting the table.
pub fn arch_compare(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let base = flow_base(cfg);
    let rows = Arch::ALL
        .iter()
        .map(|&arch| {
            let c = ExperimentConfig { name: format!("{}-{}", cfg.name, arch.label()), ..cfg.clone() };
            SweepRow::from(arch.label().to_uppercase(), None, run_flow_pce(&c, FlowConfig { arch, ..base.clone() }))
        })
        .collect();
    Ok(rows)
}

/// NSF runs over a list of bin counts.
pub fn bins_sweep(cfg: &ExperimentConfig, bins: &[usize]) -> Result<Vec<SweepRow>> {
    if bins.is_empty() {
        return Err(Error::Config("bins sweep needs at least one bin count".into()));
    }
    let base = flow_base(cfg);
    Ok(bins
        .iter()
        .map(|&k| {
            let c = ExperimentConfig { name: format!("{}-bins{k}", cfg.name), ..cfg.clone() };
            SweepRow::from("NSF".into(), Some(k), run_flow_pce(&c, FlowConfig { arch: Arch::Nsf, bins: k, ..base.clone() }))
        })
        .collect())
}

/// Re-derives `ξ = T(z)` and `y = simulate(ξ)` for persisted triples; returns
/// the largest absolute deviations of each.
pub fn recheck(dir: &Path, sys: &SwingSystem, points: usize) -> Result<(f64, f64)> {
    let mapper = Mapper::load(dir)?;
    let (z, _) = datagen::read_csv(&dir.join("latent_samples.csv"))?;
    let (xi, _) = datagen::read_csv(&dir.join("mapped_samples.csv"))?;
    let (y, _) = datagen::read_csv(&dir.join("regression_outputs.csv"))?;
    let xi2 = mapper.map().forward_batch(z.view())?;
    let keep = downsample_indices(sys.time_grid().len(), points);
    let y2 = run_batch(sys, xi.view(), None).into_result()?.select(Axis(1), &keep);
    let dev = |a: &Array2<f64>, b: &Array2<f64>| {
        if a.dim() != b.dim() {
            return f64::INFINITY;
        }
        a.iter().zip(b).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()))
    };
    Ok((dev(&xi, &xi2), dev(&y, &y2)))
}
