//! Classical multi-machine swing-equation simulator with uncertain mechanical
//! power and scheduled network switching.
//!
//! Each machine obeys `dδᵢ/dt = ωᵢ`, `Mᵢ dωᵢ/dt = Pₘ,ᵢ − Pₑ,ᵢ(δ) − Dᵢωᵢ` with
//! `Pₑ,ᵢ = Σⱼ EᵢEⱼ (Gᵢⱼ cos δᵢⱼ + Bᵢⱼ sin δᵢⱼ)` on a Kron-reduced network.

pub mod cache;
pub mod network;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::SimCache;

pub const CONFIG_VERSION: u32 = 1;
const DEFAULT_CONFIG: &str = include_str!("../../data/swing3.json");
/// COI-relative angle beyond which a run is declared unstable.
pub const INSTABILITY_ANGLE: f64 = 10.0 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    /// Index into `networks` that takes effect at `time`.
    pub network: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub generator: usize,
    pub low: f64,
    pub high: f64,
}

/// Serialized system description. Admittance matrices are row-major
/// `[re, im]` pairs; `networks[0]` is in force at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwingConfig {
    pub format_version: u32,
    pub name: String,
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
    pub emf: Vec<f64>,
    pub p_mech: Vec<f64>,
    pub networks: Vec<Vec<Vec<[f64; 2]>>>,
    pub events: Vec<Event>,
    pub uncertain: Vec<Injection>,
    pub monitored: usize,
    pub step: f64,
    pub horizon: f64,
}

impl SwingConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Conductance and susceptance parts of one reduced network.
#[derive(Debug, Clone, PartialEq)]
struct Admittance {
    g: Array2<f64>,
    b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwingSystem {
    config: SwingConfig,
    networks: Vec<Admittance>,
    /// Step index at which each event takes effect.
    event_steps: Vec<(usize, usize)>,
    steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
}

/// Operating point: all machines turn at the common speed deviation `omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub delta: Vec<f64>,
    pub omega: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub time: Vec<f64>,
    /// COI-relative angle of the monitored machine; NaN after instability.
    pub y: Vec<f64>,
    pub unstable: bool,
}

impl SwingSystem {
    pub fn new(config: SwingConfig) -> Result<Self> {
        let cfg = |m: String| Err(Error::Config(m));
        if config.format_version != CONFIG_VERSION {
            return cfg(format!("unsupported simulator config version {}", config.format_version));
        }
        let n = config.inertia.len();
        if n == 0 {
            return cfg("at least one machine required".into());
        }
        if [config.damping.len(), config.emf.len(), config.p_mech.len()].iter().any(|&l| l != n) {
            return cfg("per-machine vectors must have equal length".into());
        }
        if config.inertia.iter().any(|m| !(*m > 0.0)) {
            return cfg("inertia constants must be positive".into());
        }
        if config.damping.iter().any(|d| !(*d >= 0.0)) || config.emf.iter().any(|e| !(*e > 0.0)) {
            return cfg("damping must be non-negative and EMFs positive".into());
        }
        if config.networks.is_empty() {
            return cfg("at least one network required".into());
        }
        let mut networks = Vec::with_capacity(config.networks.len());
        for (k, rows) in config.networks.iter().enumerate() {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return cfg(format!("network {k} is not {n}×{n}"));
            }
            let g = Array2::from_shape_fn((n, n), |(i, j)| rows[i][j][0]);
            let b = Array2::from_shape_fn((n, n), |(i, j)| rows[i][j][1]);
            let asym = (&g - &g.t()).iter().chain((&b - &b.t()).iter()).fold(0.0f64, |a, v| a.max(v.abs()));
            if asym > 1e-12 || g.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return cfg(format!("network {k} admittance must be finite and symmetric"));
            }
            networks.push(Admittance { g, b });
        }
        if !(config.step > 0.0) || !(config.horizon > config.step) {
            return cfg("need 0 < step < horizon".into());
        }
        let steps = (config.horizon / config.step + 1e-9).floor() as usize;
        let mut event_steps = Vec::new();
        let mut last = 0.0;
        for ev in &config.events {
            if !(ev.time > last) || ev.time >= config.horizon {
                return cfg("event times must increase strictly inside the horizon".into());
            }
            let k = ev.time / config.step;
            if (k - k.round()).abs() > 1e-9 {
                return cfg(format!("event at {} s is not on the {} s step grid", ev.time, config.step));
            }
            if ev.network >= networks.len() {
                return cfg(format!("event refers to unknown network {}", ev.network));
            }
            event_steps.push((k.round() as usize, ev.network));
            last = ev.time;
        }
        let mut seen = vec![false; n];
        for inj in &config.uncertain {
            if inj.generator >= n || seen[inj.generator] {
                return cfg("uncertain injections must name distinct machines".into());
            }
            seen[inj.generator] = true;
            if !(inj.low < inj.high) {
                return cfg(format!("injection range of machine {} has low ≥ high", inj.generator));
            }
        }
        if config.monitored >= n {
            return cfg("monitored machine out of range".into());
        }
        Ok(Self { config, networks, event_steps, steps })
    }

    /// The three-machine benchmark shipped with the crate.
    pub fn benchmark() -> Self {
        Self::new(SwingConfig::from_json(DEFAULT_CONFIG).expect("bundled config parses")).expect("bundled config is valid")
    }

    pub fn config(&self) -> &SwingConfig {
        &self.config
    }

    pub fn machines(&self) -> usize {
        self.config.inertia.len()
    }

    /// Number of uncertain inputs.
    pub fn input_dim(&self) -> usize {
        self.config.uncertain.len()
    }

    pub fn time_grid(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| k as f64 * self.config.step).collect()
    }

    /// Same system with another step size (events must stay on the grid).
    pub fn with_step(&self, step: f64) -> Result<Self> {
        Self::new(SwingConfig { step, ..self.config.clone() })
    }

    /// Same system without switching events.
    pub fn without_events(&self) -> Self {
        Self::new(SwingConfig { events: vec![], ..self.config.clone() }).expect("removing events keeps validity")
    }

    /// Mechanical powers for a unit-cube input; coordinates outside `[0, 1]`
    /// are clamped (logged; [`run_batch`] warns once per batch).
    pub fn inject(&self, xi: &[f64]) -> Result<Vec<f64>> {
        crate::error::ensure_dim(self.input_dim(), xi.len())?;
        let mut pm = self.config.p_mech.clone();
        for (inj, &x) in self.config.uncertain.iter().zip(xi) {
            if !x.is_finite() {
                return Err(Error::NonFinite("simulator input".into()));
            }
            let u = if (0.0..=1.0).contains(&x) {
                x
            } else {
                log::debug!("input {x} outside [0, 1] clamped");
                x.clamp(0.0, 1.0)
            };
            pm[inj.generator] = inj.low + u * (inj.high - inj.low);
        }
        Ok(pm)
    }

    fn electrical_power(&self, net: usize, delta: &[f64], out: &mut [f64]) {
        let Admittance { g, b } = &self.networks[net];
        let e = &self.config.emf;
        for i in 0..delta.len() {
            let mut p = 0.0;
            for j in 0..delta.len() {
                let (s, c) = (delta[i] - delta[j]).sin_cos();
                p += e[i] * e[j] * (g[[i, j]] * c + b[[i, j]] * s);
            }
            out[i] = p;
        }
    }

    /// Residuals `Pₘ − Pₑ(δ) − DΩ` followed by the COI constraint `Σ Mᵢδᵢ`.
    fn balance(&self, pm: &[f64], delta: &[f64], omega: f64) -> Vec<f64> {
        let n = delta.len();
        let mut pe = vec![0.0; n];
        self.electrical_power(0, delta, &mut pe);
        let mut r: Vec<f64> = (0..n).map(|i| pm[i] - pe[i] - self.config.damping[i] * omega).collect();
        r.push(delta.iter().zip(&self.config.inertia).map(|(d, m)| d * m).sum());
        r
    }

    /// Damped Newton (least-squares steps) for the synchronous operating point
    /// on the initial network.
    pub fn equilibrium(&self, pm: &[f64]) -> Result<Equilibrium> {
        let n = self.machines();
        crate::error::ensure_dim(n, pm.len())?;
        let with_omega = self.config.damping.iter().any(|d| *d > 0.0);
        let e = &self.config.emf;
        let Admittance { g, b } = &self.networks[0];
        let mut delta = vec![0.0; n];
        let mut omega = 0.0;
        let norm = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut res = self.balance(pm, &delta, omega);
        for it in 0..=50 {
            if norm(&res) < 1e-10 {
                return Ok(Equilibrium { delta, omega, iterations: it, residual: norm(&res) });
            }
            if it == 50 {
                break;
            }
            let cols = if with_omega { n + 1 } else { n };
            let mut jac = DMatrix::<f64>::zeros(n + 1, cols);
            for i in 0..n {
                for k in 0..n {
                    if k == i {
                        continue;
                    }
                    let (s, c) = (delta[i] - delta[k]).sin_cos();
                    let d = e[i] * e[k] * (g[[i, k]] * s - b[[i, k]] * c);
                    // ∂(−Pₑ,ᵢ)/∂δₖ and its diagonal counterpart
                    jac[(i, k)] = -d;
                    jac[(i, i)] += d;
                }
                if with_omega {
                    jac[(i, n)] = -self.config.damping[i];
                }
                jac[(n, i)] = self.config.inertia[i];
            }
            let rhs = DVector::from_iterator(n + 1, res.iter().map(|v| -v));
            let svd = jac.svd(true, true);
            let step = svd
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::Infeasible(format!("Newton step failed: {e}")))?;
            let mut t = 1.0;
            let base = norm(&res);
            loop {
                let d_try: Vec<f64> = (0..n).map(|i| delta[i] + t * step[i]).collect();
                let o_try = if with_omega { omega + t * step[n] } else { 0.0 };
                let r_try = self.balance(pm, &d_try, o_try);
                if norm(&r_try) < base || t < 1e-6 {
                    delta = d_try;
                    omega = o_try;
                    res = r_try;
                    break;
                }
                t *= 0.5;
            }
        }
        Err(Error::Infeasible(format!(
            "equilibrium not found in 50 Newton iterations (residual {:.3e})",
            norm(&res)
        )))
    }

    fn rhs(&self, net: usize, pm: &[f64], s: &State, out: &mut State, pe: &mut [f64]) {
        self.electrical_power(net, &s.delta, pe);
        for i in 0..pm.len() {
            out.delta[i] = s.omega[i];
            out.omega[i] = (pm[i] - pe[i] - self.config.damping[i] * s.omega[i]) / self.config.inertia[i];
        }
    }

    /// Fixed-step RK4 from `init`, switching networks at event steps.
    /// `observe` receives every grid state and may return `false` to stop.
    pub fn integrate<F>(&self, pm: &[f64], init: State, mut observe: F) -> Result<()>
    where
        F: FnMut(usize, &State) -> bool,
    {
        let n = self.machines();
        crate::error::ensure_dim(n, pm.len())?;
        crate::error::ensure_dim(n, init.delta.len())?;
        crate::error::ensure_dim(n, init.omega.len())?;
        let h = self.config.step;
        let zero = || State { delta: vec![0.0; n], omega: vec![0.0; n] };
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (zero(), zero(), zero(), zero(), zero());
        let mut pe = vec![0.0; n];
        let mut s = init;
        let mut net = 0;
        let mut next_event = 0;
        if !observe(0, &s) {
            return Ok(());
        }
        for k in 0..self.steps {
            while next_event < self.event_steps.len() && self.event_steps[next_event].0 == k {
                net = self.event_steps[next_event].1;
                next_event += 1;
            }
            self.rhs(net, pm, &s, &mut k1, &mut pe);
            let stage = |ka: &State, c: f64, tmp: &mut State| {
                for i in 0..n {
                    tmp.delta[i] = s.delta[i] + c * ka.delta[i];
                    tmp.omega[i] = s.omega[i] + c * ka.omega[i];
                }
            };
            stage(&k1, 0.5 * h, &mut tmp);
            self.rhs(net, pm, &tmp, &mut k2, &mut pe);
            stage(&k2, 0.5 * h, &mut tmp);
            self.rhs(net, pm, &tmp, &mut k3, &mut pe);
            stage(&k3, h, &mut tmp);
            self.rhs(net, pm, &tmp, &mut k4, &mut pe);
            for i in 0..n {
                s.delta[i] += h / 6.0 * (k1.delta[i] + 2.0 * k2.delta[i] + 2.0 * k3.delta[i] + k4.delta[i]);
                s.omega[i] += h / 6.0 * (k1.omega[i] + 2.0 * k2.omega[i] + 2.0 * k3.omega[i] + k4.omega[i]);
            }
            if !observe(k + 1, &s) {
                break;
            }
        }
        Ok(())
    }

    /// Inertia-weighted mean angle.
    pub fn coi(&self, delta: &[f64]) -> f64 {
        let m = &self.config.inertia;
        delta.iter().zip(m).map(|(d, m)| d * m).sum::<f64>() / m.iter().sum::<f64>()
    }

    /// Runs from the operating point set by `xi` and records the monitored
    /// COI-relative angle.
    pub fn simulate(&self, xi: &[f64]) -> Result<SimOutput> {
        let pm = self.inject(xi)?;
        let eq = self.equilibrium(&pm)?;
        let n = self.machines();
        let init = State { delta: eq.delta, omega: vec![eq.omega; n] };
        self.simulate_from(&pm, init)
    }

    pub fn simulate_from(&self, pm: &[f64], init: State) -> Result<SimOutput> {
        let mut y = vec![f64::NAN; self.steps + 1];
        let mut unstable = false;
        let target = self.config.monitored;
        self.integrate(pm, init, |k, s| {
            let c = self.coi(&s.delta);
            let finite = s.delta.iter().chain(&s.omega).all(|v| v.is_finite());
            if !finite || s.delta.iter().any(|d| (d - c).abs() > INSTABILITY_ANGLE) {
                unstable = true;
                return false;
            }
            y[k] = s.delta[target] - c;
            true
        })?;
        Ok(SimOutput { time: self.time_grid(), y, unstable })
    }

    /// Independent runs for every row; failures stay in place as errors.
    pub fn batch_simulate(&self, samples: ArrayView2<'_, f64>) -> Vec<Result<SimOutput>> {
        (0..samples.nrows())
            .into_par_iter()
            .map(|i| self.simulate(&samples.row(i).to_vec()))
            .collect()
    }

    /// Stable key for caching results of this system.
    pub fn fingerprint(&self) -> Vec<u8> {
        serde_json::to_vec(&self.config).expect("config serializes")
    }
}

/// Successful trajectories of a batch as rows, plus the failed sample indices
/// with their reasons. Unstable runs count as failures.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub trajectories: Array2<f64>,
    pub ok: Vec<usize>,
    pub failed: Vec<(usize, String)>,
}

impl BatchOutcome {
    pub fn collect(results: Vec<Result<SimOutput>>, grid_len: usize) -> Self {
        let mut rows = Vec::new();
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(out) if !out.unstable => {
                    ok.push(i);
                    rows.extend(out.y);
                }
                Ok(_) => failed.push((i, "trajectory diverged".to_string())),
                Err(e) => failed.push((i, e.to_string())),
            }
        }
        let trajectories = Array2::from_shape_vec((ok.len(), grid_len), rows).expect("rows have grid length");
        Self { trajectories, ok, failed }
    }

    pub fn into_result(self) -> Result<Array2<f64>> {
        if self.failed.is_empty() {
            Ok(self.trajectories)
        } else {
            Err(self.partial_error())
        }
    }

    pub fn partial_error(&self) -> Error {
        Error::PartialBatch {
            failed: self.failed.len(),
            total: self.failed.len() + self.ok.len(),
            indices: self.failed.iter().take(20).map(|(i, _)| *i).collect(),
        }
    }
}

/// Batch simulation with an optional on-disk cache keyed by `(system, ξ)`.
pub fn run_batch(sys: &SwingSystem, samples: ArrayView2<'_, f64>, cache: Option<&SimCache>) -> BatchOutcome {
    let grid = sys.time_grid();
    let clamped = samples.rows().into_iter().filter(|r| r.iter().any(|v| !(0.0..=1.0).contains(v))).count();
    if clamped > 0 {
        log::warn!("{clamped} of {} inputs leave the unit cube and were clamped", samples.nrows());
    }
    let results: Vec<Result<SimOutput>> = match cache {
        None => sys.batch_simulate(samples),
        Some(c) => {
            let fp = sys.fingerprint();
            (0..samples.nrows())
                .into_par_iter()
                .map(|i| {
                    let xi = samples.row(i).to_vec();
                    let key = cache::content_key(&[&fp, &cache::f64_bytes(&xi)]);
                    if let Some(y) = c.get(&key) {
                        if y.len() == grid.len() {
                            let unstable = y.iter().any(|v| v.is_nan());
                            return Ok(SimOutput { time: grid.clone(), y, unstable });
                        }
                    }
                    let out = sys.simulate(&xi)?;
                    c.put(&key, &out.y)?;
                    Ok(out)
                })
                .collect()
        }
    };
    BatchOutcome::collect(results, grid.len())
}
