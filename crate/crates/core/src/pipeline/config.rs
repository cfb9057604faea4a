//! Experiment configuration (JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::SyntheticSpec;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::nataf::MarginalKind;
use crate::regression::Penalty;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { spec: SyntheticSpec },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapperSpec {
    Flow {
        #[serde(default)]
        config: FlowConfig,
    },
    Copula { marginals: Vec<MarginalKind> },
}

/// The three independent random streams of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub train: u64,
    pub eval: u64,
}

impl Seeds {
    pub fn all(s: u64) -> Self {
        Self { data: s, train: s, eval: s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub kl_samples: usize,
    pub msi_samples: usize,
    pub projections: usize,
    /// Mapper draws compared against the data by sliced W2.
    pub model_samples: usize,
    /// Fresh latent draws for the sampled cross-check of the surrogate stats.
    pub surrogate_samples: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            kl_samples: 100_000,
            msi_samples: 10_000,
            projections: crate::metrics::DEFAULT_PROJECTIONS,
            model_samples: 10_000,
            surrogate_samples: 10_000,
        }
    }
}

fn default_degree() -> usize {
    4
}
fn default_penalty() -> Penalty {
    Penalty::Lasso
}
fn default_regression_samples() -> usize {
    1000
}
fn default_mc_samples() -> usize {
    5000
}
fn default_points() -> usize {
    200
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DataSource,
    pub mapper: MapperSpec,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_penalty")]
    pub penalty: Penalty,
    /// `None` selects the penalty's default.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_regression_samples")]
    pub regression_samples: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Simulator config file; the bundled benchmark when absent.
    #[serde(default)]
    pub simulator: Option<PathBuf>,
    pub seeds: Seeds,
    /// Trajectory points kept for fitting and metrics.
    #[serde(default = "default_points")]
    pub output_points: usize,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Mixture data with an NSF mapper and otherwise default settings.
    pub fn mixture(seeds: Seeds) -> Self {
        Self::with(
            "mixture",
            DataSource::Synthetic { spec: SyntheticSpec::mixture_benchmark(seeds.data) },
            MapperSpec::Flow { config: FlowConfig::default() },
            seeds,
        )
    }

    /// Copula data with an NSF mapper and otherwise default settings.
    pub fn copula(seeds: Seeds) -> Self {
        Self::with(
            "copula",
            DataSource::Synthetic { spec: SyntheticSpec::copula_benchmark(seeds.data) },
            MapperSpec::Flow { config: FlowConfig::default() },
            seeds,
        )
    }

    fn with(name: &str, dataset: DataSource, mapper: MapperSpec, seeds: Seeds) -> Self {
        Self {
            name: name.into(),
            dataset,
            mapper,
            degree: default_degree(),
            penalty: default_penalty(),
            lambda: None,
            regression_samples: default_regression_samples(),
            mc_samples: default_mc_samples(),
            simulator: None,
            seeds,
            output_points: default_points(),
            eval: EvalOptions::default(),
            out_dir: default_out(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| self.penalty.default_lambda())
    }

    pub fn with_mapper(&self, mapper: MapperSpec) -> Self {
        Self { mapper, ..self.clone() }
    }

    /// Directory holding this experiment's artifacts.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("experiment name must be a non-empty file name".into());
        }
        if let DataSource::Csv { path } = &self.dataset {
            if !path.is_file() {
                return bad(format!("dataset file {} does not exist", path.display()));
            }
        }
        if let Some(p) = &self.simulator {
            if !p.is_file() {
                return bad(format!("simulator config {} does not exist", p.display()));
            }
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return bad("lambda must be non-negative".into());
            }
        }
        if self.regression_samples == 0 {
            return bad("regression_samples must be positive".into());
        }
        if self.mc_samples < 2 {
            return bad("mc_samples must be at least 2 (the reference needs a std)".into());
        }
        if self.output_points < 2 {
            return bad("output_points must be at least 2".into());
        }
        if let MapperSpec::Flow { config } = &self.mapper {
            config.validate()?;
        }
        Ok(())
    }
}
