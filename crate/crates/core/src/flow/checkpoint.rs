//! JSON checkpoints; every parameter is stored in hex-float notation so that
//! a reloaded model reproduces `log_prob` bit for bit.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, Mlp};
use super::spline::SplineShape;
use super::{FlowConfig, FlowModel, TrainingTrace};
use crate::error::{Error, Result};
use crate::hexfloat;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Tensor {
    rows: usize,
    cols: usize,
    #[serde(with = "hexfloat::vec")]
    data: Vec<f64>,
}

impl Tensor {
    fn from(a: &Array2<f64>) -> Self {
        Self { rows: a.nrows(), cols: a.ncols(), data: a.iter().cloned().collect() }
    }

    fn into_array(self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data).map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct MlpDoc {
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    masks: Option<Vec<Tensor>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerDoc {
    AffineScalar { log_scale: Tensor, shift: Tensor, trainable: bool },
    Permutation { perm: Vec<usize> },
    AdditiveCoupling { split: usize, net: MlpDoc },
    RqSplineCoupling {
        split: usize,
        bins: usize,
        #[serde(with = "hexfloat::scalar")]
        bound: f64,
        net: MlpDoc,
    },
    AffineAutoregressive { net: MlpDoc },
}

#[derive(Serialize, Deserialize)]
struct FlowDoc {
    format_version: u32,
    dim: usize,
    config: FlowConfig,
    layers: Vec<LayerDoc>,
    trace: TrainingTrace,
}

fn mlp_doc(m: &Mlp) -> MlpDoc {
    MlpDoc {
        weights: m.weights.iter().map(Tensor::from).collect(),
        biases: m.biases.iter().map(Tensor::from).collect(),
        masks: m.masks.as_ref().map(|ms| ms.iter().map(Tensor::from).collect()),
    }
}

fn mlp_from(d: MlpDoc) -> Result<Mlp> {
    let arrays = |v: Vec<Tensor>| v.into_iter().map(Tensor::into_array).collect::<Result<Vec<_>>>();
    let weights = arrays(d.weights)?;
    let biases = arrays(d.biases)?;
    if weights.len() != biases.len() {
        return Err(Error::InvalidInput("checkpoint network layers disagree".into()));
    }
    let masks = d.masks.map(arrays).transpose()?;
    Ok(Mlp { weights, biases, masks })
}

impl FlowModel {
    pub fn to_json(&self) -> Result<String> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::AffineScalar { log_scale, shift, trainable } => LayerDoc::AffineScalar {
                    log_scale: Tensor::from(log_scale),
                    shift: Tensor::from(shift),
                    trainable: *trainable,
                },
                Layer::Permutation { perm } => LayerDoc::Permutation { perm: perm.clone() },
                Layer::AdditiveCoupling { split, net } => LayerDoc::AdditiveCoupling { split: *split, net: mlp_doc(net) },
                Layer::RqSplineCoupling { split, shape, net } => LayerDoc::RqSplineCoupling {
                    split: *split,
                    bins: shape.bins,
                    bound: shape.bound,
                    net: mlp_doc(net),
                },
                Layer::AffineAutoregressive { net } => LayerDoc::AffineAutoregressive { net: mlp_doc(net) },
            })
            .collect();
        let doc = FlowDoc {
            format_version: FORMAT_VERSION,
            dim: self.dim,
            config: self.config.clone(),
            layers,
            trace: self.trace.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FlowDoc = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!("unsupported checkpoint version {}", doc.format_version)));
        }
        let layers = doc
            .layers
            .into_iter()
            .map(|l| {
                Ok(match l {
                    LayerDoc::AffineScalar { log_scale, shift, trainable } => Layer::AffineScalar {
                        log_scale: log_scale.into_array()?,
                        shift: shift.into_array()?,
                        trainable,
                    },
                    LayerDoc::Permutation { perm } => Layer::Permutation { perm },
                    LayerDoc::AdditiveCoupling { split, net } => Layer::AdditiveCoupling { split, net: mlp_from(net)? },
                    LayerDoc::RqSplineCoupling { split, bins, bound, net } => Layer::RqSplineCoupling {
                        split,
                        shape: SplineShape { bins, bound },
                        net: mlp_from(net)?,
                    },
                    LayerDoc::AffineAutoregressive { net } => Layer::AffineAutoregressive { net: mlp_from(net)? },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut model = FlowModel::from_layers(doc.dim, doc.config, layers);
        model.set_trace(doc.trace);
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::atomic_write(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
