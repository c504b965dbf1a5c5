//! JSON files for ANN models, converted spiking models, tensors and spike
//! trains.
//!
//! Files are read leniently (JSON5, so `NaN` and `Infinity` literals parse and
//! are then rejected with the offending layer named) and written as
//! canonical pretty-printed JSON, so `save(load(f))` reproduces a canonical
//! file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ann::{AnnLayer, AnnModel, LinearOp, QuantClip};
use crate::converter::{BnParams, LayerRole, PoolSpec, SnnLayer, SnnModel, Synapse};
use crate::error::{Error, Result};
use crate::neurons::{NeuronKind, SpikeTrain};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

/// Arbitrarily nested numeric array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NestedArray {
    Scalar(f64),
    List(Vec<NestedArray>),
}

impl NestedArray {
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Self {
        fn build<S: Scalar>(shape: &[usize], data: &[S]) -> NestedArray {
            match shape.split_first() {
                None => NestedArray::Scalar(data[0].to_f64_lossy()),
                Some((&n, rest)) => {
                    let stride = data.len() / n;
                    NestedArray::List(
                        (0..n)
                            .map(|i| build(rest, &data[i * stride..(i + 1) * stride]))
                            .collect(),
                    )
                }
            }
        }
        build(t.shape(), t.data())
    }

    /// Flattens a rectangular array of at least one dimension.
    pub fn to_tensor<S: Scalar>(&self) -> Result<Tensor<S>> {
        let mut shape = Vec::new();
        let mut probe = self;
        while let NestedArray::List(items) = probe {
            shape.push(items.len());
            match items.first() {
                Some(first) => probe = first,
                None => break,
            }
        }
        if shape.is_empty() {
            return Err(Error::Parse("expected an array, found a bare number".into()));
        }
        let mut data = Vec::with_capacity(shape.iter().product());
        self.flatten(&shape, &mut data)?;
        Tensor::new(shape, data.into_iter().map(S::lit).collect())
    }

    fn flatten(&self, shape: &[usize], out: &mut Vec<f64>) -> Result<()> {
        match (self, shape.split_first()) {
            (NestedArray::Scalar(v), None) => {
                out.push(*v);
                Ok(())
            }
            (NestedArray::List(items), Some((&n, rest))) if items.len() == n => {
                items.iter().try_for_each(|item| item.flatten(rest, out))
            }
            _ => Err(Error::Parse(format!("ragged array: expected dimensions {shape:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnRecord {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub eps: f64,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerRecord {
    #[serde(rename = "conv2d")]
    Conv2d {
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        weights: NestedArray,
        bias: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bn: Option<BnRecord>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
        #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
        levels: Option<usize>,
    },
    #[serde(rename = "fc")]
    Fc {
        weights: NestedArray,
        bias: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bn: Option<BnRecord>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
        #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
        levels: Option<usize>,
    },
    #[serde(rename = "avgpool")]
    AvgPool { window: usize, stride: usize },
}

/// On-disk form of an ANN model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerRecord>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

fn finite_vec<S: Scalar>(values: &[f64], what: &str) -> Result<Vec<S>> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidParameter(format!(
            "{what}: non-finite value at index {i}"
        ))),
        None => Ok(values.iter().map(|&v| S::lit(v)).collect()),
    }
}

fn nested_tensor<S: Scalar>(values: &NestedArray, what: &str) -> Result<Tensor<S>> {
    values.to_tensor().map_err(|e| match e {
        Error::NonFinite { index } => Error::InvalidParameter(format!("{what}: non-finite value at index {index}")),
        other => Error::InvalidParameter(format!("{what}: {other}")),
    })
}

fn to_f64<S: Scalar>(values: &[S]) -> Vec<f64> {
    values.iter().map(|v| v.to_f64_lossy()).collect()
}

impl BnRecord {
    fn to_params<S: Scalar>(&self) -> Result<BnParams<S>> {
        if !self.eps.is_finite() {
            return Err(Error::InvalidParameter("bn.eps: non-finite value".into()));
        }
        Ok(BnParams {
            gamma: finite_vec(&self.gamma, "bn.gamma")?,
            beta: finite_vec(&self.beta, "bn.beta")?,
            mu: finite_vec(&self.mu, "bn.mu")?,
            sigma2: finite_vec(&self.sigma2, "bn.sigma2")?,
            eps: S::lit(self.eps),
        })
    }

    fn from_params<S: Scalar>(bn: &BnParams<S>) -> Self {
        Self {
            gamma: to_f64(&bn.gamma),
            beta: to_f64(&bn.beta),
            mu: to_f64(&bn.mu),
            sigma2: to_f64(&bn.sigma2),
            eps: bn.eps.to_f64_lossy(),
        }
    }
}

impl LayerRecord {
    fn to_layer<S: Scalar>(&self) -> Result<AnnLayer<S>> {
        let (op, bn, lambda, levels) = match self {
            LayerRecord::AvgPool { window, stride } => return Ok(AnnLayer::avg_pool(*window, *stride)),
            LayerRecord::Conv2d {
                stride,
                padding,
                weights,
                bias,
                bn,
                lambda,
                levels,
            } => (
                LinearOp::Conv2d {
                    kernel: nested_tensor(weights, "weights")?,
                    bias: Tensor::vector(finite_vec(bias, "bias")?)?,
                    stride: *stride,
                    padding: *padding,
                },
                bn,
                lambda,
                levels,
            ),
            LayerRecord::Fc {
                weights,
                bias,
                bn,
                lambda,
                levels,
            } => (
                LinearOp::FullyConnected {
                    weights: nested_tensor(weights, "weights")?,
                    bias: Tensor::vector(finite_vec(bias, "bias")?)?,
                },
                bn,
                lambda,
                levels,
            ),
        };
        let activation = match (lambda, levels) {
            (Some(lambda), Some(levels)) => {
                if !lambda.is_finite() {
                    return Err(Error::InvalidParameter("lambda: non-finite value".into()));
                }
                Some(QuantClip::new(S::lit(*lambda), *levels)?)
            }
            (None, None) => None,
            _ => return Err(Error::InvalidParameter("lambda and L must be given together".into())),
        };
        Ok(AnnLayer {
            op,
            bn: bn.as_ref().map(BnRecord::to_params).transpose()?,
            activation,
        })
    }

    fn from_layer<S: Scalar>(layer: &AnnLayer<S>) -> Self {
        let bn = layer.bn.as_ref().map(BnRecord::from_params);
        let lambda = layer.activation.map(|q| q.lambda().to_f64_lossy());
        let levels = layer.activation.map(|q| q.levels());
        match &layer.op {
            LinearOp::AvgPool2d { window, stride } => LayerRecord::AvgPool {
                window: *window,
                stride: *stride,
            },
            LinearOp::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => LayerRecord::Conv2d {
                stride: *stride,
                padding: *padding,
                weights: NestedArray::from_tensor(kernel),
                bias: to_f64(bias.data()),
                bn,
                lambda,
                levels,
            },
            LinearOp::FullyConnected { weights, bias } => LayerRecord::Fc {
                weights: NestedArray::from_tensor(weights),
                bias: to_f64(bias.data()),
                bn,
                lambda,
                levels,
            },
        }
    }
}

impl ModelFile {
    pub fn from_model<S: Scalar>(model: &AnnModel<S>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            input_shape: model.input_shape().to_vec(),
            layers: model.layers().iter().map(LayerRecord::from_layer).collect(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_model<S: Scalar>(&self) -> Result<AnnModel<S>> {
        check_version(self.format_version)?;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.to_layer().map_err(|e| Error::layer(i, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        AnnModel::new(self.input_shape.clone(), layers)
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported format_version {v}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleRecord {
    Hidden,
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnLayerRecord {
    /// `conv2d` or `fc`.
    pub kind: String,
    pub role: RoleRecord,
    pub source_layer: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pools: Vec<PoolRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    pub weights: NestedArray,
    pub bias: Vec<f64>,
    pub theta: f64,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub window: usize,
    pub stride: usize,
}

/// On-disk form of a converted spiking model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnFile {
    pub format_version: u32,
    pub neuron: NeuronKind,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "T_delay")]
    pub delay: usize,
    pub output_scale: f64,
    pub input_shape: Vec<usize>,
    pub layers: Vec<SnnLayerRecord>,
}

impl SnnFile {
    pub fn from_model<S: Scalar>(model: &SnnModel<S>) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| {
                let (kind, stride, padding) = match l.synapse {
                    Synapse::Conv2d { stride, padding } => ("conv2d", Some(stride), Some(padding)),
                    Synapse::FullyConnected => ("fc", None, None),
                };
                SnnLayerRecord {
                    kind: kind.into(),
                    role: match l.role {
                        LayerRole::Hidden => RoleRecord::Hidden,
                        LayerRole::Output => RoleRecord::Output,
                    },
                    source_layer: l.source_layer,
                    pools: l
                        .pools
                        .iter()
                        .map(|p| PoolRecord {
                            window: p.window,
                            stride: p.stride,
                        })
                        .collect(),
                    stride,
                    padding,
                    weights: NestedArray::from_tensor(&l.weights),
                    bias: to_f64(l.bias.data()),
                    theta: l.theta.to_f64_lossy(),
                    input_shape: l.input_shape.clone(),
                    output_shape: l.output_shape.clone(),
                }
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            neuron: model.kind,
            steps: model.steps,
            delay: model.delay,
            output_scale: model.output_scale.to_f64_lossy(),
            input_shape: model.input_shape.clone(),
            layers,
        }
    }

    pub fn to_model<S: Scalar>(&self) -> Result<SnnModel<S>> {
        check_version(self.format_version)?;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let synapse = match (r.kind.as_str(), r.stride, r.padding) {
                    ("conv2d", stride, padding) => Synapse::Conv2d {
                        stride: stride.unwrap_or(1),
                        padding: padding.unwrap_or(0),
                    },
                    ("fc", None, None) => Synapse::FullyConnected,
                    ("fc", _, _) => return Err(Error::layer(i, "fc layers take no stride or padding")),
                    (other, _, _) => return Err(Error::layer(i, format!("unknown layer kind {other:?}"))),
                };
                if !r.theta.is_finite() {
                    return Err(Error::layer(i, "theta: non-finite value"));
                }
                Ok(SnnLayer {
                    source_layer: r.source_layer,
                    role: match r.role {
                        RoleRecord::Hidden => LayerRole::Hidden,
                        RoleRecord::Output => LayerRole::Output,
                    },
                    pools: r
                        .pools
                        .iter()
                        .map(|p| PoolSpec {
                            window: p.window,
                            stride: p.stride,
                        })
                        .collect(),
                    synapse,
                    weights: nested_tensor(&r.weights, "weights").map_err(|e| Error::layer(i, e.to_string()))?,
                    bias: Tensor::vector(finite_vec(&r.bias, "bias").map_err(|e| Error::layer(i, e.to_string()))?)?,
                    theta: S::lit(r.theta),
                    input_shape: r.input_shape.clone(),
                    output_shape: r.output_shape.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = SnnModel {
            input_shape: self.input_shape.clone(),
            layers,
            kind: self.neuron,
            steps: self.steps,
            delay: self.delay,
            output_scale: S::lit(self.output_scale),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Parses JSON5 text, reporting the line and column of syntax and field
/// errors.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    json5::from_str(text).map_err(|e| {
        let json5::Error::Message { msg, location } = e;
        // Syntax errors arrive as a multi-line excerpt; keep the diagnosis.
        let msg = match msg.lines().rev().find(|l| l.trim_start().starts_with('=')) {
            Some(line) => line.trim_start().trim_start_matches('=').trim().to_string(),
            None => msg,
        };
        match location {
            Some(l) => Error::Parse(format!("line {}, column {}: {msg}", l.line, l.column)),
            None => Error::Parse(msg),
        }
    })
}

/// Canonical pretty JSON with a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn read<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_canonical_json(value)?)?;
    Ok(())
}

pub fn read_model_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    read(path.as_ref())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AnnModel<f64>> {
    read_model_file(path)?.to_model()
}

pub fn save_model(path: impl AsRef<Path>, model: &AnnModel<f64>) -> Result<()> {
    write(path.as_ref(), &ModelFile::from_model(model))
}

pub fn load_snn(path: impl AsRef<Path>) -> Result<SnnModel<f64>> {
    read::<SnnFile>(path.as_ref())?.to_model()
}

pub fn save_snn(path: impl AsRef<Path>, model: &SnnModel<f64>) -> Result<()> {
    write(path.as_ref(), &SnnFile::from_model(model))
}

/// Reads a tensor stored as a nested JSON array.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let nested: NestedArray = read(path.as_ref())?;
    nested
        .to_tensor()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.as_ref().display())))
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &Tensor<f64>) -> Result<()> {
    write(path.as_ref(), &NestedArray::from_tensor(tensor))
}

/// Splits a `[T, ...]` tensor into a spike train of `T` binary frames.
pub fn spike_train_from_tensor<S: Scalar>(t: &Tensor<S>) -> Result<SpikeTrain<S>> {
    let (&steps, neuron_shape) = t
        .shape()
        .split_first()
        .ok_or_else(|| Error::Parse("spike train needs a leading time axis".into()))?;
    if neuron_shape.is_empty() {
        return Err(Error::Parse(
            "spike train frames must have at least one dimension".into(),
        ));
    }
    let per = t.len() / steps;
    let frames = (0..steps)
        .map(|i| Tensor::new(neuron_shape.to_vec(), t.data()[i * per..(i + 1) * per].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    SpikeTrain::new(frames)
}

pub fn spike_train_to_tensor<S: Scalar>(train: &SpikeTrain<S>) -> Tensor<S> {
    let mut shape = vec![train.steps()];
    shape.extend_from_slice(train.neuron_shape());
    let data = train.frames().iter().flat_map(|f| f.data().iter().copied()).collect();
    Tensor::new(shape, data).expect("frames share one shape")
}

pub fn load_spike_train(path: impl AsRef<Path>) -> Result<SpikeTrain<f64>> {
    spike_train_from_tensor(&load_tensor(path)?)
}

pub fn save_spike_train(path: impl AsRef<Path>, train: &SpikeTrain<f64>) -> Result<()> {
    save_tensor(path, &spike_train_to_tensor(train))
}
