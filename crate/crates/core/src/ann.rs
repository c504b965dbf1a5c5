//! Reference forward pass of the source ANN with quant-clip activations.
//!
//! Activations computed here are the oracle every spiking run is checked
//! against.

use crate::converter::BnParams;
use crate::error::{Error, Result};
use crate::scalar::{snapped_floor, Scalar};
use crate::tensor::{self, Tensor};

/// Parameters of one quant-clip activation: the activation ceiling `lambda`
/// and the number of quantization levels `levels` (the ANN-side time-step
/// count).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantClip<S> {
    lambda: S,
    levels: usize,
}

impl<S: Scalar> QuantClip<S> {
    pub fn new(lambda: S, levels: usize) -> Result<Self> {
        if !(lambda.is_finite() && lambda > S::zero()) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
        }
        if levels == 0 {
            return Err(Error::InvalidParameter("quantization levels must be >= 1".into()));
        }
        Ok(Self { lambda, levels })
    }

    pub fn lambda(&self) -> S {
        self.lambda
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Lattice index `k` in `0..=levels` such that the activation is
    /// `lambda * k / levels`.
    pub fn level(&self, x: S) -> usize {
        let scaled = snapped_floor(x * S::from_count(self.levels) / self.lambda);
        if scaled <= S::zero() {
            0
        } else {
            scaled.min(S::from_count(self.levels)).to_usize().unwrap_or(self.levels)
        }
    }

    pub fn apply(&self, x: S) -> S {
        self.lambda * S::from_count(self.level(x)) / S::from_count(self.levels)
    }
}

/// `lambda * clip(floor(x * levels / lambda) / levels, 0, 1)`.
pub fn quant_clip<S: Scalar>(x: S, lambda: S, levels: usize) -> Result<S> {
    if !x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "quant_clip input must be finite, got {x}"
        )));
    }
    Ok(QuantClip::new(lambda, levels)?.apply(x))
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinearOp<S> {
    Conv2d {
        kernel: Tensor<S>,
        bias: Tensor<S>,
        stride: usize,
        padding: usize,
    },
    FullyConnected {
        weights: Tensor<S>,
        bias: Tensor<S>,
    },
    AvgPool2d {
        window: usize,
        stride: usize,
    },
}

impl<S: Scalar> LinearOp<S> {
    pub fn name(&self) -> &'static str {
        match self {
            LinearOp::Conv2d { .. } => "conv2d",
            LinearOp::FullyConnected { .. } => "fc",
            LinearOp::AvgPool2d { .. } => "avgpool",
        }
    }

    pub fn is_pool(&self) -> bool {
        matches!(self, LinearOp::AvgPool2d { .. })
    }

    /// Number of output channels (conv) or output neurons (fc).
    pub fn out_channels(&self) -> Option<usize> {
        match self {
            LinearOp::Conv2d { kernel, .. } => Some(kernel.shape()[0]),
            LinearOp::FullyConnected { weights, .. } => Some(weights.shape()[0]),
            LinearOp::AvgPool2d { .. } => None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LinearOp::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => tensor::conv2d_output_shape(input, kernel.shape(), *stride, *padding),
            LinearOp::FullyConnected { weights, .. } => {
                let (m, n) = tensor::fc_dims(weights.shape())?;
                let len: usize = input.iter().product();
                if len != n {
                    return Err(Error::shape(
                        "fully_connected",
                        format!("input of {len} values != weight columns {n}"),
                    ));
                }
                Ok(vec![m])
            }
            LinearOp::AvgPool2d { window, stride } => tensor::avg_pool2d_output_shape(input, *window, *stride),
        }
    }

    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            LinearOp::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => tensor::conv2d(input, kernel, bias, *stride, *padding),
            LinearOp::FullyConnected { weights, bias } => tensor::fully_connected(input, weights, bias),
            LinearOp::AvgPool2d { window, stride } => tensor::avg_pool2d(input, *window, *stride),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnLayer<S> {
    pub op: LinearOp<S>,
    pub bn: Option<BnParams<S>>,
    pub activation: Option<QuantClip<S>>,
}

impl<S: Scalar> AnnLayer<S> {
    pub fn conv(kernel: Tensor<S>, bias: Tensor<S>, stride: usize, padding: usize) -> Self {
        Self::from_op(LinearOp::Conv2d {
            kernel,
            bias,
            stride,
            padding,
        })
    }

    pub fn fc(weights: Tensor<S>, bias: Tensor<S>) -> Self {
        Self::from_op(LinearOp::FullyConnected { weights, bias })
    }

    pub fn avg_pool(window: usize, stride: usize) -> Self {
        Self::from_op(LinearOp::AvgPool2d { window, stride })
    }

    fn from_op(op: LinearOp<S>) -> Self {
        Self {
            op,
            bn: None,
            activation: None,
        }
    }

    pub fn with_bn(mut self, bn: BnParams<S>) -> Self {
        self.bn = Some(bn);
        self
    }

    pub fn with_activation(mut self, activation: QuantClip<S>) -> Self {
        self.activation = Some(activation);
        self
    }

    /// Linear op followed by batch normalization, before any activation.
    pub fn pre_activation(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let y = self.op.forward(input)?;
        match &self.bn {
            Some(bn) => bn.apply(&y),
            None => Ok(y),
        }
    }
}

/// Source network: hidden conv/fc layers with quant-clip activations,
/// optional average-pool layers, and a final linear readout with no
/// activation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnModel<S> {
    input_shape: Vec<usize>,
    layers: Vec<AnnLayer<S>>,
}

impl<S: Scalar> AnnModel<S> {
    pub fn new(input_shape: Vec<usize>, layers: Vec<AnnLayer<S>>) -> Result<Self> {
        let model = Self { input_shape, layers };
        model.validate()?;
        Ok(model)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[AnnLayer<S>] {
        &self.layers
    }

    /// Shape of every layer's output, starting from the model input.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            current = layer
                .op
                .output_shape(&current)
                .map_err(|e| Error::layer(i, e.to_string()))?;
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "input shape must have positive dimensions, got {:?}",
                self.input_shape
            )));
        }
        let last = match self.layers.len() {
            0 => return Err(Error::InvalidParameter("model has no layers".into())),
            n => n - 1,
        };
        for (i, layer) in self.layers.iter().enumerate() {
            match (&layer.op, i == last) {
                (LinearOp::AvgPool2d { .. }, true) => {
                    return Err(Error::layer(i, "output layer must be conv2d or fc, not avgpool"))
                }
                (LinearOp::AvgPool2d { .. }, false) => {
                    if layer.bn.is_some() || layer.activation.is_some() {
                        return Err(Error::layer(i, "avgpool carries no batch norm or activation"));
                    }
                }
                (_, true) => {
                    if layer.activation.is_some() {
                        return Err(Error::layer(i, "output layer must not carry lambda/L"));
                    }
                }
                (_, false) => {
                    if layer.activation.is_none() {
                        return Err(Error::layer(i, "hidden layer is missing lambda/L"));
                    }
                }
            }
            if let Some(bn) = &layer.bn {
                let channels = layer.op.out_channels().unwrap_or(0);
                bn.validate(channels).map_err(|e| Error::layer(i, e.to_string()))?;
            }
            if let LinearOp::Conv2d { kernel, bias, .. } | LinearOp::FullyConnected { weights: kernel, bias } =
                &layer.op
            {
                if bias.shape() != [kernel.shape()[0]] {
                    return Err(Error::layer(
                        i,
                        format!("bias shape {:?} != [{}]", bias.shape(), kernel.shape()[0]),
                    ));
                }
            }
        }
        self.layer_shapes()?;
        Ok(())
    }
}

/// Per-layer outputs of [`ann_forward`]: quantized activations for hidden
/// layers, pooled maps for pool layers, and the raw pre-activation output of
/// the final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnTrace<S> {
    pub layers: Vec<AnnLayerOutput<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnLayerOutput<S> {
    pub values: Tensor<S>,
    pub activation: Option<QuantClip<S>>,
}

impl<S: Scalar> AnnTrace<S> {
    /// `(layer index, activation params, activation)` for each hidden layer.
    pub fn hidden(&self) -> impl Iterator<Item = (usize, QuantClip<S>, &Tensor<S>)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.activation.map(|q| (i, q, &l.values)))
    }

    pub fn output(&self) -> &Tensor<S> {
        &self.layers.last().expect("trace has at least one layer").values
    }
}

pub fn ann_forward<S: Scalar>(model: &AnnModel<S>, input: &Tensor<S>) -> Result<AnnTrace<S>> {
    if input.shape() != model.input_shape() {
        return Err(Error::shape(
            "ann_forward",
            format!("input {:?} != model input {:?}", input.shape(), model.input_shape()),
        ));
    }
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut current = input.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        let x = layer
            .pre_activation(&current)
            .map_err(|e| Error::layer(i, e.to_string()))?;
        current = match &layer.activation {
            Some(q) => x.map(|v| q.apply(v)),
            None => x,
        };
        layers.push(AnnLayerOutput {
            values: current.clone(),
            activation: layer.activation,
        });
    }
    Ok(AnnTrace { layers })
}
