//! Conv/FC + batch-norm fusion with activation-scale folding, producing the
//! spiking model.
//!
//! After folding, every hidden layer fires at threshold 1 and its spikes stand
//! for `lambda` of the source activation. The readout layer keeps the scale of
//! the last hidden layer in `output_scale`, reapplied at decode time.

use crate::ann::{AnnModel, LinearOp};
use crate::error::{Error, Result};
use crate::neurons::NeuronKind;
use crate::scalar::{positive, Scalar};
use crate::tensor::{self, Tensor};

/// Per-channel batch-normalization statistics and affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub mu: Vec<S>,
    pub sigma2: Vec<S>,
    pub eps: S,
}

impl<S: Scalar> BnParams<S> {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![S::one(); channels],
            beta: vec![S::zero(); channels],
            mu: vec![S::zero(); channels],
            sigma2: vec![S::one(); channels],
            eps: S::zero(),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (name, v) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("mu", &self.mu),
            ("sigma2", &self.sigma2),
        ] {
            if v.len() != channels {
                return Err(Error::InvalidParameter(format!(
                    "batch norm {name} has {} entries for {channels} channels",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!("batch norm {name} is not finite")));
            }
        }
        if !self.eps.is_finite() || self.eps < S::zero() {
            return Err(Error::InvalidParameter(format!(
                "batch norm eps must be >= 0, got {}",
                self.eps
            )));
        }
        if let Some(c) = self.sigma2.iter().position(|&s| !positive(s + self.eps)) {
            return Err(Error::InvalidParameter(format!(
                "batch norm sigma2 + eps must be > 0 (channel {c})"
            )));
        }
        Ok(())
    }

    /// `gamma / sqrt(sigma2 + eps)` for channel `c`.
    fn gain(&self, c: usize) -> S {
        self.gamma[c] / (self.sigma2[c] + self.eps).sqrt()
    }

    /// Normalizes `y` whose leading dimension indexes channels.
    pub fn apply(&self, y: &Tensor<S>) -> Result<Tensor<S>> {
        let channels = y.shape()[0];
        if channels != self.channels() {
            return Err(Error::shape(
                "batch_norm",
                format!("{} parameters for {channels} channels", self.channels()),
            ));
        }
        let per_channel = y.len() / channels;
        let data = y
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / per_channel;
                self.gamma[c] * (v - self.mu[c]) / (self.sigma2[c] + self.eps).sqrt() + self.beta[c]
            })
            .collect();
        Ok(Tensor::from_parts(y.shape().to_vec(), data))
    }
}

/// Folds batch norm and the two activation scales into a conv/fc layer.
///
/// `weights` has output channels on its leading axis. Returns
/// `(W_hat, B_hat)` with
/// `W_hat = lambda_prev * g / lambda_cur * W` and
/// `B_hat = (beta + g * (b - mu)) / lambda_cur`, where `g = gamma / sqrt(sigma2 + eps)`.
/// The pre-existing bias `b` passes through the same normalization as the
/// layer output.
pub fn fuse_conv_bn<S: Scalar>(
    weights: &Tensor<S>,
    bias: &Tensor<S>,
    bn: Option<&BnParams<S>>,
    lambda_prev: S,
    lambda_cur: S,
) -> Result<(Tensor<S>, Tensor<S>)> {
    if !(lambda_prev > S::zero() && lambda_cur > S::zero()) {
        return Err(Error::InvalidParameter(format!(
            "activation scales must be > 0, got lambda_prev={lambda_prev}, lambda_cur={lambda_cur}"
        )));
    }
    let channels = weights.shape()[0];
    if bias.shape() != [channels] {
        return Err(Error::shape(
            "fuse_conv_bn",
            format!("bias shape {:?} != [{channels}]", bias.shape()),
        ));
    }
    let identity;
    let bn = match bn {
        Some(bn) => {
            bn.validate(channels)?;
            bn
        }
        None => {
            identity = BnParams::identity(channels);
            &identity
        }
    };
    let per_channel = weights.len() / channels;
    let w_hat = weights
        .data()
        .iter()
        .enumerate()
        .map(|(i, &w)| lambda_prev * bn.gain(i / per_channel) / lambda_cur * w)
        .collect();
    let b_hat = (0..channels)
        .map(|c| (bn.beta[c] + bn.gain(c) * (bias.data()[c] - bn.mu[c])) / lambda_cur)
        .collect();
    Ok((
        Tensor::from_parts(weights.shape().to_vec(), w_hat),
        Tensor::from_parts(vec![channels], b_hat),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRole {
    Hidden,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synapse {
    Conv2d { stride: usize, padding: usize },
    FullyConnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

/// One spiking layer. Average pools that preceded it in the source network
/// are composed in front of its weights, so the layer consumes the previous
/// layer's binary spikes directly.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnLayer<S> {
    pub source_layer: usize,
    pub role: LayerRole,
    pub pools: Vec<PoolSpec>,
    pub synapse: Synapse,
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    pub theta: S,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
}

impl<S: Scalar> SnnLayer<S> {
    /// Synaptic drive `W_hat * pool(input)` without the bias.
    pub fn synaptic_current(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        self.apply_weights(input, &self.weights, &Tensor::zeros(&[self.weights.shape()[0]]))
    }

    /// Full per-step current `W_hat * pool(input) + B_hat`.
    pub fn current(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        self.apply_weights(input, &self.weights, &self.bias)
    }

    fn apply_weights(&self, input: &Tensor<S>, weights: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(
                "snn_layer",
                format!("input {:?} != expected {:?}", input.shape(), self.input_shape),
            ));
        }
        let mut x = input.clone();
        for pool in &self.pools {
            x = tensor::avg_pool2d(&x, pool.window, pool.stride)?;
        }
        match self.synapse {
            Synapse::Conv2d { stride, padding } => tensor::conv2d(&x, weights, bias, stride, padding),
            Synapse::FullyConnected => tensor::fully_connected(&x, weights, bias),
        }
    }

    /// Number of distinct downstream neurons each input neuron reaches, i.e.
    /// the accumulations one incoming spike triggers.
    pub fn fan_out(&self) -> Vec<usize> {
        let ones = self.weights.map(|_| S::one());
        let zero_bias = Tensor::zeros(&[self.weights.shape()[0]]);
        let n: usize = self.input_shape.iter().product();
        let mut probe = Tensor::zeros(&self.input_shape);
        (0..n)
            .map(|i| {
                probe.data_mut()[i] = S::one();
                let out = self
                    .apply_weights(&probe, &ones, &zero_bias)
                    .expect("probe matches layer input shape");
                probe.data_mut()[i] = S::zero();
                out.count_nonzero()
            })
            .collect()
    }

    /// Neurons whose per-step current includes a nonzero bias.
    pub fn bias_neurons(&self) -> usize {
        let per_channel = self.neuron_count() / self.bias.len();
        self.bias.count_nonzero() * per_channel
    }

    pub fn neuron_count(&self) -> usize {
        self.output_shape.iter().product()
    }
}

/// Converted spiking network.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnModel<S> {
    pub input_shape: Vec<usize>,
    pub layers: Vec<SnnLayer<S>>,
    pub kind: NeuronKind,
    pub steps: usize,
    pub delay: usize,
    pub output_scale: S,
}

impl<S: Scalar> SnnModel<S> {
    pub fn validate(&self) -> Result<()> {
        check_timing(self.kind, self.steps, self.delay)?;
        if !(self.output_scale > S::zero() && self.output_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "output_scale must be > 0, got {}",
                self.output_scale
            )));
        }
        let Some(last) = self.layers.len().checked_sub(1) else {
            return Err(Error::InvalidParameter("spiking model has no layers".into()));
        };
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let expected_role = if i == last {
                LayerRole::Output
            } else {
                LayerRole::Hidden
            };
            if layer.role != expected_role {
                return Err(Error::layer(i, format!("expected role {expected_role:?}")));
            }
            if layer.role == LayerRole::Hidden && !positive(layer.theta) {
                return Err(Error::layer(i, "threshold must be > 0"));
            }
            if layer.input_shape != shape {
                return Err(Error::layer(
                    i,
                    format!("input shape {:?} != previous output {:?}", layer.input_shape, shape),
                ));
            }
            let probe = Tensor::zeros(&layer.input_shape);
            let out = layer.current(&probe).map_err(|e| Error::layer(i, e.to_string()))?;
            if out.shape() != layer.output_shape.as_slice() {
                return Err(Error::layer(
                    i,
                    format!("output shape {:?} != declared {:?}", out.shape(), layer.output_shape),
                ));
            }
            shape = layer.output_shape.clone();
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> &[SnnLayer<S>] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_layer(&self) -> &SnnLayer<S> {
        self.layers.last().expect("validated model has an output layer")
    }
}

/// Largest tdIF horizon; `2^(T-1)` must stay exact and cheap to shift.
pub const MAX_TDIF_STEPS: usize = 30;

pub(crate) fn check_timing(kind: NeuronKind, steps: usize, delay: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidParameter("time-steps T must be >= 1".into()));
    }
    if delay > steps {
        return Err(Error::InvalidParameter(format!("T_delay={delay} exceeds T={steps}")));
    }
    if kind == NeuronKind::TdIf && steps > MAX_TDIF_STEPS {
        return Err(Error::InvalidParameter(format!(
            "tdIF supports at most {MAX_TDIF_STEPS} time-steps, got {steps}"
        )));
    }
    Ok(())
}

/// Converts a quant-clip ANN into a spiking model running `steps` time-steps
/// with the given neuron kind and delay.
pub fn convert<S: Scalar>(ann: &AnnModel<S>, steps: usize, kind: NeuronKind, delay: usize) -> Result<SnnModel<S>> {
    check_timing(kind, steps, delay)?;
    let shapes = ann.layer_shapes()?;
    let last = ann.layers().len() - 1;
    let mut layers = Vec::new();
    let mut pending_pools = Vec::new();
    let mut lambda_prev = S::one();
    let mut input_shape = ann.input_shape().to_vec();
    for (i, layer) in ann.layers().iter().enumerate() {
        let (weights, bias, synapse) = match &layer.op {
            LinearOp::AvgPool2d { window, stride } => {
                pending_pools.push(PoolSpec {
                    window: *window,
                    stride: *stride,
                });
                continue;
            }
            LinearOp::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => (
                kernel,
                bias,
                Synapse::Conv2d {
                    stride: *stride,
                    padding: *padding,
                },
            ),
            LinearOp::FullyConnected { weights, bias } => (weights, bias, Synapse::FullyConnected),
        };
        let (role, lambda_cur) = if i == last {
            (LayerRole::Output, lambda_prev)
        } else {
            let q = layer
                .activation
                .ok_or_else(|| Error::layer(i, "hidden layer is missing lambda"))?;
            (LayerRole::Hidden, q.lambda())
        };
        let (w_hat, b_hat) = fuse_conv_bn(weights, bias, layer.bn.as_ref(), lambda_prev, lambda_cur)
            .map_err(|e| Error::layer(i, e.to_string()))?;
        layers.push(SnnLayer {
            source_layer: i,
            role,
            pools: std::mem::take(&mut pending_pools),
            synapse,
            weights: w_hat,
            bias: b_hat,
            theta: S::one(),
            input_shape: std::mem::replace(&mut input_shape, shapes[i].clone()),
            output_shape: shapes[i].clone(),
        });
        lambda_prev = lambda_cur;
    }
    let model = SnnModel {
        input_shape: ann.input_shape().to_vec(),
        layers,
        kind,
        steps,
        delay,
        output_scale: lambda_prev,
    };
    model.validate()?;
    Ok(model)
}
