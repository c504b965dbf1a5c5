//! Layer-by-layer spiking inference over a converted model.

use crate::converter::{LayerRole, SnnLayer, SnnModel};
use crate::error::{Error, Result};
use crate::neurons::{delay_spike_run, NeuronKind, SpikeTrain};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// What drives the first layer.
#[derive(Debug, Clone, PartialEq)]
pub enum InputDrive<S> {
    /// Analog input injected as the same current at every step.
    Analog(Tensor<S>),
    /// Externally supplied spike train.
    Spikes(SpikeTrain<S>),
}

/// Spikes and end state of one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace<S> {
    pub source_layer: usize,
    pub theta: S,
    pub train: SpikeTrain<S>,
    pub residual: Tensor<S>,
    pub drive: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrace<S> {
    pub kind: NeuronKind,
    pub steps: usize,
    pub delay: usize,
    pub input: InputDrive<S>,
    pub layers: Vec<LayerTrace<S>>,
    /// `V_o[t]` for `t = 1..=T`.
    pub output_potentials: Vec<Tensor<S>>,
    pub decoded: Tensor<S>,
}

impl<S: Scalar> InferenceTrace<S> {
    /// Weighted firing rate of every hidden layer.
    pub fn rates(&self) -> Vec<Tensor<S>> {
        self.layers.iter().map(|l| weighted_rate(&l.train, self.kind)).collect()
    }
}

/// Constant-current coding: the raw input repeated for each of `steps` steps.
/// The receiving layer applies the tdIF weights itself.
pub fn encode_input<S: Scalar>(input: &Tensor<S>, steps: usize, _kind: NeuronKind) -> Vec<Tensor<S>> {
    vec![input.clone(); steps]
}

/// `sum_t S[t] / T` for IF, `sum_t 2^(T-t) S[t] / (2^T - 1)` for tdIF.
pub fn weighted_rate<S: Scalar>(train: &SpikeTrain<S>, kind: NeuronKind) -> Tensor<S> {
    let steps = train.steps();
    let mut acc = Tensor::zeros(train.neuron_shape());
    for (i, frame) in train.frames().iter().enumerate() {
        acc.add_assign_scaled(frame, kind.coefficient(i + 1, steps))
            .expect("frames share the train's shape");
    }
    let norm = kind.rate_normalizer::<S>(steps);
    acc.map(|v| v / norm)
}

fn decode<S: Scalar>(potentials: &[Tensor<S>], output_scale: S, kind: NeuronKind) -> Result<Tensor<S>> {
    let steps = potentials.len();
    let Some(first) = potentials.first() else {
        return Err(Error::InvalidParameter("decode needs at least one time-step".into()));
    };
    let mut acc = Tensor::zeros(first.shape());
    for (i, v) in potentials.iter().enumerate() {
        acc.add_assign_scaled(v, kind.coefficient(i + 1, steps))?;
    }
    let norm = kind.rate_normalizer::<S>(steps);
    Ok(acc.map(|v| v / norm * output_scale))
}

/// Mean output potential over `T` steps, in source-ANN units.
pub fn decode_if<S: Scalar>(potentials: &[Tensor<S>], output_scale: S) -> Result<Tensor<S>> {
    decode(potentials, output_scale, NeuronKind::If)
}

/// Output potentials weighted by `2^(T-t)` and normalized by `2^T - 1`, in
/// source-ANN units.
pub fn decode_tdif<S: Scalar>(potentials: &[Tensor<S>], output_scale: S) -> Result<Tensor<S>> {
    decode(potentials, output_scale, NeuronKind::TdIf)
}

pub fn decode_output<S: Scalar>(potentials: &[Tensor<S>], output_scale: S, kind: NeuronKind) -> Result<Tensor<S>> {
    decode(potentials, output_scale, kind)
}

/// Runs the model on an analog input.
pub fn run_snn<S: Scalar>(model: &SnnModel<S>, input: &Tensor<S>) -> Result<InferenceTrace<S>> {
    model.validate()?;
    if input.shape() != model.input_shape.as_slice() {
        return Err(Error::shape(
            "run_snn",
            format!("input {:?} != model input {:?}", input.shape(), model.input_shape),
        ));
    }
    let first = &model.layers[0];
    // Constant input: compute the current once and repeat it.
    let current = first
        .current(input)
        .map_err(|e| Error::layer(first.source_layer, e.to_string()))?;
    let currents = encode_input(&current, model.steps, model.kind);
    run_from_currents(model, InputDrive::Analog(input.clone()), currents)
}

/// Runs the model with a spike train driving the first layer in place of
/// the analog input.
pub fn run_snn_with_spikes<S: Scalar>(model: &SnnModel<S>, input: &SpikeTrain<S>) -> Result<InferenceTrace<S>> {
    model.validate()?;
    if input.steps() != model.steps {
        return Err(Error::shape(
            "run_snn_with_spikes",
            format!("input train has {} steps, model runs {}", input.steps(), model.steps),
        ));
    }
    let currents = layer_currents(&model.layers[0], input)?;
    run_from_currents(model, InputDrive::Spikes(input.clone()), currents)
}

fn layer_currents<S: Scalar>(layer: &SnnLayer<S>, input: &SpikeTrain<S>) -> Result<Vec<Tensor<S>>> {
    input
        .frames()
        .iter()
        .map(|frame| {
            layer
                .current(frame)
                .map_err(|e| Error::layer(layer.source_layer, e.to_string()))
        })
        .collect()
}

fn run_from_currents<S: Scalar>(
    model: &SnnModel<S>,
    input: InputDrive<S>,
    mut currents: Vec<Tensor<S>>,
) -> Result<InferenceTrace<S>> {
    let mut layers = Vec::with_capacity(model.layers.len() - 1);
    for (i, layer) in model.layers.iter().enumerate() {
        if layer.role == LayerRole::Output {
            let decoded = decode(&currents, model.output_scale, model.kind)?;
            return Ok(InferenceTrace {
                kind: model.kind,
                steps: model.steps,
                delay: model.delay,
                input,
                layers,
                output_potentials: currents,
                decoded,
            });
        }
        let out = delay_spike_run(model.kind, layer.theta, model.steps, model.delay, &currents)
            .map_err(|e| Error::layer(layer.source_layer, e.to_string()))?;
        if !out.train.frames().iter().all(Tensor::is_binary) {
            return Err(Error::NonBinaryPayload {
                layer: layer.source_layer,
            });
        }
        currents = layer_currents(&model.layers[i + 1], &out.train)?;
        layers.push(LayerTrace {
            source_layer: layer.source_layer,
            theta: layer.theta,
            train: out.train,
            residual: out.residual,
            drive: out.drive,
        });
    }
    unreachable!("validated models end in an output layer")
}
