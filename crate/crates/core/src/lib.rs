//! ANN to SNN conversion with quantized-clip activations, IF and
//! time-dependent IF (tdIF) neurons, Delay-Spike scheduling, conversion-error
//! analysis, pipeline timing and an instruction-level energy model.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod analysis;
pub mod ann;
pub mod converter;
pub mod energy;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod neurons;
pub mod pipeline;
pub mod scalar;
pub mod tensor;

pub use ann::{ann_forward, quant_clip, LinearOp};
pub use converter::{convert, fuse_conv_bn, LayerRole, PoolSpec, Synapse, MAX_TDIF_STEPS};
pub use engine::{decode_if, decode_output, decode_tdif, encode_input, run_snn, run_snn_with_spikes, weighted_rate};
pub use error::{Error, Result};
pub use neurons::{delay_spike_run, NeuronKind};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type QuantClip = ann::QuantClip<f64>;
pub type AnnLayer = ann::AnnLayer<f64>;
pub type AnnModel = ann::AnnModel<f64>;
pub type AnnTrace = ann::AnnTrace<f64>;
pub type BnParams = converter::BnParams<f64>;
pub type SnnLayer = converter::SnnLayer<f64>;
pub type SnnModel = converter::SnnModel<f64>;
pub type SpikeTrain = neurons::SpikeTrain<f64>;
pub type NeuronLayerState = neurons::NeuronLayerState<f64>;
pub type DelaySpikeOutput = neurons::DelaySpikeOutput<f64>;
pub type InferenceTrace = engine::InferenceTrace<f64>;
pub type LayerTrace = engine::LayerTrace<f64>;
pub type InputDrive = engine::InputDrive<f64>;
pub type ErrorReport = analysis::ErrorReport<f64>;
