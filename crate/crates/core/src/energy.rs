//! Instruction-level energy accounting for IF and tdIF neurons.
//!
//! Prices are kept in integer tenths of a picojoule so that sums and
//! differences are exact.

use std::fmt;
use std::ops::{Add, Mul};

use serde::{Serialize, Serializer};

use crate::converter::SnnModel;
use crate::engine::{InferenceTrace, InputDrive};
use crate::error::{Error, Result};
use crate::neurons::NeuronKind;
use crate::scalar::Scalar;

/// An amount of energy in tenths of a picojoule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Energy(pub u64);

impl Energy {
    pub fn from_pj_tenths(tenths: u64) -> Self {
        Self(tenths)
    }

    pub fn pj(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl Add for Energy {
    type Output = Energy;

    fn add(self, rhs: Energy) -> Energy {
        Energy(self.0 + rhs.0)
    }
}

impl Mul<u64> for Energy {
    type Output = Energy;

    fn mul(self, rhs: u64) -> Energy {
        Energy(self.0 * rhs)
    }
}

impl fmt::Display for Energy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{} pJ", self.0 / 10, self.0 % 10)
    }
}

impl Serialize for Energy {
    fn serialize<Ser: Serializer>(&self, serializer: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        serializer.serialize_f64(self.pj())
    }
}

/// Per-instruction prices in tenths of a picojoule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InstructionCostTable {
    /// ADD, SUB and MUL.
    pub add_sub: u64,
    /// GTH.
    pub compare: u64,
    /// SHL.
    pub shift: u64,
    /// EVC, always paid.
    pub evc_base: u64,
    /// EVC surcharge when an event is generated.
    pub evc_event: u64,
    pub mld: u64,
    pub mst: u64,
}

impl Default for InstructionCostTable {
    fn default() -> Self {
        Self {
            add_sub: 14,
            compare: 12,
            shift: 12,
            evc_base: 5,
            evc_event: 11,
            mld: 37,
            mst: 39,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronPhase {
    Accumulate,
    Fire,
}

/// How silent fire steps are priced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FireAccounting {
    /// Silent steps skip the event surcharge.
    #[default]
    Split,
    /// Every fire step is priced as if it generated an event.
    AllEvents,
}

impl InstructionCostTable {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.add_sub,
            self.compare,
            self.shift,
            self.evc_base,
            self.evc_event,
            self.mld,
            self.mst,
        ];
        if all.contains(&0) {
            return Err(Error::InvalidParameter("instruction costs must be > 0".into()));
        }
        Ok(())
    }

    /// Accumulate: MLD, MLD, ADD, MST (plus SHL for tdIF).
    /// Fire: MLD, GTH, MUL, SUB, MST, EVC (plus the event surcharge).
    pub fn phase_cost(&self, kind: NeuronKind, phase: NeuronPhase, event_generated: bool) -> Energy {
        let tenths = match phase {
            NeuronPhase::Accumulate => {
                let base = 2 * self.mld + self.add_sub + self.mst;
                match kind {
                    NeuronKind::If => base,
                    NeuronKind::TdIf => base + self.shift,
                }
            }
            NeuronPhase::Fire => {
                let base = self.mld + self.compare + 2 * self.add_sub + self.mst + self.evc_base;
                if event_generated {
                    base + self.evc_event
                } else {
                    base
                }
            }
        };
        Energy(tenths)
    }
}

/// [`InstructionCostTable::phase_cost`] with the default prices.
pub fn phase_cost(kind: NeuronKind, phase: NeuronPhase, event_generated: bool) -> Energy {
    InstructionCostTable::default().phase_cost(kind, phase, event_generated)
}

/// Operation counts of one inference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Activity {
    /// Accumulations triggered by a nonzero input, one per reached neuron.
    pub synaptic_events: u64,
    /// Per-step bias accumulations of neurons with a nonzero bias.
    pub bias_accumulations: u64,
    pub fire_steps_spiking: u64,
    pub fire_steps_silent: u64,
}

impl Activity {
    /// Total price. Bias accumulations are always priced at the IF rate: the
    /// tdIF weight of a constant bias can be tabulated per step like the
    /// threshold, so it needs no shift.
    pub fn price(&self, kind: NeuronKind, accounting: FireAccounting, table: &InstructionCostTable) -> Energy {
        let silent_fire = match accounting {
            FireAccounting::Split => table.phase_cost(kind, NeuronPhase::Fire, false),
            FireAccounting::AllEvents => table.phase_cost(kind, NeuronPhase::Fire, true),
        };
        table.phase_cost(kind, NeuronPhase::Accumulate, false) * self.synaptic_events
            + table.phase_cost(NeuronKind::If, NeuronPhase::Accumulate, false) * self.bias_accumulations
            + table.phase_cost(kind, NeuronPhase::Fire, true) * self.fire_steps_spiking
            + silent_fire * self.fire_steps_silent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub kind: NeuronKind,
    pub steps: usize,
    pub accounting: FireAccounting,
    #[serde(flatten)]
    pub activity: Activity,
    pub total_pj: Energy,
    pub average_spiking_rate: f64,
}

/// Counts the operations of `trace`, which must come from running `model`.
pub fn count_activity<S: Scalar>(trace: &InferenceTrace<S>, model: &SnnModel<S>) -> Result<Activity> {
    if trace.layers.len() + 1 != model.layers.len() || trace.steps != model.steps || trace.kind != model.kind {
        return Err(Error::TraceMismatch("trace was not produced by this model".into()));
    }
    let steps = model.steps as u64;
    let mut activity = Activity::default();
    for (i, layer) in model.layers.iter().enumerate() {
        let fan_out = layer.fan_out();
        let frames = match (i, &trace.input) {
            (0, InputDrive::Analog(x)) => {
                let reached: u64 = x
                    .data()
                    .iter()
                    .zip(&fan_out)
                    .filter(|(v, _)| !v.is_zero())
                    .map(|(_, &f)| f as u64)
                    .sum();
                activity.synaptic_events += reached * steps;
                None
            }
            (0, InputDrive::Spikes(train)) => Some(train),
            _ => Some(&trace.layers[i - 1].train),
        };
        if let Some(train) = frames {
            if train.neuron_shape() != layer.input_shape.as_slice() {
                return Err(Error::TraceMismatch(format!(
                    "layer {i} input shape differs from its trace"
                )));
            }
            for frame in train.frames() {
                activity.synaptic_events += frame
                    .data()
                    .iter()
                    .zip(&fan_out)
                    .filter(|(v, _)| !v.is_zero())
                    .map(|(_, &f)| f as u64)
                    .sum::<u64>();
            }
        }
        activity.bias_accumulations += layer.bias_neurons() as u64 * steps;
    }
    for (trace_layer, layer) in trace.layers.iter().zip(model.hidden_layers()) {
        let spikes = trace_layer.train.total_spikes() as u64;
        activity.fire_steps_spiking += spikes;
        activity.fire_steps_silent += layer.neuron_count() as u64 * steps - spikes;
    }
    Ok(activity)
}

/// Ledger with the default prices and split fire accounting.
pub fn tally_inference<S: Scalar>(trace: &InferenceTrace<S>, model: &SnnModel<S>) -> Result<EnergyLedger> {
    tally_inference_with(trace, model, &InstructionCostTable::default(), FireAccounting::Split)
}

pub fn tally_inference_with<S: Scalar>(
    trace: &InferenceTrace<S>,
    model: &SnnModel<S>,
    table: &InstructionCostTable,
    accounting: FireAccounting,
) -> Result<EnergyLedger> {
    table.validate()?;
    let activity = count_activity(trace, model)?;
    Ok(EnergyLedger {
        kind: model.kind,
        steps: model.steps,
        accounting,
        total_pj: activity.price(model.kind, accounting, table),
        activity,
        average_spiking_rate: average_spiking_rate(trace),
    })
}

/// Spikes emitted by the hidden layers over `neurons * T`; zero for a
/// model without hidden layers.
pub fn average_spiking_rate<S: Scalar>(trace: &InferenceTrace<S>) -> f64 {
    let (spikes, slots) = trace.layers.iter().fold((0usize, 0usize), |(s, n), l| {
        let neurons: usize = l.train.neuron_shape().iter().product();
        (s + l.train.total_spikes(), n + neurons * l.train.steps())
    });
    if slots == 0 {
        0.0
    } else {
        spikes as f64 / slots as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::convert;
    use crate::engine::run_snn;
    use crate::fixtures::{handcrafted_input, handcrafted_model, random_model};
    use crate::neurons::SpikeTrain;
    use crate::tensor::Tensor;

    #[test]
    fn phase_costs_match_the_table() {
        assert_eq!(phase_cost(NeuronKind::If, NeuronPhase::Accumulate, false), Energy(127));
        assert_eq!(
            phase_cost(NeuronKind::TdIf, NeuronPhase::Accumulate, false),
            Energy(139)
        );
        assert_eq!(phase_cost(NeuronKind::If, NeuronPhase::Fire, true), Energy(132));
        assert_eq!(phase_cost(NeuronKind::TdIf, NeuronPhase::Fire, true), Energy(132));
        assert_eq!(phase_cost(NeuronKind::If, NeuronPhase::Fire, false), Energy(121));
        assert_eq!(Energy(127).to_string(), "12.7 pJ");
    }

    #[test]
    fn one_spike_one_neuron_costs_accumulate_plus_fire() {
        let a = Activity {
            synaptic_events: 1,
            fire_steps_spiking: 1,
            ..Default::default()
        };
        let e = a.price(NeuronKind::If, FireAccounting::Split, &InstructionCostTable::default());
        assert_eq!(e, Energy(259));
    }

    #[test]
    fn all_events_mode_prices_silent_steps_as_events() {
        let a = Activity {
            fire_steps_silent: 10,
            ..Default::default()
        };
        let t = InstructionCostTable::default();
        assert_eq!(a.price(NeuronKind::If, FireAccounting::Split, &t), Energy(1210));
        assert_eq!(a.price(NeuronKind::If, FireAccounting::AllEvents, &t), Energy(1320));
    }

    #[test]
    fn zero_price_is_rejected() {
        let t = InstructionCostTable {
            shift: 0,
            ..Default::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn silent_network_has_no_synaptic_events() {
        let model = convert(&handcrafted_model(), 5, NeuronKind::If, 5).unwrap();
        let silent = SpikeTrain::silent(5, &[3]);
        let trace = crate::engine::run_snn_with_spikes(&model, &silent).unwrap();
        let ledger = tally_inference(&trace, &model).unwrap();
        assert_eq!(ledger.activity.synaptic_events, 0);
        assert_eq!(ledger.activity.bias_accumulations, 0);
        assert_eq!(ledger.activity.fire_steps_spiking, 0);
        assert_eq!(ledger.activity.fire_steps_silent, 5);
        assert_eq!(ledger.average_spiking_rate, 0.0);
    }

    #[test]
    fn handcrafted_rate_is_point_four() {
        let model = convert(&handcrafted_model(), 5, NeuronKind::If, 5).unwrap();
        let trace = run_snn(&model, &handcrafted_input()).unwrap();
        assert!((average_spiking_rate(&trace) - 0.4).abs() < 1e-15);
        let ledger = tally_inference(&trace, &model).unwrap();
        // 3 analog inputs reach 1 neuron for 5 steps, 2 hidden spikes reach the readout.
        assert_eq!(ledger.activity.synaptic_events, 15 + 2);
        assert_eq!(ledger.activity.fire_steps_spiking, 2);
        assert_eq!(ledger.activity.fire_steps_silent, 3);
    }

    #[test]
    fn all_ones_trains_have_rate_one() {
        let model = convert(&handcrafted_model(), 3, NeuronKind::If, 3).unwrap();
        let mut trace = run_snn(&model, &handcrafted_input()).unwrap();
        trace.layers[0].train = SpikeTrain::new(vec![Tensor::filled(&[1], 1.0); 3]).unwrap();
        assert_eq!(average_spiking_rate(&trace), 1.0);
    }

    #[test]
    fn tdif_surcharge_is_shift_per_synaptic_event() {
        let t = InstructionCostTable::default();
        for seed in 0..10 {
            let (ann, x) = random_model(seed, 4);
            let model = convert(&ann, 4, NeuronKind::If, 4).unwrap();
            let trace = run_snn(&model, &x).unwrap();
            let a = count_activity(&trace, &model).unwrap();
            let diff = a.price(NeuronKind::TdIf, FireAccounting::Split, &t).0
                - a.price(NeuronKind::If, FireAccounting::Split, &t).0;
            assert_eq!(diff, 12 * a.synaptic_events);
        }
    }

    #[test]
    fn adding_a_spike_never_lowers_energy() {
        for seed in 0..10 {
            let (ann, x) = random_model(seed, 4);
            let model = convert(&ann, 4, NeuronKind::If, 4).unwrap();
            let trace = run_snn(&model, &x).unwrap();
            let before = tally_inference(&trace, &model).unwrap().total_pj;
            for l in 0..trace.layers.len() {
                let mut frames = trace.layers[l].train.frames().to_vec();
                if let Some(pos) = frames[0].data().iter().position(|v| *v == 0.0) {
                    let mut data = frames[0].data().to_vec();
                    data[pos] = 1.0;
                    frames[0] = Tensor::new(frames[0].shape().to_vec(), data).unwrap();
                    let mut more = trace.clone();
                    more.layers[l].train = SpikeTrain::new(frames).unwrap();
                    assert!(tally_inference(&more, &model).unwrap().total_pj >= before);
                }
            }
        }
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let model = convert(&handcrafted_model(), 5, NeuronKind::If, 5).unwrap();
        let other = convert(&handcrafted_model(), 4, NeuronKind::If, 4).unwrap();
        let trace = run_snn(&other, &handcrafted_input()).unwrap();
        assert!(matches!(tally_inference(&trace, &model), Err(Error::TraceMismatch(_))));
    }
}
