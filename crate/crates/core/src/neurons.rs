//! Integrate-and-fire dynamics with soft reset, the temporal-dependent
//! variant (tdIF), and the two-stage delay-spike schedule.
//!
//! A tdIF neuron scales both its input and its threshold at step `t` by
//! `c[t] = 2^(T-t)`, so the `T` output slots encode a binary number with
//! resolution `2^T - 1`. Spikes fire at `M >= threshold` (the Heaviside step
//! fires at zero).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{positive, pow2, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeuronKind {
    #[serde(rename = "if")]
    If,
    #[serde(rename = "tdif")]
    TdIf,
}

impl NeuronKind {
    /// Weight `c[t]` of 1-based step `t` out of `steps`.
    pub fn coefficient<S: Scalar>(self, t: usize, steps: usize) -> S {
        match self {
            NeuronKind::If => S::one(),
            NeuronKind::TdIf => pow2(steps - t),
        }
    }

    /// Sum of all step weights: `T` for IF, `2^T - 1` for tdIF.
    pub fn rate_normalizer<S: Scalar>(self, steps: usize) -> S {
        match self {
            NeuronKind::If => S::from_count(steps),
            NeuronKind::TdIf => pow2::<S>(steps) - S::one(),
        }
    }

    /// Largest weighted spike count a neuron can emit in `steps` slots.
    pub fn capacity(self, steps: usize) -> u64 {
        match self {
            NeuronKind::If => steps as u64,
            NeuronKind::TdIf => (1u64 << steps) - 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NeuronKind::If => "if",
            NeuronKind::TdIf => "tdif",
        }
    }
}

impl std::fmt::Display for NeuronKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NeuronKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "if" => Ok(NeuronKind::If),
            "tdif" => Ok(NeuronKind::TdIf),
            other => Err(Error::InvalidParameter(format!("unknown neuron kind {other:?}"))),
        }
    }
}

/// Binary spike train: `T` frames, each a tensor of 0/1 over the layer's
/// neuron shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain<S> {
    frames: Vec<Tensor<S>>,
}

impl<S: Scalar> SpikeTrain<S> {
    pub fn new(frames: Vec<Tensor<S>>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidParameter(
                "spike train needs at least one time-step".into(),
            ));
        };
        let shape = first.shape().to_vec();
        for (t, frame) in frames.iter().enumerate() {
            if frame.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "spike_train",
                    format!("frame {t} has shape {:?}, expected {shape:?}", frame.shape()),
                ));
            }
            if !frame.is_binary() {
                return Err(Error::InvalidParameter(format!("frame {t} holds non-binary values")));
            }
        }
        Ok(Self { frames })
    }

    pub fn silent(steps: usize, shape: &[usize]) -> Self {
        Self {
            frames: vec![Tensor::zeros(shape); steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.frames.len()
    }

    pub fn neuron_shape(&self) -> &[usize] {
        self.frames[0].shape()
    }

    pub fn frames(&self) -> &[Tensor<S>] {
        &self.frames
    }

    /// Frame at 1-based step `t`.
    pub fn at(&self, t: usize) -> &Tensor<S> {
        &self.frames[t - 1]
    }

    pub fn total_spikes(&self) -> usize {
        self.frames.iter().map(Tensor::count_nonzero).sum()
    }

    /// Spike count of each neuron over the whole train.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.frames[0].len()];
        for frame in &self.frames {
            for (c, v) in counts.iter_mut().zip(frame.data()) {
                if !v.is_zero() {
                    *c += 1;
                }
            }
        }
        counts
    }

    pub(crate) fn from_frames_unchecked(frames: Vec<Tensor<S>>) -> Self {
        Self { frames }
    }
}

fn fires<S: Scalar>(potential: S, threshold: S) -> bool {
    potential >= threshold - threshold * S::lit(S::FIRE_SLACK)
}

/// Fires every neuron of `potential` that reaches `threshold` and subtracts
/// the threshold from it.
fn fire_and_reset<S: Scalar>(potential: &mut Tensor<S>, threshold: S) -> Tensor<S> {
    let spikes = potential
        .data_mut()
        .iter_mut()
        .map(|m| {
            if fires(*m, threshold) {
                *m -= threshold;
                S::one()
            } else {
                S::zero()
            }
        })
        .collect();
    Tensor::from_parts(potential.shape().to_vec(), spikes)
}

/// Membrane state of one layer advanced one time-step at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronLayerState<S> {
    potential: Tensor<S>,
    theta: S,
    steps: usize,
    kind: NeuronKind,
    t_now: usize,
}

impl<S: Scalar> NeuronLayerState<S> {
    pub fn new(shape: &[usize], theta: S, steps: usize, kind: NeuronKind) -> Result<Self> {
        Self::with_potential(Tensor::zeros(shape), theta, steps, kind)
    }

    pub fn with_potential(potential: Tensor<S>, theta: S, steps: usize, kind: NeuronKind) -> Result<Self> {
        if !positive(theta) {
            return Err(Error::InvalidParameter(format!("threshold must be > 0, got {theta}")));
        }
        crate::converter::check_timing(kind, steps, 0)?;
        Ok(Self {
            potential,
            theta,
            steps,
            kind,
            t_now: 0,
        })
    }

    pub fn potential(&self) -> &Tensor<S> {
        &self.potential
    }

    pub fn t_now(&self) -> usize {
        self.t_now
    }

    pub fn kind(&self) -> NeuronKind {
        self.kind
    }

    /// Firing threshold in effect at 1-based step `t`.
    pub fn threshold_at(&self, t: usize) -> S {
        self.kind.coefficient::<S>(t, self.steps) * self.theta
    }

    /// One IF step: `M = V + I`, spike where `M >= theta`, `V = M - theta * S`.
    pub fn if_step(&mut self, input_current: &Tensor<S>) -> Result<Tensor<S>> {
        if self.kind != NeuronKind::If {
            return Err(Error::InvalidParameter("if_step on a tdIF layer".into()));
        }
        self.step(input_current)
    }

    /// One tdIF step with `c = 2^(T - t)`: `M = V + c * I`, spike where
    /// `M >= c * theta`, `V = M - c * theta * S`.
    pub fn tdif_step(&mut self, input_current: &Tensor<S>) -> Result<Tensor<S>> {
        if self.kind != NeuronKind::TdIf {
            return Err(Error::InvalidParameter("tdif_step on an IF layer".into()));
        }
        self.step(input_current)
    }

    pub fn step(&mut self, input_current: &Tensor<S>) -> Result<Tensor<S>> {
        if self.t_now >= self.steps {
            return Err(Error::StepBeyondHorizon { steps: self.steps });
        }
        let t = self.t_now + 1;
        let c = self.kind.coefficient::<S>(t, self.steps);
        self.potential.add_assign_scaled(input_current, c)?;
        let spikes = fire_and_reset(&mut self.potential, c * self.theta);
        self.t_now = t;
        Ok(spikes)
    }
}

/// Result of [`delay_spike_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySpikeOutput<S> {
    pub train: SpikeTrain<S>,
    /// Potential left after the last output slot.
    pub residual: Tensor<S>,
    /// Total accumulated drive `sum_t c[t] * I[t]`.
    pub drive: Tensor<S>,
}

/// Runs the two-stage delay-spike schedule over one layer.
///
/// Stage 1 accumulates the (tdIF-weighted) current of every input step; once
/// the step index passes `delay`, it also emits output slot `t - delay`.
/// Stage 2 empties the remaining potential into slots `T - delay + 1 ..= T`.
/// The threshold used for a slot is the one of that slot's index. With
/// `delay = 0` this is exactly the per-step dynamics of
/// [`NeuronLayerState::step`].
pub fn delay_spike_run<S: Scalar>(
    kind: NeuronKind,
    theta: S,
    steps: usize,
    delay: usize,
    input_currents: &[Tensor<S>],
) -> Result<DelaySpikeOutput<S>> {
    crate::converter::check_timing(kind, steps, delay)?;
    if !positive(theta) {
        return Err(Error::InvalidParameter(format!("threshold must be > 0, got {theta}")));
    }
    if input_currents.len() != steps {
        return Err(Error::shape(
            "delay_spike_run",
            format!("expected {steps} current frames, got {}", input_currents.len()),
        ));
    }
    let shape = input_currents[0].shape().to_vec();
    let mut potential = Tensor::zeros(&shape);
    let mut drive = Tensor::zeros(&shape);
    let mut frames = Vec::with_capacity(steps);
    let threshold = |slot: usize| kind.coefficient::<S>(slot, steps) * theta;

    for (i, current) in input_currents.iter().enumerate() {
        let t = i + 1;
        let c = kind.coefficient::<S>(t, steps);
        potential.add_assign_scaled(current, c)?;
        drive.add_assign_scaled(current, c)?;
        if t > delay {
            frames.push(fire_and_reset(&mut potential, threshold(t - delay)));
        }
    }
    for slot in steps - delay + 1..=steps {
        frames.push(fire_and_reset(&mut potential, threshold(slot)));
    }
    debug_assert_eq!(frames.len(), steps);
    Ok(DelaySpikeOutput {
        train: SpikeTrain::from_frames_unchecked(frames),
        residual: potential,
        drive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::vector(vec![v]).unwrap()
    }

    #[test]
    fn if_step_examples() {
        let mut s = NeuronLayerState::with_potential(scalar(0.5), 1.0, 3, NeuronKind::If).unwrap();
        assert_eq!(s.if_step(&scalar(0.7)).unwrap().data(), &[1.0]);
        assert!((s.potential().data()[0] - 0.2).abs() < 1e-12);
        assert_eq!(s.t_now(), 1);

        let mut s = NeuronLayerState::new(&[1], 1.0, 3, NeuronKind::If).unwrap();
        assert_eq!(s.if_step(&scalar(0.0)).unwrap().data(), &[0.0]);
        assert_eq!(s.potential().data(), &[0.0]);

        let mut s = NeuronLayerState::new(&[1], 1.0, 3, NeuronKind::If).unwrap();
        assert_eq!(s.if_step(&scalar(1.0)).unwrap().data(), &[1.0]);
        assert_eq!(s.potential().data(), &[0.0]);
    }

    #[test]
    fn stepping_past_horizon_fails() {
        let mut s = NeuronLayerState::new(&[1], 1.0, 2, NeuronKind::If).unwrap();
        s.step(&scalar(0.1)).unwrap();
        s.step(&scalar(0.1)).unwrap();
        assert!(matches!(
            s.step(&scalar(0.1)),
            Err(Error::StepBeyondHorizon { steps: 2 })
        ));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let mut s = NeuronLayerState::new(&[1], 1.0, 2, NeuronKind::TdIf).unwrap();
        assert!(s.if_step(&scalar(0.1)).is_err());
    }

    #[test]
    fn tdif_step_example() {
        let mut s = NeuronLayerState::new(&[1], 1.0, 3, NeuronKind::TdIf).unwrap();
        assert_eq!(s.threshold_at(1), 4.0);
        assert_eq!(s.tdif_step(&scalar(1.2)).unwrap().data(), &[1.0]);
        assert!((s.potential().data()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn tdif_stays_silent_below_threshold() {
        let mut s = NeuronLayerState::new(&[1], 1.0, 4, NeuronKind::TdIf).unwrap();
        for _ in 0..4 {
            assert_eq!(s.tdif_step(&scalar(0.0)).unwrap().data(), &[0.0]);
        }
    }

    #[test]
    fn tdif_constant_five_sevenths_encodes_101() {
        let currents = vec![scalar(5.0 / 7.0); 3];
        let out = delay_spike_run(NeuronKind::TdIf, 1.0, 3, 3, &currents).unwrap();
        let bits: Vec<f64> = out.train.frames().iter().map(|f| f.data()[0]).collect();
        assert_eq!(bits, vec![1.0, 0.0, 1.0]);
        assert!(out.residual.data()[0].abs() < 1e-9);
    }

    #[test]
    fn delay_spike_handcrafted_if_case() {
        // Layer input current 0.4 per step from rates [0.6, 0.4, 0.4] through [1, 0.5, -1].
        let currents = vec![scalar(0.4); 5];
        let out = delay_spike_run(NeuronKind::If, 1.0, 5, 5, &currents).unwrap();
        assert_eq!(out.train.total_spikes(), 2);
        assert!(out.residual.data()[0].abs() < 1e-12);
        // Stage 2 emits greedily into the first slots.
        assert_eq!(out.train.at(1).data(), &[1.0]);
        assert_eq!(out.train.at(2).data(), &[1.0]);
    }

    #[test]
    fn delay_spike_tdif_binary_five() {
        let mut currents = vec![scalar(0.0); 3];
        currents[0] = scalar(5.0 / 4.0); // c[1] = 4, so the drive is 5.
        let out = delay_spike_run(NeuronKind::TdIf, 1.0, 3, 3, &currents).unwrap();
        let bits: Vec<f64> = out.train.frames().iter().map(|f| f.data()[0]).collect();
        assert_eq!(bits, vec![1.0, 0.0, 1.0]);
        assert_eq!(out.drive.data(), &[5.0]);
        assert_eq!(out.residual.data(), &[0.0]);
    }

    #[test]
    fn negative_drive_never_fires() {
        let currents = vec![scalar(-0.3); 4];
        let out = delay_spike_run(NeuronKind::If, 1.0, 4, 4, &currents).unwrap();
        assert_eq!(out.train.total_spikes(), 0);
        assert!((out.residual.data()[0] + 1.2).abs() < 1e-12);
    }

    #[test]
    fn spike_train_rejects_non_binary() {
        assert!(SpikeTrain::new(vec![scalar(0.5)]).is_err());
        assert!(SpikeTrain::new(vec![scalar(1.0), Tensor::zeros(&[2])]).is_err());
        assert!(SpikeTrain::<f64>::new(vec![]).is_err());
    }

    /// Greedy binary decomposition oracle: walks the thresholds `2^(T-1) .. 1`
    /// on an integer drive.
    fn greedy_oracle(v: u64, steps: usize) -> (u64, u64) {
        let mut rest = v;
        let mut weighted = 0;
        for t in 1..=steps {
            let c = 1u64 << (steps - t);
            if rest >= c {
                rest -= c;
                weighted += c;
            }
        }
        (weighted, rest)
    }

    #[test]
    fn greedy_binary_identity_exhaustive() {
        for steps in 1..=6usize {
            for v in 0..=(1u64 << steps) + 4 {
                for frac in [0.0, 0.25, 0.5, 0.999] {
                    let drive = v as f64 + frac;
                    let mut currents = vec![scalar(0.0); steps];
                    currents[steps - 1] = scalar(drive); // c[T] = 1
                    let out = delay_spike_run(NeuronKind::TdIf, 1.0, steps, steps, &currents).unwrap();
                    let weighted: u64 = out
                        .train
                        .frames()
                        .iter()
                        .enumerate()
                        .map(|(i, f)| if f.data()[0] == 1.0 { 1u64 << (steps - 1 - i) } else { 0 })
                        .sum();
                    let (expect, _) = greedy_oracle(v, steps);
                    assert_eq!(weighted, expect);
                    assert_eq!(weighted, v.min((1 << steps) - 1));
                }
            }
        }
    }

    #[test]
    fn if_rate_identity_exhaustive() {
        for steps in 1..=8usize {
            for count in 0..=steps + 3 {
                for frac in [0.0, 0.3, 0.99] {
                    let total = count as f64 + frac;
                    let currents = vec![scalar(total / steps as f64); steps];
                    let out = delay_spike_run(NeuronKind::If, 1.0, steps, steps, &currents).unwrap();
                    assert_eq!(out.train.total_spikes(), count.min(steps));
                }
            }
        }
    }

    fn random_currents(values: &[f64], steps: usize, n: usize) -> Vec<Tensor<f64>> {
        values
            .chunks(n)
            .take(steps)
            .map(|c| Tensor::vector(c.to_vec()).unwrap())
            .collect()
    }

    proptest! {
        #[test]
        fn residual_bound_below_capacity(
            steps in 1usize..7,
            kind in prop::sample::select(vec![NeuronKind::If, NeuronKind::TdIf]),
            theta in 0.25f64..2.0,
            values in prop::collection::vec(-1.0f64..2.0, 6 * 5),
        ) {
            let n = 5;
            let currents = random_currents(&values, steps, n);
            let out = delay_spike_run(kind, theta, steps, steps, &currents).unwrap();
            let capacity = kind.capacity(steps) as f64;
            for (i, (&r, &d)) in out.residual.data().iter().zip(out.drive.data()).enumerate() {
                if d >= 0.0 && d < (capacity + 1.0) * theta {
                    prop_assert!(r >= -1e-9 * theta && r < theta, "neuron {i}: residual {r}, drive {d}");
                }
                if d < 0.0 {
                    prop_assert_eq!(out.train.counts()[i], 0);
                }
            }
        }

        #[test]
        fn zero_delay_matches_per_step_dynamics(
            steps in 1usize..7,
            kind in prop::sample::select(vec![NeuronKind::If, NeuronKind::TdIf]),
            values in prop::collection::vec(-1.0f64..2.0, 6 * 4),
        ) {
            let currents = random_currents(&values, steps, 4);
            let out = delay_spike_run(kind, 1.0, steps, 0, &currents).unwrap();
            let mut state = NeuronLayerState::new(&[4], 1.0, steps, kind).unwrap();
            for (t, current) in currents.iter().enumerate() {
                prop_assert_eq!(&state.step(current).unwrap(), out.train.at(t + 1));
            }
            prop_assert_eq!(state.potential(), &out.residual);
        }

        #[test]
        fn trains_have_exactly_t_binary_slots(
            steps in 1usize..9,
            delay_frac in 0.0f64..=1.0,
            kind in prop::sample::select(vec![NeuronKind::If, NeuronKind::TdIf]),
            values in prop::collection::vec(-1.0f64..2.0, 8 * 3),
        ) {
            let delay = ((steps as f64) * delay_frac).floor() as usize;
            let currents = random_currents(&values, steps, 3);
            let out = delay_spike_run(kind, 1.0, steps, delay, &currents).unwrap();
            prop_assert_eq!(out.train.steps(), steps);
            prop_assert!(out.train.frames().iter().all(Tensor::is_binary));
        }
    }
}
