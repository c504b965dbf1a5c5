//! Conversion-error reports, residual-potential witnesses and the
//! anchor-size lattice demo.

use std::marker::PhantomData;

use serde::Serialize;

use crate::ann::{quant_clip, AnnTrace};
use crate::engine::InferenceTrace;
use crate::error::{Error, Result};
use crate::neurons::{delay_spike_run, NeuronKind, SpikeTrain};
use crate::scalar::{positive, Scalar};
use crate::tensor::Tensor;

/// Largest horizon [`find_irregular_patterns`] will search.
pub const MAX_SEARCH_STEPS: usize = 8;
/// Largest number of inputs [`find_irregular_patterns`] will search.
pub const MAX_SEARCH_INPUTS: usize = 4;

/// Deviation of one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerError<S> {
    pub source_layer: usize,
    /// Weighted spike rate minus `a / lambda`, in rate units.
    pub err: Tensor<S>,
    /// Final residual divided by `theta` times the rate normalizer.
    pub epsilon: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport<S> {
    pub layers: Vec<LayerError<S>>,
    /// Decoded SNN output minus the raw ANN output, in ANN units.
    pub output_err: Tensor<S>,
    /// Neurons with non-negative drive whose residual left `[0, theta)`.
    pub residual_violations: usize,
    pub max_abs: S,
    pub mean_abs: S,
}

impl<S: Scalar> ErrorReport<S> {
    pub fn max_layer_abs(&self) -> S {
        self.layers.iter().map(|l| l.err.max_abs()).fold(S::zero(), S::max)
    }

    pub fn max_output_abs(&self) -> S {
        self.output_err.max_abs()
    }
}

/// Compares an ANN trace against a spiking run on the same input.
pub fn conversion_error<S: Scalar>(ann: &AnnTrace<S>, snn: &InferenceTrace<S>) -> Result<ErrorReport<S>> {
    let hidden: Vec<_> = ann.hidden().collect();
    if hidden.len() != snn.layers.len() {
        return Err(Error::TraceMismatch(format!(
            "ANN has {} hidden layers, SNN trace has {}",
            hidden.len(),
            snn.layers.len()
        )));
    }
    let normalizer = snn.kind.rate_normalizer::<S>(snn.steps);
    let slack = S::lit(S::FIRE_SLACK);
    let mut layers = Vec::with_capacity(hidden.len());
    let mut violations = 0;
    let mut total = S::zero();
    let mut count = 0usize;
    for ((idx, q, act), layer) in hidden.into_iter().zip(&snn.layers) {
        if idx != layer.source_layer {
            return Err(Error::TraceMismatch(format!(
                "ANN layer {idx} aligned with SNN layer from source {}",
                layer.source_layer
            )));
        }
        let rate = crate::engine::weighted_rate(&layer.train, snn.kind);
        let target = act.scale(S::one() / q.lambda());
        let err = rate
            .sub(&target)
            .map_err(|e| Error::TraceMismatch(format!("layer {idx}: {e}")))?;
        let epsilon = layer.residual.scale(S::one() / (layer.theta * normalizer));
        violations += layer
            .drive
            .data()
            .iter()
            .zip(layer.residual.data())
            .filter(|&(&d, &r)| d >= S::zero() && (r < -slack * layer.theta || r >= layer.theta))
            .count();
        total += err.data().iter().map(|v| v.abs()).sum::<S>();
        count += err.len();
        layers.push(LayerError {
            source_layer: idx,
            err,
            epsilon,
        });
    }
    let output_err = snn
        .decoded
        .sub(ann.output())
        .map_err(|e| Error::TraceMismatch(format!("output: {e}")))?;
    total += output_err.data().iter().map(|v| v.abs()).sum::<S>();
    count += output_err.len();
    let max_abs = layers
        .iter()
        .map(|l| l.err.max_abs())
        .fold(output_err.max_abs(), S::max);
    Ok(ErrorReport {
        layers,
        output_err,
        residual_violations: violations,
        max_abs,
        mean_abs: total / S::from_count(count),
    })
}

/// `(V_T - V_0) / (theta * T)`.
pub fn residual_epsilon<S: Scalar>(v_t: &Tensor<S>, v_0: &Tensor<S>, theta: S, steps: usize) -> Result<Tensor<S>> {
    if steps == 0 {
        return Err(Error::InvalidParameter("T must be >= 1".into()));
    }
    if !positive(theta) {
        return Err(Error::InvalidParameter(format!("threshold must be > 0, got {theta}")));
    }
    Ok(v_t.sub(v_0)?.scale(S::one() / (theta * S::from_count(steps))))
}

/// One input placement and what a single neuron makes of it.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternWitness<S> {
    /// Input spikes, one frame per step, shape `[inputs]`.
    pub inputs: SpikeTrain<S>,
    /// Output spikes, shape `[1]`.
    pub output: SpikeTrain<S>,
    pub residual: S,
    pub rate: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrregularPatterns<S> {
    /// Quantized ANN activation of the neuron in rate units.
    pub ann_rate: S,
    pub placements_searched: usize,
    /// Residual 0 and rate equal to `ann_rate`.
    pub uniform: Option<PatternWitness<S>>,
    /// Residual at or above `theta`.
    pub overflow: Option<PatternWitness<S>>,
    /// Residual below zero.
    pub negative: Option<PatternWitness<S>>,
}

/// Every way of placing `counts[i]` spikes of input `i` into `T` slots, in
/// lexicographic order (input 0 varies slowest, earlier slots first).
#[derive(Debug, Clone)]
pub struct Placements<S> {
    steps: usize,
    slots: Vec<Vec<usize>>,
    done: bool,
    _scalar: PhantomData<S>,
}

impl<S: Scalar> Placements<S> {
    pub fn new(counts: &[usize], steps: usize) -> Result<Self> {
        if let Some(&c) = counts.iter().find(|&&c| c > steps) {
            return Err(Error::InvalidParameter(format!(
                "{c} spikes do not fit in {steps} steps"
            )));
        }
        Ok(Self {
            steps,
            slots: counts.iter().map(|&c| (0..c).collect()).collect(),
            done: false,
            _scalar: PhantomData,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn train(&self) -> SpikeTrain<S> {
        let n = self.slots.len();
        let mut frames = vec![Tensor::zeros(&[n]); self.steps];
        for (i, slots) in self.slots.iter().enumerate() {
            for &t in slots {
                frames[t].data_mut()[i] = S::one();
            }
        }
        SpikeTrain::from_frames_unchecked(frames)
    }

    /// Advances the combination of one input; false when it wraps around.
    fn advance(slots: &mut [usize], steps: usize) -> bool {
        let k = slots.len();
        for i in (0..k).rev() {
            if slots[i] < steps - k + i {
                slots[i] += 1;
                for j in i + 1..k {
                    slots[j] = slots[j - 1] + 1;
                }
                return true;
            }
        }
        for (j, s) in slots.iter_mut().enumerate() {
            *s = j;
        }
        false
    }
}

impl<S: Scalar> Iterator for Placements<S> {
    type Item = SpikeTrain<S>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let out = self.train();
        self.done = true;
        for i in (0..self.slots.len()).rev() {
            if Self::advance(&mut self.slots[i], self.steps) {
                self.done = false;
                break;
            }
        }
        Some(out)
    }
}

/// Runs one neuron with `weights` over an input spike pattern.
pub fn replay_pattern<S: Scalar>(
    inputs: &SpikeTrain<S>,
    weights: &[S],
    theta: S,
    delay: usize,
) -> Result<PatternWitness<S>> {
    if inputs.neuron_shape() != [weights.len()] {
        return Err(Error::shape(
            "replay_pattern",
            format!(
                "{} weights for inputs of shape {:?}",
                weights.len(),
                inputs.neuron_shape()
            ),
        ));
    }
    let steps = inputs.steps();
    let currents: Vec<Tensor<S>> = inputs
        .frames()
        .iter()
        .map(|f| Tensor::from_parts(vec![1], vec![f.data().iter().zip(weights).map(|(&s, &w)| s * w).sum()]))
        .collect();
    let out = delay_spike_run(NeuronKind::If, theta, steps, delay, &currents)?;
    let rate = S::from_count(out.train.total_spikes()) / S::from_count(steps);
    Ok(PatternWitness {
        inputs: inputs.clone(),
        residual: out.residual.data()[0],
        output: out.train,
        rate,
    })
}

/// Exhaustively searches input placements with the spike counts implied by
/// `rates` for plain-IF (no delay) patterns that land exactly on the ANN
/// value, overflow, or end negative. Each witness is the lexicographically
/// first placement of its class.
pub fn find_irregular_patterns<S: Scalar>(
    rates: &[S],
    weights: &[S],
    theta: S,
    steps: usize,
) -> Result<IrregularPatterns<S>> {
    if steps == 0 || steps > MAX_SEARCH_STEPS {
        return Err(Error::InvalidParameter(format!(
            "search needs 1 <= T <= {MAX_SEARCH_STEPS}, got {steps}"
        )));
    }
    if rates.is_empty() || rates.len() > MAX_SEARCH_INPUTS {
        return Err(Error::InvalidParameter(format!(
            "search needs 1..={MAX_SEARCH_INPUTS} inputs, got {}",
            rates.len()
        )));
    }
    if rates.len() != weights.len() {
        return Err(Error::shape(
            "find_irregular_patterns",
            format!("{} rates, {} weights", rates.len(), weights.len()),
        ));
    }
    if !positive(theta) {
        return Err(Error::InvalidParameter(format!("threshold must be > 0, got {theta}")));
    }
    let counts = rates
        .iter()
        .map(|&r| {
            let c = r * S::from_count(steps);
            let rounded = c.round();
            if (c - rounded).abs() > S::lit(S::LATTICE_SNAP).max(S::epsilon() * S::from_count(16))
                || rounded < S::zero()
                || rounded > S::from_count(steps)
            {
                Err(Error::InvalidParameter(format!(
                    "rate {r} x T={steps} is not a spike count in 0..={steps}"
                )))
            } else {
                Ok(rounded.to_usize().expect("count is a small non-negative integer"))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let drive: S = counts.iter().zip(weights).map(|(&c, &w)| S::from_count(c) * w).sum();
    let ann_rate = quant_clip(drive / S::from_count(steps), theta, steps)? / theta;
    let slack = S::lit(S::FIRE_SLACK) * theta;

    let mut found = IrregularPatterns {
        ann_rate,
        placements_searched: 0,
        uniform: None,
        overflow: None,
        negative: None,
    };
    for inputs in Placements::<S>::new(&counts, steps)? {
        found.placements_searched += 1;
        let w = replay_pattern(&inputs, weights, theta, 0)?;
        if found.uniform.is_none() && w.residual.abs() <= slack && (w.rate - ann_rate).abs() <= slack {
            found.uniform = Some(w.clone());
        }
        if found.overflow.is_none() && w.residual >= theta - slack {
            found.overflow = Some(w.clone());
        }
        if found.negative.is_none() && w.residual < -slack {
            found.negative = Some(w);
        }
    }
    Ok(found)
}

/// Attainable box sizes of the anchor demo.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorLattice {
    pub steps: usize,
    /// `(w, h)` pairs in increasing `w`.
    pub pairs: Vec<(f64, f64)>,
    pub cardinality: usize,
}

/// Box sizes reachable when a shared rate `v` in `{0, .., T}/T` drives two
/// regression neurons with weights `[1, -1]`: `w = e^v * anchor_w`,
/// `h = e^-v * anchor_h`.
pub fn anchor_lattice_demo(steps: usize, anchor_w: f64, anchor_h: f64) -> AnchorLattice {
    let mut pairs: Vec<(f64, f64)> = (0..=steps)
        .map(|k| {
            let v = k as f64 / steps.max(1) as f64;
            ((v).exp() * anchor_w, (-v).exp() * anchor_h)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pairs.dedup();
    AnchorLattice {
        steps,
        cardinality: pairs.len(),
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::ann_forward;
    use crate::converter::convert;
    use crate::engine::run_snn;
    use crate::fixtures::{handcrafted_input, handcrafted_model, random_model};

    #[test]
    fn residual_epsilon_examples() {
        let v = Tensor::vector(vec![0.3, -0.2]).unwrap();
        assert_eq!(residual_epsilon(&v, &v, 1.0, 5).unwrap().data(), &[0.0, 0.0]);
        let e = residual_epsilon::<f64>(
            &Tensor::vector(vec![0.5]).unwrap(),
            &Tensor::vector(vec![0.0]).unwrap(),
            1.0,
            5,
        )
        .unwrap();
        assert!((e.data()[0] - 0.1).abs() < 1e-15);
        assert!(residual_epsilon(&v, &v, 1.0, 0).is_err());
    }

    #[test]
    fn lossless_run_has_zero_report() {
        let model = handcrafted_model();
        let input = handcrafted_input();
        let ann = ann_forward(&model, &input).unwrap();
        let snn = run_snn(&convert(&model, 5, NeuronKind::If, 5).unwrap(), &input).unwrap();
        let report = conversion_error(&ann, &snn).unwrap();
        assert!(report.max_abs < 1e-12);
        assert_eq!(report.residual_violations, 0);
    }

    #[test]
    fn delay_spike_epsilon_is_below_one_over_t() {
        for seed in 0..20 {
            let (model, input) = random_model(seed, 6);
            let ann = ann_forward(&model, &input).unwrap();
            let snn = run_snn(&convert(&model, 6, NeuronKind::If, 6).unwrap(), &input).unwrap();
            let report = conversion_error(&ann, &snn).unwrap();
            for (layer, trace) in report.layers.iter().zip(&snn.layers) {
                for (&e, &d) in layer.epsilon.data().iter().zip(trace.drive.data()) {
                    if d >= 0.0 {
                        assert!((-1e-9..1.0 / 6.0).contains(&e), "seed {seed}: epsilon {e}");
                    }
                }
            }
        }
    }

    #[test]
    fn misaligned_traces_are_rejected() {
        let (a, x) = random_model(1, 4);
        let (b, y) = random_model(2, 4);
        let ann = ann_forward(&a, &x).unwrap();
        let snn = run_snn(&convert(&b, 4, NeuronKind::If, 4).unwrap(), &y).unwrap();
        assert!(matches!(conversion_error(&ann, &snn), Err(Error::TraceMismatch(_))));
    }

    #[test]
    fn placements_enumerate_all_combinations_in_order() {
        let all: Vec<_> = Placements::<f64>::new(&[2, 1], 3).unwrap().collect();
        assert_eq!(all.len(), 9);
        let first: Vec<f64> = all[0].frames().iter().flat_map(|f| f.data().to_vec()).collect();
        assert_eq!(first, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        for p in &all {
            assert_eq!(p.counts(), vec![2, 1]);
        }
        assert_eq!(Placements::<f64>::new(&[0, 0], 4).unwrap().count(), 1);
    }

    #[test]
    fn handcrafted_instance_has_all_three_witnesses() {
        let found = find_irregular_patterns::<f64>(&[0.6, 0.4, 0.4], &[1.0, 0.5, -1.0], 1.0, 5).unwrap();
        assert_eq!(found.placements_searched, 10 * 10 * 10);
        assert!((found.ann_rate - 0.4).abs() < 1e-12);
        let uniform = found.uniform.unwrap();
        assert_eq!(uniform.output.total_spikes(), 2);
        assert!(uniform.residual.abs() < 1e-12);
        let overflow = found.overflow.unwrap();
        assert!(overflow.residual >= 1.0);
        assert!(overflow.output.total_spikes() < 2);
        let negative = found.negative.unwrap();
        assert!(negative.residual < 0.0);
        assert_eq!(negative.output.total_spikes(), 3);
    }

    #[test]
    fn hand_checked_witnesses_replay() {
        // s1 at t1,t2,t5; s2 at t1,t5; s3 at t1,t2.
        let frames = [[1.0, 1.0, 1.0], [1.0, 0.0, 1.0], [0.0; 3], [0.0; 3], [1.0, 1.0, 0.0]];
        let train = SpikeTrain::new(frames.iter().map(|f| Tensor::vector(f.to_vec()).unwrap()).collect()).unwrap();
        let w = replay_pattern(&train, &[1.0, 0.5, -1.0], 1.0, 0).unwrap();
        assert_eq!(w.output.total_spikes(), 1);
        assert_eq!(w.residual, 1.0);
        let delayed = replay_pattern(&train, &[1.0, 0.5, -1.0], 1.0, 5).unwrap();
        assert_eq!(delayed.output.total_spikes(), 2);
        assert_eq!(delayed.residual, 0.0);
    }

    #[test]
    fn silent_inputs_give_only_the_trivial_pattern() {
        let found = find_irregular_patterns(&[0.0, 0.0], &[1.0, -1.0], 1.0, 4).unwrap();
        assert_eq!(found.placements_searched, 1);
        assert_eq!(found.uniform.unwrap().residual, 0.0);
        assert!(found.overflow.is_none());
        assert!(found.negative.is_none());
    }

    #[test]
    fn search_rejects_fractional_counts_and_large_instances() {
        assert!(find_irregular_patterns(&[0.3], &[1.0], 1.0, 5).is_err());
        assert!(find_irregular_patterns(&[0.5; 5], &[1.0; 5], 1.0, 4).is_err());
        assert!(find_irregular_patterns(&[0.0], &[1.0], 1.0, 9).is_err());
    }

    #[test]
    fn anchor_lattice_examples() {
        let l = anchor_lattice_demo(4, 1.0, 1.0);
        assert_eq!(l.cardinality, 5);
        for (k, &(w, h)) in l.pairs.iter().enumerate() {
            assert!((w - (k as f64 / 4.0).exp()).abs() < 1e-15);
            assert!((h - (-(k as f64) / 4.0).exp()).abs() < 1e-15);
        }
        assert_eq!(anchor_lattice_demo(1, 1.0, 1.0).cardinality, 2);
        assert!(anchor_lattice_demo(8, 1.0, 1.0).cardinality > anchor_lattice_demo(4, 1.0, 1.0).cardinality);
    }
}
