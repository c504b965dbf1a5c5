//! Step-level timing of the delay-spike pipeline.
//!
//! Each layer has an accumulate and a fire phase, both `T` steps long, with
//! firing starting `T_delay` steps after accumulation. A layer's fire phase
//! streams straight into the next layer's accumulate phase, and a new sample
//! enters the first layer every `T` steps. Intervals are half-open.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Accumulate,
    Fire,
}

/// One phase of one sample in one layer. Samples and layers are 1-based,
/// steps start at 0 and `end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScheduleEntry {
    pub sample: usize,
    pub layer: usize,
    pub phase: Phase,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PipelineSchedule {
    pub n_layers: usize,
    pub steps: usize,
    pub delay: usize,
    pub n_samples: usize,
    pub entries: Vec<ScheduleEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conflict {
    /// Two samples hold the same layer phase during overlapping steps.
    Overlap {
        layer: usize,
        first: usize,
        second: usize,
        phases: Vec<Phase>,
    },
    /// A (sample, layer) pair whose phases break the length or offset rules.
    Malformed {
        sample: usize,
        layer: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PipelineSummary {
    pub latency_first_sample: usize,
    /// Gap between consecutive completions, when there are at least two
    /// samples and the gap is constant.
    pub steady_throughput_period: Option<usize>,
    pub makespan: usize,
}

pub fn build_schedule(n_layers: usize, steps: usize, delay: usize, n_samples: usize) -> Result<PipelineSchedule> {
    if n_layers == 0 || steps == 0 || n_samples == 0 {
        return Err(Error::InvalidParameter(format!(
            "layers, T and samples must be >= 1 (got {n_layers}, {steps}, {n_samples})"
        )));
    }
    if delay > steps {
        return Err(Error::InvalidParameter(format!("T_delay={delay} exceeds T={steps}")));
    }
    let mut entries = Vec::with_capacity(2 * n_layers * n_samples);
    for sample in 1..=n_samples {
        let mut accumulate = (sample - 1) * steps;
        for layer in 1..=n_layers {
            let fire = accumulate + delay;
            entries.push(ScheduleEntry {
                sample,
                layer,
                phase: Phase::Accumulate,
                start: accumulate,
                end: accumulate + steps,
            });
            entries.push(ScheduleEntry {
                sample,
                layer,
                phase: Phase::Fire,
                start: fire,
                end: fire + steps,
            });
            accumulate = fire;
        }
    }
    Ok(PipelineSchedule {
        n_layers,
        steps,
        delay,
        n_samples,
        entries,
    })
}

impl PipelineSchedule {
    /// Step at which `sample` leaves the last layer.
    pub fn completion(&self, sample: usize) -> Option<usize> {
        self.entries
            .iter()
            .filter(|e| e.sample == sample && e.layer == self.n_layers && e.phase == Phase::Fire)
            .map(|e| e.end)
            .max()
    }

    pub fn makespan(&self) -> usize {
        self.entries.iter().map(|e| e.end).max().unwrap_or(0)
    }

    pub fn summary(&self) -> PipelineSummary {
        let completions: Vec<usize> = (1..=self.n_samples).filter_map(|k| self.completion(k)).collect();
        let gaps: Vec<usize> = completions.windows(2).map(|w| w[1].saturating_sub(w[0])).collect();
        let period = match gaps.split_first() {
            Some((&g, rest)) if rest.iter().all(|&r| r == g) => Some(g),
            _ => None,
        };
        PipelineSummary {
            latency_first_sample: completions.first().copied().unwrap_or(0),
            steady_throughput_period: period,
            makespan: self.makespan(),
        }
    }

    /// Text Gantt chart: one row per layer phase, one column per step, each
    /// cell showing the occupying sample (base 36) or `.`.
    pub fn gantt(&self) -> String {
        let width = self.makespan();
        let mut out = String::new();
        let label_width = format!("L{} fire", self.n_layers).len();
        let _ = write!(out, "{:label_width$} ", "step");
        for t in 0..width {
            out.push(if t % 10 == 0 {
                char::from_digit(((t / 10) % 10) as u32, 10).unwrap()
            } else {
                ' '
            });
        }
        out.push('\n');
        for layer in 1..=self.n_layers {
            for phase in [Phase::Accumulate, Phase::Fire] {
                let name = match phase {
                    Phase::Accumulate => format!("L{layer} acc"),
                    Phase::Fire => format!("L{layer} fire"),
                };
                let mut row = vec!['.'; width];
                for e in self.entries.iter().filter(|e| e.layer == layer && e.phase == phase) {
                    let mark = char::from_digit((e.sample % 36) as u32, 36).unwrap();
                    for cell in &mut row[e.start..e.end.min(width)] {
                        *cell = if *cell == '.' { mark } else { '#' };
                    }
                }
                let _ = writeln!(out, "{name:label_width$} {}", row.into_iter().collect::<String>());
            }
        }
        out
    }
}

fn overlaps(a: &ScheduleEntry, b: &ScheduleEntry) -> bool {
    a.start < b.end && b.start < a.end
}

/// Lists every double-booked layer (one conflict per layer and sample pair)
/// and every (sample, layer) whose phases break the length or offset rules.
pub fn validate_schedule(s: &PipelineSchedule) -> Vec<Conflict> {
    let mut conflicts = Vec::new();
    let mut by_unit: BTreeMap<(usize, usize), Vec<&ScheduleEntry>> = BTreeMap::new();
    for e in &s.entries {
        by_unit.entry((e.sample, e.layer)).or_default().push(e);
    }
    for (&(sample, layer), entries) in &by_unit {
        let find = |p: Phase| {
            let mut it = entries.iter().filter(move |e| e.phase == p);
            match (it.next(), it.next()) {
                (Some(e), None) => Ok(*e),
                (None, _) => Err(format!("missing {p:?} phase")),
                _ => Err(format!("duplicate {p:?} phase")),
            }
        };
        let reason = match (find(Phase::Accumulate), find(Phase::Fire)) {
            (Err(r), _) | (_, Err(r)) => Some(r),
            (Ok(acc), Ok(fire)) => {
                if acc.end != acc.start + s.steps || fire.end != fire.start + s.steps {
                    Some(format!("phases must span T={} steps", s.steps))
                } else if fire.start != acc.start + s.delay {
                    Some(format!(
                        "fire starts at {}, expected {}",
                        fire.start,
                        acc.start + s.delay
                    ))
                } else {
                    None
                }
            }
        };
        if let Some(reason) = reason {
            conflicts.push(Conflict::Malformed { sample, layer, reason });
        }
    }

    let mut by_layer: BTreeMap<usize, Vec<&ScheduleEntry>> = BTreeMap::new();
    for e in &s.entries {
        by_layer.entry(e.layer).or_default().push(e);
    }
    for (&layer, entries) in &by_layer {
        let mut clashes: BTreeMap<(usize, usize), Vec<Phase>> = BTreeMap::new();
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                if a.sample != b.sample && a.phase == b.phase && overlaps(a, b) {
                    let key = (a.sample.min(b.sample), a.sample.max(b.sample));
                    let phases = clashes.entry(key).or_default();
                    if !phases.contains(&a.phase) {
                        phases.push(a.phase);
                    }
                }
            }
        }
        for ((first, second), mut phases) in clashes {
            phases.sort();
            conflicts.push(Conflict::Overlap {
                layer,
                first,
                second,
                phases,
            });
        }
    }
    conflicts
}
