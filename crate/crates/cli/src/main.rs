//! `spikeconv` command-line front end. Every command prints one JSON
//! document on stdout; failures print `{"error": ...}` on stderr and exit 1,
//! usage errors exit 2.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use spikeconv::analysis::{anchor_lattice_demo, conversion_error, find_irregular_patterns, replay_pattern, Placements};
use spikeconv::converter::{convert, SnnModel, Synapse};
use spikeconv::energy::{tally_inference_with, FireAccounting, InstructionCostTable};
use spikeconv::engine::{run_snn, run_snn_with_spikes, weighted_rate, InferenceTrace};
use spikeconv::io::{self, NestedArray};
use spikeconv::pipeline::{build_schedule, validate_schedule};
use spikeconv::{ann_forward, fixtures, NeuronKind, Tensor};

#[derive(Parser)]
#[command(name = "spikeconv", version, about = "ANN to SNN conversion and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Timing {
    /// Number of time-steps.
    #[arg(long = "T")]
    steps: usize,
    #[arg(long, default_value = "if")]
    neuron: NeuronKind,
    /// Delay before firing; defaults to T.
    #[arg(long = "t-delay")]
    delay: Option<usize>,
}

impl Timing {
    fn delay(&self) -> usize {
        self.delay.unwrap_or(self.steps)
    }
}

#[derive(clap::Args)]
struct InputArgs {
    /// Analog input tensor (nested JSON array).
    #[arg(long, conflicts_with = "input_spikes", required_unless_present = "input_spikes")]
    input: Option<PathBuf>,
    /// Input spike train, a `[T, ...]` nested JSON array of 0/1.
    #[arg(long = "input-spikes")]
    input_spikes: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse and convert an ANN model into a spiking model file.
    Convert {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        timing: Timing,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the quantized ANN.
    RunAnn {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Run a converted spiking model.
    RunSnn {
        #[arg(long)]
        snn: PathBuf,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Convert, run both networks and report the per-layer error.
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        timing: Timing,
        #[command(flatten)]
        input: InputArgs,
        /// Largest accepted absolute error.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Simulate the layer pipeline schedule.
    Pipeline {
        #[arg(long)]
        layers: usize,
        #[arg(long = "T")]
        steps: usize,
        #[arg(long = "t-delay")]
        delay: usize,
        #[arg(long, default_value_t = 3)]
        samples: usize,
    },
    /// Instruction-level energy of one inference.
    Energy {
        #[arg(long)]
        snn: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        /// Price silent fire steps like spiking ones.
        #[arg(long = "paper-mode")]
        all_events: bool,
        /// Another spiking model run on the same input to compare against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Residual-potential and quantization demonstrations.
    Demo {
        #[command(subcommand)]
        which: Demo,
    },
    /// Write a seeded random model and its calibration input.
    GenModel {
        #[arg(long, default_value_t = fixtures::DEFAULT_SEED)]
        seed: u64,
        /// Quantization levels L of the hidden layers.
        #[arg(long = "L", default_value_t = 4)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "input-out")]
        input_out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Demo {
    /// Witness search on the three-input handcrafted neuron.
    #[command(name = "fig1")]
    Residual {
        #[arg(long = "T", default_value_t = 5)]
        steps: usize,
    },
    /// Attainable anchor box sizes on the rate lattice.
    Anchor {
        #[arg(long = "T")]
        steps: usize,
        #[arg(long = "anchor-w", default_value_t = 1.0)]
        anchor_w: f64,
        #[arg(long = "anchor-h", default_value_t = 1.0)]
        anchor_h: f64,
    },
}

fn nested(t: &Tensor) -> NestedArray {
    NestedArray::from_tensor(t)
}

fn run_with_input(model: &SnnModel<f64>, input: &InputArgs) -> Result<InferenceTrace<f64>> {
    Ok(match (&input.input, &input.input_spikes) {
        (Some(path), _) => run_snn(model, &io::load_tensor(path)?)?,
        (None, Some(path)) => run_snn_with_spikes(model, &io::load_spike_train(path)?)?,
        (None, None) => unreachable!("clap requires one input"),
    })
}

fn architecture(model: &SnnModel<f64>) -> String {
    let mut parts = Vec::new();
    for layer in &model.layers {
        for _ in &layer.pools {
            parts.push("avgpool".to_string());
        }
        let name = match layer.synapse {
            Synapse::Conv2d { .. } => "conv2d",
            Synapse::FullyConnected => "fc",
        };
        parts.push(format!("{name}({})", layer.weights.shape()[0]));
    }
    parts.join("-")
}

fn trace_json(trace: &InferenceTrace<f64>) -> Value {
    let layers: Vec<Value> = trace
        .layers
        .iter()
        .zip(trace.rates())
        .map(|(l, rate)| {
            json!({
                "source_layer": l.source_layer,
                "shape": l.train.neuron_shape(),
                "spikes": l.train.total_spikes(),
                "rates": nested(&rate),
                "residual": nested(&l.residual),
            })
        })
        .collect();
    json!({
        "neuron": trace.kind,
        "T": trace.steps,
        "T_delay": trace.delay,
        "layers": layers,
        "decoded": nested(&trace.decoded),
    })
}

fn convert_cmd(model: &PathBuf, timing: &Timing, out: &PathBuf) -> Result<Value> {
    let ann = io::load_model(model)?;
    let snn = convert(&ann, timing.steps, timing.neuron, timing.delay())?;
    io::save_snn(out, &snn).with_context(|| format!("writing {}", out.display()))?;
    Ok(json!({
        "out": out,
        "neuron": snn.kind,
        "T": snn.steps,
        "T_delay": snn.delay,
        "layers": snn.layers.len(),
        "architecture": architecture(&snn),
        "output_scale": snn.output_scale,
    }))
}

fn run_ann_cmd(model: &PathBuf, input: &PathBuf) -> Result<Value> {
    let ann = io::load_model(model)?;
    let trace = ann_forward(&ann, &io::load_tensor(input)?)?;
    let layers: Vec<Value> = trace
        .layers
        .iter()
        .zip(ann.layers())
        .enumerate()
        .map(|(i, (out, layer))| {
            json!({
                "index": i,
                "kind": layer.op.name(),
                "shape": out.values.shape(),
                "values": nested(&out.values),
            })
        })
        .collect();
    Ok(json!({ "layers": layers, "output": nested(trace.output()) }))
}

fn compare_cmd(model: &PathBuf, timing: &Timing, input: &InputArgs, tol: f64) -> Result<(Value, bool)> {
    let ann = io::load_model(model)?;
    let snn = convert(&ann, timing.steps, timing.neuron, timing.delay())?;
    let trace = run_with_input(&snn, input)?;
    // A spike-train input stands for its weighted rate on the ANN side.
    let ann_input = match &trace.input {
        spikeconv::engine::InputDrive::Analog(x) => x.clone(),
        spikeconv::engine::InputDrive::Spikes(train) => weighted_rate(train, snn.kind),
    };
    let reference = ann_forward(&ann, &ann_input)?;
    let report = conversion_error(&reference, &trace)?;
    let within = report.max_abs <= tol;
    let layers: Vec<Value> = report
        .layers
        .iter()
        .map(|l| {
            json!({
                "source_layer": l.source_layer,
                "max_abs": l.err.max_abs(),
                "err": nested(&l.err),
                "epsilon": nested(&l.epsilon),
            })
        })
        .collect();
    let value = json!({
        "neuron": snn.kind,
        "T": snn.steps,
        "T_delay": snn.delay,
        "tolerance": tol,
        "within_tolerance": within,
        "max_abs": report.max_abs,
        "mean_abs": report.mean_abs,
        "max_layer_abs": report.max_layer_abs(),
        "max_output_abs": report.max_output_abs(),
        "residual_violations": report.residual_violations,
        "layers": layers,
        "output_err": nested(&report.output_err),
        "ann_output": nested(reference.output()),
        "snn_output": nested(&trace.decoded),
    });
    Ok((value, within))
}

fn pipeline_cmd(layers: usize, steps: usize, delay: usize, samples: usize) -> Result<Value> {
    let schedule = build_schedule(layers, steps, delay, samples)?;
    let summary = schedule.summary();
    Ok(json!({
        "layers": layers,
        "T": steps,
        "T_delay": delay,
        "samples": samples,
        "latency_first_sample": summary.latency_first_sample,
        "steady_throughput_period": summary.steady_throughput_period,
        "makespan": summary.makespan,
        "completions": (1..=samples).map(|k| schedule.completion(k)).collect::<Vec<_>>(),
        "conflicts": validate_schedule(&schedule),
        "gantt": schedule.gantt().lines().collect::<Vec<_>>(),
    }))
}

fn energy_cmd(snn: &PathBuf, input: &InputArgs, all_events: bool, reference: Option<&PathBuf>) -> Result<Value> {
    let accounting = if all_events {
        FireAccounting::AllEvents
    } else {
        FireAccounting::Split
    };
    let table = InstructionCostTable::default();
    let tally = |path: &PathBuf| -> Result<(SnnModel<f64>, spikeconv::energy::EnergyLedger)> {
        let model = io::load_snn(path)?;
        let trace = run_with_input(&model, input)?;
        let ledger = tally_inference_with(&trace, &model, &table, accounting)?;
        Ok((model, ledger))
    };
    let (model, ledger) = tally(snn)?;
    let mut report = json!({
        "architecture": architecture(&model),
        "T": model.steps,
        "neuron": model.kind,
        "accounting": accounting,
        "average_spiking_rate": ledger.average_spiking_rate,
        "total_pj": ledger.total_pj,
        "synaptic_events": ledger.activity.synaptic_events,
        "bias_accumulations": ledger.activity.bias_accumulations,
        "fire_steps_spiking": ledger.activity.fire_steps_spiking,
        "fire_steps_silent": ledger.activity.fire_steps_silent,
    });
    if let Some(path) = reference {
        let (ref_model, ref_ledger) = tally(path)?;
        report["reference"] = json!({
            "snn": path,
            "architecture": architecture(&ref_model),
            "T": ref_model.steps,
            "neuron": ref_model.kind,
            "total_pj": ref_ledger.total_pj,
        });
        report["ratio"] = json!(ledger.total_pj.0 as f64 / ref_ledger.total_pj.0 as f64);
    }
    Ok(report)
}

fn witness_json(w: &spikeconv::analysis::PatternWitness<f64>) -> Value {
    json!({
        "inputs": nested(&io::spike_train_to_tensor(&w.inputs)),
        "output": nested(&io::spike_train_to_tensor(&w.output)),
        "rate": w.rate,
        "residual": w.residual,
    })
}

fn demo_residual(steps: usize) -> Result<Value> {
    let input = fixtures::handcrafted_input();
    let weights = [1.0, 0.5, -1.0];
    let found = find_irregular_patterns(input.data(), &weights, 1.0, steps)?;
    let counts: Vec<usize> = input
        .data()
        .iter()
        .map(|r| (r * steps as f64).round() as usize)
        .collect();
    let (mut placements, mut lossless) = (0usize, 0usize);
    for inputs in Placements::<f64>::new(&counts, steps)? {
        let w = replay_pattern(&inputs, &weights, 1.0, steps)?;
        placements += 1;
        if (w.rate - found.ann_rate).abs() < 1e-12 && w.residual.abs() < 1e-12 {
            lossless += 1;
        }
    }
    let opt = |w: &Option<spikeconv::analysis::PatternWitness<f64>>| w.as_ref().map(witness_json);
    Ok(json!({
        "T": steps,
        "input_rates": input.data(),
        "weights": weights,
        "theta": 1.0,
        "ann_rate": found.ann_rate,
        "placements_searched": found.placements_searched,
        "plain_if": {
            "uniform": opt(&found.uniform),
            "overflow": opt(&found.overflow),
            "negative": opt(&found.negative),
        },
        "delay_spike": {
            "T_delay": steps,
            "placements": placements,
            "lossless_placements": lossless,
        },
    }))
}

fn gen_model_cmd(seed: u64, levels: usize, out: &PathBuf, input_out: Option<&PathBuf>) -> Result<Value> {
    let (model, input) = fixtures::random_model(seed, levels);
    io::save_model(out, &model)?;
    if let Some(path) = input_out {
        io::save_tensor(path, &input)?;
    }
    Ok(json!({
        "seed": seed,
        "L": levels,
        "out": out,
        "input_out": input_out,
        "input_shape": model.input_shape(),
        "layers": model.layers().iter().map(|l| l.op.name()).collect::<Vec<_>>(),
    }))
}

fn execute(cli: Cli) -> Result<(Value, bool)> {
    let ok = |v: Value| Ok((v, true));
    match &cli.command {
        Command::Convert { model, timing, out } => ok(convert_cmd(model, timing, out)?),
        Command::RunAnn { model, input } => ok(run_ann_cmd(model, input)?),
        Command::RunSnn { snn, input } => ok(trace_json(&run_with_input(&io::load_snn(snn)?, input)?)),
        Command::Compare {
            model,
            timing,
            input,
            tol,
        } => compare_cmd(model, timing, input, *tol),
        Command::Pipeline {
            layers,
            steps,
            delay,
            samples,
        } => ok(pipeline_cmd(*layers, *steps, *delay, *samples)?),
        Command::Energy {
            snn,
            input,
            all_events,
            reference,
        } => ok(energy_cmd(snn, input, *all_events, reference.as_ref())?),
        Command::Demo {
            which: Demo::Residual { steps },
        } => ok(demo_residual(*steps)?),
        Command::Demo {
            which:
                Demo::Anchor {
                    steps,
                    anchor_w,
                    anchor_h,
                },
        } => ok(serde_json::to_value(anchor_lattice_demo(*steps, *anchor_w, *anchor_h))?),
        Command::GenModel {
            seed,
            levels,
            out,
            input_out,
        } => ok(gen_model_cmd(*seed, *levels, out, input_out.as_ref())?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok((report, success)) => {
            let text = serde_json::to_string_pretty(&report).expect("reports serialize");
            // A closed pipe downstream is not an error of ours.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            if success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", json!({ "error": { "message": e.to_string(), "chain": chain } }));
            ExitCode::from(1)
        }
    }
}
