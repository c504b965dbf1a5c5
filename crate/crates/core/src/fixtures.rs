//! Seeded generators for test and benchmark models.
//!
//! Every generated model is a valid quant-clip ANN with up to four weighted
//! layers (at most 64 neurons each) drawn from a few conv/fc/avgpool layouts,
//! with random batch norm. Each hidden `lambda` is calibrated on the generated
//! input as its maximum pre-activation times a headroom factor, mirroring the
//! "maximum activation" choice of `lambda`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ann::{AnnLayer, AnnModel, QuantClip};
use crate::converter::BnParams;
use crate::tensor::Tensor;

pub const DEFAULT_SEED: u64 = 0;

/// Range the calibrated `lambda` is scaled by relative to the largest
/// pre-activation. Values below 1 make some neurons saturate.
#[derive(Debug, Clone, Copy)]
pub struct Headroom {
    pub low: f64,
    pub high: f64,
}

impl Default for Headroom {
    fn default() -> Self {
        Self { low: 1.0, high: 1.5 }
    }
}

/// Random model plus the input its scales were calibrated on.
pub fn random_model(seed: u64, levels: usize) -> (AnnModel<f64>, Tensor<f64>) {
    random_model_with(seed, levels, Headroom::default())
}

pub fn random_model_with(seed: u64, levels: usize, headroom: Headroom) -> (AnnModel<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = random_plan(&mut rng);
    let input_data: Vec<f64> = (0..plan.input_shape.iter().product::<usize>())
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let input = Tensor::new(plan.input_shape.clone(), input_data).expect("generated input is valid");

    let mut layers = Vec::new();
    let mut current = input.clone();
    let last = plan.layers.len() - 1;
    for (i, spec) in plan.layers.iter().enumerate() {
        let mut layer = build_layer(&mut rng, spec, current.shape());
        if !matches!(spec, LayerPlan::Pool { .. }) && (i < last || rng.gen_bool(0.3)) && rng.gen_bool(0.7) {
            let channels = layer.op.out_channels().expect("weighted layer");
            layer = layer.with_bn(random_bn(&mut rng, channels));
        }
        let pre = layer.pre_activation(&current).expect("planned shapes are consistent");
        current = if i < last && !matches!(spec, LayerPlan::Pool { .. }) {
            let lambda = pre.max_value().max(0.05) * rng.gen_range(headroom.low..=headroom.high);
            let q = QuantClip::new(lambda, levels).expect("positive lambda");
            layer = layer.with_activation(q);
            pre.map(|v| q.apply(v))
        } else {
            pre
        };
        layers.push(layer);
    }
    let model = AnnModel::new(plan.input_shape, layers).expect("generated model is valid");
    (model, input)
}

/// The three-input, one-neuron network used to illustrate residual-potential
/// errors: weights `[1, 0.5, -1]`, `lambda = 1`, `L = 5`, followed by an
/// identity readout.
pub fn handcrafted_model() -> AnnModel<f64> {
    AnnModel::new(
        vec![3],
        vec![
            AnnLayer::fc(
                Tensor::new(vec![1, 3], vec![1.0, 0.5, -1.0]).unwrap(),
                Tensor::zeros(&[1]),
            )
            .with_activation(QuantClip::new(1.0, 5).unwrap()),
            AnnLayer::fc(Tensor::new(vec![1, 1], vec![1.0]).unwrap(), Tensor::zeros(&[1])),
        ],
    )
    .expect("handcrafted model is valid")
}

/// Input rates `[0.6, 0.4, 0.4]` of the handcrafted network.
pub fn handcrafted_input() -> Tensor<f64> {
    Tensor::vector(vec![0.6, 0.4, 0.4]).unwrap()
}

enum LayerPlan {
    Fc {
        out: usize,
    },
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Pool {
        window: usize,
        stride: usize,
    },
}

struct Plan {
    input_shape: Vec<usize>,
    layers: Vec<LayerPlan>,
}

fn random_plan(rng: &mut ChaCha8Rng) -> Plan {
    let out = rng.gen_range(1..=6);
    match rng.gen_range(0..4) {
        0 => {
            let hidden = rng.gen_range(1..=3);
            let mut layers: Vec<LayerPlan> = (0..hidden)
                .map(|_| LayerPlan::Fc {
                    out: rng.gen_range(2..=64),
                })
                .collect();
            layers.push(LayerPlan::Fc { out });
            Plan {
                input_shape: vec![rng.gen_range(2..=16)],
                layers,
            }
        }
        1 => {
            let (c, h, w) = (rng.gen_range(1..=2), rng.gen_range(4..=6), rng.gen_range(4..=6));
            let cout = (64 / (h * w)).clamp(1, 4);
            Plan {
                input_shape: vec![c, h, w],
                layers: vec![
                    LayerPlan::Conv {
                        out: cout,
                        kernel: 3,
                        stride: 1,
                        padding: 1,
                    },
                    LayerPlan::Pool { window: 2, stride: 2 },
                    LayerPlan::Fc {
                        out: rng.gen_range(4..=32),
                    },
                    LayerPlan::Fc { out },
                ],
            }
        }
        2 => {
            let (c, h, w) = (rng.gen_range(1..=3), rng.gen_range(4..=6), rng.gen_range(4..=6));
            let cout = (64 / (h * w)).clamp(1, 4);
            Plan {
                input_shape: vec![c, h, w],
                layers: vec![
                    LayerPlan::Conv {
                        out: cout,
                        kernel: 3,
                        stride: 1,
                        padding: 1,
                    },
                    LayerPlan::Conv {
                        out: rng.gen_range(2..=4),
                        kernel: 3,
                        stride: 2,
                        padding: 1,
                    },
                    LayerPlan::Fc { out },
                ],
            }
        }
        _ => {
            let (c, h, w) = (rng.gen_range(1..=2), rng.gen_range(5..=7), rng.gen_range(5..=7));
            let cout = (64 / ((h - 1) * (w - 1))).clamp(1, 3);
            Plan {
                input_shape: vec![c, h, w],
                layers: vec![
                    LayerPlan::Conv {
                        out: cout,
                        kernel: 2,
                        stride: 1,
                        padding: 0,
                    },
                    LayerPlan::Pool { window: 2, stride: 1 },
                    LayerPlan::Conv {
                        out: rng.gen_range(2..=4),
                        kernel: 2,
                        stride: 1,
                        padding: 0,
                    },
                    LayerPlan::Fc { out },
                ],
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn build_layer(rng: &mut ChaCha8Rng, spec: &LayerPlan, input_shape: &[usize]) -> AnnLayer<f64> {
    match *spec {
        LayerPlan::Fc { out } => {
            let n: usize = input_shape.iter().product();
            let scale = 1.5 / (n as f64).sqrt();
            let bias = (0..out).map(|_| rng.gen_range(-0.1..0.3) * scale).collect();
            AnnLayer::fc(
                Tensor::new(vec![out, n], uniform(rng, out * n, scale)).unwrap(),
                Tensor::vector(bias).unwrap(),
            )
        }
        LayerPlan::Conv {
            out,
            kernel,
            stride,
            padding,
        } => {
            let cin = input_shape[0];
            let fan_in = cin * kernel * kernel;
            let scale = 1.5 / (fan_in as f64).sqrt();
            let bias = (0..out).map(|_| rng.gen_range(-0.1..0.3) * scale).collect();
            AnnLayer::conv(
                Tensor::new(vec![out, cin, kernel, kernel], uniform(rng, out * fan_in, scale)).unwrap(),
                Tensor::vector(bias).unwrap(),
                stride,
                padding,
            )
        }
        LayerPlan::Pool { window, stride } => AnnLayer::avg_pool(window, stride),
    }
}

fn random_bn(rng: &mut ChaCha8Rng, channels: usize) -> BnParams<f64> {
    BnParams {
        gamma: (0..channels).map(|_| rng.gen_range(0.5..1.5)).collect(),
        beta: (0..channels).map(|_| rng.gen_range(-0.2..0.3)).collect(),
        mu: (0..channels).map(|_| rng.gen_range(-0.2..0.2)).collect(),
        sigma2: (0..channels).map(|_| rng.gen_range(0.5..2.0)).collect(),
        eps: 1e-5,
    }
}
