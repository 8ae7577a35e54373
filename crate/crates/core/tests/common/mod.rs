// SPDX-License-Identifier: Apache-2.0

//! Shared test fixtures: random small networks and an arbitrary-precision
//! direct-convolution oracle written independently of the executor.

#![allow(dead_code)]

use fixynn_core::compress::{compress_model, CompressOptions, FrozenLayer, FrozenModel, Requant};
use fixynn_core::model::{Graph, LayerKind, LayerSpec, ModelBundle, Shape};
use fixynn_core::tensor::{ActivationTensor, QuantizedTensor};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 1×1 pointwise conv with identity weights and unit requant, then an FC.
pub fn identity_model(h: usize, w: usize, c: usize) -> FrozenModel {
    let mut pw = LayerSpec::conv(LayerKind::PointwiseConv, c, c, 1, 1);
    pw.has_bn = false;
    pw.has_relu = false;
    let fc = LayerSpec::fully_connected(h * w * c, 1);
    let graph = Graph::new(Shape::new(h, w, c), vec![pw, fc]).unwrap();
    let mut weights = vec![0i8; c * c];
    for i in 0..c {
        weights[i * c + i] = 1;
    }
    let layers = vec![
        FrozenLayer {
            weights: Some(QuantizedTensor {
                dims: vec![c, 1, 1, c],
                values: weights,
                scale_exponent: 0,
            }),
            requant: Requant {
                shift: 0,
                multipliers: vec![1; c],
                biases: vec![0; c],
            },
            input_exponent: -7,
            output_exponent: -7,
        },
        FrozenLayer {
            weights: Some(QuantizedTensor {
                dims: vec![1, h * w * c],
                values: vec![1; h * w * c],
                scale_exponent: 0,
            }),
            requant: Requant {
                shift: 0,
                multipliers: vec![1],
                biases: vec![0],
            },
            input_exponent: -7,
            output_exponent: -7,
        },
    ];
    FrozenModel::new(graph, -7, layers).unwrap()
}

/// 1–4 conv layers (channels ≤ 8, images ≤ 16×16), then avgpool-free FC.
pub fn random_graph(rng: &mut ChaCha8Rng) -> Graph {
    let h = rng.gen_range(1..=16);
    let w = rng.gen_range(1..=16);
    let mut c = rng.gen_range(1..=8);
    let n = rng.gen_range(1..=4);
    let mut layers = Vec::new();
    while layers.len() < n {
        let stride = if rng.gen_bool(0.3) { 2 } else { 1 };
        let mut spec = match rng.gen_range(0..4) {
            0 => {
                let k = [1, 3, 3, 5][rng.gen_range(0..4)];
                LayerSpec::conv(LayerKind::FullConv, c, rng.gen_range(1..=8), k, stride)
            }
            1 => LayerSpec::conv(LayerKind::PointwiseConv, c, rng.gen_range(1..=8), 1, stride),
            _ => {
                let k = [1, 3, 3, 5][rng.gen_range(0..4)];
                LayerSpec::conv(LayerKind::DepthwiseConv, c, c, k, stride)
            }
        };
        spec.has_bn = rng.gen_bool(0.8);
        spec.has_relu = rng.gen_bool(0.7);
        c = spec.out_channels;
        layers.push(spec);
    }
    let probe = Graph::new(Shape::new(h, w, layers[0].in_channels), {
        let mut l = layers.clone();
        l.push(LayerSpec::fully_connected(1, 1));
        l
    });
    // the FC input size depends on the final map; rebuild with the right one
    let flat = match probe {
        Ok(g) => g.input_of(g.layers().len() - 1).elements(),
        Err(_) => {
            let mut s = Shape::new(h, w, 0);
            for l in &layers {
                s = Shape::new(
                    s.height.div_ceil(l.stride),
                    s.width.div_ceil(l.stride),
                    l.out_channels,
                );
            }
            s.elements()
        }
    };
    layers.push(LayerSpec::fully_connected(flat, rng.gen_range(1..=4)));
    Graph::new(Shape::new(h, w, layers[0].in_channels), layers).expect("valid random graph")
}

/// Frozen model with directly drawn integer parameters (sparse weights,
/// arbitrary BN registers and shifts) so clamping paths get exercised.
pub fn random_frozen_direct(rng: &mut ChaCha8Rng, graph: Graph) -> FrozenModel {
    let mut exp = rng.gen_range(-8..=0);
    let input_exponent = exp;
    let mut layers = Vec::new();
    for spec in graph.layers() {
        let weights = spec.weight_dims().map(|dims| {
            let n: usize = dims.iter().product();
            let sparsity = rng.gen_range(0.0..0.9);
            QuantizedTensor {
                dims,
                values: (0..n)
                    .map(|_| {
                        if rng.gen_bool(sparsity) {
                            0
                        } else {
                            rng.gen::<i8>()
                        }
                    })
                    .collect(),
                scale_exponent: rng.gen_range(-9..=-3),
            }
        });
        let shift = rng.gen_range(0..=20);
        let c = spec.out_channels;
        let requant = Requant {
            shift,
            multipliers: (0..c)
                .map(|_| rng.gen_range(-(1 << 15)..(1 << 15)))
                .collect(),
            biases: (0..c)
                .map(|_| rng.gen_range(-(1 << 24)..(1 << 24)))
                .collect(),
        };
        let out_exp = rng.gen_range(-8..=0);
        layers.push(FrozenLayer {
            weights,
            requant,
            input_exponent: exp,
            output_exponent: out_exp,
        });
        exp = out_exp;
    }
    FrozenModel::new(graph, input_exponent, layers).expect("valid frozen model")
}

/// Frozen model produced by the real compression flow from seeded weights.
pub fn random_frozen_compressed(rng: &mut ChaCha8Rng, graph: Graph) -> FrozenModel {
    let seed = rng.gen();
    let bundle = ModelBundle::synthetic(graph.clone(), seed);
    let s = graph.input_shape();
    let calib: Vec<ActivationTensor> = (0..2)
        .map(|_| ActivationTensor::random(rng, s.height, s.width, s.channels, -7))
        .collect();
    let opts = CompressOptions {
        sparsity: rng.gen_range(0.0..0.8),
        ..Default::default()
    };
    compress_model(&bundle, &opts, &calib).expect("compression succeeds")
}

pub fn random_frozen(rng: &mut ChaCha8Rng) -> FrozenModel {
    let g = random_graph(rng);
    if rng.gen_bool(0.5) {
        random_frozen_direct(rng, g)
    } else {
        random_frozen_compressed(rng, g)
    }
}

pub fn random_image(rng: &mut ChaCha8Rng, model: &FrozenModel) -> ActivationTensor {
    let s = model.graph.input_shape();
    ActivationTensor::random(rng, s.height, s.width, s.channels, model.input_exponent)
}

/// Exact `clamp(round_half_even(t / 2^shift))` on big integers.
fn big_requant(t: &BigInt, shift: u32, relu: bool) -> i8 {
    let div = BigInt::one() << shift;
    // floor division
    let mut q = t / &div;
    let mut r = t - &q * &div;
    if r.is_negative() {
        q -= 1;
        r += &div;
    }
    let twice = &r * 2;
    let odd = (&q % 2i32).abs() == BigInt::one();
    if twice > div || (twice == div && odd) {
        q += 1;
    }
    let clamped = q
        .clamp(BigInt::from(-128), BigInt::from(127))
        .to_i64()
        .unwrap() as i8;
    if relu {
        clamped.max(0)
    } else {
        clamped
    }
}

/// Direct evaluation on a zero-padded copy of the input, big-integer
/// arithmetic throughout. Returns every layer's output values (HWC).
pub fn oracle_trace(model: &FrozenModel, input: &ActivationTensor) -> Vec<Vec<i8>> {
    let g = &model.graph;
    let mut x: Vec<i8> = input.values.clone();
    let mut shape = g.input_shape();
    let mut out = Vec::new();
    for (li, spec) in g.layers().iter().enumerate() {
        let fl = &model.layers[li];
        let c_out = spec.out_channels;
        let acc: Vec<BigInt> = match spec.kind {
            LayerKind::AvgPool => (0..shape.channels)
                .map(|c| {
                    (0..shape.pixels())
                        .map(|p| BigInt::from(x[p * shape.channels + c]))
                        .sum()
                })
                .collect(),
            LayerKind::FullyConnected => {
                let w = &fl.weights.as_ref().unwrap().values;
                (0..c_out)
                    .map(|o| {
                        (0..spec.in_channels)
                            .map(|i| BigInt::from(w[o * spec.in_channels + i]) * BigInt::from(x[i]))
                            .sum()
                    })
                    .collect()
            }
            _ => {
                let k = spec.kernel;
                let p = (k - 1) / 2;
                let (ph, pw) = (shape.height + 2 * p, shape.width + 2 * p);
                let cin = shape.channels;
                let mut padded = vec![0i8; ph * pw * cin];
                for y in 0..shape.height {
                    for xx in 0..shape.width {
                        for c in 0..cin {
                            padded[((y + p) * pw + xx + p) * cin + c] =
                                x[(y * shape.width + xx) * cin + c];
                        }
                    }
                }
                let oh = shape.height.div_ceil(spec.stride);
                let ow = shape.width.div_ceil(spec.stride);
                let w = &fl.weights.as_ref().unwrap().values;
                let depthwise = spec.kind == LayerKind::DepthwiseConv;
                let cpg = if depthwise { 1 } else { cin };
                let mut acc = Vec::with_capacity(oh * ow * c_out);
                for oy in 0..oh {
                    for ox in 0..ow {
                        for o in 0..c_out {
                            let mut sum = BigInt::zero();
                            for ky in 0..k {
                                for kx in 0..k {
                                    let (py, px) = (oy * spec.stride + ky, ox * spec.stride + kx);
                                    for j in 0..cpg {
                                        let ci = if depthwise { o } else { j };
                                        let wv = w[((o * k + ky) * k + kx) * cpg + j];
                                        let xv = padded[(py * pw + px) * cin + ci];
                                        sum += BigInt::from(wv) * BigInt::from(xv);
                                    }
                                }
                            }
                            acc.push(sum);
                        }
                    }
                }
                shape = Shape::new(oh, ow, c_out);
                acc
            }
        };
        if matches!(spec.kind, LayerKind::AvgPool | LayerKind::FullyConnected) {
            shape = Shape::new(1, 1, c_out);
        }
        let rq = &fl.requant;
        x = acc
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let ch = i % c_out;
                let t = a * BigInt::from(rq.multipliers[ch]) + BigInt::from(rq.biases[ch]);
                big_requant(&t, rq.shift, spec.has_relu)
            })
            .collect();
        out.push(x.clone());
    }
    out
}

/// Three fixed netlists used for golden-file checks.
pub fn reference_netlists() -> Vec<(&'static str, fixynn_core::netlist::Netlist)> {
    use fixynn_core::model::build_mobilenet;
    use fixynn_core::netlist::{freeze, FreezeSpec};

    let identity = freeze(&identity_model(4, 4, 2), &FreezeSpec::new(1)).unwrap();

    let mut dw = LayerSpec::conv(LayerKind::DepthwiseConv, 4, 4, 3, 2);
    dw.has_relu = false;
    let layers = vec![
        LayerSpec::conv(LayerKind::FullConv, 3, 4, 3, 1),
        dw,
        LayerSpec::conv(LayerKind::PointwiseConv, 4, 5, 1, 1),
        LayerSpec::fully_connected(3 * 3 * 5, 2),
    ];
    let graph = Graph::new(Shape::new(6, 5, 3), layers).unwrap();
    let model = random_frozen_direct(&mut rng(2024), graph);
    let mut spec = FreezeSpec::new(2).with_taps([1]);
    spec.bn_programmable = true;
    let small = freeze(&model, &spec).unwrap();

    let bundle = ModelBundle::synthetic(build_mobilenet(0.25, 32, 10).unwrap(), 5);
    let calib = vec![ActivationTensor::random(&mut rng(6), 32, 32, 3, -7)];
    let model = compress_model(&bundle, &CompressOptions::default(), &calib).unwrap();
    let mut spec = FreezeSpec::new(3).with_taps([2]);
    spec.bn_programmable = false;
    let mobilenet = freeze(&model, &spec).unwrap();

    vec![
        ("identity", identity),
        ("small_tapped", small),
        ("mobilenet32", mobilenet),
    ]
}

/// 50%-sparse MobileNet-0.25 at 224, the model the cost defaults are tuned on.
pub fn reference_model() -> FrozenModel {
    let graph = fixynn_core::model::build_mobilenet(0.25, 224, 1000).unwrap();
    let bundle = ModelBundle::synthetic(graph, 1);
    let calib = vec![ActivationTensor::random(&mut rng(1), 224, 224, 3, -7)];
    compress_model(&bundle, &CompressOptions::default(), &calib).unwrap()
}
