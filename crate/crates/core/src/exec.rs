// SPDX-License-Identifier: Apache-2.0

//! Golden integer executor. This is the normative definition of what the
//! generated hardware computes: int8 × int8 products accumulated in checked
//! int32, the per-channel integer affine `(acc·m + b) >> r` with
//! round-half-to-even, saturation to int8 and optional ReLU. Convolutions use
//! symmetric SAME zero padding with output `(oy, ox)` centred on input
//! `(oy·s, ox·s)`.

use rayon::prelude::*;

use crate::compress::{FrozenLayer, FrozenModel};
use crate::model::{Graph, LayerKind, LayerSpec, Shape};
use crate::rounding::affine_requantize;
use crate::tensor::{ActivationTensor, QuantizedTensor};
use crate::{Error, Result};

/// Every layer's output for one image; the last entry holds the logits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub activations: Vec<ActivationTensor>,
}

impl Trace {
    pub fn logits(&self) -> &ActivationTensor {
        self.activations
            .last()
            .expect("graphs have at least one layer")
    }

    /// Activation at the end of prefix unit `k` (1-based).
    pub fn unit_output(&self, graph: &Graph, k: usize) -> Result<&ActivationTensor> {
        let units = graph.num_prefix_units();
        if k == 0 || k > units {
            return Err(Error::range("tap index", k, format!("1..={units}")));
        }
        Ok(&self.activations[graph.prefix_units()[k - 1].end - 1])
    }
}

fn overflow(layer: usize) -> Error {
    Error::Overflow(format!("layer {layer}: int32 accumulator overflow"))
}

/// Raw int32 accumulators of one layer, in output HWC order.
pub fn layer_accumulators(
    index: usize,
    layer: &LayerSpec,
    input: &ActivationTensor,
    weights: Option<&QuantizedTensor>,
) -> Result<Vec<i32>> {
    let in_shape = Shape::new(input.height, input.width, input.channels);
    if layer.kind != LayerKind::FullyConnected && in_shape.channels != layer.in_channels {
        return Err(Error::Shape(format!(
            "layer {index}: input has {} channels, expected {}",
            in_shape.channels, layer.in_channels
        )));
    }
    let weights = match (layer.weight_dims(), weights) {
        (Some(dims), Some(w)) if w.dims == dims => Some(&w.values),
        (None, _) => None,
        _ => {
            return Err(Error::Shape(format!(
                "layer {index}: weights missing or misshapen"
            )))
        }
    };
    match layer.kind {
        LayerKind::AvgPool => {
            let mut acc = vec![0i32; input.channels];
            for px in input.values.chunks_exact(input.channels) {
                for (a, &v) in acc.iter_mut().zip(px) {
                    *a = a.checked_add(v as i32).ok_or_else(|| overflow(index))?;
                }
            }
            Ok(acc)
        }
        LayerKind::FullyConnected => {
            let w = weights.expect("checked above");
            if input.values.len() != layer.in_channels {
                return Err(Error::Shape(format!(
                    "layer {index}: FC expects {} flattened inputs",
                    layer.in_channels
                )));
            }
            (0..layer.out_channels)
                .map(|co| {
                    let row = &w[co * layer.in_channels..(co + 1) * layer.in_channels];
                    row.iter()
                        .zip(&input.values)
                        .try_fold(0i32, |acc, (&wv, &x)| {
                            acc.checked_add(wv as i32 * x as i32)
                                .ok_or_else(|| overflow(index))
                        })
                })
                .collect()
        }
        _ => conv_accumulators(index, layer, input, weights.expect("checked above")),
    }
}

fn conv_accumulators(
    index: usize,
    layer: &LayerSpec,
    input: &ActivationTensor,
    w: &[i8],
) -> Result<Vec<i32>> {
    let (k, s, p) = (layer.kernel, layer.stride, layer.padding() as isize);
    let (h, wd) = (input.height as isize, input.width as isize);
    let out_h = input.height.div_ceil(s);
    let out_w = input.width.div_ceil(s);
    let cout = layer.out_channels;
    let cpg = layer.channels_per_group();
    let depthwise = layer.kind == LayerKind::DepthwiseConv;
    let mut out = vec![0i32; out_h * out_w * cout];
    out.par_chunks_mut(out_w * cout)
        .enumerate()
        .try_for_each(|(oy, row)| -> Result<()> {
            for ox in 0..out_w {
                for co in 0..cout {
                    let mut acc = 0i32;
                    for dy in 0..k {
                        let iy = (oy * s) as isize + dy as isize - p;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for dx in 0..k {
                            let ix = (ox * s) as isize + dx as isize - p;
                            if ix < 0 || ix >= wd {
                                continue;
                            }
                            let wbase = ((co * k + dy) * k + dx) * cpg;
                            let pixel = input.pixel(iy as usize, ix as usize);
                            if depthwise {
                                acc = acc
                                    .checked_add(w[wbase] as i32 * pixel[co] as i32)
                                    .ok_or_else(|| overflow(index))?;
                            } else {
                                for (j, &x) in pixel.iter().enumerate() {
                                    acc = acc
                                        .checked_add(w[wbase + j] as i32 * x as i32)
                                        .ok_or_else(|| overflow(index))?;
                                }
                            }
                        }
                    }
                    row[ox * cout + co] = acc;
                }
            }
            Ok(())
        })?;
    Ok(out)
}

/// Apply a frozen layer to its input activation.
pub fn run_layer(
    index: usize,
    layer: &LayerSpec,
    frozen: &FrozenLayer,
    input: &ActivationTensor,
) -> Result<ActivationTensor> {
    let acc = layer_accumulators(index, layer, input, frozen.weights.as_ref())?;
    requantize_layer(layer, frozen, input, &acc)
}

/// Requantize a layer's accumulators into its output activation.
pub fn requantize_layer(
    layer: &LayerSpec,
    frozen: &FrozenLayer,
    input: &ActivationTensor,
    acc: &[i32],
) -> Result<ActivationTensor> {
    let rq = &frozen.requant;
    let c = layer.out_channels;
    let values = acc
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let ch = i % c;
            affine_requantize(
                a,
                rq.multipliers[ch],
                rq.biases[ch],
                rq.shift,
                layer.has_relu,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let (h, w) = match layer.kind {
        LayerKind::AvgPool | LayerKind::FullyConnected => (1, 1),
        _ => (
            input.height.div_ceil(layer.stride),
            input.width.div_ceil(layer.stride),
        ),
    };
    ActivationTensor::from_values(h, w, c, values, frozen.output_exponent)
}

fn check_input(model: &FrozenModel, input: &ActivationTensor) -> Result<()> {
    let s = model.graph.input_shape();
    if input.dims() != [s.height, s.width, s.channels] {
        return Err(Error::Shape(format!(
            "input is {:?}, model expects {:?}",
            input.dims(),
            [s.height, s.width, s.channels]
        )));
    }
    if input.scale_exponent != model.input_exponent {
        return Err(Error::Shape(format!(
            "input scale exponent {} differs from the model's {}",
            input.scale_exponent, model.input_exponent
        )));
    }
    Ok(())
}

/// Run the first `layers` layers.
pub fn infer_prefix(model: &FrozenModel, input: &ActivationTensor, layers: usize) -> Result<Trace> {
    check_input(model, input)?;
    let mut activations: Vec<ActivationTensor> = Vec::with_capacity(layers);
    for i in 0..layers.min(model.graph.layers().len()) {
        let x = activations.last().unwrap_or(input);
        let y = run_layer(i, model.graph.layer(i), &model.layers[i], x)?;
        activations.push(y);
    }
    Ok(Trace { activations })
}

/// Full quantized inference.
pub fn infer(model: &FrozenModel, input: &ActivationTensor) -> Result<Trace> {
    infer_prefix(model, input, model.graph.layers().len())
}

/// Activation at prefix-unit boundary `k`.
pub fn tap(model: &FrozenModel, input: &ActivationTensor, k: usize) -> Result<ActivationTensor> {
    let units = model.graph.num_prefix_units();
    if k == 0 || k > units {
        return Err(Error::range("tap index", k, format!("1..={units}")));
    }
    let end = model.graph.prefix_units()[k - 1].end;
    let trace = infer_prefix(model, input, end)?;
    Ok(trace.activations[end - 1].clone())
}
