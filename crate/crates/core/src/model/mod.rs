// SPDX-License-Identifier: Apache-2.0

//! CNN graph representation: layer records, shape chaining, prefix units and
//! the real-valued model bundle.

mod arith;
pub mod io;
mod mobilenet;

use std::collections::BTreeMap;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::tensor::RealTensor;
use crate::{Error, Result};

pub use arith::{count_macs, count_params, fixed_ops_fraction, MacCounts, ParamCounts};
pub use mobilenet::{build_mobilenet, MOBILENET_CHANNELS, MOBILENET_WIDTHS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    FullConv,
    DepthwiseConv,
    PointwiseConv,
    AvgPool,
    FullyConnected,
}

impl LayerKind {
    pub fn is_conv(self) -> bool {
        matches!(
            self,
            LayerKind::FullConv | LayerKind::DepthwiseConv | LayerKind::PointwiseConv
        )
    }

    /// Layers that carry a weight tensor.
    pub fn has_weights(self) -> bool {
        self != LayerKind::AvgPool
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    #[serde(rename = "bn")]
    pub has_bn: bool,
    #[serde(rename = "relu")]
    pub has_relu: bool,
}

impl LayerSpec {
    pub fn conv(kind: LayerKind, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        Self {
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            has_bn: true,
            has_relu: true,
        }
    }

    pub fn avg_pool(channels: usize, kernel: usize) -> Self {
        Self {
            kind: LayerKind::AvgPool,
            in_channels: channels,
            out_channels: channels,
            kernel,
            stride: 1,
            has_bn: false,
            has_relu: false,
        }
    }

    pub fn fully_connected(inputs: usize, outputs: usize) -> Self {
        Self {
            kind: LayerKind::FullyConnected,
            in_channels: inputs,
            out_channels: outputs,
            kernel: 1,
            stride: 1,
            has_bn: false,
            has_relu: false,
        }
    }

    /// Input channels seen by each output channel.
    pub fn channels_per_group(&self) -> usize {
        match self.kind {
            LayerKind::DepthwiseConv | LayerKind::AvgPool => 1,
            _ => self.in_channels,
        }
    }

    /// Dense weights feeding one output channel.
    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.channels_per_group()
    }

    /// Shape of the weight tensor: `[out, k, k, in_per_group]` for convs,
    /// `[out, in]` for the FC layer.
    pub fn weight_dims(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::AvgPool => None,
            LayerKind::FullyConnected => Some(vec![self.out_channels, self.in_channels]),
            _ => Some(vec![
                self.out_channels,
                self.kernel,
                self.kernel,
                self.channels_per_group(),
            ]),
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weight_dims().map(|d| d.iter().product()).unwrap_or(0)
    }

    /// Symmetric SAME padding on each side.
    pub fn padding(&self) -> usize {
        if self.kind.is_conv() {
            (self.kernel - 1) / 2
        } else {
            0
        }
    }

    fn check(&self, index: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Shape(format!("layer {index}: {msg}")));
        if self.kernel < 1 {
            return bad("kernel must be >= 1".into());
        }
        if !matches!(self.stride, 1 | 2) {
            return bad(format!("stride {} not in {{1, 2}}", self.stride));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be >= 1".into());
        }
        match self.kind {
            LayerKind::DepthwiseConv | LayerKind::AvgPool
                if self.in_channels != self.out_channels =>
            {
                bad(format!(
                    "{:?} requires in_channels == out_channels ({} != {})",
                    self.kind, self.in_channels, self.out_channels
                ))
            }
            LayerKind::PointwiseConv if self.kernel != 1 => {
                bad("PointwiseConv requires kernel == 1".into())
            }
            k if k.is_conv() && self.kernel.is_multiple_of(2) => {
                bad("conv kernels must be odd for symmetric SAME padding".into())
            }
            LayerKind::FullyConnected | LayerKind::AvgPool if self.stride != 1 => {
                bad(format!("{:?} requires stride 1", self.kind))
            }
            LayerKind::FullyConnected if self.kernel != 1 => {
                bad("FullyConnected requires kernel == 1".into())
            }
            _ => Ok(()),
        }
    }
}

/// Height, width, channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn elements(&self) -> usize {
        self.pixels() * self.channels
    }
}

/// A validated, ordered CNN.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    input: Shape,
    layers: Vec<LayerSpec>,
    // shapes[i] is the input of layer i; shapes[len] the output of the net
    shapes: Vec<Shape>,
    units: Vec<Range<usize>>,
}

impl Graph {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        if input.height == 0 || input.width == 0 || input.channels == 0 {
            return Err(Error::Shape(format!("empty input shape {input:?}")));
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        let mut cur = input;
        shapes.push(cur);
        for (i, layer) in layers.iter().enumerate() {
            layer.check(i)?;
            let expected_in = if layer.kind == LayerKind::FullyConnected {
                cur.elements()
            } else {
                cur.channels
            };
            if layer.in_channels != expected_in {
                return Err(Error::Shape(format!(
                    "layer {i}: expects {} input channels, previous layer gives {}",
                    layer.in_channels, expected_in
                )));
            }
            cur = match layer.kind {
                LayerKind::AvgPool => {
                    if layer.kernel != cur.height || layer.kernel != cur.width {
                        return Err(Error::Shape(format!(
                            "layer {i}: global AvgPool kernel {} must equal the {}x{} map",
                            layer.kernel, cur.height, cur.width
                        )));
                    }
                    Shape::new(1, 1, cur.channels)
                }
                // flattens its whole input
                LayerKind::FullyConnected => Shape::new(1, 1, layer.out_channels),
                _ => Shape::new(
                    cur.height.div_ceil(layer.stride),
                    cur.width.div_ceil(layer.stride),
                    layer.out_channels,
                ),
            };
            shapes.push(cur);
        }
        let fc: Vec<usize> = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LayerKind::FullyConnected)
            .map(|(i, _)| i)
            .collect();
        if fc.len() != 1 || fc[0] + 1 != layers.len() {
            return Err(Error::Shape(
                "graph needs exactly one FullyConnected layer, placed last".into(),
            ));
        }
        let units = prefix_units(&layers);
        Ok(Self {
            input,
            layers,
            shapes,
            units,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &LayerSpec {
        &self.layers[index]
    }

    pub fn input_of(&self, layer: usize) -> Shape {
        self.shapes[layer]
    }

    pub fn output_of(&self, layer: usize) -> Shape {
        self.shapes[layer + 1]
    }

    pub fn output_shape(&self) -> Shape {
        self.shapes[self.layers.len()]
    }

    /// Layer ranges of the fixable prefix units, in order.
    pub fn prefix_units(&self) -> &[Range<usize>] {
        &self.units
    }

    pub fn num_prefix_units(&self) -> usize {
        self.units.len()
    }

    /// Number of layers covered by the first `n` prefix units.
    pub fn prefix_layer_count(&self, n: usize) -> Result<usize> {
        if n > self.units.len() {
            return Err(Error::range(
                "split depth",
                n,
                format!("0..={}", self.units.len()),
            ));
        }
        Ok(if n == 0 { 0 } else { self.units[n - 1].end })
    }
}

/// A unit is a FullConv, a PointwiseConv, or a DepthwiseConv together with
/// the PointwiseConv that follows it. Units stop at the first pool/FC layer.
fn prefix_units(layers: &[LayerSpec]) -> Vec<Range<usize>> {
    let mut units = Vec::new();
    let mut i = 0;
    while i < layers.len() && layers[i].kind.is_conv() {
        let end = if layers[i].kind == LayerKind::DepthwiseConv
            && layers.get(i + 1).map(|l| l.kind) == Some(LayerKind::PointwiseConv)
        {
            i + 2
        } else {
            i + 1
        };
        units.push(i..end);
        i = end;
    }
    units
}

/// Real-valued per-channel batch-norm affine `y = scale·x + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub scale: Vec<f32>,
    pub bias: Vec<f32>,
}

impl BnParams {
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            bias: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

/// A graph together with its real-valued parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub graph: Graph,
    pub weights: BTreeMap<usize, RealTensor>,
    pub bn: BTreeMap<usize, BnParams>,
    pub fc_bias: BTreeMap<usize, Vec<f32>>,
}

impl ModelBundle {
    pub fn new(
        graph: Graph,
        weights: BTreeMap<usize, RealTensor>,
        bn: BTreeMap<usize, BnParams>,
        fc_bias: BTreeMap<usize, Vec<f32>>,
    ) -> Result<Self> {
        let bundle = Self {
            graph,
            weights,
            bn,
            fc_bias,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.graph.layers().iter().enumerate() {
            match (layer.weight_dims(), self.weights.get(&i)) {
                (Some(dims), Some(t)) if t.dims == dims => {}
                (Some(dims), Some(t)) => {
                    return Err(Error::Shape(format!(
                        "layer {i}: weight dims {:?}, expected {dims:?}",
                        t.dims
                    )))
                }
                (Some(_), None) => {
                    return Err(Error::Shape(format!("layer {i}: missing weight tensor")))
                }
                (None, Some(_)) => {
                    return Err(Error::Shape(format!("layer {i}: unexpected weight tensor")))
                }
                (None, None) => {}
            }
            match self.bn.get(&i) {
                Some(bn) if !layer.has_bn => {
                    let _ = bn;
                    return Err(Error::Shape(format!(
                        "layer {i}: BN params on a non-BN layer"
                    )));
                }
                Some(bn)
                    if bn.scale.len() != layer.out_channels
                        || bn.bias.len() != layer.out_channels =>
                {
                    return Err(Error::Shape(format!(
                        "layer {i}: BN has {}/{} channels, layer has {}",
                        bn.scale.len(),
                        bn.bias.len(),
                        layer.out_channels
                    )));
                }
                None if layer.has_bn => {
                    return Err(Error::Shape(format!("layer {i}: missing BN params")))
                }
                _ => {}
            }
            if let Some(b) = self.fc_bias.get(&i) {
                if layer.kind != LayerKind::FullyConnected || b.len() != layer.out_channels {
                    return Err(Error::Shape(format!("layer {i}: bad FC bias")));
                }
            }
        }
        Ok(())
    }

    /// Seeded synthetic parameters: He-normal weights, BN scale in
    /// [0.5, 1.5), small BN/FC biases.
    pub fn synthetic(graph: Graph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = BTreeMap::new();
        let mut bn = BTreeMap::new();
        let mut fc_bias = BTreeMap::new();
        let scale = Uniform::new(0.5f32, 1.5);
        let shift = Uniform::new(-0.2f32, 0.2);
        for (i, layer) in graph.layers().iter().enumerate() {
            if let Some(dims) = layer.weight_dims() {
                let std = (2.0 / layer.fan_in().max(1) as f32).sqrt();
                let normal = Normal::new(0.0f32, std).expect("positive std");
                let n: usize = dims.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                weights.insert(i, RealTensor { dims, data });
            }
            if layer.has_bn {
                bn.insert(
                    i,
                    BnParams {
                        scale: (0..layer.out_channels)
                            .map(|_| scale.sample(&mut rng))
                            .collect(),
                        bias: (0..layer.out_channels)
                            .map(|_| shift.sample(&mut rng))
                            .collect(),
                    },
                );
            }
            if layer.kind == LayerKind::FullyConnected {
                fc_bias.insert(
                    i,
                    (0..layer.out_channels)
                        .map(|_| shift.sample(&mut rng) * 0.5)
                        .collect(),
                );
            }
        }
        Self {
            graph,
            weights,
            bn,
            fc_bias,
        }
    }
}
