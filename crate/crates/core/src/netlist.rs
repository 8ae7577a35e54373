// SPDX-License-Identifier: Apache-2.0

//! Lowering of a frozen model's prefix into a fully-parallel, fully-pipelined
//! fixed-weight datapath.
//!
//! Each conv layer becomes one stage that emits one complete output pixel (all
//! channels) per cycle. A stage holds `k−1` line-buffer rows feeding a `k×k`
//! window, one constant-coefficient multiplier per nonzero weight, a balanced
//! adder tree per output channel, the BN register file, a requantizer and
//! ReLU.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compress::{FrozenLayer, FrozenModel, Requant};
use crate::exec;
use crate::model::{LayerKind, LayerSpec};
use crate::tensor::{ActivationTensor, QuantizedTensor};
use crate::{Error, Result};

pub const NETLIST_VERSION: u32 = 1;
pub const DEFAULT_CLOCK_HZ: f64 = 810.0e6;
/// BN affine, requantize, ReLU.
pub const POST_STAGES: u64 = 3;
pub const ACT_BITS: usize = 8;
pub const ACC_BITS: usize = 32;
pub const BN_MUL_BITS: usize = 16;
pub const BN_BIAS_BITS: usize = 32;
/// Width of the registered `acc·m + b` product.
pub const BN_PRODUCT_BITS: usize = 48;
pub const PRODUCT_BITS: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezeSpec {
    pub n_fixed: usize,
    pub taps: BTreeSet<usize>,
    pub bn_programmable: bool,
}

impl FreezeSpec {
    pub fn new(n_fixed: usize) -> Self {
        Self {
            n_fixed,
            taps: BTreeSet::new(),
            bn_programmable: true,
        }
    }

    pub fn with_taps(mut self, taps: impl IntoIterator<Item = usize>) -> Self {
        self.taps.extend(taps);
        self
    }
}

/// Shape and scale of a pixel stream between stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPort {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub exponent: i32,
}

impl StreamPort {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn bus_bits(&self) -> usize {
        self.channels * ACT_BITS
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineBuffer {
    pub rows: usize,
    pub width: usize,
    pub channels: usize,
}

impl LineBuffer {
    pub fn bits(&self) -> usize {
        self.rows * self.width * self.channels * ACT_BITS
    }
}

/// Position inside the `k×k×C_in` window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WindowTap {
    pub dy: usize,
    pub dx: usize,
    pub channel: usize,
}

/// A constant-coefficient multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Multiplier {
    pub weight: i8,
    pub tap: WindowTap,
    pub out_channel: usize,
}

/// Balanced pairwise reduction over `inputs` (multiplier indices): at every
/// level neighbours are summed in order and an odd last node passes through.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdderTree {
    pub out_channel: usize,
    pub inputs: Vec<usize>,
}

impl AdderTree {
    pub fn adders(&self) -> usize {
        self.inputs.len().saturating_sub(1)
    }

    /// `⌈log2(fan-in)⌉`.
    pub fn depth(&self) -> u64 {
        tree_depth(self.inputs.len())
    }

    /// Registered nodes per level when padded out to `stage_depth` levels.
    pub fn level_sizes(&self, stage_depth: u64) -> Vec<usize> {
        let mut n = self.inputs.len();
        (0..stage_depth)
            .map(|_| {
                n = n.div_ceil(2);
                n
            })
            .collect()
    }
}

pub fn tree_depth(fan_in: usize) -> u64 {
    if fan_in <= 1 {
        0
    } else {
        (usize::BITS - (fan_in - 1).leading_zeros()) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BnRegisterFile {
    /// Writable through the load port; otherwise baked constants.
    pub programmable: bool,
    pub shift: u32,
    pub multipliers: Vec<i32>,
    pub biases: Vec<i32>,
}

impl BnRegisterFile {
    pub fn bits(&self) -> usize {
        if self.programmable {
            self.multipliers.len() * (BN_MUL_BITS + BN_BIAS_BITS)
        } else {
            0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLatency {
    /// Beats between a window's centre pixel and its bottom-right pixel.
    pub window_fill: u64,
    pub adder_tree: u64,
    pub post: u64,
}

impl StageLatency {
    pub fn total(&self) -> u64 {
        self.window_fill + self.adder_tree + self.post
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub index: usize,
    /// Source layer in the model graph.
    pub layer: usize,
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub input: StreamPort,
    pub output: StreamPort,
    pub weight_exponent: i32,
    pub dense_weights: usize,
    pub line_buffer: LineBuffer,
    pub multipliers: Vec<Multiplier>,
    pub adder_trees: Vec<AdderTree>,
    pub bn: BnRegisterFile,
    pub relu: bool,
    pub latency: StageLatency,
}

impl Stage {
    pub fn window_bits(&self) -> usize {
        self.kernel * self.kernel * self.input.channels * ACT_BITS
    }

    pub fn tree_depth(&self) -> u64 {
        self.latency.adder_tree
    }

    pub fn adders(&self) -> usize {
        self.adder_trees.iter().map(AdderTree::adders).sum()
    }

    /// Pipeline registers: window, product and adder-tree levels, BN file,
    /// and the BN/requant/ReLU output registers.
    pub fn register_bits(&self) -> usize {
        let depth = self.tree_depth();
        let tree: usize = self
            .adder_trees
            .iter()
            .map(|t| t.level_sizes(depth).iter().sum::<usize>() * ACC_BITS)
            .sum();
        let post = self.output.channels * (BN_PRODUCT_BITS + 2 * ACT_BITS);
        self.window_bits() + tree + self.bn.bits() + post
    }

    pub fn dense_macs(&self) -> u64 {
        (self.output.pixels() * self.dense_weights) as u64
    }

    pub fn layer_spec(&self) -> LayerSpec {
        LayerSpec {
            kind: self.kind,
            in_channels: self.input.channels,
            out_channels: self.output.channels,
            kernel: self.kernel,
            stride: self.stride,
            has_bn: self.bn.programmable,
            has_relu: self.relu,
        }
    }

    /// The dense weight tensor encoded by the multiplier list.
    pub fn dense_weight_tensor(&self) -> QuantizedTensor {
        let spec = self.layer_spec();
        let dims = spec.weight_dims().expect("stages are convolutions");
        let cpg = spec.channels_per_group();
        let k = self.kernel;
        let mut values = vec![0i8; spec.weight_count()];
        for m in &self.multipliers {
            let j = if self.kind == LayerKind::DepthwiseConv {
                0
            } else {
                m.tap.channel
            };
            values[((m.out_channel * k + m.tap.dy) * k + m.tap.dx) * cpg + j] = m.weight;
        }
        QuantizedTensor {
            dims,
            values,
            scale_exponent: self.weight_exponent,
        }
    }

    /// The stage as a frozen layer, for running the golden executor on it.
    pub fn frozen_layer(&self) -> FrozenLayer {
        FrozenLayer {
            weights: Some(self.dense_weight_tensor()),
            requant: Requant {
                shift: self.bn.shift,
                multipliers: self.bn.multipliers.clone(),
                biases: self.bn.biases.clone(),
            },
            input_exponent: self.input.exponent,
            output_exponent: self.output.exponent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapPort {
    /// Prefix-unit boundary (1-based).
    pub unit: usize,
    /// Stage whose output the tap exposes.
    pub stage: usize,
    pub port: StreamPort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    pub version: u32,
    pub clock_hz: f64,
    pub n_fixed: usize,
    pub bn_programmable: bool,
    pub input: StreamPort,
    pub output: StreamPort,
    pub stages: Vec<Stage>,
    /// `unit_ends[k-1]` is the last stage of prefix unit `k`.
    pub unit_ends: Vec<usize>,
    pub taps: Vec<TapPort>,
}

/// Exact structural counts of a netlist.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub multipliers: u64,
    pub adders: u64,
    pub register_bits: u64,
    pub line_buffer_bits: u64,
    pub pipeline_depth: u64,
    pub max_stage_output_pixels: u64,
    pub dense_weights: u64,
    pub dense_macs_per_frame: u64,
}

fn stage_from_layer(
    index: usize,
    layer_index: usize,
    spec: &LayerSpec,
    frozen: &FrozenLayer,
    input: StreamPort,
    programmable: bool,
) -> Result<Stage> {
    let weights = frozen
        .weights
        .as_ref()
        .ok_or_else(|| Error::Config(format!("layer {layer_index} has no quantized weights")))?;
    let (k, cpg) = (spec.kernel, spec.channels_per_group());
    let mut multipliers = Vec::new();
    let mut adder_trees = Vec::with_capacity(spec.out_channels);
    for co in 0..spec.out_channels {
        let mut inputs = Vec::new();
        for dy in 0..k {
            for dx in 0..k {
                for j in 0..cpg {
                    let w = weights.values[((co * k + dy) * k + dx) * cpg + j];
                    if w == 0 {
                        continue;
                    }
                    let channel = if spec.kind == LayerKind::DepthwiseConv {
                        co
                    } else {
                        j
                    };
                    inputs.push(multipliers.len());
                    multipliers.push(Multiplier {
                        weight: w,
                        tap: WindowTap { dy, dx, channel },
                        out_channel: co,
                    });
                }
            }
        }
        adder_trees.push(AdderTree {
            out_channel: co,
            inputs,
        });
    }
    let pad = spec.padding();
    let depth = adder_trees.iter().map(AdderTree::depth).max().unwrap_or(0);
    let output = StreamPort {
        height: input.height.div_ceil(spec.stride),
        width: input.width.div_ceil(spec.stride),
        channels: spec.out_channels,
        exponent: frozen.output_exponent,
    };
    Ok(Stage {
        index,
        layer: layer_index,
        kind: spec.kind,
        kernel: k,
        stride: spec.stride,
        padding: pad,
        input,
        output,
        weight_exponent: weights.scale_exponent,
        dense_weights: spec.weight_count(),
        line_buffer: LineBuffer {
            rows: k - 1,
            width: input.width,
            channels: input.channels,
        },
        multipliers,
        adder_trees,
        bn: BnRegisterFile {
            programmable,
            shift: frozen.requant.shift,
            multipliers: frozen.requant.multipliers.clone(),
            biases: frozen.requant.biases.clone(),
        },
        relu: spec.has_relu,
        latency: StageLatency {
            window_fill: (pad * input.width + pad) as u64,
            adder_tree: depth,
            post: POST_STAGES,
        },
    })
}

/// Lower the first `spec.n_fixed` prefix units of `model` into a netlist.
pub fn freeze(model: &FrozenModel, spec: &FreezeSpec) -> Result<Netlist> {
    let graph = &model.graph;
    let units = graph.num_prefix_units();
    if spec.n_fixed > units {
        return Err(Error::range(
            "n_fixed",
            spec.n_fixed,
            format!("0..={units}"),
        ));
    }
    if let Some(&t) = spec.taps.iter().find(|&&t| t == 0 || t > spec.n_fixed) {
        return Err(Error::range("tap", t, format!("1..={}", spec.n_fixed)));
    }
    if model.bits != 8 {
        return Err(Error::Config(format!(
            "prefix weights must be 8-bit quantized, model has {} bits",
            model.bits
        )));
    }
    let s = graph.input_shape();
    let input = StreamPort {
        height: s.height,
        width: s.width,
        channels: s.channels,
        exponent: model.input_exponent,
    };
    let mut stages = Vec::new();
    let mut unit_ends = Vec::with_capacity(spec.n_fixed);
    let mut port = input;
    for range in &graph.prefix_units()[..spec.n_fixed] {
        for li in range.clone() {
            let layer = graph.layer(li);
            let stage = stage_from_layer(
                stages.len(),
                li,
                layer,
                &model.layers[li],
                port,
                spec.bn_programmable && layer.has_bn,
            )?;
            port = stage.output;
            stages.push(stage);
        }
        unit_ends.push(stages.len() - 1);
    }
    let taps = spec
        .taps
        .iter()
        .map(|&unit| {
            let stage = unit_ends[unit - 1];
            TapPort {
                unit,
                stage,
                port: stages[stage].output,
            }
        })
        .collect();
    Ok(Netlist {
        version: NETLIST_VERSION,
        clock_hz: DEFAULT_CLOCK_HZ,
        n_fixed: spec.n_fixed,
        bn_programmable: spec.bn_programmable,
        input,
        output: port,
        stages,
        unit_ends,
        taps,
    })
}

pub fn pipeline_stats(netlist: &Netlist) -> PipelineStats {
    let mut st = PipelineStats::default();
    for s in &netlist.stages {
        st.multipliers += s.multipliers.len() as u64;
        st.adders += s.adders() as u64;
        st.register_bits += s.register_bits() as u64;
        st.line_buffer_bits += s.line_buffer.bits() as u64;
        st.pipeline_depth += s.latency.total();
        st.max_stage_output_pixels = st.max_stage_output_pixels.max(s.output.pixels() as u64);
        st.dense_weights += s.dense_weights as u64;
        st.dense_macs_per_frame += s.dense_macs();
    }
    st
}

impl Netlist {
    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Check every structural invariant the simulator and emitter rely on.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Structure(msg));
        if self.version != NETLIST_VERSION {
            return bad(format!("unsupported netlist version {}", self.version));
        }
        let mut port = self.input;
        for (i, s) in self.stages.iter().enumerate() {
            if s.index != i {
                return bad(format!("stage {i} carries index {}", s.index));
            }
            if s.input != port {
                return bad(format!(
                    "stage {i}: input port does not match upstream output"
                ));
            }
            if !s.kind.is_conv() || s.kernel % 2 == 0 || !matches!(s.stride, 1 | 2) {
                return bad(format!(
                    "stage {i}: unsupported {:?} k={} s={}",
                    s.kind, s.kernel, s.stride
                ));
            }
            if s.padding != (s.kernel - 1) / 2 || s.line_buffer.rows != s.kernel - 1 {
                return bad(format!(
                    "stage {i}: padding/line buffer disagree with kernel"
                ));
            }
            if s.output.height != s.input.height.div_ceil(s.stride)
                || s.output.width != s.input.width.div_ceil(s.stride)
            {
                return bad(format!("stage {i}: output dims disagree with stride"));
            }
            let cout = s.output.channels;
            if s.adder_trees.len() != cout
                || s.bn.multipliers.len() != cout
                || s.bn.biases.len() != cout
            {
                return bad(format!(
                    "stage {i}: per-channel structures do not cover {cout} channels"
                ));
            }
            let mut used = vec![false; s.multipliers.len()];
            for (c, tree) in s.adder_trees.iter().enumerate() {
                if tree.out_channel != c {
                    return bad(format!(
                        "stage {i}: adder tree {c} drives channel {}",
                        tree.out_channel
                    ));
                }
                for &m in &tree.inputs {
                    match (s.multipliers.get(m), used.get(m)) {
                        (Some(mul), Some(false)) if mul.out_channel == c => used[m] = true,
                        _ => return bad(format!("stage {i}: adder tree {c} has bad input {m}")),
                    }
                }
            }
            if used.iter().any(|u| !u) {
                return bad(format!(
                    "stage {i}: multiplier not connected to any adder tree"
                ));
            }
            for m in &s.multipliers {
                if m.weight == 0 {
                    return bad(format!("stage {i}: zero-weight multiplier"));
                }
                let channel_ok = if s.kind == LayerKind::DepthwiseConv {
                    m.tap.channel == m.out_channel
                } else {
                    m.tap.channel < s.input.channels
                };
                if m.tap.dy >= s.kernel || m.tap.dx >= s.kernel || !channel_ok {
                    return bad(format!(
                        "stage {i}: multiplier tap {:?} outside the window",
                        m.tap
                    ));
                }
            }
            let depth = s
                .adder_trees
                .iter()
                .map(AdderTree::depth)
                .max()
                .unwrap_or(0);
            if s.latency.adder_tree != depth || s.latency.post != POST_STAGES {
                return bad(format!("stage {i}: latency does not match structure"));
            }
            if s.bn.shift > 62 {
                return bad(format!("stage {i}: BN shift {} too large", s.bn.shift));
            }
            port = s.output;
        }
        if port != self.output {
            return bad("netlist output port does not match the last stage".into());
        }
        if self.unit_ends.len() != self.n_fixed
            || self.unit_ends.windows(2).any(|w| w[0] >= w[1])
            || self
                .unit_ends
                .last()
                .map_or(!self.stages.is_empty(), |&e| e + 1 != self.stages.len())
        {
            return bad("unit boundaries inconsistent with stages".into());
        }
        for t in &self.taps {
            if t.unit == 0 || t.unit > self.n_fixed || self.unit_ends[t.unit - 1] != t.stage {
                return bad(format!("tap {} is not a declared prefix boundary", t.unit));
            }
            if t.port != self.stages[t.stage].output {
                return bad(format!("tap {} port does not match its stage", t.unit));
            }
        }
        Ok(())
    }

    /// Golden-executor outputs of every stage for one input image.
    pub fn reference_outputs(&self, input: &ActivationTensor) -> Result<Vec<ActivationTensor>> {
        if input.dims() != [self.input.height, self.input.width, self.input.channels]
            || input.scale_exponent != self.input.exponent
        {
            return Err(Error::Shape(
                "input does not match the netlist's input port".into(),
            ));
        }
        let mut outs: Vec<ActivationTensor> = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let x = outs.last().unwrap_or(input);
            outs.push(exec::run_layer(
                s.layer,
                &s.layer_spec(),
                &s.frozen_layer(),
                x,
            )?);
        }
        Ok(outs)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let netlist: Netlist = serde_json::from_str(&text)?;
        netlist.validate()?;
        Ok(netlist)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
