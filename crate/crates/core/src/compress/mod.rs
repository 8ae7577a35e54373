// SPDX-License-Identifier: Apache-2.0

//! Pruning, 8-bit power-of-two quantization and BN register preparation,
//! producing the frozen integer model.

mod bn;
mod prune;
mod quant;

use std::collections::BTreeMap;
use std::path::Path;

use crate::exec::{layer_accumulators, requantize_layer};
use crate::model::io::{
    default_blob_name, read_blob, write_blob, BlobData, BlobRecord, LayerQuant, Manifest,
    QuantizationSection, TensorRole,
};
use crate::model::{BnParams, Graph, LayerKind, ModelBundle};
use crate::tensor::{ActivationTensor, QuantizedTensor};
use crate::{Error, Result};

pub use bn::{choose_bn_shift, prepare_bn, Requant, MAX_BN_SHIFT};
pub use prune::{prune_magnitude, PruneSpec, Pruned};
pub use quant::{power_of_two_exponent, quantize_tensor};

/// One layer of a frozen model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrozenLayer {
    pub weights: Option<QuantizedTensor>,
    pub requant: Requant,
    pub input_exponent: i32,
    pub output_exponent: i32,
}

impl FrozenLayer {
    /// Exponent of the int32 accumulator.
    pub fn acc_exponent(&self) -> i32 {
        self.input_exponent + self.weights.as_ref().map_or(0, |w| w.scale_exponent)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrozenModel {
    pub graph: Graph,
    pub input_exponent: i32,
    pub layers: Vec<FrozenLayer>,
    pub sparsity: f64,
    pub bits: u32,
}

impl FrozenModel {
    pub fn new(graph: Graph, input_exponent: i32, layers: Vec<FrozenLayer>) -> Result<Self> {
        let model = Self {
            graph,
            input_exponent,
            layers,
            sparsity: 0.0,
            bits: 8,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != self.graph.layers().len() {
            return Err(Error::Shape(format!(
                "{} frozen layers for a {}-layer graph",
                self.layers.len(),
                self.graph.layers().len()
            )));
        }
        let mut exp = self.input_exponent;
        for (i, (spec, layer)) in self.graph.layers().iter().zip(&self.layers).enumerate() {
            if layer.input_exponent != exp {
                return Err(Error::Shape(format!(
                    "layer {i}: input exponent {} does not chain from {exp}",
                    layer.input_exponent
                )));
            }
            match (spec.weight_dims(), &layer.weights) {
                (Some(d), Some(w)) if w.dims == d && w.values.len() == spec.weight_count() => {}
                (None, None) => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "layer {i}: quantized weights missing or misshapen"
                    )))
                }
            }
            layer
                .requant
                .check(spec.out_channels)
                .map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
            exp = layer.output_exponent;
        }
        Ok(())
    }

    /// Same model with layer `index`'s BN re-encoded from new real parameters,
    /// keeping its exponents and shift. Weights are untouched.
    pub fn with_bn(&self, index: usize, bn: &BnParams) -> Result<Self> {
        let spec = self
            .graph
            .layers()
            .get(index)
            .ok_or_else(|| Error::range("layer index", index, self.graph.layers().len()))?;
        if !spec.has_bn || bn.channels() != spec.out_channels {
            return Err(Error::Shape(format!(
                "layer {index} has no BN site with {} channels",
                bn.channels()
            )));
        }
        let mut out = self.clone();
        let layer = &mut out.layers[index];
        layer.requant = prepare_bn(
            bn,
            layer.acc_exponent(),
            layer.output_exponent,
            layer.requant.shift,
        )?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressOptions {
    pub sparsity: f64,
    pub bits: u32,
    /// Per-layer output exponent overrides, bypassing calibration.
    pub output_exponents: BTreeMap<usize, i32>,
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self {
            sparsity: 0.5,
            bits: 8,
            output_exponents: BTreeMap::new(),
        }
    }
}

/// The real BN affine applied at a layer's output.
fn layer_affine(bundle: &ModelBundle, index: usize) -> BnParams {
    let spec = bundle.graph.layer(index);
    match spec.kind {
        LayerKind::AvgPool => BnParams {
            scale: vec![1.0 / (spec.kernel * spec.kernel) as f32; spec.out_channels],
            bias: vec![0.0; spec.out_channels],
        },
        LayerKind::FullyConnected => BnParams {
            scale: vec![1.0; spec.out_channels],
            bias: bundle
                .fc_bias
                .get(&index)
                .cloned()
                .unwrap_or_else(|| vec![0.0; spec.out_channels]),
        },
        _ if spec.has_bn => bundle.bn[&index].clone(),
        _ => BnParams::identity(spec.out_channels),
    }
}

/// Prune, quantize and calibrate a real-valued model.
///
/// Activation exponents are calibrated layer by layer from `calib` by max-abs
/// of the real-valued layer output, computed from the same integer
/// accumulators the executor uses.
pub fn compress_model(
    bundle: &ModelBundle,
    opts: &CompressOptions,
    calib: &[ActivationTensor],
) -> Result<FrozenModel> {
    bundle.validate()?;
    if opts.bits != 8 {
        return Err(Error::Config(format!(
            "only 8-bit hardware quantization is supported, got {}",
            opts.bits
        )));
    }
    let prune = PruneSpec::new(opts.sparsity)?;
    let graph = &bundle.graph;
    let first = calib
        .first()
        .ok_or_else(|| Error::Config("calibration batch is empty".into()))?;
    let s = graph.input_shape();
    for img in calib {
        if img.dims() != [s.height, s.width, s.channels]
            || img.scale_exponent != first.scale_exponent
        {
            return Err(Error::Shape(
                "calibration images must match the model input shape and share one exponent".into(),
            ));
        }
    }
    let input_exponent = first.scale_exponent;
    let mut acts: Vec<ActivationTensor> = calib.to_vec();
    let mut layers = Vec::with_capacity(graph.layers().len());
    let mut in_exp = input_exponent;
    for (i, spec) in graph.layers().iter().enumerate() {
        let weights = match bundle.weights.get(&i) {
            Some(w) => {
                let pruned = prune_magnitude(w, &prune)?;
                Some(quantize_tensor(&pruned.tensor, opts.bits)?)
            }
            None => None,
        };
        let affine = layer_affine(bundle, i);
        let accs = acts
            .iter()
            .map(|x| layer_accumulators(i, spec, x, weights.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let acc_exp = in_exp + weights.as_ref().map_or(0, |w| w.scale_exponent);
        let out_exp = match opts.output_exponents.get(&i) {
            Some(&e) => e,
            None if spec.kind == LayerKind::AvgPool => in_exp,
            None => {
                let acc_scale = (acc_exp as f64).exp2();
                let c = spec.out_channels;
                let mut max_abs = 0.0f64;
                for acc in &accs {
                    for (j, &a) in acc.iter().enumerate() {
                        let ch = j % c;
                        let mut y =
                            affine.scale[ch] as f64 * a as f64 * acc_scale + affine.bias[ch] as f64;
                        if spec.has_relu {
                            y = y.max(0.0);
                        }
                        max_abs = max_abs.max(y.abs());
                    }
                }
                power_of_two_exponent(max_abs, 127.0)
            }
        };
        let shift = choose_bn_shift(&affine, acc_exp, out_exp)?;
        let requant = prepare_bn(&affine, acc_exp, out_exp, shift)?;
        let layer = FrozenLayer {
            weights,
            requant,
            input_exponent: in_exp,
            output_exponent: out_exp,
        };
        acts = acts
            .iter()
            .zip(&accs)
            .map(|(x, acc)| requantize_layer(spec, &layer, x, acc))
            .collect::<Result<Vec<_>>>()?;
        layers.push(layer);
        in_exp = out_exp;
    }
    let mut model = FrozenModel::new(graph.clone(), input_exponent, layers)?;
    model.sparsity = opts.sparsity;
    model.bits = opts.bits;
    Ok(model)
}

fn tag(i: usize) -> Result<u16> {
    u16::try_from(i).map_err(|_| Error::range("layer index", i, "u16"))
}

/// Write a frozen model: manifest with a `quantization` section plus a blob of
/// int8 weights and int32 BN registers.
pub fn save_frozen(model: &FrozenModel, manifest_path: &Path) -> Result<()> {
    let mut manifest = Manifest::for_graph(&model.graph);
    let blob_name = default_blob_name(manifest_path);
    let mut records = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        if let Some(w) = &layer.weights {
            records.push(BlobRecord {
                layer: tag(i)?,
                role: TensorRole::Weight,
                dims: w.dims.clone(),
                data: BlobData::I8(w.values.clone()),
            });
        }
        let n = layer.requant.channels();
        records.push(BlobRecord {
            layer: tag(i)?,
            role: TensorRole::BnScale,
            dims: vec![n],
            data: BlobData::I32(layer.requant.multipliers.clone()),
        });
        records.push(BlobRecord {
            layer: tag(i)?,
            role: TensorRole::BnBias,
            dims: vec![n],
            data: BlobData::I32(layer.requant.biases.clone()),
        });
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    write_blob(&dir.join(&blob_name), &records)?;
    manifest.weights = Some(blob_name);
    manifest.quantization = Some(QuantizationSection {
        bits: model.bits,
        sparsity: model.sparsity,
        input_exponent: model.input_exponent,
        layers: model
            .layers
            .iter()
            .map(|l| LayerQuant {
                weight_exponent: l.weights.as_ref().map(|w| w.scale_exponent),
                output_exponent: l.output_exponent,
                shift: l.requant.shift,
            })
            .collect(),
    });
    manifest.write(manifest_path)
}

pub fn load_frozen(manifest_path: &Path) -> Result<FrozenModel> {
    let manifest = Manifest::read(manifest_path)?;
    let graph = manifest.graph()?;
    let quant = manifest.quantization.clone().ok_or_else(|| {
        Error::Format("manifest has no quantization section (not a frozen model)".into())
    })?;
    if quant.layers.len() != graph.layers().len() {
        return Err(Error::Format("quantization section length mismatch".into()));
    }
    let mut weights: BTreeMap<usize, (Vec<usize>, Vec<i8>)> = BTreeMap::new();
    let mut muls: BTreeMap<usize, Vec<i32>> = BTreeMap::new();
    let mut biases: BTreeMap<usize, Vec<i32>> = BTreeMap::new();
    for r in read_blob(&manifest.blob_path(manifest_path)?)? {
        let layer = r.layer as usize;
        match (r.role, r.data) {
            (TensorRole::Weight, BlobData::I8(v)) => {
                weights.insert(layer, (r.dims, v));
            }
            (TensorRole::BnScale, BlobData::I32(v)) => {
                muls.insert(layer, v);
            }
            (TensorRole::BnBias, BlobData::I32(v)) => {
                biases.insert(layer, v);
            }
            (role, _) => {
                return Err(Error::Format(format!(
                    "layer {layer}: unexpected {role:?} record in a frozen blob"
                )))
            }
        }
    }
    let mut in_exp = quant.input_exponent;
    let mut layers = Vec::with_capacity(quant.layers.len());
    for (i, q) in quant.layers.iter().enumerate() {
        let w = match (weights.remove(&i), q.weight_exponent) {
            (Some((dims, values)), Some(e)) => Some(QuantizedTensor {
                dims,
                values,
                scale_exponent: e,
            }),
            (None, None) => None,
            _ => {
                return Err(Error::Format(format!(
                    "layer {i}: weight/exponent mismatch"
                )))
            }
        };
        let missing = || Error::Format(format!("layer {i}: missing BN registers"));
        layers.push(FrozenLayer {
            weights: w,
            requant: Requant {
                shift: q.shift,
                multipliers: muls.remove(&i).ok_or_else(missing)?,
                biases: biases.remove(&i).ok_or_else(missing)?,
            },
            input_exponent: in_exp,
            output_exponent: q.output_exponent,
        });
        in_exp = q.output_exponent;
    }
    let mut model = FrozenModel::new(graph, quant.input_exponent, layers)?;
    model.sparsity = quant.sparsity;
    model.bits = quant.bits;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_mobilenet;
    use rand::SeedableRng;

    fn small() -> (ModelBundle, Vec<ActivationTensor>) {
        let g = build_mobilenet(0.25, 32, 4).unwrap();
        let bundle = ModelBundle::synthetic(g, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let calib = (0..2)
            .map(|_| ActivationTensor::random(&mut rng, 32, 32, 3, -7))
            .collect();
        (bundle, calib)
    }

    #[test]
    fn compress_prunes_every_weight_layer_to_half() {
        let (bundle, calib) = small();
        let m = compress_model(&bundle, &CompressOptions::default(), &calib).unwrap();
        for (spec, layer) in m.graph.layers().iter().zip(&m.layers) {
            if let Some(w) = &layer.weights {
                let n = spec.weight_count();
                assert!(n - w.nonzero() >= n / 2);
            }
        }
    }

    #[test]
    fn rejects_unsupported_options() {
        let (bundle, calib) = small();
        let opts = CompressOptions {
            bits: 4,
            ..Default::default()
        };
        assert!(matches!(
            compress_model(&bundle, &opts, &calib),
            Err(Error::Config(_))
        ));
        assert!(compress_model(&bundle, &CompressOptions::default(), &[]).is_err());
    }

    #[test]
    fn exponent_override_is_honoured() {
        let (bundle, calib) = small();
        let mut opts = CompressOptions::default();
        opts.output_exponents.insert(0, -3);
        let m = compress_model(&bundle, &opts, &calib).unwrap();
        assert_eq!(m.layers[0].output_exponent, -3);
        assert_eq!(m.layers[1].input_exponent, -3);
    }

    #[test]
    fn frozen_roundtrip_through_files() {
        let (bundle, calib) = small();
        let m = compress_model(&bundle, &CompressOptions::default(), &calib).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frozen.json");
        save_frozen(&m, &path).unwrap();
        assert_eq!(load_frozen(&path).unwrap(), m);
    }

    #[test]
    fn with_bn_keeps_shift_and_weights() {
        let (bundle, calib) = small();
        let m = compress_model(&bundle, &CompressOptions::default(), &calib).unwrap();
        let c = m.graph.layer(0).out_channels;
        let bn = BnParams {
            scale: vec![0.75; c],
            bias: vec![0.05; c],
        };
        let m2 = m.with_bn(0, &bn).unwrap();
        assert_eq!(m2.layers[0].weights, m.layers[0].weights);
        assert_eq!(m2.layers[0].requant.shift, m.layers[0].requant.shift);
        assert!(m.with_bn(27, &bn).is_err());
    }
}
