// SPDX-License-Identifier: Apache-2.0

//! On-disk model format: a JSON manifest plus a binary weight blob.
//!
//! Blob layout (little-endian): magic `FXNN`, `u16` version, then records of
//! `u16` layer index, `u8` role, `u8` rank, `rank × u32` dims, `u8` dtype and
//! the payload.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BnParams, Graph, LayerKind, LayerSpec, ModelBundle, Shape};
use crate::tensor::RealTensor;
use crate::{Error, Result};

const BLOB_MAGIC: &[u8; 4] = b"FXNN";
pub const BLOB_VERSION: u16 = 1;
pub const MANIFEST_FORMAT: &str = "fixynn-model";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TensorRole {
    Weight = 0,
    BnScale = 1,
    BnBias = 2,
    FcBias = 3,
}

impl TensorRole {
    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Self::Weight,
            1 => Self::BnScale,
            2 => Self::BnBias,
            3 => Self::FcBias,
            t => return Err(Error::Format(format!("unknown tensor role tag {t}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlobData {
    F32(Vec<f32>),
    I8(Vec<i8>),
    /// Integer registers (frozen BN multiplier/bias).
    I32(Vec<i32>),
}

impl BlobData {
    fn tag(&self) -> u8 {
        match self {
            BlobData::F32(_) => 0,
            BlobData::I8(_) => 1,
            BlobData::I32(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            BlobData::F32(v) => v.len(),
            BlobData::I8(v) => v.len(),
            BlobData::I32(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlobRecord {
    pub layer: u16,
    pub role: TensorRole,
    pub dims: Vec<usize>,
    pub data: BlobData,
}

pub fn encode_blob(records: &[BlobRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    for r in records {
        let n: usize = r.dims.iter().product();
        if n != r.data.len() {
            return Err(Error::Shape(format!(
                "blob record for layer {}: dims {:?} vs {} values",
                r.layer,
                r.dims,
                r.data.len()
            )));
        }
        out.extend_from_slice(&r.layer.to_le_bytes());
        out.push(r.role as u8);
        out.push(
            u8::try_from(r.dims.len())
                .map_err(|_| Error::range("rank", r.dims.len(), "0..=255"))?,
        );
        for &d in &r.dims {
            let d = u32::try_from(d).map_err(|_| Error::range("dim", d, "u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(r.data.tag());
        match &r.data {
            BlobData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlobData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
            BlobData::I32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Format("truncated weight blob".into()));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_blob(bytes: &[u8]) -> Result<Vec<BlobRecord>> {
    let mut cur = Cursor(bytes);
    if cur.take(4)? != BLOB_MAGIC {
        return Err(Error::Format("not a weight blob (bad magic)".into()));
    }
    let version = cur.u16()?;
    if version != BLOB_VERSION {
        return Err(Error::Format(format!("unsupported blob version {version}")));
    }
    let mut records = Vec::new();
    while !cur.0.is_empty() {
        let layer = cur.u16()?;
        let role = TensorRole::from_tag(cur.u8()?)?;
        let rank = cur.u8()? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = match cur.u8()? {
            0 => BlobData::F32(
                cur.take(4 * n)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => BlobData::I8(cur.take(n)?.iter().map(|&b| b as i8).collect()),
            2 => BlobData::I32(
                cur.take(4 * n)?
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
        };
        records.push(BlobRecord {
            layer,
            role,
            dims,
            data,
        });
    }
    Ok(records)
}

/// Per-layer quantization metadata of a frozen model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerQuant {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_exponent: Option<i32>,
    pub output_exponent: i32,
    pub shift: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationSection {
    pub bits: u32,
    pub sparsity: f64,
    pub input_exponent: i32,
    pub layers: Vec<LayerQuant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    /// Weight blob path, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantization: Option<QuantizationSection>,
}

impl Manifest {
    pub fn for_graph(graph: &Graph) -> Self {
        let s = graph.input_shape();
        Self {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            input_shape: [s.height, s.width, s.channels],
            layers: graph.layers().to_vec(),
            weights: None,
            quantization: None,
        }
    }

    pub fn graph(&self) -> Result<Graph> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!(
                "manifest format {:?}, expected {MANIFEST_FORMAT:?}",
                self.format
            )));
        }
        let [h, w, c] = self.input_shape;
        Graph::new(Shape::new(h, w, c), self.layers.clone())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Absolute path of the weight blob referenced by a manifest at `manifest_path`.
    pub fn blob_path(&self, manifest_path: &Path) -> Result<PathBuf> {
        let name = self
            .weights
            .as_ref()
            .ok_or_else(|| Error::Format("manifest has no \"weights\" entry".into()))?;
        Ok(manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(name))
    }
}

pub fn read_blob(path: &Path) -> Result<Vec<BlobRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_blob(&bytes)
}

pub fn write_blob(path: &Path, records: &[BlobRecord]) -> Result<()> {
    std::fs::write(path, encode_blob(records)?).map_err(|e| Error::io(path, e))
}

/// Default blob file name next to a manifest: `<stem>.bin`.
pub fn default_blob_name(manifest_path: &Path) -> String {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    format!("{stem}.bin")
}

fn layer_tag(index: usize) -> Result<u16> {
    u16::try_from(index).map_err(|_| Error::range("layer index", index, "u16"))
}

/// Write a real-valued bundle as manifest + f32 blob.
pub fn save_bundle(bundle: &ModelBundle, manifest_path: &Path) -> Result<()> {
    let mut manifest = Manifest::for_graph(&bundle.graph);
    let blob_name = default_blob_name(manifest_path);
    let mut records = Vec::new();
    for (&i, t) in &bundle.weights {
        records.push(BlobRecord {
            layer: layer_tag(i)?,
            role: TensorRole::Weight,
            dims: t.dims.clone(),
            data: BlobData::F32(t.data.clone()),
        });
    }
    for (&i, bn) in &bundle.bn {
        for (role, v) in [
            (TensorRole::BnScale, &bn.scale),
            (TensorRole::BnBias, &bn.bias),
        ] {
            records.push(BlobRecord {
                layer: layer_tag(i)?,
                role,
                dims: vec![v.len()],
                data: BlobData::F32(v.clone()),
            });
        }
    }
    for (&i, b) in &bundle.fc_bias {
        records.push(BlobRecord {
            layer: layer_tag(i)?,
            role: TensorRole::FcBias,
            dims: vec![b.len()],
            data: BlobData::F32(b.clone()),
        });
    }
    records.sort_by_key(|r| (r.layer, r.role));
    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&blob_name);
    write_blob(&blob_path, &records)?;
    manifest.weights = Some(blob_name);
    manifest.write(manifest_path)
}

pub fn load_bundle(manifest_path: &Path) -> Result<ModelBundle> {
    let manifest = Manifest::read(manifest_path)?;
    let graph = manifest.graph()?;
    let records = read_blob(&manifest.blob_path(manifest_path)?)?;
    let mut weights = BTreeMap::new();
    let mut scales: BTreeMap<usize, Vec<f32>> = BTreeMap::new();
    let mut biases: BTreeMap<usize, Vec<f32>> = BTreeMap::new();
    let mut fc_bias = BTreeMap::new();
    for r in records {
        let layer = r.layer as usize;
        let BlobData::F32(data) = r.data else {
            return Err(Error::Format(format!(
                "layer {layer}: expected f32 data in a real-valued model"
            )));
        };
        match r.role {
            TensorRole::Weight => {
                weights.insert(layer, RealTensor::new(r.dims, data)?);
            }
            TensorRole::BnScale => {
                scales.insert(layer, data);
            }
            TensorRole::BnBias => {
                biases.insert(layer, data);
            }
            TensorRole::FcBias => {
                fc_bias.insert(layer, data);
            }
        }
    }
    let mut bn = BTreeMap::new();
    for (layer, scale) in scales {
        let bias = biases
            .remove(&layer)
            .ok_or_else(|| Error::Format(format!("layer {layer}: BN scale without bias")))?;
        bn.insert(layer, BnParams { scale, bias });
    }
    if let Some(&layer) = biases.keys().next() {
        return Err(Error::Format(format!(
            "layer {layer}: BN bias without scale"
        )));
    }
    // FC layers without a stored bias get zeros
    for (i, l) in graph.layers().iter().enumerate() {
        if l.kind == LayerKind::FullyConnected {
            fc_bias
                .entry(i)
                .or_insert_with(|| vec![0.0; l.out_channels]);
        }
    }
    ModelBundle::new(graph, weights, bn, fc_bias)
}
