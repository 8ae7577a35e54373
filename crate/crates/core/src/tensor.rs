// SPDX-License-Identifier: Apache-2.0

//! Tensor containers and the int8 tensor file format.
//!
//! Tensor file layout (little-endian): magic `FXTN`, `i8` scale exponent,
//! `u8` rank, `rank × u32` dims, then the int8 payload in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const TENSOR_MAGIC: &[u8; 4] = b"FXTN";

/// Real-valued tensor, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl RealTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} imply {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// int8 values with a power-of-two scale: `real ≈ value × 2^scale_exponent`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub dims: Vec<usize>,
    pub values: Vec<i8>,
    pub scale_exponent: i32,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Vec<f64> {
        let scale = (self.scale_exponent as f64).exp2();
        self.values.iter().map(|&v| v as f64 * scale).collect()
    }

    pub fn nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }
}

/// An int8 feature map in HWC order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActivationTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<i8>,
    pub scale_exponent: i32,
}

impl ActivationTensor {
    pub fn zeros(height: usize, width: usize, channels: usize, scale_exponent: i32) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![0; height * width * channels],
            scale_exponent,
        }
    }

    pub fn from_values(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<i8>,
        scale_exponent: i32,
    ) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} activation needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
            scale_exponent,
        })
    }

    /// Uniform random int8 image.
    pub fn random<R: Rng>(
        rng: &mut R,
        height: usize,
        width: usize,
        channels: usize,
        scale_exponent: i32,
    ) -> Self {
        let values = (0..height * width * channels)
            .map(|_| rng.gen::<i8>())
            .collect();
        Self {
            height,
            width,
            channels,
            values,
            scale_exponent,
        }
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> i8 {
        self.values[self.index(y, x, c)]
    }

    /// The channel vector of one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> &[i8] {
        let start = self.index(y, x, 0);
        &self.values[start..start + self.channels]
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
}

/// Raw contents of a tensor file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorFile {
    pub scale_exponent: i32,
    pub dims: Vec<usize>,
    pub values: Vec<i8>,
}

impl TensorFile {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let exponent = i8::try_from(self.scale_exponent)
            .map_err(|_| Error::range("scale exponent", self.scale_exponent, "-128..=127"))?;
        let rank = u8::try_from(self.dims.len())
            .map_err(|_| Error::range("tensor rank", self.dims.len(), "0..=255"))?;
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + self.values.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(exponent as u8);
        out.push(rank);
        for &d in &self.dims {
            let d = u32::try_from(d).map_err(|_| Error::range("tensor dim", d, "u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend(self.values.iter().map(|&v| v as u8));
        Ok(out)
    }

    pub fn decode(mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut bytes, &mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Format("not a tensor file (bad magic)".into()));
        }
        let mut head = [0u8; 2];
        read_exact(&mut bytes, &mut head)?;
        let scale_exponent = head[0] as i8 as i32;
        let mut dims = Vec::with_capacity(head[1] as usize);
        for _ in 0..head[1] {
            let mut d = [0u8; 4];
            read_exact(&mut bytes, &mut d)?;
            dims.push(u32::from_le_bytes(d) as usize);
        }
        let n: usize = dims.iter().product();
        if bytes.len() != n {
            return Err(Error::Format(format!(
                "tensor payload has {} bytes, dims {dims:?} need {n}",
                bytes.len()
            )));
        }
        Ok(Self {
            scale_exponent,
            dims,
            values: bytes.iter().map(|&b| b as i8).collect(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    /// Interpret as a batch of HWC images: rank 3 is one image, rank 4 is NHWC.
    pub fn into_images(self) -> Result<Vec<ActivationTensor>> {
        let (n, h, w, c) = match self.dims.as_slice() {
            &[h, w, c] => (1, h, w, c),
            &[n, h, w, c] => (n, h, w, c),
            other => {
                return Err(Error::Shape(format!(
                    "expected HWC or NHWC tensor, got dims {other:?}"
                )))
            }
        };
        let per = h * w * c;
        (0..n)
            .map(|i| {
                ActivationTensor::from_values(
                    h,
                    w,
                    c,
                    self.values[i * per..(i + 1) * per].to_vec(),
                    self.scale_exponent,
                )
            })
            .collect()
    }
}

impl From<&ActivationTensor> for TensorFile {
    fn from(t: &ActivationTensor) -> Self {
        Self {
            scale_exponent: t.scale_exponent,
            dims: vec![t.height, t.width, t.channels],
            values: t.values.clone(),
        }
    }
}

fn read_exact(bytes: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    bytes
        .read_exact(buf)
        .map_err(|_| Error::Format("truncated tensor file".into()))
}
