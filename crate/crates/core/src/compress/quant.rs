// SPDX-License-Identifier: Apache-2.0

use crate::rounding::clamp_i8;
use crate::tensor::{QuantizedTensor, RealTensor};
use crate::{Error, Result};

/// Smallest exponent `e` with `max_abs / 2^e <= qmax`; zero maps to 0.
pub fn power_of_two_exponent(max_abs: f64, qmax: f64) -> i32 {
    if max_abs == 0.0 {
        return 0;
    }
    let mut e = (max_abs / qmax).log2().ceil() as i32;
    // log2 can land one off near exact powers of two
    while max_abs / (e as f64 - 1.0).exp2() <= qmax {
        e -= 1;
    }
    while max_abs / (e as f64).exp2() > qmax {
        e += 1;
    }
    e
}

/// Symmetric power-of-two quantization with round-half-to-even.
pub fn quantize_tensor(tensor: &RealTensor, bits: u32) -> Result<QuantizedTensor> {
    if !(2..=8).contains(&bits) {
        return Err(Error::range("bits", bits, "2..=8"));
    }
    let values = quantize_values(&tensor.data, bits)?;
    Ok(QuantizedTensor {
        dims: tensor.dims.clone(),
        values: values.0,
        scale_exponent: values.1,
    })
}

fn quantize_values(data: &[f32], bits: u32) -> Result<(Vec<i8>, i32)> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let qmax = ((1i64 << (bits - 1)) - 1) as f64;
    let qmin = -(1i64 << (bits - 1));
    let max_abs = data.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let e = power_of_two_exponent(max_abs, qmax);
    let inv = (-(e as f64)).exp2();
    let values = data
        .iter()
        .map(|&v| {
            let q = (v as f64 * inv).round_ties_even() as i64;
            clamp_i8(q.clamp(qmin, qmax as i64))
        })
        .collect();
    Ok((values, e))
}
