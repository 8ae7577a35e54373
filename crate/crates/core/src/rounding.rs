// SPDX-License-Identifier: Apache-2.0

//! The single rounding rule shared by the quantizer, the reference executor,
//! the datapath simulator and the emitted RTL: round half to even.

use crate::{Error, Result};

/// `round_half_even(value / 2^shift)` computed exactly on integers.
pub fn shift_round_half_even(value: i64, shift: u32) -> i64 {
    if shift == 0 {
        return value;
    }
    let shift = shift.min(100);
    let v = value as i128;
    let q = v >> shift;
    let rem = v - (q << shift);
    let half = 1i128 << (shift - 1);
    let rounded = if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    };
    rounded as i64
}

/// Saturate to the signed 8-bit range.
pub fn clamp_i8(value: i64) -> i8 {
    value.clamp(i8::MIN as i64, i8::MAX as i64) as i8
}

/// Narrow a 32-bit accumulator to int8: `clamp(rhe(acc · mul / 2^shift))`.
pub fn requantize(acc: i32, mul: i64, shift: u32) -> Result<i8> {
    let product = (acc as i64)
        .checked_mul(mul)
        .ok_or_else(|| Error::Overflow(format!("{acc} x {mul} exceeds 64 bits")))?;
    Ok(clamp_i8(shift_round_half_even(product, shift)))
}

/// The per-channel integer affine every conv/FC output goes through:
/// `clamp(rhe((acc · mul + bias) / 2^shift))`, optionally followed by ReLU.
pub fn affine_requantize(acc: i32, mul: i32, bias: i32, shift: u32, relu: bool) -> Result<i8> {
    let scaled = (acc as i64)
        .checked_mul(mul as i64)
        .and_then(|v| v.checked_add(bias as i64))
        .ok_or_else(|| Error::Overflow(format!("{acc} x {mul} + {bias} exceeds 64 bits")))?;
    let y = clamp_i8(shift_round_half_even(scaled, shift));
    Ok(if relu { y.max(0) } else { y })
}
