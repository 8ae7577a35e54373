// SPDX-License-Identifier: Apache-2.0

//! Batch-norm as reprogrammable integer registers.
//!
//! Real BN `y = γ·x + β` on an accumulator `acc` with real value
//! `acc·2^acc_exp`, producing an activation with exponent `out_exp`, becomes
//! `y_q = rhe((acc·m + b) / 2^r)` with
//! `m = rhe(γ·2^(acc_exp − out_exp + r))` and `b = rhe(β·2^(r − out_exp))`.

use serde::{Deserialize, Serialize};

use crate::model::BnParams;
use crate::{Error, Result};

/// Largest shift tried when picking a layer's `r`.
pub const MAX_BN_SHIFT: u32 = 30;
const MUL_MIN: i64 = -(1 << 15);
const MUL_MAX: i64 = (1 << 15) - 1;

/// Integer affine registers of one layer: per-channel multiplier and bias,
/// one shared right shift.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requant {
    pub shift: u32,
    pub multipliers: Vec<i32>,
    pub biases: Vec<i32>,
}

impl Requant {
    pub fn channels(&self) -> usize {
        self.multipliers.len()
    }

    pub fn check(&self, channels: usize) -> Result<()> {
        if self.multipliers.len() != channels || self.biases.len() != channels {
            return Err(Error::Shape(format!(
                "requant registers cover {}/{} channels, layer has {channels}",
                self.multipliers.len(),
                self.biases.len()
            )));
        }
        if let Some(&m) = self
            .multipliers
            .iter()
            .find(|&&m| !(MUL_MIN..=MUL_MAX).contains(&(m as i64)))
        {
            return Err(Error::range("BN multiplier", m, "[-2^15, 2^15)"));
        }
        if self.shift > 62 {
            return Err(Error::range("BN shift", self.shift, "0..=62"));
        }
        Ok(())
    }
}

fn round_to_i64(v: f64) -> Option<i64> {
    let r = v.round_ties_even();
    (r.is_finite() && r.abs() < 9.0e18).then_some(r as i64)
}

/// Encode real BN parameters at a fixed shift.
pub fn prepare_bn(
    bn: &BnParams,
    acc_exponent: i32,
    out_exponent: i32,
    shift: u32,
) -> Result<Requant> {
    if bn.scale.len() != bn.bias.len() {
        return Err(Error::Shape("BN scale/bias length mismatch".into()));
    }
    let mul_scale = ((acc_exponent - out_exponent) as f64 + shift as f64).exp2();
    let bias_scale = (shift as f64 - out_exponent as f64).exp2();
    let mut multipliers = Vec::with_capacity(bn.channels());
    let mut biases = Vec::with_capacity(bn.channels());
    for (c, (&g, &b)) in bn.scale.iter().zip(&bn.bias).enumerate() {
        if !g.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite(c));
        }
        let m = round_to_i64(g as f64 * mul_scale)
            .filter(|m| (MUL_MIN..=MUL_MAX).contains(m))
            .ok_or(Error::BnEncoding {
                gamma: g as f64,
                shift,
            })?;
        let bias = round_to_i64(b as f64 * bias_scale)
            .and_then(|v| i32::try_from(v).ok())
            .ok_or_else(|| Error::range("BN bias register", b, "int32 at this shift"))?;
        multipliers.push(m as i32);
        biases.push(bias);
    }
    Ok(Requant {
        shift,
        multipliers,
        biases,
    })
}

/// The largest shift (most precise encoding) at which every channel fits.
pub fn choose_bn_shift(bn: &BnParams, acc_exponent: i32, out_exponent: i32) -> Result<u32> {
    (0..=MAX_BN_SHIFT)
        .rev()
        .find(|&r| prepare_bn(bn, acc_exponent, out_exponent, r).is_ok())
        .ok_or_else(|| {
            let gamma = bn
                .scale
                .iter()
                .fold(0.0f64, |m, &g| m.max((g as f64).abs()));
            Error::BnEncoding { gamma, shift: 0 }
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rounding::affine_requantize;

    fn bn(g: f32, b: f32) -> BnParams {
        BnParams {
            scale: vec![g],
            bias: vec![b],
        }
    }

    #[test]
    fn identity_affine() {
        let r = prepare_bn(&bn(1.0, 0.0), 0, 0, 8).unwrap();
        assert_eq!((r.multipliers[0], r.biases[0]), (256, 0));
    }

    #[test]
    fn zero_gamma_forces_bias() {
        let r = prepare_bn(&bn(0.0, 0.0), -10, -4, 8).unwrap();
        assert_eq!((r.multipliers[0], r.biases[0]), (0, 0));
        let r = prepare_bn(&bn(0.0, 0.5), -10, -4, 8).unwrap();
        assert_eq!(
            affine_requantize(12345, r.multipliers[0], r.biases[0], 8, false).unwrap(),
            8
        );
    }

    #[test]
    fn half_gamma_with_activation_scale() {
        let r = prepare_bn(&bn(0.5, 1.0), -4, -4, 8).unwrap();
        assert_eq!(r.multipliers[0], 128);
        assert_eq!(r.biases[0], 16 * 256);
        // against real arithmetic: y = 0.5·acc·2^-4 + 1.0, in units of 2^-4
        for acc in -300..300 {
            let exact = 0.5 * acc as f64 + 16.0;
            let got = affine_requantize(acc, r.multipliers[0], r.biases[0], 8, false).unwrap();
            let expect = exact.clamp(-128.0, 127.0);
            assert!((got as f64 - expect).abs() <= 1.0, "acc={acc}");
        }
    }

    #[test]
    fn gamma_too_large() {
        assert!(matches!(
            prepare_bn(&bn(200.0, 0.0), 0, 0, 8),
            Err(Error::BnEncoding { .. })
        ));
        let r = choose_bn_shift(&bn(200.0, 0.0), 0, 0).unwrap();
        assert_eq!(r, 7); // 200·128 = 25600 fits, 200·256 does not
        assert!(choose_bn_shift(&bn(1.0e6, 0.0), 0, 0).is_err());
    }

    #[test]
    fn shift_choice_maximises_precision() {
        let b = bn(1.0, 0.0);
        let r = choose_bn_shift(&b, -14, -4).unwrap();
        let regs = prepare_bn(&b, -14, -4, r).unwrap();
        assert!(regs.multipliers[0] >= 1 << 14);
    }
}
