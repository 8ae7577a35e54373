// SPDX-License-Identifier: Apache-2.0

use serde::Serialize;

use super::{Graph, LayerKind};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MacCounts {
    pub per_layer: Vec<u64>,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    /// Weights, plus the FC bias.
    pub per_layer: Vec<u64>,
    pub total: u64,
    /// BN scale and bias, reported separately.
    pub bn_per_layer: Vec<u64>,
    pub bn_total: u64,
}

pub fn count_macs(graph: &Graph) -> MacCounts {
    let per_layer: Vec<u64> = graph
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| match l.kind {
            LayerKind::AvgPool => 0,
            LayerKind::FullyConnected => (l.in_channels * l.out_channels) as u64,
            _ => {
                let out = graph.output_of(i);
                (out.pixels() * l.fan_in() * l.out_channels) as u64
            }
        })
        .collect();
    let total = per_layer.iter().sum();
    MacCounts { per_layer, total }
}

pub fn count_params(graph: &Graph) -> ParamCounts {
    let per_layer: Vec<u64> = graph
        .layers()
        .iter()
        .map(|l| {
            let bias = if l.kind == LayerKind::FullyConnected {
                l.out_channels
            } else {
                0
            };
            (l.weight_count() + bias) as u64
        })
        .collect();
    let bn_per_layer: Vec<u64> = graph
        .layers()
        .iter()
        .map(|l| {
            if l.has_bn {
                2 * l.out_channels as u64
            } else {
                0
            }
        })
        .collect();
    ParamCounts {
        total: per_layer.iter().sum(),
        bn_total: bn_per_layer.iter().sum(),
        per_layer,
        bn_per_layer,
    }
}

/// Share of all MACs (FC included in the denominator) executed by the first
/// `n_fixed` prefix units.
pub fn fixed_ops_fraction(graph: &Graph, n_fixed: usize) -> Result<f64> {
    let units = graph.num_prefix_units();
    if n_fixed > units {
        return Err(Error::range("n_fixed", n_fixed, format!("0..={units}")));
    }
    let macs = count_macs(graph);
    if macs.total == 0 {
        return Ok(0.0);
    }
    let prefix_layers = graph.prefix_layer_count(n_fixed)?;
    let fixed: u64 = macs.per_layer[..prefix_layers].iter().sum();
    Ok(fixed as f64 / macs.total as f64)
}
