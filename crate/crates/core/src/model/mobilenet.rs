// SPDX-License-Identifier: Apache-2.0

use super::{Graph, LayerKind, LayerSpec, Shape};
use crate::{Error, Result};

pub const MOBILENET_WIDTHS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Output channels of the initial conv followed by the 13 depthwise-separable
/// blocks, at width multiplier 1.
pub const MOBILENET_CHANNELS: [usize; 14] = [
    32, 64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024,
];

const BLOCK_STRIDES: [usize; 13] = [1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1];

/// Round half up, minimum one channel.
fn scale_channels(channels: usize, width: f64) -> usize {
    ((channels as f64 * width + 0.5).floor() as usize).max(1)
}

/// MobileNet v1: stride-2 3x3 conv, 13 depthwise-separable blocks, global
/// average pool and the classifier.
pub fn build_mobilenet(width: f64, resolution: usize, num_classes: usize) -> Result<Graph> {
    if !MOBILENET_WIDTHS.contains(&width) {
        return Err(Error::Config(format!(
            "width multiplier {width} not in {MOBILENET_WIDTHS:?}"
        )));
    }
    if resolution == 0 || !resolution.is_multiple_of(32) {
        return Err(Error::Config(format!(
            "input resolution {resolution} must be a positive multiple of 32"
        )));
    }
    if num_classes == 0 {
        return Err(Error::Config("num_classes must be >= 1".into()));
    }
    let ch: Vec<usize> = MOBILENET_CHANNELS
        .iter()
        .map(|&c| scale_channels(c, width))
        .collect();
    let mut layers = vec![LayerSpec::conv(LayerKind::FullConv, 3, ch[0], 3, 2)];
    for (b, &stride) in BLOCK_STRIDES.iter().enumerate() {
        let (cin, cout) = (ch[b], ch[b + 1]);
        layers.push(LayerSpec::conv(
            LayerKind::DepthwiseConv,
            cin,
            cin,
            3,
            stride,
        ));
        layers.push(LayerSpec::conv(LayerKind::PointwiseConv, cin, cout, 1, 1));
    }
    let last = ch[13];
    layers.push(LayerSpec::avg_pool(last, resolution / 32));
    layers.push(LayerSpec::fully_connected(last, num_classes));
    Graph::new(Shape::new(resolution, resolution, 3), layers)
}
