// SPDX-License-Identifier: Apache-2.0

//! Stage-accurate functional simulator of a netlist.
//!
//! Pixels stream through each stage in raster order. A stage keeps the last
//! `(k−1)·W + k` pixels in a shift register and a counter of the window
//! centre that belongs to the newest pixel; when the centre lands on the
//! stride grid the window is read through boundary muxes, multiplied by the
//! stage's constants, reduced by the adder trees and pushed through the BN
//! registers, requantizer and ReLU. Outputs whose window reaches past the
//! frame's bottom-right edge complete on the following frame's beats, so the
//! stream is flushed with zero frames.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compress::FrozenModel;
use crate::exec;
use crate::netlist::{pipeline_stats, BnRegisterFile, Netlist, Stage, StreamPort};
use crate::rounding::{clamp_i8, shift_round_half_even};
use crate::tensor::ActivationTensor;
use crate::{Error, Result};

/// Result of one port for one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameOutput {
    pub output: ActivationTensor,
    /// Keyed by prefix-unit boundary.
    pub taps: BTreeMap<usize, ActivationTensor>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimResult {
    pub frames: Vec<FrameOutput>,
    /// Pipeline fill: sum of stage latencies.
    pub fill_cycles: u64,
    /// Steady-state cycles between frames: the busiest stage's output pixels.
    pub frame_interval: u64,
    pub cycles_per_frame: u64,
}

/// Simulator instance; owns the writable BN register state.
#[derive(Clone, Debug)]
pub struct Simulator<'a> {
    netlist: &'a Netlist,
    bn: Vec<BnRegisterFile>,
}

impl<'a> Simulator<'a> {
    pub fn new(netlist: &'a Netlist) -> Result<Self> {
        netlist.validate()?;
        Ok(Self {
            netlist,
            bn: netlist.stages.iter().map(|s| s.bn.clone()).collect(),
        })
    }

    /// Write one channel through a stage's BN load port.
    pub fn load_bn(
        &mut self,
        stage: usize,
        channel: usize,
        multiplier: i32,
        bias: i32,
    ) -> Result<()> {
        let file = self
            .bn
            .get_mut(stage)
            .ok_or_else(|| Error::range("stage", stage, "a stage of this netlist"))?;
        if !file.programmable {
            return Err(Error::Config(format!(
                "stage {stage} has baked BN constants"
            )));
        }
        if !(-(1 << 15)..(1 << 15)).contains(&multiplier) {
            return Err(Error::range("BN multiplier", multiplier, "[-2^15, 2^15)"));
        }
        if channel >= file.multipliers.len() {
            return Err(Error::range("BN channel", channel, file.multipliers.len()));
        }
        file.multipliers[channel] = multiplier;
        file.biases[channel] = bias;
        Ok(())
    }

    pub fn bn_registers(&self, stage: usize) -> Option<&BnRegisterFile> {
        self.bn.get(stage)
    }

    /// Stream `frames` back to back through the datapath.
    pub fn run(&self, frames: &[ActivationTensor]) -> Result<SimResult> {
        let nl = self.netlist;
        for f in frames {
            if f.dims() != [nl.input.height, nl.input.width, nl.input.channels] {
                return Err(Error::Shape(format!(
                    "frame {:?} does not match the input port {:?}",
                    f.dims(),
                    nl.input
                )));
            }
        }
        let n_frames = frames.len();
        // stream[i] is the flat pixel stream entering stage i
        let mut stream: Vec<i8> = frames
            .iter()
            .flat_map(|f| f.values.iter().copied())
            .collect();
        let mut outputs_per_frame = Vec::with_capacity(nl.stages.len());
        let mut stage_streams = Vec::with_capacity(nl.stages.len());
        for (stage, bn) in nl.stages.iter().zip(&self.bn) {
            let out = run_stage(stage, bn, &stream, n_frames)?;
            outputs_per_frame.push(stage.output.pixels() as u64);
            stage_streams.push(out.clone());
            stream = out;
        }
        let last = if nl.stages.is_empty() {
            stream
        } else {
            stage_streams.last().cloned().unwrap_or_default()
        };
        let split = |flat: &[i8], port: &StreamPort, f: usize| -> Result<ActivationTensor> {
            let n = port.pixels() * port.channels;
            ActivationTensor::from_values(
                port.height,
                port.width,
                port.channels,
                flat[f * n..(f + 1) * n].to_vec(),
                port.exponent,
            )
        };
        let mut out_frames = Vec::with_capacity(n_frames);
        for f in 0..n_frames {
            let mut taps = BTreeMap::new();
            for t in &nl.taps {
                taps.insert(t.unit, split(&stage_streams[t.stage], &t.port, f)?);
            }
            out_frames.push(FrameOutput {
                output: split(&last, &nl.output, f)?,
                taps,
            });
        }
        let fill_cycles: u64 = nl.stages.iter().map(|s| s.latency.total()).sum();
        let frame_interval = outputs_per_frame.into_iter().max().unwrap_or(0);
        Ok(SimResult {
            frames: out_frames,
            fill_cycles,
            frame_interval,
            cycles_per_frame: fill_cycles + frame_interval,
        })
    }
}

pub fn simulate(netlist: &Netlist, frames: &[ActivationTensor]) -> Result<SimResult> {
    Simulator::new(netlist)?.run(frames)
}

/// Window-centre counter of one stage, advanced once per input beat. The
/// centre trails the newest pixel by `pad·W + pad` beats; outputs may fire
/// once that many beats have been seen.
struct CentreCounter {
    y: usize,
    x: usize,
    height: usize,
    width: usize,
    warmup: usize,
}

impl CentreCounter {
    fn new(port: &StreamPort, pad: usize) -> Self {
        let frame = port.pixels();
        let lag = pad * port.width + pad;
        // centre of the beat before the first pixel
        let start = (frame - lag % frame + frame - 1) % frame;
        Self {
            y: start / port.width,
            x: start % port.width,
            height: port.height,
            width: port.width,
            warmup: lag,
        }
    }

    /// Move to the next beat; returns whether the centre is a real pixel.
    fn advance(&mut self) -> bool {
        self.x += 1;
        if self.x == self.width {
            self.x = 0;
            self.y += 1;
            if self.y == self.height {
                self.y = 0;
            }
        }
        if self.warmup > 0 {
            self.warmup -= 1;
            false
        } else {
            true
        }
    }
}

fn run_stage(stage: &Stage, bn: &BnRegisterFile, input: &[i8], n_frames: usize) -> Result<Vec<i8>> {
    let (k, s, pad) = (stage.kernel, stage.stride, stage.padding);
    let cin = stage.input.channels;
    let (h, w) = (stage.input.height, stage.input.width);
    let expected = n_frames * stage.output.pixels();
    let mut out = Vec::with_capacity(expected * stage.output.channels);
    let sr_len = (k - 1) * w + k;
    let mut sr: VecDeque<Vec<i8>> = std::iter::repeat_n(vec![0i8; cin], sr_len).collect();
    let mut centre = CentreCounter::new(&stage.input, pad);
    let total_in = input.len() / cin;
    let mut produced = 0usize;
    let mut beat = 0usize;
    let mut window = vec![0i8; k * k * cin];
    // trailing outputs need at most pad·W + pad zero beats after the stream
    let max_beats = total_in + pad * w + pad + 1;
    while produced < expected {
        if beat >= max_beats {
            return Err(Error::Structure(format!(
                "stage {} stalled: {produced} of {expected} outputs",
                stage.index
            )));
        }
        let mut px = sr.pop_back().expect("shift register is never empty");
        if beat < total_in {
            px.copy_from_slice(&input[beat * cin..(beat + 1) * cin]);
        } else {
            px.fill(0);
        }
        sr.push_front(px);
        beat += 1;
        let live = centre.advance();
        if !(live && centre.y.is_multiple_of(s) && centre.x.is_multiple_of(s)) {
            continue;
        }
        // boundary muxes
        for dy in 0..k {
            let iy = centre.y + dy;
            let row_ok = iy >= pad && iy - pad < h;
            for dx in 0..k {
                let ix = centre.x + dx;
                let ok = row_ok && ix >= pad && ix - pad < w;
                let slot = &mut window[(dy * k + dx) * cin..(dy * k + dx + 1) * cin];
                if ok {
                    let delay = (k - 1 - dy) * w + (k - 1 - dx);
                    slot.copy_from_slice(&sr[delay]);
                } else {
                    slot.fill(0);
                }
            }
        }
        let products: Vec<i32> = stage
            .multipliers
            .iter()
            .map(|m| {
                let x = window[(m.tap.dy * k + m.tap.dx) * cin + m.tap.channel];
                m.weight as i32 * x as i32
            })
            .collect();
        for (c, tree) in stage.adder_trees.iter().enumerate() {
            let mut level: Vec<i32> = tree.inputs.iter().map(|&i| products[i]).collect();
            while level.len() > 1 {
                level = level
                    .chunks(2)
                    .map(|pair| match pair {
                        [a, b] => a.checked_add(*b).ok_or_else(|| {
                            Error::Overflow(format!("stage {}: adder tree overflow", stage.index))
                        }),
                        [a] => Ok(*a),
                        _ => unreachable!(),
                    })
                    .collect::<Result<_>>()?;
            }
            let acc = level.first().copied().unwrap_or(0);
            let bn_out = acc as i64 * bn.multipliers[c] as i64 + bn.biases[c] as i64;
            let requant = clamp_i8(shift_round_half_even(bn_out, bn.shift));
            out.push(if stage.relu { requant.max(0) } else { requant });
        }
        produced += 1;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    Output,
    Tap(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub trial: usize,
    pub port: Port,
    pub y: usize,
    pub x: usize,
    pub channel: usize,
    pub expected: i8,
    pub actual: i8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EquivalenceReport {
    pub passed: bool,
    pub trials: usize,
    pub mismatch: Option<Mismatch>,
    pub warning: Option<String>,
    pub cycles_per_frame: u64,
}

fn first_difference(
    expected: &ActivationTensor,
    actual: &ActivationTensor,
    trial: usize,
    port: Port,
) -> Option<Mismatch> {
    if expected.dims() != actual.dims() {
        return Some(Mismatch {
            trial,
            port,
            y: 0,
            x: 0,
            channel: 0,
            expected: 0,
            actual: 0,
        });
    }
    let i = expected
        .values
        .iter()
        .zip(&actual.values)
        .position(|(a, b)| a != b)?;
    let c = expected.channels;
    Some(Mismatch {
        trial,
        port,
        y: i / c / expected.width,
        x: i / c % expected.width,
        channel: i % c,
        expected: expected.values[i],
        actual: actual.values[i],
    })
}

/// Run `trials` seeded random images through the netlist and the golden
/// executor and compare every output and tap exactly.
pub fn check_equivalence(
    netlist: &Netlist,
    model: &FrozenModel,
    trials: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    let sim = Simulator::new(netlist)?;
    let stats = pipeline_stats(netlist);
    if trials == 0 {
        log::warn!("equivalence check with 0 trials passes vacuously");
        return Ok(EquivalenceReport {
            passed: true,
            trials: 0,
            mismatch: None,
            warning: Some("0 trials: vacuous pass".into()),
            cycles_per_frame: stats.pipeline_depth + stats.max_stage_output_pixels,
        });
    }
    let s = model.graph.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<ActivationTensor> = (0..trials)
        .map(|_| {
            ActivationTensor::random(
                &mut rng,
                s.height,
                s.width,
                s.channels,
                model.input_exponent,
            )
        })
        .collect();
    let result = sim.run(&images)?;
    let last_layer = model.graph.prefix_layer_count(netlist.n_fixed)?;
    for (trial, (img, got)) in images.iter().zip(&result.frames).enumerate() {
        let trace = exec::infer_prefix(model, img, last_layer)?;
        let expected_out = if netlist.n_fixed == 0 {
            img
        } else {
            trace.unit_output(&model.graph, netlist.n_fixed)?
        };
        let mut mismatch = first_difference(expected_out, &got.output, trial, Port::Output);
        for (&unit, tap) in &got.taps {
            if mismatch.is_some() {
                break;
            }
            let expected = trace.unit_output(&model.graph, unit)?;
            mismatch = first_difference(expected, tap, trial, Port::Tap(unit));
        }
        if mismatch.is_some() {
            return Ok(EquivalenceReport {
                passed: false,
                trials,
                mismatch,
                warning: None,
                cycles_per_frame: result.cycles_per_frame,
            });
        }
    }
    Ok(EquivalenceReport {
        passed: true,
        trials,
        mismatch: None,
        warning: None,
        cycles_per_frame: result.cycles_per_frame,
    })
}
