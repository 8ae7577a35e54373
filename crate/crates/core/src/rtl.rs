// SPDX-License-Identifier: Apache-2.0

//! Verilog emission for a netlist, plus a self-checking testbench.
//!
//! Each stage becomes `ffe_stage_<i>`: a pixel shift register feeding
//! boundary-muxed window taps, one registered constant multiplier per
//! nonzero weight, registered adder-tree levels, the BN multiply-add and a
//! round-half-even requantizer with saturation. The stream protocol is a
//! single `valid` strobe per pixel; there is no backpressure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::netlist::{
    Netlist, Stage, StreamPort, ACT_BITS, BN_BIAS_BITS, BN_MUL_BITS, BN_PRODUCT_BITS,
};
use crate::tensor::ActivationTensor;
use crate::{Error, Result};

/// Generated files keyed by path relative to the output directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RtlFiles {
    pub files: BTreeMap<String, String>,
}

impl RtlFiles {
    pub fn get(&self, path: &str) -> Option<&str> {
        self.files.get(path).map(String::as_str)
    }

    pub fn extend(&mut self, other: RtlFiles) {
        self.files.extend(other.files);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for (rel, text) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

const ACC: usize = 32;
const PROD: usize = 17;
// counters are plain 32-bit registers
const CNT: usize = 32;

fn header(out: &mut String) {
    out.push_str("// Generated by fixynn. Do not edit.\n`timescale 1ns / 1ps\n\n");
}

/// `9'sd5` / `(-9'sd128)`: 9 bits so that 128 is representable before negation.
pub fn weight_literal(w: i8) -> String {
    if w < 0 {
        format!("(-9'sd{})", -(w as i32))
    } else {
        format!("9'sd{w}")
    }
}

fn signed_literal(bits: usize, v: i64) -> String {
    if v < 0 {
        format!("(-{bits}'sd{})", -(v as i128))
    } else {
        format!("{bits}'sd{v}")
    }
}

fn bus(port: &StreamPort) -> usize {
    port.channels * ACT_BITS
}

fn byte(name: &str, ch: usize) -> String {
    format!("{name}[{}:{}]", ch * 8 + 7, ch * 8)
}

fn requant_function(shift: u32) -> String {
    let mut f = String::new();
    let _ = writeln!(f, "    function signed [7:0] requant;");
    let _ = writeln!(f, "        input signed [{}:0] t;", BN_PRODUCT_BITS - 1);
    let _ = writeln!(f, "        reg signed [{}:0] q;", BN_PRODUCT_BITS - 1);
    let _ = writeln!(f, "        begin");
    match shift {
        0 => {
            let _ = writeln!(f, "            q = t;");
        }
        1 => {
            let _ = writeln!(f, "            q = t >>> 1;");
            let _ = writeln!(f, "            if (t[0] && q[0]) q = q + 1;");
        }
        r => {
            let _ = writeln!(f, "            q = t >>> {r};");
            let _ = writeln!(
                f,
                "            if (t[{}] && ((|t[{}:0]) || q[0])) q = q + 1;",
                r - 1,
                r - 2
            );
        }
    }
    let _ = writeln!(f, "            if (q > 127) requant = 8'sd127;");
    let _ = writeln!(f, "            else if (q < -128) requant = -8'sd128;");
    let _ = writeln!(f, "            else requant = q[7:0];");
    let _ = writeln!(f, "        end");
    let _ = writeln!(f, "    endfunction");
    f
}

fn emit_stage(stage: &Stage) -> String {
    let i = stage.index;
    let (k, s, p) = (stage.kernel, stage.stride, stage.padding);
    let (h, w) = (stage.input.height, stage.input.width);
    let cin = stage.input.channels;
    let cout = stage.output.channels;
    let sr_len = (k - 1) * w + k;
    let frame = h * w;
    let lag = p * w + p;
    let start = (frame - lag % frame + frame - 1) % frame;
    let depth = stage.tree_depth() as usize;
    let prog = stage.bn.programmable;

    let mut v = String::new();
    header(&mut v);
    let _ = writeln!(
        v,
        "// stage {i}: layer {} {:?} k={k} s={s}, {h}x{w}x{cin} -> {}x{}x{cout}, {} multipliers",
        stage.layer,
        stage.kind,
        stage.output.height,
        stage.output.width,
        stage.multipliers.len()
    );
    let _ = writeln!(v, "module ffe_stage_{i} (");
    let _ = writeln!(v, "    input  wire clk,");
    let _ = writeln!(v, "    input  wire rst_n,");
    let _ = writeln!(v, "    input  wire in_valid,");
    let _ = writeln!(v, "    input  wire [{}:0] in_data,", bus(&stage.input) - 1);
    if prog {
        let _ = writeln!(v, "    input  wire bn_we,");
        let _ = writeln!(v, "    input  wire [15:0] bn_addr,");
        let _ = writeln!(
            v,
            "    input  wire [{}:0] bn_wdata,",
            BN_MUL_BITS + BN_BIAS_BITS - 1
        );
    }
    let _ = writeln!(v, "    output reg  out_valid,");
    let _ = writeln!(v, "    output reg  [{}:0] out_data", bus(&stage.output) - 1);
    let _ = writeln!(v, ");\n");

    // window
    let _ = writeln!(
        v,
        "    reg [{}:0] sr [0:{}];",
        bus(&stage.input) - 1,
        sr_len - 1
    );
    let _ = writeln!(v, "    reg [{}:0] cy, cx, warm;", CNT - 1);
    let _ = writeln!(v, "    reg v0;");
    let _ = writeln!(v, "    integer n;");
    let _ = writeln!(v, "    wire last_x = (cx == {CNT}'d{});", w - 1);
    let _ = writeln!(
        v,
        "    wire [{}:0] nx = last_x ? {CNT}'d0 : cx + {CNT}'d1;",
        CNT - 1
    );
    let _ = writeln!(
        v,
        "    wire [{}:0] ny = last_x ? ((cy == {CNT}'d{}) ? {CNT}'d0 : cy + {CNT}'d1) : cy;",
        CNT - 1,
        h - 1
    );
    let stride_ok = if s == 2 { "!nx[0] && !ny[0]" } else { "1'b1" };
    let _ = writeln!(v, "    always @(posedge clk) begin");
    let _ = writeln!(v, "        if (!rst_n) begin");
    let _ = writeln!(
        v,
        "            for (n = 0; n < {sr_len}; n = n + 1) sr[n] <= 0;"
    );
    let _ = writeln!(v, "            cy <= {CNT}'d{};", start / w);
    let _ = writeln!(v, "            cx <= {CNT}'d{};", start % w);
    let _ = writeln!(v, "            warm <= {CNT}'d{lag};");
    let _ = writeln!(v, "            v0 <= 1'b0;");
    let _ = writeln!(v, "        end else begin");
    let _ = writeln!(v, "            v0 <= 1'b0;");
    let _ = writeln!(v, "            if (in_valid) begin");
    let _ = writeln!(v, "                sr[0] <= in_data;");
    let _ = writeln!(
        v,
        "                for (n = 1; n < {sr_len}; n = n + 1) sr[n] <= sr[n - 1];"
    );
    let _ = writeln!(v, "                cx <= nx;");
    let _ = writeln!(v, "                cy <= ny;");
    let _ = writeln!(v, "                if (warm != 0) warm <= warm - {CNT}'d1;");
    let _ = writeln!(v, "                v0 <= (warm == 0) && {stride_ok};");
    let _ = writeln!(v, "            end");
    let _ = writeln!(v, "        end");
    let _ = writeln!(v, "    end\n");
    for d in 0..k {
        let _ = writeln!(
            v,
            "    wire row_ok_{d} = (cy + {CNT}'d{d} >= {CNT}'d{p}) && (cy + {CNT}'d{d} < {CNT}'d{});",
            h + p
        );
    }
    for d in 0..k {
        let _ = writeln!(
            v,
            "    wire col_ok_{d} = (cx + {CNT}'d{d} >= {CNT}'d{p}) && (cx + {CNT}'d{d} < {CNT}'d{});",
            w + p
        );
    }
    v.push('\n');

    // multipliers
    let _ = writeln!(v, "    reg v1;");
    for j in 0..stage.multipliers.len() {
        let _ = writeln!(v, "    reg signed [{}:0] p_{j};", PROD - 1);
    }
    let _ = writeln!(v, "    always @(posedge clk) begin");
    let _ = writeln!(v, "        v1 <= rst_n && v0;");
    for (j, m) in stage.multipliers.iter().enumerate() {
        let delay = (k - 1 - m.tap.dy) * w + (k - 1 - m.tap.dx);
        let _ = writeln!(
            v,
            "        p_{j} <= ((row_ok_{} && col_ok_{}) ? $signed({}) : 8'sd0) * {};",
            m.tap.dy,
            m.tap.dx,
            byte(&format!("sr[{delay}]"), m.tap.channel),
            weight_literal(m.weight)
        );
    }
    let _ = writeln!(v, "    end\n");

    // adder trees, every channel padded to the stage depth
    let mut finals = Vec::with_capacity(cout);
    let mut tree = String::new();
    let mut regs = String::new();
    for t in &stage.adder_trees {
        let c = t.out_channel;
        let mut level: Vec<String> = t.inputs.iter().map(|j| format!("p_{j}")).collect();
        for l in 1..=depth {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            for (n, pair) in level.chunks(2).enumerate() {
                let name = format!("t{c}_{l}_{n}");
                let _ = writeln!(regs, "    reg signed [{}:0] {name};", ACC - 1);
                let expr = match pair {
                    [a, b] => format!("{a} + {b}"),
                    [a] => a.clone(),
                    _ => unreachable!(),
                };
                let _ = writeln!(tree, "        {name} <= {expr};");
                next.push(name);
            }
            if level.is_empty() {
                let name = format!("t{c}_{l}_0");
                let _ = writeln!(regs, "    reg signed [{}:0] {name};", ACC - 1);
                let _ = writeln!(tree, "        {name} <= {ACC}'sd0;");
                next.push(name);
            }
            level = next;
        }
        finals.push(match level.first() {
            Some(name) => name.clone(),
            None => format!("{ACC}'sd0"),
        });
    }
    v.push_str(&regs);
    for l in 1..=depth {
        let _ = writeln!(v, "    reg vt_{l};");
    }
    let _ = writeln!(v, "    always @(posedge clk) begin");
    for l in 1..=depth {
        let prev = if l == 1 {
            "v1".to_string()
        } else {
            format!("vt_{}", l - 1)
        };
        let _ = writeln!(v, "        vt_{l} <= rst_n && {prev};");
    }
    v.push_str(&tree);
    let _ = writeln!(v, "    end\n");
    let tree_valid = if depth == 0 {
        "v1".to_string()
    } else {
        format!("vt_{depth}")
    };

    // BN registers
    let _ = writeln!(
        v,
        "    reg signed [{}:0] bn_m [0:{}];",
        BN_MUL_BITS - 1,
        cout - 1
    );
    let _ = writeln!(
        v,
        "    reg signed [{}:0] bn_b [0:{}];",
        BN_BIAS_BITS - 1,
        cout - 1
    );
    let init = |v: &mut String, pad: &str| {
        for c in 0..cout {
            let _ = writeln!(
                v,
                "{pad}bn_m[{c}] <= {};",
                signed_literal(BN_MUL_BITS, stage.bn.multipliers[c] as i64)
            );
            let _ = writeln!(
                v,
                "{pad}bn_b[{c}] <= {};",
                signed_literal(BN_BIAS_BITS, stage.bn.biases[c] as i64)
            );
        }
    };
    if prog {
        let _ = writeln!(v, "    always @(posedge clk) begin");
        let _ = writeln!(v, "        if (!rst_n) begin");
        init(&mut v, "            ");
        let _ = writeln!(
            v,
            "        end else if (bn_we && bn_addr < 16'd{cout}) begin"
        );
        let _ = writeln!(
            v,
            "            bn_m[bn_addr] <= bn_wdata[{}:0];",
            BN_MUL_BITS - 1
        );
        let _ = writeln!(
            v,
            "            bn_b[bn_addr] <= bn_wdata[{}:{}];",
            BN_MUL_BITS + BN_BIAS_BITS - 1,
            BN_MUL_BITS
        );
        let _ = writeln!(v, "        end");
        let _ = writeln!(v, "    end\n");
    } else {
        // constant after reset; no load port
        let _ = writeln!(v, "    always @(posedge clk) begin");
        let _ = writeln!(v, "        if (!rst_n) begin");
        init(&mut v, "            ");
        let _ = writeln!(v, "        end");
        let _ = writeln!(v, "    end\n");
    }

    // BN multiply-add, then requantize
    for c in 0..cout {
        let _ = writeln!(v, "    reg signed [{}:0] bn_t_{c};", BN_PRODUCT_BITS - 1);
    }
    let _ = writeln!(v, "    reg vb;");
    let _ = writeln!(v, "    always @(posedge clk) begin");
    let _ = writeln!(v, "        vb <= rst_n && {tree_valid};");
    for (c, acc) in finals.iter().enumerate() {
        let _ = writeln!(v, "        bn_t_{c} <= {acc} * bn_m[{c}] + bn_b[{c}];");
    }
    let _ = writeln!(v, "    end\n");
    v.push_str(&requant_function(stage.bn.shift));
    if stage.relu {
        let _ = writeln!(v, "    function [7:0] relu;");
        let _ = writeln!(v, "        input signed [7:0] y;");
        let _ = writeln!(v, "        relu = y[7] ? 8'd0 : y;");
        let _ = writeln!(v, "    endfunction");
    }
    v.push('\n');
    let _ = writeln!(v, "    always @(posedge clk) begin");
    let _ = writeln!(v, "        out_valid <= rst_n && vb;");
    for c in 0..cout {
        let y = if stage.relu {
            format!("relu(requant(bn_t_{c}))")
        } else {
            format!("requant(bn_t_{c})")
        };
        let _ = writeln!(v, "        {} <= {y};", byte("out_data", c));
    }
    let _ = writeln!(v, "    end\n");
    let _ = writeln!(v, "endmodule");
    v
}

fn emit_top(nl: &Netlist) -> String {
    let any_prog = nl.stages.iter().any(|s| s.bn.programmable);
    let mut v = String::new();
    header(&mut v);
    let _ = writeln!(
        v,
        "// {} fixed units, {} stages, input {}x{}x{}",
        nl.n_fixed,
        nl.stages.len(),
        nl.input.height,
        nl.input.width,
        nl.input.channels
    );
    let _ = writeln!(v, "module ffe_top (");
    let _ = writeln!(v, "    input  wire clk,");
    let _ = writeln!(v, "    input  wire rst_n,");
    let _ = writeln!(v, "    input  wire in_valid,");
    let _ = writeln!(v, "    input  wire [{}:0] in_data,", bus(&nl.input) - 1);
    if any_prog {
        let _ = writeln!(v, "    input  wire bn_we,");
        let _ = writeln!(v, "    input  wire [7:0] bn_stage,");
        let _ = writeln!(v, "    input  wire [15:0] bn_addr,");
        let _ = writeln!(
            v,
            "    input  wire [{}:0] bn_wdata,",
            BN_MUL_BITS + BN_BIAS_BITS - 1
        );
    }
    for t in &nl.taps {
        let _ = writeln!(v, "    output wire tap_{}_valid,", t.unit);
        let _ = writeln!(
            v,
            "    output wire [{}:0] tap_{}_data,",
            bus(&t.port) - 1,
            t.unit
        );
    }
    let _ = writeln!(v, "    output wire out_valid,");
    let _ = writeln!(v, "    output wire [{}:0] out_data", bus(&nl.output) - 1);
    let _ = writeln!(v, ");\n");
    let mut prev_valid = "in_valid".to_string();
    let mut prev_data = "in_data".to_string();
    for s in &nl.stages {
        let i = s.index;
        let _ = writeln!(v, "    wire s{i}_valid;");
        let _ = writeln!(v, "    wire [{}:0] s{i}_data;", bus(&s.output) - 1);
        let _ = writeln!(v, "    ffe_stage_{i} u_stage_{i} (");
        let _ = writeln!(v, "        .clk(clk),");
        let _ = writeln!(v, "        .rst_n(rst_n),");
        let _ = writeln!(v, "        .in_valid({prev_valid}),");
        let _ = writeln!(v, "        .in_data({prev_data}),");
        if s.bn.programmable {
            let _ = writeln!(v, "        .bn_we(bn_we && bn_stage == 8'd{i}),");
            let _ = writeln!(v, "        .bn_addr(bn_addr),");
            let _ = writeln!(v, "        .bn_wdata(bn_wdata),");
        }
        let _ = writeln!(v, "        .out_valid(s{i}_valid),");
        let _ = writeln!(v, "        .out_data(s{i}_data)");
        let _ = writeln!(v, "    );\n");
        prev_valid = format!("s{i}_valid");
        prev_data = format!("s{i}_data");
    }
    for t in &nl.taps {
        let _ = writeln!(v, "    assign tap_{}_valid = s{}_valid;", t.unit, t.stage);
        let _ = writeln!(v, "    assign tap_{}_data = s{}_data;", t.unit, t.stage);
    }
    let _ = writeln!(v, "    assign out_valid = {prev_valid};");
    let _ = writeln!(v, "    assign out_data = {prev_data};");
    let _ = writeln!(v, "\nendmodule");
    v
}

/// Structural Verilog: `rtl/ffe_top.v` and one `rtl/ffe_stage_<i>.v` per stage.
pub fn emit_verilog(netlist: &Netlist) -> Result<RtlFiles> {
    netlist.validate()?;
    let mut files = BTreeMap::new();
    files.insert("rtl/ffe_top.v".to_string(), emit_top(netlist));
    for s in &netlist.stages {
        files.insert(format!("rtl/ffe_stage_{}.v", s.index), emit_stage(s));
    }
    Ok(RtlFiles { files })
}

/// One pixel per line, channel 0 in the low byte.
fn hex_lines(t: &ActivationTensor, out: &mut String) {
    for px in t.values.chunks_exact(t.channels) {
        for &b in px.iter().rev() {
            let _ = write!(out, "{:02x}", b as u8);
        }
        out.push('\n');
    }
}

/// Zero frames appended so every stage's trailing windows complete.
pub fn flush_frames(netlist: &Netlist) -> usize {
    netlist
        .stages
        .iter()
        .map(|s| {
            let lag = s.padding * s.input.width + s.padding + 1;
            lag.div_ceil(s.input.pixels())
        })
        .sum()
}

/// Seeded stimulus frames for the testbench.
pub fn stimulus(netlist: &Netlist, vectors: usize, seed: u64) -> Vec<ActivationTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = &netlist.input;
    (0..vectors)
        .map(|_| ActivationTensor::random(&mut rng, p.height, p.width, p.channels, p.exponent))
        .collect()
}

fn tb_checker(v: &mut String, name: &str, mem: &str, file: &str, count: usize, bits: usize) {
    let _ = writeln!(
        v,
        "    reg [{}:0] {mem} [0:{}];",
        bits - 1,
        count.max(1) - 1
    );
    let _ = writeln!(v, "    integer {name}_seen;");
    let _ = writeln!(v, "    initial begin");
    let _ = writeln!(v, "        {name}_seen = 0;");
    if count > 0 {
        let _ = writeln!(v, "        $readmemh(\"{file}\", {mem});");
    }
    let _ = writeln!(v, "    end");
    let _ = writeln!(v, "    always @(negedge clk) begin");
    let _ = writeln!(v, "        if (rst_n && {name}_valid) begin");
    let _ = writeln!(v, "            if ({name}_seen < {count}) begin");
    let _ = writeln!(
        v,
        "                if ({name}_data !== {mem}[{name}_seen]) begin"
    );
    let _ = writeln!(
        v,
        "                    $display(\"MISMATCH {name} beat %0d: got %h expected %h\", {name}_seen, {name}_data, {mem}[{name}_seen]);"
    );
    let _ = writeln!(v, "                    errors = errors + 1;");
    let _ = writeln!(v, "                end");
    let _ = writeln!(v, "            end");
    let _ = writeln!(v, "            {name}_seen = {name}_seen + 1;");
    let _ = writeln!(v, "        end");
    let _ = writeln!(v, "    end\n");
}

/// Testbench plus `tb/stimulus.hex`, `tb/expected.hex` and one
/// `tb/expected_tap<k>.hex` per tap, all from the reference executor.
pub fn emit_testbench(netlist: &Netlist, vectors: usize, seed: u64) -> Result<RtlFiles> {
    netlist.validate()?;
    let frames = stimulus(netlist, vectors, seed);
    let flush = if vectors == 0 {
        0
    } else {
        flush_frames(netlist)
    };
    let mut stim = String::new();
    let mut expected = String::new();
    let mut tap_text: BTreeMap<usize, String> = netlist
        .taps
        .iter()
        .map(|t| (t.unit, String::new()))
        .collect();
    for f in &frames {
        hex_lines(f, &mut stim);
        let outs = netlist.reference_outputs(f)?;
        hex_lines(outs.last().unwrap_or(f), &mut expected);
        for t in &netlist.taps {
            hex_lines(
                &outs[t.stage],
                tap_text.get_mut(&t.unit).expect("tap listed"),
            );
        }
    }
    let in_pixels = netlist.input.pixels();
    let n_stim = vectors * in_pixels;
    let n_beats = (vectors + flush) * in_pixels;
    let n_out = vectors * netlist.output.pixels();
    let any_prog = netlist.stages.iter().any(|s| s.bn.programmable);
    let in_bits = bus(&netlist.input);

    let mut v = String::new();
    header(&mut v);
    let _ = writeln!(v, "// {vectors} vectors, seed {seed}, {flush} flush frames");
    let _ = writeln!(v, "module ffe_tb;");
    let _ = writeln!(v, "    reg clk;");
    let _ = writeln!(v, "    reg rst_n;");
    let _ = writeln!(v, "    reg in_valid;");
    let _ = writeln!(v, "    reg [{}:0] in_data;", in_bits - 1);
    let _ = writeln!(v, "    wire out_valid;");
    let _ = writeln!(v, "    wire [{}:0] out_data;", bus(&netlist.output) - 1);
    for t in &netlist.taps {
        let _ = writeln!(v, "    wire tap_{}_valid;", t.unit);
        let _ = writeln!(v, "    wire [{}:0] tap_{}_data;", bus(&t.port) - 1, t.unit);
    }
    let _ = writeln!(v, "    integer errors;");
    let _ = writeln!(v, "    initial errors = 0;");
    let _ = writeln!(v, "    integer beat;");
    let _ = writeln!(
        v,
        "    reg [{}:0] stim [0:{}];",
        in_bits - 1,
        n_stim.max(1) - 1
    );
    let _ = writeln!(v, "\n    always #5 clk = ~clk;\n");
    let _ = writeln!(v, "    ffe_top dut (");
    let _ = writeln!(v, "        .clk(clk),");
    let _ = writeln!(v, "        .rst_n(rst_n),");
    let _ = writeln!(v, "        .in_valid(in_valid),");
    let _ = writeln!(v, "        .in_data(in_data),");
    if any_prog {
        let _ = writeln!(v, "        .bn_we(1'b0),");
        let _ = writeln!(v, "        .bn_stage(8'd0),");
        let _ = writeln!(v, "        .bn_addr(16'd0),");
        let _ = writeln!(v, "        .bn_wdata({}'d0),", BN_MUL_BITS + BN_BIAS_BITS);
    }
    for t in &netlist.taps {
        let _ = writeln!(v, "        .tap_{0}_valid(tap_{0}_valid),", t.unit);
        let _ = writeln!(v, "        .tap_{0}_data(tap_{0}_data),", t.unit);
    }
    let _ = writeln!(v, "        .out_valid(out_valid),");
    let _ = writeln!(v, "        .out_data(out_data)");
    let _ = writeln!(v, "    );\n");
    tb_checker(
        &mut v,
        "out",
        "expected",
        "expected.hex",
        n_out,
        bus(&netlist.output),
    );
    for t in &netlist.taps {
        tb_checker(
            &mut v,
            &format!("tap_{}", t.unit),
            &format!("expected_tap{}", t.unit),
            &format!("expected_tap{}.hex", t.unit),
            vectors * t.port.pixels(),
            bus(&t.port),
        );
    }
    let drain: u64 = netlist
        .stages
        .iter()
        .map(|s| s.latency.total() + 4)
        .sum::<u64>()
        + 16;
    let _ = writeln!(v, "    initial begin");
    let _ = writeln!(v, "        clk = 1'b0;");
    let _ = writeln!(v, "        rst_n = 1'b0;");
    let _ = writeln!(v, "        in_valid = 1'b0;");
    let _ = writeln!(v, "        in_data = 0;");
    if n_stim > 0 {
        let _ = writeln!(v, "        $readmemh(\"stimulus.hex\", stim);");
    }
    // inputs change on the falling edge, away from the sampling edge
    let _ = writeln!(v, "        repeat (4) @(negedge clk);");
    let _ = writeln!(v, "        rst_n = 1'b1;");
    let _ = writeln!(
        v,
        "        for (beat = 0; beat < {n_beats}; beat = beat + 1) begin"
    );
    let _ = writeln!(v, "            @(negedge clk);");
    let _ = writeln!(v, "            in_valid = 1'b1;");
    let _ = writeln!(
        v,
        "            in_data = (beat < {n_stim}) ? stim[beat] : {in_bits}'d0;"
    );
    let _ = writeln!(v, "        end");
    let _ = writeln!(v, "        @(negedge clk);");
    let _ = writeln!(v, "        in_valid = 1'b0;");
    let _ = writeln!(v, "        repeat ({drain}) @(negedge clk);");
    let _ = writeln!(v, "        if (out_seen < {n_out}) begin");
    let _ = writeln!(
        v,
        "            $display(\"MISSING outputs: %0d of {n_out}\", out_seen);"
    );
    let _ = writeln!(v, "            errors = errors + 1;");
    let _ = writeln!(v, "        end");
    for t in &netlist.taps {
        let want = vectors * t.port.pixels();
        let _ = writeln!(
            v,
            "        if (tap_{0}_seen < {want}) errors = errors + 1;",
            t.unit
        );
    }
    let _ = writeln!(v, "        if (errors == 0) $display(\"PASS\");");
    let _ = writeln!(v, "        else $display(\"FAIL: %0d errors\", errors);");
    let _ = writeln!(v, "        $finish;");
    let _ = writeln!(v, "    end\n");
    let _ = writeln!(v, "endmodule");

    let mut files = BTreeMap::new();
    files.insert("tb/ffe_tb.v".to_string(), v);
    files.insert("tb/stimulus.hex".to_string(), stim);
    files.insert("tb/expected.hex".to_string(), expected);
    for (unit, text) in tap_text {
        files.insert(format!("tb/expected_tap{unit}.hex"), text);
    }
    Ok(RtlFiles { files })
}
