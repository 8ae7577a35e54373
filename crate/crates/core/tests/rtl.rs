// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use fixynn_core::netlist::{freeze, FreezeSpec, Netlist};
use fixynn_core::rtl::{emit_testbench, emit_verilog, RtlFiles};
use regex::Regex;

const VECTORS: usize = 2;
const SEED: u64 = 42;

fn emit_all(nl: &Netlist, vectors: usize, seed: u64) -> RtlFiles {
    let mut f = emit_verilog(nl).unwrap();
    f.extend(emit_testbench(nl, vectors, seed).unwrap());
    f
}

fn golden_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Set FIXYNN_BLESS=1 to regenerate after an intentional change.
#[test]
fn golden_files_match() {
    let bless = std::env::var_os("FIXYNN_BLESS").is_some();
    for (name, nl) in common::reference_netlists() {
        let files = emit_all(&nl, VECTORS, SEED);
        let dir = golden_dir(name);
        if bless {
            let _ = std::fs::remove_dir_all(&dir);
            files.write(&dir).unwrap();
            continue;
        }
        for (rel, text) in &files.files {
            let want = std::fs::read_to_string(dir.join(rel))
                .unwrap_or_else(|e| panic!("{name}/{rel}: {e}"));
            assert!(&want == text, "{name}/{rel} differs from the golden copy");
        }
        let on_disk = walk(&dir);
        assert_eq!(
            on_disk.len(),
            files.files.len(),
            "{name}: stale golden files"
        );
    }
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn emission_is_deterministic() {
    for (_, nl) in common::reference_netlists() {
        assert_eq!(emit_all(&nl, 5, 7), emit_all(&nl, 5, 7));
    }
    let mut rng = common::rng(30);
    let model = common::random_frozen(&mut rng);
    let nl = freeze(&model, &FreezeSpec::new(model.graph.num_prefix_units())).unwrap();
    let a = emit_all(&nl, 3, 1);
    // a netlist that went through JSON emits the same bytes
    let dir = tempfile::tempdir().unwrap();
    nl.write(&dir.path().join("n.json")).unwrap();
    let back = Netlist::read(&dir.path().join("n.json")).unwrap();
    assert_eq!(a, emit_all(&back, 3, 1));
    assert_ne!(
        a.get("tb/stimulus.hex"),
        emit_all(&nl, 3, 2).get("tb/stimulus.hex")
    );
}

#[test]
fn identity_expected_equals_stimulus() {
    let nl = freeze(&common::identity_model(3, 5, 2), &FreezeSpec::new(1)).unwrap();
    let tb = emit_testbench(&nl, 10, 42).unwrap();
    let stim = tb.get("tb/stimulus.hex").unwrap();
    assert_eq!(stim.lines().count(), 10 * 15);
    assert_eq!(stim, tb.get("tb/expected.hex").unwrap());
}

#[test]
fn zero_vectors_gives_empty_stimulus() {
    let nl = &common::reference_netlists()[1].1;
    let tb = emit_testbench(nl, 0, 3).unwrap();
    assert_eq!(tb.get("tb/stimulus.hex"), Some(""));
    assert_eq!(tb.get("tb/expected.hex"), Some(""));
    let text = tb.get("tb/ffe_tb.v").unwrap();
    assert!(!text.contains("$readmemh"));
    assert!(text.contains("$finish"));
}

fn weight_multiplications(text: &str) -> Vec<i8> {
    let re = Regex::new(r"\* (\(-9'sd(\d+)\)|9'sd(\d+));").unwrap();
    re.captures_iter(text)
        .map(|c| match (c.get(2), c.get(3)) {
            (Some(n), _) => (-n.as_str().parse::<i32>().unwrap()) as i8,
            (_, Some(p)) => p.as_str().parse::<i32>().unwrap() as i8,
            _ => unreachable!(),
        })
        .collect()
}

#[test]
fn one_weight_one_multiplication() {
    let mut model = common::identity_model(2, 2, 1);
    model.layers[0].weights.as_mut().unwrap().values = vec![-3];
    let nl = freeze(&model, &FreezeSpec::new(1)).unwrap();
    let text = emit_verilog(&nl)
        .unwrap()
        .get("rtl/ffe_stage_0.v")
        .unwrap()
        .to_string();
    assert_eq!(weight_multiplications(&text), vec![-3]);
    assert_eq!(
        text.matches(" * ").count(),
        2,
        "weight and BN multiply only"
    );
}

#[test]
fn constants_round_trip_to_weight_multiset() {
    let mut rng = common::rng(31);
    for _ in 0..20 {
        let model = common::random_frozen(&mut rng);
        let nl = freeze(&model, &FreezeSpec::new(model.graph.num_prefix_units())).unwrap();
        let files = emit_verilog(&nl).unwrap();
        for s in &nl.stages {
            let text = files.get(&format!("rtl/ffe_stage_{}.v", s.index)).unwrap();
            let mut got = weight_multiplications(text);
            let mut want: Vec<i8> = s
                .dense_weight_tensor()
                .values
                .into_iter()
                .filter(|&w| w != 0)
                .collect();
            got.sort_unstable();
            want.sort_unstable();
            assert_eq!(got, want);
        }
    }
}

#[test]
fn tap_ports_in_top() {
    let mut rng = common::rng(32);
    loop {
        let model = common::random_frozen(&mut rng);
        if model.graph.num_prefix_units() < 4 {
            continue;
        }
        let nl = freeze(&model, &FreezeSpec::new(4).with_taps([4])).unwrap();
        let top = emit_verilog(&nl)
            .unwrap()
            .get("rtl/ffe_top.v")
            .unwrap()
            .to_string();
        let header = &top[..top.find(");").unwrap()];
        let buses: Vec<&str> = header.lines().filter(|l| l.contains("_data")).collect();
        assert_eq!(buses.iter().filter(|l| l.contains("tap_")).count(), 1);
        assert!(header.contains("tap_4_data"));
        let plain = freeze(&model, &FreezeSpec::new(4)).unwrap();
        let top = emit_verilog(&plain)
            .unwrap()
            .get("rtl/ffe_top.v")
            .unwrap()
            .to_string();
        assert!(!top.contains("tap_"));
        break;
    }
}

#[test]
fn adaptive_bn_adds_load_port_only_when_requested() {
    let nl = &common::reference_netlists()[1].1;
    let top = emit_verilog(nl).unwrap();
    assert!(top.get("rtl/ffe_top.v").unwrap().contains("bn_wdata"));
    let nl = &common::reference_netlists()[2].1;
    let files = emit_verilog(nl).unwrap();
    assert!(files.files.values().all(|t| !t.contains("bn_we")));
}

fn find_linter() -> Option<String> {
    ["verilator", "verilator-cli"].into_iter().find_map(|bin| {
        Command::new(bin)
            .arg("--version")
            .output()
            .ok()
            .filter(|o| o.status.success())
            .map(|_| bin.to_string())
    })
}

#[test]
fn emitted_rtl_lints_clean() {
    let Some(linter) = find_linter() else {
        eprintln!("no Verilog linter on PATH; skipping");
        return;
    };
    for (name, nl) in common::reference_netlists() {
        let dir = tempfile::tempdir().unwrap();
        emit_all(&nl, 1, 1).write(dir.path()).unwrap();
        let sources: BTreeMap<_, _> = walk(&dir.path().join("rtl"))
            .into_iter()
            .map(|p| (p.clone(), ()))
            .collect();
        let out = Command::new(&linter)
            .args(["--lint-only", "-Wno-fatal", "--top-module", "ffe_top"])
            .args(sources.keys())
            .output()
            .unwrap();
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(
            out.status.success() && !stderr.contains("%Error"),
            "{name}: {stderr}"
        );
    }
}
