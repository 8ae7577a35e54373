// SPDX-License-Identifier: Apache-2.0

mod common;

use approx::assert_relative_eq;
use fixynn_core::model::fixed_ops_fraction;
use fixynn_core::netlist::{freeze, pipeline_stats, FreezeSpec, PipelineStats};
use fixynn_core::ppa::calibration::{fit_area, BUDGET_MM2, ROWS};
use fixynn_core::ppa::{
    ffe_area, ffe_ppa, nvdla_point, system_ppa, BackendPoint, CostConfig, NvdlaTable, PpaReport,
};
use proptest::prelude::*;

const TABLE: [(f64, f64, f64); 6] = [
    (0.55, 0.056, 2.0),
    (0.84, 0.156, 3.8),
    (1.00, 0.358, 5.6),
    (1.40, 0.728, 6.8),
    (1.80, 1.166, 6.3),
    (3.30, 2.095, 5.4),
];

/// Area at which the piecewise-linear TOPS curve hits `tops`.
fn oracle_area(tops: f64) -> f64 {
    for w in TABLE.windows(2) {
        let ((a0, t0, _), (a1, t1, _)) = (w[0], w[1]);
        if tops >= t0 && tops <= t1 {
            return a0 + (tops - t0) / (t1 - t0) * (a1 - a0);
        }
    }
    panic!("{tops} TOPS is outside the table");
}

fn prefix_stats(n: usize) -> Vec<(usize, f64, PipelineStats)> {
    let model = common::reference_model();
    ROWS.iter()
        .map(|r| r.n_fixed)
        .chain([n])
        .map(|n| {
            let nl = freeze(&model, &FreezeSpec::new(n)).unwrap();
            (
                n,
                fixed_ops_fraction(&model.graph, n).unwrap(),
                pipeline_stats(&nl),
            )
        })
        .collect()
}

#[test]
fn defaults_land_near_calibration_anchors() {
    let cost = CostConfig::default();
    let stats = prefix_stats(1);
    let mut samples = Vec::new();
    for (row, (n, f, s)) in ROWS.iter().zip(&stats) {
        assert_eq!(row.n_fixed, *n);
        let anchor = BUDGET_MM2 - oracle_area(row.system_tops * (1.0 - f));
        let area = ffe_area(s, &cost);
        assert!(
            (area / anchor - 1.0).abs() < 0.10,
            "N={n}: {area} vs {anchor}"
        );
        samples.push((*s, anchor));
    }
    let (a_mult, a_sram) = fit_area(&samples).unwrap();
    assert_relative_eq!(a_mult, cost.a_mult, max_relative = 0.01);
    assert_relative_eq!(a_sram, cost.a_sram, max_relative = 0.01);
}

#[test]
fn front_end_grows_with_split() {
    let model = common::reference_model();
    let cost = CostConfig::default();
    let mut last = PpaReport::default();
    for n in 0..=model.graph.num_prefix_units() {
        let nl = freeze(&model, &FreezeSpec::new(n)).unwrap();
        let r = ffe_ppa(&pipeline_stats(&nl), &cost);
        assert!(
            r.area_mm2 >= last.area_mm2 && r.power_w >= last.power_w,
            "N={n}"
        );
        assert!(r.throughput_tops >= last.throughput_tops);
        last = r;
    }
}

#[test]
fn nvdla_rows_and_three_mm2_point() {
    let t = NvdlaTable::default();
    for &(a, tops, eff) in &TABLE {
        let p = nvdla_point(a, &t).unwrap();
        assert_eq!((p.tops, p.tops_per_w, p.clamped), (tops, eff, false));
    }
    let p = nvdla_point(3.0, &t).unwrap();
    assert_relative_eq!(p.tops, 1.9092, max_relative = 1e-9);
    assert_relative_eq!(p.tops_per_w, 5.58, max_relative = 1e-9);
    assert!(nvdla_point(0.5, &t).is_none());
    let big = nvdla_point(9.0, &t).unwrap();
    assert!(big.clamped && big.area_mm2 == 3.3 && big.tops == 2.095);
}

#[test]
fn config_files_parse() {
    let dir = tempfile::tempdir().unwrap();
    let toml = dir.path().join("c.toml");
    std::fs::write(&toml, "preset = \"x\"\ne_mult = 1e-15\n").unwrap();
    let c = CostConfig::read(&toml).unwrap();
    assert_eq!((c.preset.as_str(), c.e_mult), ("x", 1e-15));
    let json = serde_json::to_string(&NvdlaTable::default()).unwrap();
    assert_eq!(NvdlaTable::parse(&json).unwrap(), NvdlaTable::default());
    assert!(CostConfig::read(&dir.path().join("missing.toml")).is_err());
    assert!(NvdlaTable::parse(r#"{"rows": []}"#).is_err());
}

fn backend(area: f64) -> BackendPoint {
    nvdla_point(area, &NvdlaTable::default()).unwrap()
}

proptest! {
    #[test]
    fn interpolation_stays_between_neighbours(area in 0.55f64..3.3) {
        let p = backend(area);
        let i = TABLE.iter().position(|r| r.0 >= area).unwrap();
        let lo = TABLE[i.saturating_sub(1)];
        let hi = TABLE[i];
        prop_assert!(p.tops >= lo.1 - 1e-12 && p.tops <= hi.1 + 1e-12);
        prop_assert!(p.tops_per_w >= lo.2.min(hi.2) - 1e-12);
        prop_assert!(p.tops_per_w <= lo.2.max(hi.2) + 1e-12);
    }

    #[test]
    fn tops_is_monotone_in_area(a in 0.55f64..3.3, d in 0.0f64..1.0) {
        prop_assert!(backend(a + d).tops >= backend(a).tops);
    }

    #[test]
    fn system_respects_both_bounds(
        area in 0.55f64..3.3,
        f in 0.0f64..0.99,
        ffe_tops in 0.0f64..100.0,
        ffe_power in 0.0f64..1.0,
        ffe_area in 0.0f64..2.0,
    ) {
        let b = backend(area);
        let ffe = PpaReport {
            area_mm2: ffe_area,
            power_w: ffe_power,
            throughput_tops: ffe_tops,
            efficiency_tops_per_w: if ffe_power > 0.0 { ffe_tops / ffe_power } else { 0.0 },
            frame_rate_fps: ffe_tops * 1e3,
            latency_cycles: 10,
        };
        let s = system_ppa(&ffe, f, &b).unwrap();
        prop_assert!((s.area_mm2 - (ffe_area + b.area_mm2)).abs() < 1e-12);
        prop_assert!(s.throughput_tops <= b.tops / (1.0 - f) * (1.0 + 1e-12));
        if f > 0.0 {
            prop_assert!(s.throughput_tops <= ffe_tops / f * (1.0 + 1e-12));
        } else {
            prop_assert_eq!(s.throughput_tops, b.tops);
            prop_assert_eq!(s.efficiency_tops_per_w, b.tops_per_w);
        }
        prop_assert!(s.power_w >= 0.0 && s.efficiency_tops_per_w >= 0.0);
    }
}

#[test]
fn fraction_one_is_rejected() {
    assert!(system_ppa(&PpaReport::default(), 1.0, &backend(1.0)).is_err());
    assert!(system_ppa(&PpaReport::default(), -0.1, &backend(1.0)).is_err());
}
