// SPDX-License-Identifier: Apache-2.0

//! Analytical power, performance and area.
//!
//! The fixed-function front end is costed from its netlist structure with a
//! handful of per-unit constants. The programmable back end is the published
//! NVDLA configuration table, interpolated linearly in area. A system is the
//! two in series: the front end handles a fraction `f` of the work.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::netlist::{pipeline_stats, Netlist, PipelineStats, DEFAULT_CLOCK_HZ};
use crate::{Error, Result};

/// Fraction of cycles a unit toggles.
pub const ACTIVITY: f64 = 0.5;

/// Per-unit cost constants. Areas in mm², energies in J, leakage in W/mm².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub preset: String,
    pub f_clk: f64,
    /// Per 8-bit constant multiplier.
    pub a_mult: f64,
    /// Per 32-bit adder.
    pub a_add: f64,
    /// Per register bit.
    pub a_reg: f64,
    /// Per line-buffer bit.
    pub a_sram: f64,
    pub e_mult: f64,
    pub e_add: f64,
    /// Per register bit toggle.
    pub e_reg: f64,
    pub p_leak: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        // a_add and a_reg are tied to a_mult (1/4 and 1/64); a_mult and
        // a_sram are the least-squares fit of the 3.0 mm² anchors (see
        // `calibration`) on the 50%-sparse MobileNet-0.25 prefix. Energy
        // uses the same ties; e_mult keeps the front end near 9% of system
        // power at the deepest split.
        let a_mult = 6.28e-6;
        let e_mult = 4.5e-16;
        Self {
            preset: "mobilenet025-16nm".into(),
            f_clk: DEFAULT_CLOCK_HZ,
            a_mult,
            a_add: a_mult / 4.0,
            a_reg: a_mult / 64.0,
            a_sram: 4.04e-6,
            e_mult,
            e_add: e_mult / 4.0,
            e_reg: e_mult / 64.0,
            p_leak: 1.0e-3,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("f_clk", self.f_clk),
            ("a_mult", self.a_mult),
            ("a_add", self.a_add),
            ("a_reg", self.a_reg),
            ("a_sram", self.a_sram),
            ("e_mult", self.e_mult),
            ("e_add", self.e_add),
            ("e_reg", self.e_reg),
            ("p_leak", self.p_leak),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::range(name, v, "a positive finite number"));
            }
        }
        Ok(())
    }

    /// Parse TOML, or JSON when `text` starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("cost config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvdlaRow {
    pub name: String,
    pub macs: u32,
    pub buffer_kb: u32,
    pub area_mm2: f64,
    pub tops: f64,
    pub tops_per_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvdlaTable {
    pub rows: Vec<NvdlaRow>,
}

impl Default for NvdlaTable {
    fn default() -> Self {
        let row = |name: &str, macs, buffer_kb, area_mm2, tops, tops_per_w| NvdlaRow {
            name: name.into(),
            macs,
            buffer_kb,
            area_mm2,
            tops,
            tops_per_w,
        };
        Self {
            rows: vec![
                row("A", 64, 128, 0.55, 0.056, 2.0),
                row("B", 128, 256, 0.84, 0.156, 3.8),
                row("C", 256, 256, 1.00, 0.358, 5.6),
                row("D", 512, 256, 1.40, 0.728, 6.8),
                row("E", 1024, 256, 1.80, 1.166, 6.3),
                row("F", 2048, 512, 3.30, 2.095, 5.4),
            ],
        }
    }
}

impl NvdlaTable {
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Config("NVDLA table has no rows".into()));
        }
        for r in &self.rows {
            if !(r.area_mm2 > 0.0 && r.tops > 0.0 && r.tops_per_w > 0.0) {
                return Err(Error::Config(format!(
                    "NVDLA row {} has a non-positive value",
                    r.name
                )));
            }
        }
        for pair in self.rows.windows(2) {
            if pair[1].area_mm2 <= pair[0].area_mm2 || pair[1].tops <= pair[0].tops {
                return Err(Error::Config(format!(
                    "NVDLA rows {} and {} are not strictly increasing in area and TOPS",
                    pair[0].name, pair[1].name
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let t: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("NVDLA table: {e}")))?
        };
        t.validate()?;
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn min_area(&self) -> f64 {
        self.rows[0].area_mm2
    }

    pub fn max_area(&self) -> f64 {
        self.rows[self.rows.len() - 1].area_mm2
    }
}

/// An interpolated back-end operating point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendPoint {
    /// Silicon actually occupied (clamped to the largest configuration).
    pub area_mm2: f64,
    pub tops: f64,
    pub tops_per_w: f64,
    /// The requested area exceeded the largest configuration.
    pub clamped: bool,
}

/// Back-end performance at `area`; `None` below the smallest configuration.
pub fn nvdla_point(area: f64, table: &NvdlaTable) -> Option<BackendPoint> {
    let p = nvdla_point_quiet(area, table)?;
    if p.clamped {
        log::warn!(
            "{area:.3} mm² exceeds the largest back-end configuration; clamped to {}",
            table.rows[table.rows.len() - 1].name
        );
    }
    Some(p)
}

/// Same as [`nvdla_point`] without the clamp warning, for sweeps that
/// report clamping once.
pub(crate) fn nvdla_point_quiet(area: f64, table: &NvdlaTable) -> Option<BackendPoint> {
    let rows = &table.rows;
    if !area.is_finite() || area < table.min_area() {
        return None;
    }
    let last = &rows[rows.len() - 1];
    if area > last.area_mm2 {
        return Some(BackendPoint {
            area_mm2: last.area_mm2,
            tops: last.tops,
            tops_per_w: last.tops_per_w,
            clamped: true,
        });
    }
    if let Some(r) = rows.iter().find(|r| r.area_mm2 == area) {
        return Some(BackendPoint {
            area_mm2: area,
            tops: r.tops,
            tops_per_w: r.tops_per_w,
            clamped: false,
        });
    }
    let hi = rows
        .iter()
        .position(|r| r.area_mm2 > area)
        .expect("area within table");
    let (a, b) = (&rows[hi - 1], &rows[hi]);
    let t = (area - a.area_mm2) / (b.area_mm2 - a.area_mm2);
    Some(BackendPoint {
        area_mm2: area,
        tops: a.tops + t * (b.tops - a.tops),
        tops_per_w: a.tops_per_w + t * (b.tops_per_w - a.tops_per_w),
        clamped: false,
    })
}

/// Inverse of the TOPS interpolation: the area delivering `tops`.
pub fn area_for_tops(tops: f64, table: &NvdlaTable) -> Option<f64> {
    let rows = &table.rows;
    if !(tops >= rows[0].tops && tops <= rows[rows.len() - 1].tops) {
        return None;
    }
    let hi = rows.iter().position(|r| r.tops >= tops)?;
    if hi == 0 || rows[hi].tops == tops {
        return Some(rows[hi].area_mm2);
    }
    let (a, b) = (&rows[hi - 1], &rows[hi]);
    let t = (tops - a.tops) / (b.tops - a.tops);
    Some(a.area_mm2 + t * (b.area_mm2 - a.area_mm2))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpaReport {
    pub area_mm2: f64,
    pub power_w: f64,
    pub throughput_tops: f64,
    pub efficiency_tops_per_w: f64,
    pub frame_rate_fps: f64,
    pub latency_cycles: u64,
}

fn efficiency(tops: f64, power: f64) -> f64 {
    if power > 0.0 {
        tops / power
    } else {
        0.0
    }
}

/// Area of the front end from structure counts alone.
pub fn ffe_area(stats: &PipelineStats, cost: &CostConfig) -> f64 {
    cost.a_mult * stats.multipliers as f64
        + cost.a_add * stats.adders as f64
        + cost.a_reg * stats.register_bits as f64
        + cost.a_sram * stats.line_buffer_bits as f64
}

/// Front-end PPA while streaming continuously.
pub fn ffe_ppa(stats: &PipelineStats, cost: &CostConfig) -> PpaReport {
    if stats.max_stage_output_pixels == 0 {
        return PpaReport::default();
    }
    let area = ffe_area(stats, cost);
    let switched = cost.e_mult * stats.multipliers as f64
        + cost.e_add * stats.adders as f64
        + cost.e_reg * stats.register_bits as f64;
    let power = cost.f_clk * ACTIVITY * switched + cost.p_leak * area;
    let fps = cost.f_clk / stats.max_stage_output_pixels as f64;
    let tops = 2.0 * stats.dense_macs_per_frame as f64 * fps / 1e12;
    PpaReport {
        area_mm2: area,
        power_w: power,
        throughput_tops: tops,
        efficiency_tops_per_w: efficiency(tops, power),
        frame_rate_fps: fps,
        latency_cycles: stats.pipeline_depth + stats.max_stage_output_pixels,
    }
}

pub fn netlist_ppa(netlist: &Netlist, cost: &CostConfig) -> PpaReport {
    ffe_ppa(&pipeline_stats(netlist), cost)
}

/// Front end and back end in series, the front end doing fraction `f` of
/// the work. Both sides are clock gated when idle, so each draws power in
/// proportion to the ops it actually delivers.
pub fn system_ppa(ffe: &PpaReport, f: f64, backend: &BackendPoint) -> Result<PpaReport> {
    if !(0.0..1.0).contains(&f) {
        return Err(Error::range("fixed-ops fraction", f, "[0, 1)"));
    }
    if f == 0.0 {
        return Ok(PpaReport {
            area_mm2: ffe.area_mm2 + backend.area_mm2,
            power_w: backend.tops / backend.tops_per_w,
            throughput_tops: backend.tops,
            efficiency_tops_per_w: backend.tops_per_w,
            frame_rate_fps: 0.0,
            latency_cycles: 0,
        });
    }
    let backend_bound = backend.tops / (1.0 - f);
    let tops = if ffe.throughput_tops > 0.0 {
        backend_bound.min(ffe.throughput_tops / f)
    } else {
        0.0
    };
    let backend_power = tops * (1.0 - f) / backend.tops_per_w;
    let (duty, fps) = if ffe.throughput_tops > 0.0 {
        let duty = tops * f / ffe.throughput_tops;
        (duty, ffe.frame_rate_fps * duty)
    } else {
        (0.0, 0.0)
    };
    let power = backend_power + duty * ffe.power_w;
    Ok(PpaReport {
        area_mm2: ffe.area_mm2 + backend.area_mm2,
        power_w: power,
        throughput_tops: tops,
        efficiency_tops_per_w: efficiency(tops, power),
        frame_rate_fps: fps,
        latency_cycles: ffe.latency_cycles,
    })
}

/// Inverse-interpolation calibration against a published system row.
pub mod calibration {
    use super::*;

    /// One published system measurement at a fixed total area.
    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct SystemRow {
        pub n_fixed: usize,
        pub system_tops: f64,
        pub system_tops_per_w: f64,
    }

    /// The 3.0 mm² rows the defaults are calibrated against.
    pub const BUDGET_MM2: f64 = 3.0;
    pub const ROWS: [SystemRow; 3] = [
        SystemRow {
            n_fixed: 4,
            system_tops: 2.32,
            system_tops_per_w: 7.98,
        },
        SystemRow {
            n_fixed: 7,
            system_tops: 2.62,
            system_tops_per_w: 10.78,
        },
        SystemRow {
            n_fixed: 11,
            system_tops: 3.18,
            system_tops_per_w: 25.86,
        },
    ];

    /// Front-end area implied by a system row: the back end must deliver
    /// `S·(1−f)` TOPS, which fixes its area; the rest of the budget is FFE.
    pub fn ffe_area_anchor(
        system_tops: f64,
        f: f64,
        budget: f64,
        table: &NvdlaTable,
    ) -> Option<f64> {
        let backend = system_tops * (1.0 - f);
        area_for_tops(backend, table).map(|a| budget - a)
    }

    /// Least-squares `a_mult`, `a_sram` with `a_add = a_mult/4` and
    /// `a_reg = a_mult/64`, over (stats, target area) pairs.
    pub fn fit_area(samples: &[(PipelineStats, f64)]) -> Result<(f64, f64)> {
        // area = a_mult·u + a_sram·v
        let (mut suu, mut suv, mut svv, mut suy, mut svy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (s, y) in samples {
            let u = s.multipliers as f64 + s.adders as f64 / 4.0 + s.register_bits as f64 / 64.0;
            let v = s.line_buffer_bits as f64;
            suu += u * u;
            suv += u * v;
            svv += v * v;
            suy += u * y;
            svy += v * y;
        }
        let det = suu * svv - suv * suv;
        if det.abs() <= f64::EPSILON * suu * svv || samples.len() < 2 {
            return Err(Error::Config("area fit is underdetermined".into()));
        }
        Ok(((suy * svv - svy * suv) / det, (suu * svy - suv * suy) / det))
    }
}
