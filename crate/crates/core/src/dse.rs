// SPDX-License-Identifier: Apache-2.0

//! Design-space exploration over split depth and total silicon budget.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::compress::FrozenModel;
use crate::model::fixed_ops_fraction;
use crate::netlist::{freeze, pipeline_stats, FreezeSpec};
use crate::ppa::{ffe_ppa, nvdla_point_quiet, system_ppa, CostConfig, NvdlaTable, PpaReport};
use crate::{Error, Result};

pub const CSV_COLUMNS: [&str; 8] = [
    "n_fixed",
    "budget_mm2",
    "ffe_area_mm2",
    "backend_area_mm2",
    "backend_tops",
    "system_tops",
    "system_tops_per_w",
    "feasible",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DsePoint {
    pub n_fixed: usize,
    pub budget_mm2: f64,
    pub fixed_ops_fraction: f64,
    pub ffe: PpaReport,
    pub ffe_area_mm2: f64,
    pub backend_area_mm2: f64,
    pub backend_tops: f64,
    pub backend_tops_per_w: f64,
    pub system: PpaReport,
    pub feasible: bool,
}

/// Named sweep settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// One 3.0 mm² budget, splits 0/4/7/11.
    Table2,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "table2" => Ok(Self::Table2),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (known: table2)"
            ))),
        }
    }

    pub fn budgets(self) -> Vec<f64> {
        match self {
            Self::Table2 => vec![3.0],
        }
    }

    pub fn splits(self) -> Vec<usize> {
        match self {
            Self::Table2 => vec![0, 4, 7, 11],
        }
    }
}

/// `a:b:step` (inclusive) or a comma-separated list.
pub fn parse_budgets(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad budget list '{text}'"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let values = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [a, b, step] = parts[..] else {
            return Err(bad());
        };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if !(step > 0.0 && b >= a) {
            return Err(bad());
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        // snap to a decimal grid so 1.0 + 3·0.1 prints as 1.3
        (0..=n)
            .map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9)
            .collect()
    } else {
        text.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(bad());
    }
    Ok(values)
}

pub fn parse_splits(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad split list '{text}'")))
        })
        .collect()
}

fn point(
    n_fixed: usize,
    f: f64,
    ffe: &PpaReport,
    budget: f64,
    table: &NvdlaTable,
) -> Result<DsePoint> {
    let spare = budget - ffe.area_mm2;
    let backend = if ffe.area_mm2 <= budget {
        nvdla_point_quiet(spare, table)
    } else {
        None
    };
    let (backend_area, system, feasible) = match &backend {
        Some(b) => (b.area_mm2, system_ppa(ffe, f, b)?, true),
        None => (spare.max(0.0), PpaReport::default(), false),
    };
    Ok(DsePoint {
        n_fixed,
        budget_mm2: budget,
        fixed_ops_fraction: f,
        ffe: *ffe,
        ffe_area_mm2: ffe.area_mm2,
        backend_area_mm2: backend_area,
        backend_tops: backend.map_or(0.0, |b| b.tops),
        backend_tops_per_w: backend.map_or(0.0, |b| b.tops_per_w),
        system,
        feasible,
    })
}

/// Every (split, budget) pair; sorted by split then budget.
pub fn sweep(
    model: &FrozenModel,
    budgets: &[f64],
    splits: &[usize],
    cost: &CostConfig,
    table: &NvdlaTable,
) -> Result<Vec<DsePoint>> {
    if budgets.is_empty() || splits.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one budget and one split".into(),
        ));
    }
    cost.validate()?;
    table.validate()?;
    let mut unique: Vec<usize> = splits.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let fronts: BTreeMap<usize, (f64, PpaReport)> = unique
        .par_iter()
        .map(|&n| -> Result<(usize, (f64, PpaReport))> {
            let nl = freeze(model, &FreezeSpec::new(n))?;
            let f = fixed_ops_fraction(&model.graph, n)?;
            Ok((n, (f, ffe_ppa(&pipeline_stats(&nl), cost))))
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(splits.len() * budgets.len());
    for &n in splits {
        let (f, ffe) = &fronts[&n];
        for &b in budgets {
            points.push(point(n, *f, ffe, b, table)?);
        }
    }
    points.sort_by(|a, b| {
        a.n_fixed
            .cmp(&b.n_fixed)
            .then(a.budget_mm2.total_cmp(&b.budget_mm2))
    });
    let clamped = points
        .iter()
        .filter(|p| p.feasible && p.budget_mm2 - p.ffe_area_mm2 > table.max_area())
        .count();
    if clamped > 0 {
        log::warn!(
            "{clamped} of {} points leave more area than the largest back-end configuration ({} mm²); those back ends were clamped",
            points.len(),
            table.max_area()
        );
    }
    Ok(points)
}

fn dominates(q: &DsePoint, p: &DsePoint) -> bool {
    let (qt, qe) = (q.system.throughput_tops, q.system.efficiency_tops_per_w);
    let (pt, pe) = (p.system.throughput_tops, p.system.efficiency_tops_per_w);
    q.budget_mm2 <= p.budget_mm2
        && qt >= pt
        && qe >= pe
        && (qt > pt || qe > pe || q.budget_mm2 < p.budget_mm2)
}

/// Feasible points not dominated by a feasible point of no larger budget;
/// ordered by budget, then split.
pub fn pareto(points: &[DsePoint]) -> Vec<DsePoint> {
    let feasible: Vec<&DsePoint> = points.iter().filter(|p| p.feasible).collect();
    let mut front: Vec<DsePoint> = feasible
        .iter()
        .filter(|p| !feasible.iter().any(|q| dominates(q, p)))
        .map(|p| (*p).clone())
        .collect();
    front.sort_by(|a, b| {
        a.budget_mm2
            .total_cmp(&b.budget_mm2)
            .then(a.n_fixed.cmp(&b.n_fixed))
    });
    front
}

/// System TOPS and TOPS/W of each point relative to the N=0 point at the
/// same budget; `None` where that baseline is missing or infeasible.
pub fn relative(points: &[DsePoint]) -> Vec<Option<(f64, f64)>> {
    points
        .iter()
        .map(|p| {
            let base = points
                .iter()
                .find(|b| b.n_fixed == 0 && b.budget_mm2 == p.budget_mm2 && b.feasible)?;
            if !p.feasible {
                return None;
            }
            Some((
                p.system.throughput_tops / base.system.throughput_tops,
                p.system.efficiency_tops_per_w / base.system.efficiency_tops_per_w,
            ))
        })
        .collect()
}

pub fn to_csv(points: &[DsePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for p in points {
        w.write_record([
            p.n_fixed.to_string(),
            format!("{:.4}", p.budget_mm2),
            format!("{:.6}", p.ffe_area_mm2),
            format!("{:.6}", p.backend_area_mm2),
            format!("{:.6}", p.backend_tops),
            format!("{:.6}", p.system.throughput_tops),
            format!("{:.6}", p.system.efficiency_tops_per_w),
            p.feasible.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Scatter of one metric against budget, one colour per split.
pub fn scatter_svg(
    points: &[DsePoint],
    title: &str,
    y_label: &str,
    metric: fn(&DsePoint) -> f64,
) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let shown: Vec<&DsePoint> = points.iter().filter(|p| p.feasible).collect();
    let x_max = shown
        .iter()
        .map(|p| p.budget_mm2)
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.05;
    let y_max = shown
        .iter()
        .map(|p| metric(p))
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.1;
    let sx = |x: f64| m + x / x_max * (w - 2.0 * m);
    let sy = |y: f64| h - m - y / y_max * (h - 2.0 * m);
    let mut splits: Vec<usize> = shown.iter().map(|p| p.n_fixed).collect();
    splits.sort_unstable();
    splits.dedup();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        w / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        h - m,
        w - m,
        h - m
    );
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#,
        h - m
    );
    for i in 0..=4 {
        let xv = x_max * i as f64 / 4.0;
        let yv = y_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{xv:.2}</text>"#,
            sx(xv),
            h - m + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{yv:.2}</text>"#,
            m - 6.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">area budget (mm²)</text>"#,
        w / 2.0,
        h - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{y_label}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, n) in splits.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for p in shown.iter().filter(|p| p.n_fixed == *n) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{colour}"/>"#,
                sx(p.budget_mm2),
                sy(metric(p))
            );
        }
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{}" cy="{ly}" r="4" fill="{colour}"/>"#,
            w - m - 40.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">N={n}</text>"#,
            w - m - 30.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write the CSV and/or the two scatter plots (`tops.svg`, `tops_per_w.svg`).
pub fn report(points: &[DsePoint], csv_path: Option<&Path>, svg_dir: Option<&Path>) -> Result<()> {
    if let Some(path) = csv_path {
        std::fs::write(path, to_csv(points)?).map_err(|e| Error::io(path, e))?;
    }
    if let Some(dir) = svg_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let plots = [
            (
                "tops.svg",
                scatter_svg(points, "Throughput", "TOPS", |p| p.system.throughput_tops),
            ),
            (
                "tops_per_w.svg",
                scatter_svg(points, "Energy efficiency", "TOPS/W", |p| {
                    p.system.efficiency_tops_per_w
                }),
            ),
        ];
        for (name, text) in plots {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
