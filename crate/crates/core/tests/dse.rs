// SPDX-License-Identifier: Apache-2.0

mod common;

use std::sync::OnceLock;

use fixynn_core::compress::FrozenModel;
use fixynn_core::dse::{pareto, parse_budgets, relative, report, sweep, to_csv, DsePoint, Preset};
use fixynn_core::ppa::{nvdla_point, CostConfig, NvdlaTable};

fn model() -> &'static FrozenModel {
    static M: OnceLock<FrozenModel> = OnceLock::new();
    M.get_or_init(common::reference_model)
}

fn run(budgets: &[f64], splits: &[usize]) -> Vec<DsePoint> {
    sweep(
        model(),
        budgets,
        splits,
        &CostConfig::default(),
        &NvdlaTable::default(),
    )
    .unwrap()
}

fn full_sweep() -> &'static Vec<DsePoint> {
    static P: OnceLock<Vec<DsePoint>> = OnceLock::new();
    P.get_or_init(|| {
        let splits: Vec<usize> = (0..=model().graph.num_prefix_units()).collect();
        run(&parse_budgets("1.0:5.0:0.25").unwrap(), &splits)
    })
}

#[test]
fn table2_preset_reproduces_relative_gains() {
    let p = Preset::Table2;
    let points = run(&p.budgets(), &p.splits());
    let rel: Vec<(f64, f64)> = relative(&points).into_iter().map(Option::unwrap).collect();
    let tops = [1.00, 1.21, 1.37, 1.66];
    let eff = [1.00, 1.43, 1.93, 4.63];
    for (i, (t, e)) in rel.iter().enumerate() {
        assert!(
            (t / tops[i] - 1.0).abs() <= 0.05,
            "N={}: {t}",
            points[i].n_fixed
        );
        assert!(
            (e / eff[i] - 1.0).abs() <= 0.15,
            "N={}: {e}",
            points[i].n_fixed
        );
    }
}

#[test]
fn split_zero_is_the_backend_alone() {
    let table = NvdlaTable::default();
    for p in full_sweep().iter().filter(|p| p.n_fixed == 0) {
        let b = nvdla_point(p.budget_mm2, &table).unwrap();
        assert_eq!(p.system.throughput_tops, b.tops);
        assert_eq!(p.system.efficiency_tops_per_w, b.tops_per_w);
        assert_eq!(p.backend_area_mm2, b.area_mm2);
    }
    let d = &run(&[1.4], &[0])[0];
    assert_eq!(
        (d.system.throughput_tops, d.system.efficiency_tops_per_w),
        (0.728, 6.8)
    );
}

#[test]
fn infeasible_points_are_kept_and_flagged() {
    let table = NvdlaTable::default();
    for p in full_sweep() {
        let want =
            p.ffe_area_mm2 <= p.budget_mm2 && p.budget_mm2 - p.ffe_area_mm2 >= table.min_area();
        assert_eq!(p.feasible, want, "N={} at {}", p.n_fixed, p.budget_mm2);
        if p.feasible {
            assert!(p.ffe_area_mm2 + p.backend_area_mm2 <= p.budget_mm2 + 1e-12);
        }
    }
    let deep = model().graph.num_prefix_units();
    assert!(!run(&[1.0], &[deep])[0].feasible);
    assert_eq!(full_sweep().len(), 17 * (deep + 1));
}

#[test]
fn sweep_is_order_independent() {
    let a = run(&[1.5, 3.0, 2.0], &[7, 0, 4]);
    let b = run(&[3.0, 2.0, 1.5], &[0, 4, 7]);
    assert_eq!(a, b);
}

#[test]
fn pareto_front_is_dominance_free() {
    let front = pareto(full_sweep());
    assert!(!front.is_empty());
    let beats = |q: &DsePoint, p: &DsePoint| {
        let (qt, qe, pt, pe) = (
            q.system.throughput_tops,
            q.system.efficiency_tops_per_w,
            p.system.throughput_tops,
            p.system.efficiency_tops_per_w,
        );
        q.budget_mm2 <= p.budget_mm2
            && qt >= pt
            && qe >= pe
            && (qt > pt || qe > pe || q.budget_mm2 < p.budget_mm2)
    };
    for p in &front {
        assert!(front.iter().all(|q| !beats(q, p)));
    }
    // everything left out is beaten by something
    for p in full_sweep()
        .iter()
        .filter(|p| p.feasible && !front.contains(p))
    {
        assert!(full_sweep().iter().any(|q| q.feasible && beats(q, p)));
    }
    for w in front.windows(2) {
        assert!(w[0].budget_mm2 <= w[1].budget_mm2);
    }
    assert_eq!(pareto(&front[..1]), front[..1].to_vec());
}

#[test]
fn large_budgets_favour_a_front_end() {
    for p in pareto(full_sweep()).iter().filter(|p| p.budget_mm2 > 2.5) {
        assert!(p.n_fixed >= 4, "N={} at {}", p.n_fixed, p.budget_mm2);
    }
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        std::fs::create_dir(d).unwrap();
        report(full_sweep(), Some(&d.join("out.csv")), Some(d)).unwrap();
    }
    for f in ["out.csv", "tops.svg", "tops_per_w.svg"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = to_csv(full_sweep()).unwrap();
    assert_eq!(csv.lines().count(), full_sweep().len() + 1);
    assert!(csv.starts_with(
        "n_fixed,budget_mm2,ffe_area_mm2,backend_area_mm2,backend_tops,system_tops,system_tops_per_w,feasible\n"
    ));
    assert!(report(full_sweep(), Some(&dir.path().join("nope/x.csv")), None).is_err());
}
