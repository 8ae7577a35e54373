// SPDX-License-Identifier: Apache-2.0

mod common;

use fixynn_core::model::io::{load_bundle, save_bundle};
use fixynn_core::model::{
    build_mobilenet, count_macs, count_params, fixed_ops_fraction, ModelBundle,
};
use proptest::prelude::*;

const BLOCKS: [(usize, usize); 13] = [
    (64, 1),
    (128, 2),
    (128, 1),
    (256, 2),
    (256, 1),
    (512, 2),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (1024, 2),
    (1024, 1),
];

/// MACs per prefix unit plus the classifier, straight from the architecture table.
fn unit_macs(alpha: f64, res: u64, classes: u64) -> (Vec<u64>, u64) {
    let ch = |c: usize| ((c as f64 * alpha) as u64).max(8);
    let mut side = res.div_ceil(2);
    let mut cin = ch(32);
    let mut units = vec![side * side * 27 * cin];
    for (c, s) in BLOCKS {
        let cout = ch(c);
        side = side.div_ceil(s as u64);
        units.push(side * side * 9 * cin + side * side * cin * cout);
        cin = cout;
    }
    (units, cin * classes)
}

fn params(alpha: f64, classes: u64) -> u64 {
    let ch = |c: usize| ((c as f64 * alpha) as u64).max(8);
    let mut cin = ch(32);
    let mut total = 27 * cin;
    for (c, _) in BLOCKS {
        let cout = ch(c);
        total += 9 * cin + cin * cout;
        cin = cout;
    }
    total + cin * classes + classes
}

#[test]
fn mac_and_param_counts_match_architecture_table() {
    for alpha in [0.25, 0.5, 0.75, 1.0] {
        for res in [128, 160, 192, 224] {
            let g = build_mobilenet(alpha, res, 1000).unwrap();
            let (units, fc) = unit_macs(alpha, res as u64, 1000);
            assert_eq!(
                count_macs(&g).total,
                units.iter().sum::<u64>() + fc,
                "{alpha} @{res}"
            );
            assert_eq!(count_params(&g).total, params(alpha, 1000));
            let total = (units.iter().sum::<u64>() + fc) as f64;
            for n in 0..=units.len() {
                let want = units[..n].iter().sum::<u64>() as f64 / total;
                assert!((fixed_ops_fraction(&g, n).unwrap() - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn reference_counts() {
    let g = build_mobilenet(0.25, 224, 1000).unwrap();
    assert_eq!(count_macs(&g).total, 41_030_272);
    assert_eq!(count_params(&g).total, 464_600);
    let g = build_mobilenet(1.0, 224, 1000).unwrap();
    assert_eq!(count_macs(&g).total, 568_740_352);
    assert_eq!(count_params(&g).total, 4_210_088);
}

#[test]
fn bad_configs_are_rejected() {
    assert!(build_mobilenet(0.3, 224, 1000).is_err());
    assert!(build_mobilenet(0.25, 100, 1000).is_err());
    assert!(build_mobilenet(0.25, 224, 0).is_err());
    let g = build_mobilenet(0.25, 224, 1000).unwrap();
    assert!(fixed_ops_fraction(&g, 15).is_err());
}

#[test]
fn bundle_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.toml");
    let bundle = ModelBundle::synthetic(build_mobilenet(0.25, 32, 10).unwrap(), 9);
    save_bundle(&bundle, &path).unwrap();
    assert_eq!(load_bundle(&path).unwrap(), bundle);
    // a truncated blob is an error, not silent garbage
    let blob = dir.path().join("m.bin");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&blob, bytes).unwrap();
    assert!(load_bundle(&path).is_err());
}

proptest! {
    #[test]
    fn fraction_is_monotone_in_split(alpha_i in 0usize..4, res_i in 0usize..4) {
        let alpha = [0.25, 0.5, 0.75, 1.0][alpha_i];
        let g = build_mobilenet(alpha, 128 + 32 * res_i, 1000).unwrap();
        let mut last = 0.0;
        for n in 0..=g.num_prefix_units() {
            let f = fixed_ops_fraction(&g, n).unwrap();
            prop_assert!(f >= last && f < 1.0);
            last = f;
        }
    }

    #[test]
    fn random_graph_counts_are_consistent(seed in 0u64..500) {
        let g = common::random_graph(&mut common::rng(seed));
        let macs = count_macs(&g);
        prop_assert_eq!(macs.per_layer.iter().sum::<u64>(), macs.total);
        prop_assert_eq!(fixed_ops_fraction(&g, 0).unwrap(), 0.0);
    }
}
