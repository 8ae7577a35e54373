// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::tensor::RealTensor;
use crate::{Error, Result};

/// Per-layer unstructured magnitude pruning target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    pub target_sparsity: f64,
}

impl PruneSpec {
    pub fn new(target_sparsity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&target_sparsity) {
            return Err(Error::range("sparsity", target_sparsity, "[0, 1]"));
        }
        Ok(Self { target_sparsity })
    }

    /// Number of entries zeroed in a tensor of `n` elements: `floor(n·s)`.
    pub fn zero_count(&self, n: usize) -> usize {
        // the epsilon keeps e.g. 3 × (1/3) from flooring to 0
        ((n as f64 * self.target_sparsity + 1e-9).floor() as usize).min(n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pruned {
    pub tensor: RealTensor,
    /// Fraction of zero entries after pruning, pre-existing zeros included.
    pub achieved_sparsity: f64,
}

/// Zero the `floor(n·s)` smallest-magnitude entries; equal magnitudes are
/// zeroed lower flat index first.
pub fn prune_magnitude(tensor: &RealTensor, spec: &PruneSpec) -> Result<Pruned> {
    if tensor.is_empty() {
        return Err(Error::Shape("cannot prune an empty tensor".into()));
    }
    // re-check: the fields are public
    let spec = PruneSpec::new(spec.target_sparsity)?;
    if let Some(i) = tensor.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let k = spec.zero_count(tensor.len());
    let mut order: Vec<usize> = (0..tensor.len()).collect();
    order.sort_by(|&a, &b| {
        tensor.data[a]
            .abs()
            .total_cmp(&tensor.data[b].abs())
            .then(a.cmp(&b))
    });
    let mut data = tensor.data.clone();
    for &i in &order[..k] {
        data[i] = 0.0;
    }
    let zeros = data.iter().filter(|&&v| v == 0.0).count();
    Ok(Pruned {
        achieved_sparsity: zeros as f64 / data.len() as f64,
        tensor: RealTensor {
            dims: tensor.dims.clone(),
            data,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f32]) -> RealTensor {
        RealTensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn zeroes_smallest_magnitudes() {
        let p =
            prune_magnitude(&t(&[1.0, -2.0, 3.0, -4.0]), &PruneSpec::new(0.5).unwrap()).unwrap();
        assert_eq!(p.tensor.data, vec![0.0, 0.0, 3.0, -4.0]);
        assert_eq!(p.achieved_sparsity, 0.5);
    }

    #[test]
    fn zero_sparsity_is_identity() {
        let x = t(&[0.3, -0.1, 2.0]);
        assert_eq!(
            prune_magnitude(&x, &PruneSpec::new(0.0).unwrap())
                .unwrap()
                .tensor,
            x
        );
    }

    #[test]
    fn ties_break_on_lower_index() {
        let p =
            prune_magnitude(&t(&[2.0, -2.0, 5.0]), &PruneSpec::new(1.0 / 3.0).unwrap()).unwrap();
        assert_eq!(p.tensor.data, vec![0.0, -2.0, 5.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PruneSpec::new(1.5).is_err());
        assert!(PruneSpec::new(-0.1).is_err());
        let bad = PruneSpec {
            target_sparsity: 2.0,
        };
        assert!(prune_magnitude(&t(&[1.0]), &bad).is_err());
        assert!(prune_magnitude(&t(&[]), &PruneSpec::new(0.5).unwrap()).is_err());
    }

    #[test]
    fn preexisting_zeros_count() {
        let p = prune_magnitude(&t(&[0.0, 0.0, 1.0, 2.0]), &PruneSpec::new(0.25).unwrap()).unwrap();
        assert_eq!(p.achieved_sparsity, 0.5);
    }

    proptest! {
        #[test]
        fn exact_count_and_sparsity_floor(v in proptest::collection::vec(-10.0f32..10.0, 1..200), s in 0.0f64..=1.0) {
            let spec = PruneSpec::new(s).unwrap();
            let p = prune_magnitude(&t(&v), &spec).unwrap();
            let k = spec.zero_count(v.len());
            prop_assert!(p.achieved_sparsity + 1e-12 >= k as f64 / v.len() as f64);
            // every survivor is at least as large as every zeroed entry
            let changed: Vec<usize> = (0..v.len()).filter(|&i| p.tensor.data[i] != v[i]).collect();
            let max_zeroed = changed.iter().map(|&i| v[i].abs()).fold(0.0f32, f32::max);
            for (i, &x) in p.tensor.data.iter().enumerate() {
                if x != 0.0 { prop_assert!(x.abs() >= max_zeroed, "index {}", i); }
            }
            prop_assert!(changed.len() <= k);
        }
    }
}
