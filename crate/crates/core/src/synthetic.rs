//! Seeded synthetic datasets.

use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{LabelVector, PartitionOptions, PartitionedDataset};
use crate::error::{Error, Result};
use crate::mr::task_rng;

pub const BLOBS_JOB: u32 = 0xb10b;

/// Isotropic unit-variance Gaussian blobs in `d` dimensions with centres
/// `(separation/√2)·e_c`, so every pair of centres is `separation` apart.
/// Instance `i` belongs to blob `i mod k`.
pub fn gaussian_blobs(
    n: usize,
    d: usize,
    k: usize,
    separation: f64,
    seed: u64,
    options: PartitionOptions,
) -> Result<(PartitionedDataset, LabelVector)> {
    if k == 0 || k > d {
        return Err(Error::invalid(format!("blob count must be in [1, d = {d}], got {k}")));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = task_rng(seed, BLOBS_JOB, 0);
    let offset = separation / std::f64::consts::SQRT_2;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        let mut x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        x[c] += offset;
        rows.push(x);
        labels.push(c as u32);
    }
    Ok((PartitionedDataset::from_rows(rows, options)?, LabelVector::new(labels)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_seeded_and_labelled() {
        let (a, la) = gaussian_blobs(30, 4, 3, 6.0, 5, PartitionOptions::new(2)).unwrap();
        let (b, _) = gaussian_blobs(30, 4, 3, 6.0, 5, PartitionOptions::new(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.labels[..4], [0, 1, 2, 0]);
        assert!(gaussian_blobs(10, 2, 3, 6.0, 0, PartitionOptions::new(1)).is_err());
    }
}
