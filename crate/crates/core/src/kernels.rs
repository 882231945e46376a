//! Closed-form kernel functions.

use std::fmt;

use rand::seq::index;

use crate::dataset::{Features, Instance, PartitionedDataset};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::mr::task_rng;

/// Stream namespace for the bandwidth sampler.
const SELF_TUNE_JOB: u32 = 0x5e1f;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `exp(-|x - y|^2 / (2 sigma^2))`
    Rbf { sigma: f64 },
    /// `(x.y + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `tanh(a x.y + b)`; may be indefinite.
    Neural { a: f64, b: f64 },
    Linear,
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("rbf sigma must be > 0, got {sigma}")));
        }
        Ok(KernelSpec::Rbf { sigma })
    }

    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        if degree < 1 {
            return Err(Error::invalid("polynomial degree must be >= 1"));
        }
        if !offset.is_finite() {
            return Err(Error::invalid("polynomial offset must be finite"));
        }
        Ok(KernelSpec::Polynomial { degree, offset })
    }

    pub fn neural(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::invalid("neural kernel parameters must be finite"));
        }
        Ok(KernelSpec::Neural { a, b })
    }

    /// Re-checks invariants of a spec built by hand.
    pub fn validate(self) -> Result<Self> {
        match self {
            KernelSpec::Rbf { sigma } => Self::rbf(sigma),
            KernelSpec::Polynomial { degree, offset } => Self::polynomial(degree, offset),
            KernelSpec::Neural { a, b } => Self::neural(a, b),
            KernelSpec::Linear => Ok(self),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Polynomial { .. } => "polynomial",
            KernelSpec::Neural { .. } => "neural",
            KernelSpec::Linear => "linear",
        }
    }

    /// `(tag, params)` as persisted in model files.
    pub(crate) fn to_tag(self) -> (u8, [f64; 3]) {
        match self {
            KernelSpec::Rbf { sigma } => (0, [sigma, 0.0, 0.0]),
            KernelSpec::Polynomial { degree, offset } => (1, [degree as f64, offset, 0.0]),
            KernelSpec::Neural { a, b } => (2, [a, b, 0.0]),
            KernelSpec::Linear => (3, [0.0; 3]),
        }
    }

    pub(crate) fn from_tag(tag: u8, p: [f64; 3]) -> Result<Self> {
        match tag {
            0 => Self::rbf(p[0]),
            1 => {
                if p[0].fract() != 0.0 || p[0] < 1.0 || p[0] > u32::MAX as f64 {
                    return Err(Error::Corrupt(format!("bad polynomial degree {}", p[0])));
                }
                Self::polynomial(p[0] as u32, p[1])
            }
            2 => Self::neural(p[0], p[1]),
            3 => Ok(KernelSpec::Linear),
            t => Err(Error::Corrupt(format!("unknown kernel tag {t}"))),
        }
    }

    /// Kernel value on raw feature vectors.
    pub fn eval(&self, x: &Features, y: &Features) -> Result<f64> {
        Ok(match *self {
            KernelSpec::Rbf { sigma } => (-x.squared_distance(y)? / (2.0 * sigma * sigma)).exp(),
            KernelSpec::Polynomial { degree, offset } => (x.dot(y)? + offset).powi(degree as i32),
            KernelSpec::Neural { a, b } => (a * x.dot(y)? + b).tanh(),
            KernelSpec::Linear => x.dot(y)?,
        })
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Rbf { sigma } => write!(f, "rbf(sigma={sigma})"),
            KernelSpec::Polynomial { degree, offset } => {
                write!(f, "polynomial(degree={degree}, offset={offset})")
            }
            KernelSpec::Neural { a, b } => write!(f, "neural(a={a}, b={b})"),
            KernelSpec::Linear => write!(f, "linear"),
        }
    }
}

pub fn kernel_pair(spec: &KernelSpec, x: &Instance, y: &Instance) -> Result<f64> {
    spec.eval(&x.features, &y.features)
}

/// Kernel column between a landmark block and one instance.
pub fn kernel_block(spec: &KernelSpec, landmarks: &[Instance], x: &Instance) -> Result<Vec<f64>> {
    if landmarks.is_empty() {
        return Err(Error::invalid("empty landmark block"));
    }
    landmarks
        .iter()
        .map(|l| spec.eval(&l.features, &x.features))
        .collect()
}

/// Symmetric gram matrix; the lower triangle mirrors the upper one.
pub fn kernel_gram(spec: &KernelSpec, instances: &[Instance]) -> Result<DenseMatrix> {
    let n = instances.len();
    if n == 0 {
        return Err(Error::invalid("gram of an empty instance list"));
    }
    let mut g = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = kernel_pair(spec, &instances[i], &instances[j])?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    Ok(g)
}

/// RBF bandwidth as the root of half the mean squared pairwise distance over a
/// seeded sample of `sample_size` instances (all pairs within the sample).
pub fn self_tune_rbf(dataset: &PartitionedDataset, sample_size: usize, seed: u64) -> Result<f64> {
    if sample_size < 2 {
        return Err(Error::invalid("self-tuning sample size must be >= 2"));
    }
    let n = dataset.n();
    if n < 2 {
        return Err(Error::DegenerateBandwidth);
    }
    let take = sample_size.min(n);
    let mut rng = task_rng(seed, SELF_TUNE_JOB, 0);
    let mut ids = index::sample(&mut rng, n, take).into_vec();
    ids.sort_unstable();
    let mut sum = 0.0;
    let mut pairs = 0u64;
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            sum += dataset
                .instance(i)
                .features
                .squared_distance(&dataset.instance(j).features)?;
            pairs += 1;
        }
    }
    let mean = sum / pairs as f64;
    if mean.is_nan() || mean <= 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok((mean / 2.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PartitionOptions;

    fn inst(id: u64, v: &[f64]) -> Instance {
        Instance::dense(id, v.to_vec())
    }

    #[test]
    fn rbf_of_identical_points_is_one() {
        let k = KernelSpec::rbf(0.7).unwrap();
        let x = inst(0, &[1.0, -2.0, 3.5]);
        assert_eq!(kernel_pair(&k, &x, &x).unwrap(), 1.0);
    }

    #[test]
    fn polynomial_of_orthogonal_vectors() {
        let k = KernelSpec::polynomial(5, 1.0).unwrap();
        let v = kernel_pair(&k, &inst(0, &[1.0, 0.0]), &inst(1, &[0.0, 1.0])).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn neural_matches_reference_value() {
        // tanh(0.0045 * 10 + 0.11) = tanh(0.155)
        let k = KernelSpec::neural(0.0045, 0.11).unwrap();
        let v = kernel_pair(&k, &inst(0, &[1.0, 3.0]), &inst(1, &[1.0, 3.0])).unwrap();
        assert!((v - 0.153_770_522_264_092_63).abs() < 1e-15, "{v}");
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::rbf(0.0).is_err());
        assert!(KernelSpec::rbf(-1.0).is_err());
        assert!(KernelSpec::polynomial(0, 1.0).is_err());
        assert!(KernelSpec::Rbf { sigma: f64::NAN }.validate().is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let k = KernelSpec::Linear;
        assert!(matches!(
            kernel_pair(&k, &inst(0, &[1.0]), &inst(1, &[1.0, 2.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn block_of_self_under_rbf() {
        let x = inst(0, &[0.3, 0.4]);
        let k = KernelSpec::rbf(1.0).unwrap();
        assert_eq!(kernel_block(&k, std::slice::from_ref(&x), &x).unwrap(), vec![1.0]);
        assert!(kernel_block(&k, &[], &x).is_err());
    }

    #[test]
    fn linear_block_is_dot_products() {
        let ls = [inst(0, &[1.0, 2.0]), inst(1, &[-1.0, 0.5]), inst(2, &[0.0, 3.0])];
        let x = inst(3, &[2.0, -1.0]);
        let got = kernel_block(&KernelSpec::Linear, &ls, &x).unwrap();
        let want: Vec<f64> = ls
            .iter()
            .map(|l| {
                let d = l.features.to_dense();
                d[0] * 2.0 - d[1]
            })
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn gram_laws() {
        let pts: Vec<Instance> = (0..6)
            .map(|i| inst(i, &[(i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 * 0.1]))
            .collect();
        let rbf = kernel_gram(&KernelSpec::rbf(0.9).unwrap(), &pts).unwrap();
        for i in 0..6 {
            assert_eq!(rbf.get(i, i), 1.0);
            for j in 0..6 {
                assert_eq!(rbf.get(i, j), rbf.get(j, i));
            }
        }
        let poly = KernelSpec::polynomial(3, 1.0).unwrap();
        let g = kernel_gram(&poly, &pts[..4]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.get(i, j), kernel_pair(&poly, &pts[i], &pts[j]).unwrap());
            }
        }
        let e = kernel_gram(&KernelSpec::Linear, &[inst(0, &[1.0, 0.0]), inst(1, &[0.0, 1.0])]).unwrap();
        assert_eq!(e, DenseMatrix::identity(2));
    }

    #[test]
    fn self_tune_single_pair() {
        let ds = PartitionedDataset::from_rows(vec![vec![0.0, 0.0], vec![1.0, 1.0]], PartitionOptions::new(1)).unwrap();
        assert!((self_tune_rbf(&ds, 10, 1).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn self_tune_degenerate() {
        let ds = PartitionedDataset::from_rows(vec![vec![2.0, 5.0]; 7], PartitionOptions::new(2)).unwrap();
        assert!(matches!(self_tune_rbf(&ds, 5, 3), Err(Error::DegenerateBandwidth)));
        let one = PartitionedDataset::from_rows(vec![vec![2.0]], PartitionOptions::new(1)).unwrap();
        assert!(self_tune_rbf(&one, 5, 3).is_err());
        assert!(self_tune_rbf(&ds, 1, 3).is_err());
    }
}
