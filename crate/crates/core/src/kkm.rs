//! Exact kernel k-means over a materialized gram matrix.

use crate::cluster::{argmin, farthest_points, Assignment, LloydPolicy};
use crate::dataset::Instance;
use crate::error::{Error, Result};
use crate::kernels::{kernel_gram, KernelSpec};
use crate::linalg::{DenseMatrix, SYMMETRY_TOL};

/// Largest `n` accepted by default; the gram needs `8 n^2` bytes.
pub const DEFAULT_CAP: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    k: DenseMatrix,
}

impl KernelMatrix {
    pub fn new(k: DenseMatrix, cap: usize) -> Result<Self> {
        if k.rows() != k.cols() {
            return Err(Error::NotSquare {
                rows: k.rows(),
                cols: k.cols(),
            });
        }
        if k.rows() > cap {
            return Err(Error::invalid(format!("n = {} exceeds the exact kernel k-means cap of {cap}", k.rows())));
        }
        let asym = k.max_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(KernelMatrix { k })
    }

    pub fn from_instances(kernel: &KernelSpec, instances: &[Instance], cap: usize) -> Result<Self> {
        if instances.len() > cap {
            return Err(Error::invalid(format!(
                "n = {} exceeds the exact kernel k-means cap of {cap}",
                instances.len()
            )));
        }
        Self::new(kernel_gram(kernel, instances)?, cap)
    }

    pub fn n(&self) -> usize {
        self.k.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.k.get(i, j)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KkmIteration {
    pub iter: usize,
    /// Sum of squared kernel-space distances to the centroids used for assignment.
    pub objective: f64,
    pub moved: usize,
    pub reseeded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KkmRun {
    pub assignment: Assignment,
    pub history: Vec<Assignment>,
    pub log: Vec<KkmIteration>,
}

/// Kernel-space centroid given by its members, with the cached
/// `(1/n_c^2) Σ_{a,b} K_ab` term.
struct Centroid {
    members: Vec<usize>,
    self_term: f64,
}

impl Centroid {
    fn new(k: &KernelMatrix, members: Vec<usize>) -> Self {
        let nc = members.len() as f64;
        let mut s = 0.0;
        for &a in &members {
            for &b in &members {
                s += k.get(a, b);
            }
        }
        Centroid {
            members,
            self_term: s / (nc * nc),
        }
    }

    /// `K_ii - (2/n_c) Σ_a K_ia + (1/n_c^2) Σ_{a,b} K_ab`.
    fn dist2(&self, k: &KernelMatrix, i: usize) -> f64 {
        let nc = self.members.len() as f64;
        let cross: f64 = self.members.iter().map(|&a| k.get(i, a)).sum();
        k.get(i, i) - 2.0 * cross / nc + self.self_term
    }
}

/// Exact kernel k-means with the same initialization, tie-breaking, empty
/// cluster repair and stopping rule as the embedding clusterer.
pub fn exact_kkm(k: &KernelMatrix, policy: &LloydPolicy) -> Result<KkmRun> {
    if policy.max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    let n = k.n();
    let init = policy.initial_ids(n)?;
    let mut centroids: Vec<Centroid> = init.iter().map(|&i| Centroid::new(k, vec![i])).collect();
    let mut prev: Option<Vec<u32>> = None;
    let mut history = Vec::new();
    let mut log = Vec::new();

    for iter in 1..=policy.max_iters {
        let mut labels = vec![0u32; n];
        let mut objective = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, d) = argmin(centroids.iter().map(|c| c.dist2(k, i)));
            *label = c as u32;
            objective += d;
        }

        let mut members = vec![Vec::new(); policy.k];
        for (i, &c) in labels.iter().enumerate() {
            members[c as usize].push(i);
        }
        let mut next: Vec<Option<Centroid>> = members
            .into_iter()
            .map(|m| (!m.is_empty()).then(|| Centroid::new(k, m)))
            .collect();
        let empty: Vec<usize> = (0..policy.k).filter(|&c| next[c].is_none()).collect();
        if !empty.is_empty() {
            let dist: Vec<f64> = (0..n)
                .map(|i| {
                    next[labels[i] as usize]
                        .as_ref()
                        .expect("assigned cluster is non-empty")
                        .dist2(k, i)
                        .max(0.0)
                        .sqrt()
                })
                .collect();
            for (&c, p) in empty.iter().zip(farthest_points(&dist, empty.len())) {
                next[c] = Some(Centroid::new(k, vec![p]));
            }
        }
        centroids = next.into_iter().map(|c| c.expect("every cluster filled")).collect();

        let moved = match &prev {
            Some(p) => p.iter().zip(&labels).filter(|(a, b)| a != b).count(),
            None => n,
        };
        log.push(KkmIteration {
            iter,
            objective,
            moved,
            reseeded: empty.len(),
        });
        history.push(Assignment { labels: labels.clone() });
        prev = Some(labels);
        if moved == 0 {
            break;
        }
    }
    Ok(KkmRun {
        assignment: Assignment {
            labels: prev.expect("at least one iteration"),
        },
        history,
        log,
    })
}
