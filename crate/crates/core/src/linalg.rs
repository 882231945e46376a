//! Dense symmetric linear algebra: Jacobi eigendecomposition, centering and
//! inverse square roots.

use crate::error::{Error, Result};

/// Column-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(p) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row: p % rows.max(1),
                col: p / rows.max(1),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: data.len(),
            });
        }
        let mut col_major = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                col_major[j * rows + i] = data[i * cols + j];
            }
        }
        Self::from_col_major(rows, cols, col_major)
    }

    /// Builds from a list of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(Error::Dimension {
                expected: c,
                found: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_major(r, c, &flat)
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column-major storage.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            out.extend((0..self.cols).map(|j| self.get(i, j)));
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// `self * x`, accumulating column by column in index order.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension {
                expected: self.cols,
                found: x.len(),
            });
        }
        let mut y = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            for (yi, &a) in y.iter_mut().zip(self.column(j)) {
                *yi += a * xj;
            }
        }
        Ok(y)
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let col = self.mul_vec(other.column(j))?;
            out.data[j * self.rows..(j + 1) * self.rows].copy_from_slice(&col);
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest `|Q_ij - Q_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.cols.min(self.rows) {
            for i in 0..j {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    fn require_square(&self) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }

    /// Checks symmetry within `1e-10` (relative to the largest entry when that
    /// exceeds one) and returns `(Q + Q^T) / 2`.
    pub fn symmetrized(&self) -> Result<DenseMatrix> {
        self.require_square()?;
        let asym = self.max_asymmetry();
        if asym > SYMMETRY_TOL * self.max_abs().max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        let n = self.rows;
        let mut s = self.clone();
        for j in 0..n {
            for i in 0..j {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                s.set(i, j, v);
                s.set(j, i, v);
            }
        }
        Ok(s)
    }
}

pub const SYMMETRY_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 100;
/// Relative eigenvalue floor used when none is configured.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    /// Descending.
    pub values: Vec<f64>,
    /// One orthonormal column per value.
    pub vectors: DenseMatrix,
}

/// Eigenpairs of a symmetric matrix by cyclic Jacobi, sorted by value
/// descending, truncated to the leading `top` if given.
///
/// Each eigenvector is signed so its largest-magnitude component (first one on
/// ties) is positive.
pub fn sym_eigen(q: &DenseMatrix, top: Option<usize>) -> Result<EigenResult> {
    let mut a = q.symmetrized()?;
    let n = a.rows;
    let mut v = DenseMatrix::identity(n);
    let tol = 1e-12 * a.frobenius();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                rotate(&mut a, &mut v, p, r);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > tol {
        return Err(Error::NotConverged(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let keep = top.map_or(n, |t| t.min(n));
    let mut values = Vec::with_capacity(keep);
    let mut vectors = DenseMatrix::zeros(n, keep);
    for (dst, &src) in order.iter().take(keep).enumerate() {
        values.push(a.get(src, src));
        let col = v.column(src);
        let mut lead = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[lead].abs() {
                lead = i;
            }
        }
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for (i, &x) in col.iter().enumerate() {
            vectors.set(i, dst, sign * x);
        }
    }
    Ok(EigenResult { values, vectors })
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let mut s = 0.0;
    for j in 0..a.cols {
        for i in 0..a.rows {
            if i != j {
                let x = a.get(i, j);
                s += x * x;
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `a[p][r]`.
fn rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, r: usize) {
    let apr = a.get(p, r);
    if apr == 0.0 {
        return;
    }
    let app = a.get(p, p);
    let arr = a.get(r, r);
    let theta = (arr - app) / (2.0 * apr);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.rows;
    for k in 0..n {
        if k == p || k == r {
            continue;
        }
        let akp = a.get(k, p);
        let akr = a.get(k, r);
        let np = c * akp - s * akr;
        let nr = s * akp + c * akr;
        a.set(k, p, np);
        a.set(p, k, np);
        a.set(k, r, nr);
        a.set(r, k, nr);
    }
    a.set(p, p, app - t * apr);
    a.set(r, r, arr + t * apr);
    a.set(p, r, 0.0);
    a.set(r, p, 0.0);
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkr = v.get(k, r);
        v.set(k, p, c * vkp - s * vkr);
        v.set(k, r, s * vkp + c * vkr);
    }
}

/// `H = I - ee^T / l`.
pub fn centering_matrix(l: usize) -> Result<DenseMatrix> {
    if l == 0 {
        return Err(Error::invalid("centering matrix of size 0"));
    }
    let off = -1.0 / l as f64;
    let mut h = DenseMatrix::from_col_major(l, l, vec![off; l * l])?;
    for i in 0..l {
        h.set(i, i, 1.0 + off);
    }
    Ok(h)
}

/// `Λ^{-1/2} V^T` over eigenpairs with `λ > floor · λ_max` (and `λ > 0`).
///
/// Returns an `r × l` matrix; dropped directions reduce `r`.
pub fn inv_sqrt_psd(q: &DenseMatrix, eig_floor: f64) -> Result<DenseMatrix> {
    inv_sqrt_top(q, None, eig_floor)
}

/// As [`inv_sqrt_psd`], limited to the leading `top` eigenpairs.
pub fn inv_sqrt_top(q: &DenseMatrix, top: Option<usize>, eig_floor: f64) -> Result<DenseMatrix> {
    if !(eig_floor >= 0.0 && eig_floor.is_finite()) {
        return Err(Error::invalid(format!("eigenvalue floor must be >= 0, got {eig_floor}")));
    }
    let eig = sym_eigen(q, None)?;
    let lmax = eig.values.first().copied().unwrap_or(0.0);
    if lmax.is_nan() || lmax <= 0.0 {
        return Err(Error::RankZero);
    }
    let cut = eig_floor * lmax;
    let keep: Vec<usize> = (0..eig.values.len())
        .filter(|&i| eig.values[i] > cut && eig.values[i] > 0.0)
        .take(top.unwrap_or(usize::MAX))
        .collect();
    if keep.is_empty() {
        return Err(Error::RankZero);
    }
    let l = q.rows();
    let mut e = DenseMatrix::zeros(keep.len(), l);
    for (row, &i) in keep.iter().enumerate() {
        let scale = 1.0 / eig.values[i].sqrt();
        for (j, &x) in eig.vectors.column(i).iter().enumerate() {
            e.set(row, j, scale * x);
        }
    }
    Ok(e)
}

/// Symmetric inverse square root `V Λ^{-1/2} V^T` over the eigenpairs kept by
/// [`inv_sqrt_psd`]; returns the `l × l` matrix and the retained rank.
pub fn inv_sqrt_sym(q: &DenseMatrix, eig_floor: f64) -> Result<(DenseMatrix, usize)> {
    let e = inv_sqrt_psd(q, eig_floor)?;
    let eig = sym_eigen(q, Some(e.rows()))?;
    let l = q.rows();
    let mut s = DenseMatrix::zeros(l, l);
    for k in 0..e.rows() {
        let v = eig.vectors.column(k);
        let w = 1.0 / eig.values[k].sqrt();
        for j in 0..l {
            for i in 0..l {
                let cur = s.get(i, j);
                s.set(i, j, cur + w * v[i] * v[j]);
            }
        }
    }
    Ok((s, e.rows()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &DenseMatrix, b: &DenseMatrix, tol: f64) -> bool {
        a.rows() == b.rows()
            && a.cols() == b.cols()
            && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_top_two() {
        let r = sym_eigen(&DenseMatrix::identity(3), Some(2)).unwrap();
        assert_eq!(r.values, vec![1.0, 1.0]);
        let vtv = r.vectors.transpose().matmul(&r.vectors).unwrap();
        assert!(close(&vtv, &DenseMatrix::identity(2), 1e-12));
    }

    #[test]
    fn diagonal_matrix() {
        let r = sym_eigen(&DenseMatrix::diag(&[1.0, 3.0, 2.0]), None).unwrap();
        assert_eq!(r.values, vec![3.0, 2.0, 1.0]);
        let want = DenseMatrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(r.vectors, want);
    }

    #[test]
    fn two_by_two_closed_form() {
        // [[2,1],[1,2]] has eigenpairs 3 -> (1,1)/sqrt2 and 1 -> (1,-1)/sqrt2
        let q = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let r = sym_eigen(&q, None).unwrap();
        assert!((r.values[0] - 3.0).abs() < 1e-14 && (r.values[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r.vectors.get(0, 0) - h).abs() < 1e-14);
        assert!((r.vectors.get(1, 0) - h).abs() < 1e-14);
        assert!((r.vectors.get(0, 1).abs() - h).abs() < 1e-14);
        assert!((r.vectors.get(0, 1) + r.vectors.get(1, 1)).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(sym_eigen(&DenseMatrix::zeros(2, 3), None), Err(Error::NotSquare { .. })));
        let q = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&q, None), Err(Error::NotSymmetric(_))));
        assert!(DenseMatrix::from_col_major(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        let r = sym_eigen(&DenseMatrix::zeros(3, 3), None).unwrap();
        assert_eq!(r.values, vec![0.0; 3]);
        assert!(matches!(inv_sqrt_psd(&DenseMatrix::zeros(3, 3), 1e-10), Err(Error::RankZero)));
    }

    #[test]
    fn centering_closed_forms() {
        assert_eq!(centering_matrix(1).unwrap(), DenseMatrix::zeros(1, 1));
        let h2 = centering_matrix(2).unwrap();
        assert_eq!(h2.to_row_major(), vec![0.5, -0.5, -0.5, 0.5]);
        let h = centering_matrix(7).unwrap();
        for x in h.mul_vec(&[1.0; 7]).unwrap() {
            assert!(x.abs() < 1e-12);
        }
        assert!(centering_matrix(0).is_err());
    }

    #[test]
    fn inverse_sqrt_of_scaled_identity() {
        let q = DenseMatrix::diag(&[4.0, 4.0]);
        let e = inv_sqrt_psd(&q, 1e-10).unwrap();
        for x in e.data() {
            assert!(*x == 0.0 || *x == 0.5);
        }
        let w = e.matmul(&q).unwrap().matmul(&e.transpose()).unwrap();
        assert!(close(&w, &DenseMatrix::identity(2), 1e-12));
    }

    #[test]
    fn inverse_sqrt_drops_null_directions() {
        let e = inv_sqrt_psd(&DenseMatrix::diag(&[1.0, 0.0]), 1e-8).unwrap();
        assert_eq!((e.rows(), e.cols()), (1, 2));
        assert_eq!(e.row(0), vec![1.0, 0.0]);
        let neg = inv_sqrt_psd(&DenseMatrix::diag(&[2.0, -1.0, 0.5]), 1e-10).unwrap();
        assert_eq!(neg.rows(), 2);
        let top = inv_sqrt_top(&DenseMatrix::diag(&[2.0, 1.0, 0.5]), Some(1), 1e-10).unwrap();
        assert_eq!(top.rows(), 1);
        assert!(matches!(inv_sqrt_psd(&DenseMatrix::diag(&[-1.0, -2.0]), 1e-10), Err(Error::RankZero)));
    }

    #[test]
    fn symmetric_inverse_sqrt_squares_to_pseudo_inverse() {
        let q = DenseMatrix::from_rows(&[vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]]).unwrap();
        let (s, r) = inv_sqrt_sym(&q, 1e-10).unwrap();
        assert_eq!(r, 3);
        let w = s.matmul(&q).unwrap().matmul(&s).unwrap();
        assert!(close(&w, &DenseMatrix::identity(3), 1e-12));
    }

    #[test]
    fn block_products_accumulate_in_column_order() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(a.mul_vec(&[1.0, 0.0, -1.0]).unwrap(), vec![-2.0, -2.0]);
        assert!(a.mul_vec(&[1.0]).is_err());
        assert_eq!(a.transpose().transpose(), a);
    }
}
