//! Dense matrices and the symmetric eigensolver.
//!
//! Everything here is sized for kernel matrices (a few hundred rows at most),
//! so the representation is a plain row-major `Vec<f64>` and the algorithms
//! are the classical dense ones: Householder tridiagonalization followed by
//! implicit-shift QL for eigenpairs, and a pivot-skipping Cholesky for
//! positive semi-definite square roots. An independent eigenvalue counter
//! based on Sylvester inertia is provided as a cross-check.

use thiserror::Error;

/// Errors from matrix factorizations.
#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, expected square and nonempty")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is asymmetric: defect {defect:.3e} exceeds tolerance {tol:.3e}")]
    NotSymmetric { defect: f64, tol: f64 },
    #[error("eigeniteration failed to converge within {iterations} sweeps")]
    NoConvergence { iterations: usize },
    #[error("negative pivot {pivot:.3e} in column {column}: matrix is not positive semi-definite")]
    NegativePivot { pivot: f64, column: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// A `rows` by `cols` matrix of zeros.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// The identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    /// Builds a square matrix from a closure over index pairs.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols && self.rows > 0
    }

    /// Flat row-major view of the entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// One row as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Matrix-matrix product.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Largest entry magnitude, zero for the empty matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum::<f64>().sqrt()
    }

    /// Largest magnitude among `a[i][j] - a[j][i]`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                d = d.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        d
    }

    /// Entrywise difference `self - other` in Frobenius norm.
    pub fn frobenius_distance(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Dot product of two equally long slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, column `k` matching `values[k]`.
    pub vectors: Mat,
}

/// Full eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized as `(A + A^T) / 2` before reduction; callers that
/// must reject asymmetric input should check [`Mat::symmetry_defect`] first.
/// Householder tridiagonalization followed by implicit-shift QL, both in the
/// classical EISPACK formulation.
pub fn symmetric_eigen(m: &Mat) -> Result<SymmetricEigen, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare { rows: m.rows, cols: m.cols });
    }
    let n = m.rows;
    let mut v = Mat::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];

    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e)?;

    Ok(SymmetricEigen { values: d, vectors: v })
}

/// Householder reduction to symmetric tridiagonal form with accumulated
/// transformations. On exit `d` holds the diagonal, `e[1..]` the
/// subdiagonal, and `v` the orthogonal similarity.
fn tred2(v: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }
            for j in 0..i {
                let f = d[j];
                v[(j, i)] = f;
                let mut g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..(n - 1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit-shift QL on the tridiagonal form, updating the accumulated
/// transformations in `v`. Sorts eigenpairs ascending on exit.
fn tql2(v: &mut Mat, d: &mut [f64], e: &mut [f64]) -> Result<(), LinalgError> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 50 {
                    return Err(LinalgError::NoConvergence { iterations: 50 });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let h = v[(k, i + 1)];
                        v[(k, i + 1)] = s * v[(k, i)] + c * h;
                        v[(k, i)] = c * v[(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
            d[l] += f;
            e[l] = 0.0;
        } else {
            d[l] += f;
        }
    }

    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for j in (i + 1)..n {
            if d[j] < p {
                k = j;
                p = d[j];
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for j in 0..n {
                let t = v[(j, i)];
                v[(j, i)] = v[(j, k)];
                v[(j, k)] = t;
            }
        }
    }
    Ok(())
}

/// Lower-triangular Cholesky factor of a positive semi-definite matrix.
///
/// Columns whose updated diagonal falls below `tol_rel` times the largest
/// initial diagonal entry are zeroed rather than divided by, so genuinely
/// singular inputs factor cleanly: `[[4,2],[2,1]]` gives `[[2,0],[1,0]]` and
/// a diagonal `[[1,0],[0,0]]` is returned unchanged. An updated diagonal
/// below the negated threshold is rejected.
pub fn cholesky_psd(m: &Mat, tol_rel: f64) -> Result<Mat, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare { rows: m.rows, cols: m.cols });
    }
    let n = m.rows;
    let scale = (0..n).fold(0.0f64, |s, i| s.max(m[(i, i)].abs())).max(1e-300);
    let thresh = tol_rel * scale;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= thresh {
            if d < -thresh {
                return Err(LinalgError::NegativePivot { pivot: d, column: j });
            }
            continue;
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

/// Number of eigenvalues of a symmetric matrix strictly below `lambda`.
///
/// Sylvester inertia of `A - lambda I` through an unpivoted LDL^T sweep;
/// pivots within `1e-14` of the working scale are nudged, which suffices as
/// an independent cross-check for the iterative eigensolver on small
/// matrices. Cost is cubic per call.
pub fn count_eigenvalues_below(m: &Mat, lambda: f64) -> usize {
    assert!(m.is_square(), "inertia count needs a square matrix");
    let n = m.rows;
    let scale = m.max_abs().max(lambda.abs()).max(1e-300);
    let mut a = Mat::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    for i in 0..n {
        a[(i, i)] -= lambda;
    }
    let mut negatives = 0;
    for j in 0..n {
        let mut pivot = a[(j, j)];
        if pivot.abs() < 1e-14 * scale {
            pivot = 1e-14 * scale;
        }
        if pivot < 0.0 {
            negatives += 1;
        }
        for i in (j + 1)..n {
            let factor = a[(i, j)] / pivot;
            for k in (j + 1)..n {
                let delta = factor * a[(j, k)];
                a[(i, k)] -= delta;
            }
        }
    }
    negatives
}

/// Smallest and largest eigenvalue by inertia bisection inside Gershgorin
/// bounds. Slow and simple; used to cross-check the QL solver.
pub fn eigen_extremes_by_bisection(m: &Mat) -> (f64, f64) {
    assert!(m.is_square(), "bisection needs a square matrix");
    let n = m.rows;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let radius: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        lo = lo.min(m[(i, i)] - radius);
        hi = hi.max(m[(i, i)] + radius);
    }
    let width = (hi - lo).max(1e-300);
    let bisect = |target: usize| -> f64 {
        let mut a = lo - 1e-12 * width;
        let mut b = hi + 1e-12 * width;
        for _ in 0..100 {
            let mid = 0.5 * (a + b);
            if count_eigenvalues_below(m, mid) >= target {
                b = mid;
            } else {
                a = mid;
            }
        }
        0.5 * (a + b)
    };
    (bisect(1), bisect(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(m: &Mat, eig: &SymmetricEigen) -> f64 {
        let n = m.rows();
        let mut worst = 0.0f64;
        for k in 0..n {
            let v: Vec<f64> = (0..n).map(|i| eig.vectors[(i, k)]).collect();
            let mv = m.mul_vec(&v);
            for i in 0..n {
                worst = worst.max((mv[i] - eig.values[k] * v[i]).abs());
            }
        }
        worst
    }

    // deterministic pseudo-random stream for test fixtures
    fn lcg_stream(seed: u64, count: usize) -> Vec<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..count)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn random_symmetric(seed: u64, n: usize) -> Mat {
        let vals = lcg_stream(seed, n * n);
        let raw = Mat::from_fn(n, n, |i, j| vals[i * n + j]);
        Mat::from_fn(n, n, |i, j| 0.5 * (raw[(i, j)] + raw[(j, i)]))
    }

    #[test]
    fn eigen_of_diagonal_matrix_sorts_ascending() {
        let m = Mat::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ]);
        let eig = symmetric_eigen(&m).unwrap();
        assert_eq!(eig.values, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn eigen_two_by_two_known_values() {
        let m = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let eig = symmetric_eigen(&m).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 3.0).abs() < 1e-14);
        assert!(residual(&m, &eig) < 1e-13);
    }

    #[test]
    fn eigen_tridiagonal_known_spectrum() {
        // second difference matrix: eigenvalues 2 - sqrt(2), 2, 2 + sqrt(2)
        let m = Mat::from_rows(&[
            vec![2.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ]);
        let eig = symmetric_eigen(&m).unwrap();
        let expect = [2.0 - std::f64::consts::SQRT_2, 2.0, 2.0 + std::f64::consts::SQRT_2];
        for (got, want) in eig.values.iter().zip(expect) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn eigen_residual_and_orthogonality_random_12() {
        for seed in 0..5u64 {
            let m = random_symmetric(seed, 12);
            let scale = m.max_abs();
            let eig = symmetric_eigen(&m).unwrap();
            assert!(residual(&m, &eig) < 1e-12 * scale.max(1.0));
            let q = &eig.vectors;
            let qtq = q.transpose().matmul(q);
            assert!(qtq.frobenius_distance(&Mat::identity(12)) < 1e-12);
            for w in eig.values.windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn eigen_extremes_match_inertia_bisection() {
        for seed in 10..16u64 {
            let m = random_symmetric(seed, 9);
            let eig = symmetric_eigen(&m).unwrap();
            let (lo, hi) = eigen_extremes_by_bisection(&m);
            let scale = m.max_abs().max(1.0);
            assert!((eig.values[0] - lo).abs() < 1e-10 * scale);
            assert!((eig.values[8] - hi).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn inertia_count_matches_eigenvalues() {
        let m = random_symmetric(42, 8);
        let eig = symmetric_eigen(&m).unwrap();
        for k in 0..7 {
            let mid = 0.5 * (eig.values[k] + eig.values[k + 1]);
            if eig.values[k + 1] - eig.values[k] > 1e-10 {
                assert_eq!(count_eigenvalues_below(&m, mid), k + 1);
            }
        }
        assert_eq!(count_eigenvalues_below(&m, eig.values[0] - 1.0), 0);
        assert_eq!(count_eigenvalues_below(&m, eig.values[7] + 1.0), 8);
    }

    #[test]
    fn eigen_rejects_nonsquare() {
        let m = Mat::zeros(2, 3);
        assert!(matches!(symmetric_eigen(&m), Err(LinalgError::NotSquare { .. })));
    }

    #[test]
    fn cholesky_factors_rank_deficient_examples() {
        let m = Mat::from_rows(&[vec![4.0, 2.0], vec![2.0, 1.0]]);
        let l = cholesky_psd(&m, 1e-12).unwrap();
        assert_eq!(l, Mat::from_rows(&[vec![2.0, 0.0], vec![1.0, 0.0]]));

        let m = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let l = cholesky_psd(&m, 1e-12).unwrap();
        assert_eq!(l, m);
    }

    #[test]
    fn cholesky_reconstructs_random_psd() {
        for seed in 0..4u64 {
            let b = random_symmetric(seed, 7);
            let m = b.matmul(&b.transpose());
            let l = cholesky_psd(&m, 1e-12).unwrap();
            let back = l.matmul(&l.transpose());
            assert!(back.frobenius_distance(&m) < 1e-12 * m.max_abs().max(1.0));
            // lower triangular by construction
            for i in 0..7 {
                for j in (i + 1)..7 {
                    assert_eq!(l[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        assert!(matches!(cholesky_psd(&m, 1e-12), Err(LinalgError::NegativePivot { .. })));
    }

    #[test]
    fn matmul_and_transpose_agree_with_hand_product() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Mat::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let ab = a.matmul(&b);
        assert_eq!(ab, Mat::from_rows(&[vec![19.0, 22.0], vec![43.0, 50.0]]));
        assert_eq!(a.transpose()[(0, 1)], 3.0);
        assert_eq!(a.mul_vec(&[1.0, 1.0]), vec![3.0, 7.0]);
    }
}
