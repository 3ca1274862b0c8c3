//! Dense linear-algebra helpers shared by the learner and the oracle.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. `vec` stacks columns, matching
//! nalgebra's column-major storage, so `(Bᵀ ⊗ A)·vec(X) = vec(A·X·B)`.

use nalgebra::{DMatrix, DVector};

/// Column-stacking vectorization.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    DMatrix::from_column_slice(rows, cols, v)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank: singular values above `rel_tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&x| x > rel_tol * smax).count(),
        _ => 0,
    }
}

/// 2-norm condition number; infinite for rank-deficient or wide matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() < m.ncols() {
        return f64::INFINITY;
    }
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad with zero rows so the thin SVD returns a full right basis.
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let kept: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= rel_tol * smax || smax == 0.0)
        .collect();
    let mut basis = DMatrix::zeros(cols, kept.len());
    for (c, &i) in kept.iter().enumerate() {
        basis.set_column(c, &v_t.row(i).transpose());
    }
    basis
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    spectral_abscissa(m) < 0.0
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && m.clone().cholesky().is_some()
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

/// Block-diagonal matrix of 2×2 rotation-rate blocks `[[0, w], [−w, 0]]`.
pub fn harmonic_blocks(frequencies: &[f64]) -> DMatrix<f64> {
    let q = 2 * frequencies.len();
    let mut e = DMatrix::zeros(q, q);
    for (r, &w) in frequencies.iter().enumerate() {
        e[(2 * r, 2 * r + 1)] = w;
        e[(2 * r + 1, 2 * r)] = -w;
    }
    e
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: DVector<f64>,
    pub rank: usize,
    /// Column order chosen by the pivoting, first entry has the largest norm.
    pub pivots: Vec<usize>,
}

/// Least-squares solve of `a·x ≈ b` by Householder QR with column pivoting.
///
/// Columns whose diagonal entry in R falls below `rel_tol · |R₀₀|` are dropped
/// and their coefficients set to zero (basic solution).
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> LeastSquares {
    let (m, n) = a.shape();
    assert_eq!(b.len(), m, "lstsq: right-hand side length mismatch");
    let mut r = a.clone();
    let mut rhs = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let steps = m.min(n);

    for k in 0..steps {
        // Pivot on the largest remaining column norm.
        let (best, _) = (k..n)
            .map(|j| (j, r.view((k, j), (m - k, 1)).norm_squared()))
            .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if best != k {
            r.swap_columns(k, best);
            perm.swap(k, best);
        }

        let norm_x = r.view((k, k), (m - k, 1)).norm();
        if norm_x == 0.0 {
            continue;
        }
        let alpha = if r[(k, k)] > 0.0 { -norm_x } else { norm_x };
        let mut v: DVector<f64> = r.view((k, k), (m - k, 1)).column(0).into_owned();
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..n {
            let dot: f64 = (0..m - k).map(|i| v[i] * r[(k + i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in 0..m - k {
                r[(k + i, j)] -= f * v[i];
            }
        }
        let dot: f64 = (0..m - k).map(|i| v[i] * rhs[k + i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in 0..m - k {
            rhs[k + i] -= f * v[i];
        }
    }

    let r00 = if steps > 0 { r[(0, 0)].abs() } else { 0.0 };
    let rank = (0..steps)
        .take_while(|&k| r00 > 0.0 && r[(k, k)].abs() > rel_tol * r00)
        .count();

    let mut z = DVector::zeros(n);
    for k in (0..rank).rev() {
        let s: f64 = ((k + 1)..rank).map(|j| r[(k, j)] * z[j]).sum();
        z[k] = (rhs[k] - s) / r[(k, k)];
    }
    let mut solution = DVector::zeros(n);
    for (k, &p) in perm.iter().enumerate() {
        solution[p] = z[k];
    }
    LeastSquares {
        solution,
        rank,
        pivots: perm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_is_column_major_and_matches_kronecker_identity() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(vec(&a).as_slice(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 2.0, 0.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, -2.0, 0.7]);
        let lhs = b.transpose().kronecker(&a) * vec(&x);
        let rhs = vec(&(&a * &x * &b));
        assert!((lhs - rhs).norm() < 1e-12);
        assert_eq!(unvec(vec(&a).as_slice(), 2, 3), a);
    }

    #[test]
    fn lstsq_matches_normal_equations_on_tall_system() {
        let a = DMatrix::from_fn(8, 3, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 + 0.1 * (i * j) as f64
        });
        let b = DVector::from_fn(8, |i, _| (i as f64).sin());
        let ls = lstsq(&a, &b, 1e-12);
        assert_eq!(ls.rank, 3);
        let ata = a.transpose() * &a;
        let atb = a.transpose() * &b;
        let x = ata.lu().solve(&atb).unwrap();
        assert!((ls.solution - x).norm() < 1e-10);
    }

    #[test]
    fn lstsq_reports_rank_deficiency() {
        let mut a = DMatrix::from_fn(6, 3, |i, j| (i + 2 * j) as f64 + ((i * j) as f64).cos());
        let c0 = a.column(0).into_owned();
        a.set_column(2, &(c0 * 2.0));
        let b = DVector::from_element(6, 1.0);
        assert_eq!(lstsq(&a, &b, 1e-10).rank, 2);
        assert_eq!(numerical_rank(&a, 1e-10), 2);
        assert!(condition_number(&a) > 1e12);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let n = null_space(&c, 1e-12);
        assert_eq!(n.ncols(), 2);
        assert!((&c * &n).norm() < 1e-14);
        assert!((n.transpose() * &n - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn harmonic_blocks_layout() {
        let e = harmonic_blocks(&[1.0, 0.75]);
        assert_eq!(e[(0, 1)], 1.0);
        assert_eq!(e[(1, 0)], -1.0);
        assert_eq!(e[(2, 3)], 0.75);
        assert_eq!(e[(3, 2)], -0.75);
        assert_eq!((&e + e.transpose()).norm(), 0.0);
        assert!(spectral_abscissa(&e).abs() < 1e-12);
    }
}
