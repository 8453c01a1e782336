//! Small dense complex linear algebra on top of nalgebra.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::prelude::*;

/// Relative singular-value cutoff below which a least-squares system is
/// treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// `sum_k conj(a_k) b_k`.
#[inline]
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = C64::new(0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        acc += x.conj() * y;
    }
    acc
}

#[inline]
pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

#[inline]
pub fn norm(a: &[C64]) -> f64 {
    norm_sqr(a).sqrt()
}

/// Least-squares solution of `a x = b`.
///
/// Full-rank systems are solved through the SVD. When the system is rank
/// deficient (or has fewer rows than columns) a Tikhonov-regularized solve
/// is used instead and the returned flag is `true`.
pub fn lstsq(a: &CMatrix, b: &[C64]) -> (Vec<C64>, bool) {
    let (m, n) = a.shape();
    debug_assert_eq!(m, b.len());
    if n == 0 {
        return (Vec::new(), false);
    }
    let rhs = DVector::from_column_slice(b);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_TOL * smax.max(f64::MIN_POSITIVE))
        .count();
    if rank == n && m >= n {
        let x = svd
            .solve(&rhs, RANK_TOL * smax)
            .expect("svd computed with both factors");
        return (x.iter().copied().collect(), false);
    }
    (ridge_solve(a, b, 1e-10 * smax * smax), true)
}

/// Solves `(a^H a + lambda I) x = a^H b`.
pub fn ridge_solve(a: &CMatrix, b: &[C64], lambda: f64) -> Vec<C64> {
    let n = a.ncols();
    let rhs = a.adjoint() * DVector::from_column_slice(b);
    let mut gram = a.adjoint() * a;
    let lambda = if lambda > 0.0 { lambda } else { f64::MIN_POSITIVE };
    for i in 0..n {
        gram[(i, i)] += C64::new(lambda, 0.0);
    }
    match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs).iter().copied().collect(),
        None => gram
            .pseudo_inverse(RANK_TOL)
            .map(|p| (p * rhs).iter().copied().collect())
            .unwrap_or_else(|_| alloc::vec![C64::new(0.0, 0.0); n]),
    }
}

/// In-place Cholesky factorization of a Hermitian positive-definite matrix
/// stored column-major in `a` (`n x n`). On success the lower triangle holds
/// `L` with `a = L L^H`. Returns `false` if a non-positive pivot shows up.
pub fn cholesky_in_place(a: &mut [C64], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        // column j of L: a[j.., j]
        let (left, right) = a.split_at_mut(j * n);
        let col_j = &mut right[..n];
        for k in 0..j {
            let col_k = &left[k * n..(k + 1) * n];
            let ljk = col_k[j].conj();
            if ljk == C64::new(0.0, 0.0) {
                continue;
            }
            for i in j..n {
                col_j[i] -= col_k[i] * ljk;
            }
        }
        let d = col_j[j].re;
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        col_j[j] = C64::new(d, 0.0);
        let inv = 1.0 / d;
        for v in &mut col_j[j + 1..n] {
            *v *= inv;
        }
    }
    true
}

/// Solves `L L^H x = b` with the factor produced by [`cholesky_in_place`].
pub fn cholesky_solve(l: &[C64], n: usize, b: &mut [C64]) {
    // forward: L y = b
    for j in 0..n {
        let col = &l[j * n..(j + 1) * n];
        b[j] /= col[j];
        let bj = b[j];
        for i in j + 1..n {
            b[i] -= col[i] * bj;
        }
    }
    // backward: L^H x = y
    for j in (0..n).rev() {
        let col = &l[j * n..(j + 1) * n];
        let mut acc = b[j];
        for i in j + 1..n {
            acc -= col[i].conj() * b[i];
        }
        b[j] = acc / col[j].re;
    }
}

/// Builds an `rows x cols` matrix from column vectors.
pub fn from_columns(rows: usize, cols: &[Vec<C64>]) -> CMatrix {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        debug_assert_eq!(c.len(), rows);
        for (i, v) in c.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

/// Frobenius norm.
pub fn fro(m: &CMatrix) -> f64 {
    m.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn lstsq_recovers_overdetermined_solution() {
        let a = DMatrix::from_fn(6, 2, |i, j| C64::new((i + 2 * j) as f64, (i * j) as f64 - 1.0));
        let x = [C64::new(1.0, -2.0), C64::new(0.5, 0.25)];
        let b: Vec<C64> = (0..6).map(|i| a[(i, 0)] * x[0] + a[(i, 1)] * x[1]).collect();
        let (got, flagged) = lstsq(&a, &b);
        assert!(!flagged);
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).norm() < 1e-10);
        }
    }

    #[test]
    fn lstsq_flags_underdetermined() {
        let a = DMatrix::from_row_slice(1, 2, &[C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
        let (x, flagged) = lstsq(&a, &[C64::new(2.0, 0.0)]);
        assert!(flagged);
        assert!((x[0] + x[1] - C64::new(2.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn cholesky_matches_direct_solution() {
        let n = 5;
        let b = DMatrix::from_fn(n, n, |i, j| C64::new((i * 3 + j) as f64 * 0.1, (i as f64) - (j as f64) * 0.3));
        let spd = &b * b.adjoint() + DMatrix::identity(n, n) * C64::new(0.5, 0.0);
        let mut flat: Vec<C64> = spd.iter().copied().collect();
        assert!(cholesky_in_place(&mut flat, n));
        let rhs: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let mut x = rhs.clone();
        cholesky_solve(&flat, n, &mut x);
        let back = &spd * DVector::from_column_slice(&x);
        for i in 0..n {
            assert!((back[i] - rhs[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(2.0, 0.0), C64::new(1.0, 0.0)];
        assert!(!cholesky_in_place(&mut m, 2));
    }
}
