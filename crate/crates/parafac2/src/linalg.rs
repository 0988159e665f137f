//! Shared dense kernels: Cholesky-backed normal-equation solves and the
//! orthogonal Procrustes factor used by the PARAFAC2 projection.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of an SPD matrix, reusable across solves.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

impl CholeskyFactor {
    /// Factors `G = L L^T`. Fails if a pivot drops below
    /// `1e-13 * trace(G) / n`, treating `G` as numerically indefinite.
    pub fn factor(g: &DMatrix<f64>) -> Result<Self> {
        let n = g.nrows();
        if g.ncols() != n {
            return Err(Error::Dimension("Cholesky needs a square matrix".into()));
        }
        let tol = 1e-13 * g.trace() / n as f64;
        let mut l = g.lower_triangle();
        for j in 0..n {
            for k in 0..j {
                let s = l[(j, k)];
                for i in j..n {
                    l[(i, j)] -= l[(i, k)] * s;
                }
            }
            let pivot = l[(j, j)];
            if !(pivot > tol) {
                return Err(Error::NotPositiveDefinite {
                    pivot,
                    tol,
                    index: j,
                });
            }
            let d = pivot.sqrt();
            for i in j..n {
                l[(i, j)] /= d;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `G x = b` in place for each column of `b`.
    pub fn solve_in_place(&self, b: &mut DMatrix<f64>) {
        let n = self.dim();
        debug_assert_eq!(b.nrows(), n);
        for c in 0..b.ncols() {
            // forward: L y = b
            for i in 0..n {
                let mut s = b[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * b[(k, c)];
                }
                b[(i, c)] = s / self.l[(i, i)];
            }
            // backward: L^T x = y
            for i in (0..n).rev() {
                let mut s = b[(i, c)];
                for k in i + 1..n {
                    s -= self.l[(k, i)] * b[(k, c)];
                }
                b[(i, c)] = s / self.l[(i, i)];
            }
        }
    }

    /// Returns `RHS * G^{-1}` for a row-style normal equation.
    pub fn solve_right(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut xt = rhs.transpose();
        self.solve_in_place(&mut xt);
        xt.transpose()
    }
}

/// Solves `X G = RHS` for SPD `G`, i.e. returns `RHS * G^{-1}`.
pub fn cholesky_solve_normal(g: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rhs.ncols() != g.nrows() {
        return Err(Error::Dimension(format!(
            "RHS has {} columns, G is {}x{}",
            rhs.ncols(),
            g.nrows(),
            g.ncols()
        )));
    }
    Ok(CholeskyFactor::factor(g)?.solve_right(rhs))
}

/// Orthonormal basis of the columns of `m` (n x r, n >= r), by modified
/// Gram-Schmidt with reorthogonalization. Numerically dependent columns are
/// replaced with canonical directions orthogonal to the ones already found,
/// so the result always has exactly orthonormal columns.
pub fn orthonormal_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = (m.nrows(), m.ncols());
    assert!(n >= r, "cannot orthonormalize {} columns in dimension {}", r, n);
    let mut q = m.clone();
    let scale = m.norm().max(1.0);
    for j in 0..r {
        for _pass in 0..2 {
            for k in 0..j {
                let proj = q.column(j).dot(&q.column(k));
                let col_k = q.column(k).clone_owned();
                q.column_mut(j).axpy(-proj, &col_k, 1.0);
            }
        }
        let norm = q.column(j).norm();
        if norm > 1e-12 * scale {
            q.column_mut(j).scale_mut(1.0 / norm);
        } else {
            // dependent column: substitute the canonical vector least
            // represented so far, then re-orthogonalize it
            let mut best = 0;
            let mut best_resid = -1.0;
            for e in 0..n {
                let mut resid = 1.0;
                for k in 0..j {
                    resid -= q[(e, k)] * q[(e, k)];
                }
                if resid > best_resid {
                    best_resid = resid;
                    best = e;
                }
            }
            q.column_mut(j).fill(0.0);
            q[(best, j)] = 1.0;
            for _pass in 0..2 {
                for k in 0..j {
                    let proj = q.column(j).dot(&q.column(k));
                    let col_k = q.column(k).clone_owned();
                    q.column_mut(j).axpy(-proj, &col_k, 1.0);
                }
            }
            let norm = q.column(j).norm();
            q.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    q
}

/// Closest column-orthonormal matrix to `m` in Frobenius norm: the factor
/// `U V^T` from the economy SVD `m = U S V^T`.
///
/// Computed as QR followed by an `r x r` SVD so the cost stays `O(n r^2)`
/// regardless of how tall `m` is. Repeated or zero singular values simply
/// yield one valid choice among the optima.
pub fn procrustes_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let q = orthonormal_columns(m);
    let small = q.transpose() * m; // r x r; m = q * small up to round-off
    let svd = small.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    &q * u * vt
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn procrustes_orthonormal_and_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let n = 4 + trial % 5;
            let r = 1 + trial % 3;
            let m = DMatrix::from_fn(n, r, |_, _| rng.gen::<f64>() - 0.5);
            let p = procrustes_factor(&m);
            let eye = DMatrix::identity(r, r);
            assert!((p.transpose() * &p - eye).norm() < 1e-12);

            // optimality: trace(P^T m) must beat random orthonormal candidates
            let score = (p.transpose() * &m).trace();
            for _ in 0..20 {
                let cand =
                    orthonormal_columns(&DMatrix::from_fn(n, r, |_, _| rng.gen::<f64>() - 0.5));
                assert!((cand.transpose() * &m).trace() <= score + 1e-10);
            }
        }
    }

    #[test]
    fn procrustes_handles_rank_deficiency() {
        // two identical columns
        let mut m = DMatrix::zeros(5, 2);
        for i in 0..5 {
            m[(i, 0)] = i as f64 + 1.0;
            m[(i, 1)] = i as f64 + 1.0;
        }
        let p = procrustes_factor(&m);
        let eye = DMatrix::identity(2, 2);
        assert!((p.transpose() * &p - &eye).norm() < 1e-12);

        let zero = DMatrix::zeros(4, 2);
        let p = procrustes_factor(&zero);
        assert!((p.transpose() * &p - eye).norm() < 1e-12);
    }

    #[test]
    fn procrustes_matches_full_svd_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let m = DMatrix::from_fn(8, 3, |_, _| rng.gen::<f64>() - 0.5);
            let p = procrustes_factor(&m);
            let svd = m.clone().svd(true, true);
            let p_ref = svd.u.unwrap() * svd.v_t.unwrap();
            // both maximize trace(P^T m); scores must agree
            let s1 = (p.transpose() * &m).trace();
            let s2 = (p_ref.transpose() * &m).trace();
            assert!((s1 - s2).abs() < 1e-10);
        }
    }
}
