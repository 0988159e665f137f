//! Core types for ragged third-order tensors and PARAFAC2 factorizations.
//!
//! A ragged tensor is an ordered stack of `K` frontal slices `X_k`, each of
//! shape `I x J_k`: all slices share the row count while the column count may
//! vary. A PARAFAC2 model represents each slice as `A D_k B_k^T` with a shared
//! `A`, per-slice evolving factors `B_k` and diagonal weights `D_k` (stored
//! densely as the rows of a `K x R` matrix `C`).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Stack of K frontal slices with shared row count and varying column counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RaggedTensor {
    slices: Vec<DMatrix<f64>>,
}

impl RaggedTensor {
    pub fn new(slices: Vec<DMatrix<f64>>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::Dimension("tensor needs at least one slice".into()));
        }
        let rows = slices[0].nrows();
        if rows == 0 {
            return Err(Error::Dimension("slices must have at least one row".into()));
        }
        for (k, s) in slices.iter().enumerate() {
            if s.nrows() != rows {
                return Err(Error::Dimension(format!(
                    "slice {} has {} rows, expected {}",
                    k,
                    s.nrows(),
                    rows
                )));
            }
            if s.ncols() == 0 {
                return Err(Error::Dimension(format!("slice {} has no columns", k)));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dimension(format!("slice {} has non-finite entries", k)));
            }
        }
        Ok(Self { slices })
    }

    pub fn nrows(&self) -> usize {
        self.slices[0].nrows()
    }

    pub fn nslices(&self) -> usize {
        self.slices.len()
    }

    pub fn col_counts(&self) -> Vec<usize> {
        self.slices.iter().map(|s| s.ncols()).collect()
    }

    pub fn slice(&self, k: usize) -> &DMatrix<f64> {
        &self.slices[k]
    }

    pub fn slices(&self) -> &[DMatrix<f64>] {
        &self.slices
    }

    pub fn norm_squared(&self) -> f64 {
        self.slices.iter().map(|s| s.norm_squared()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }
}

/// PARAFAC2 factorization container. The PARAFAC2 constraint itself is
/// enforced by the solvers, not by this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parafac2Model {
    /// Shared factor matrix, `I x R`.
    pub a: DMatrix<f64>,
    /// Evolving factors, slice k is `J_k x R`.
    pub b: Vec<DMatrix<f64>>,
    /// Diagonal weights: row k holds `diag(D_k)`, so `C` is `K x R`.
    pub c: DMatrix<f64>,
}

impl Parafac2Model {
    pub fn new(a: DMatrix<f64>, b: Vec<DMatrix<f64>>, c: DMatrix<f64>) -> Result<Self> {
        let r = a.ncols();
        if r == 0 {
            return Err(Error::Dimension("rank must be at least 1".into()));
        }
        if b.is_empty() || c.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "C has {} rows but there are {} evolving factors",
                c.nrows(),
                b.len()
            )));
        }
        if c.ncols() != r {
            return Err(Error::Dimension(format!(
                "C has {} columns, expected rank {}",
                c.ncols(),
                r
            )));
        }
        for (k, bk) in b.iter().enumerate() {
            if bk.ncols() != r {
                return Err(Error::Dimension(format!(
                    "B_{} has {} columns, expected rank {}",
                    k,
                    bk.ncols(),
                    r
                )));
            }
        }
        let finite = a.iter().all(|v| v.is_finite())
            && c.iter().all(|v| v.is_finite())
            && b.iter().all(|bk| bk.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Dimension("model has non-finite entries".into()));
        }
        Ok(Self { a, b, c })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn nslices(&self) -> usize {
        self.b.len()
    }

    /// Checks that the model shapes match a tensor with the given dimensions.
    pub fn check_compatible(&self, data: &RaggedTensor) -> Result<()> {
        if self.a.nrows() != data.nrows() {
            return Err(Error::Dimension(format!(
                "model has {} rows, data has {}",
                self.a.nrows(),
                data.nrows()
            )));
        }
        if self.b.len() != data.nslices() {
            return Err(Error::Dimension(format!(
                "model has {} slices, data has {}",
                self.b.len(),
                data.nslices()
            )));
        }
        for (k, bk) in self.b.iter().enumerate() {
            if bk.nrows() != data.slice(k).ncols() {
                return Err(Error::Dimension(format!(
                    "B_{} has {} rows, slice has {} columns",
                    k,
                    bk.nrows(),
                    data.slice(k).ncols()
                )));
            }
        }
        Ok(())
    }

    /// `A D_k B_k^T` for one slice.
    pub fn reconstruct_slice(&self, k: usize) -> DMatrix<f64> {
        let r = self.rank();
        let mut ad = self.a.clone();
        for rr in 0..r {
            let w = self.c[(k, rr)];
            ad.column_mut(rr).scale_mut(w);
        }
        &ad * self.b[k].transpose()
    }
}

/// Parametrization of the PARAFAC2 constraint set: `B_k = P_k DeltaB` with
/// column-orthonormal `P_k`.
#[derive(Debug, Clone)]
pub struct CouplingVariables {
    pub p: Vec<DMatrix<f64>>,
    pub delta_b: DMatrix<f64>,
}

impl CouplingVariables {
    pub fn new(p: Vec<DMatrix<f64>>, delta_b: DMatrix<f64>) -> Result<Self> {
        let r = delta_b.nrows();
        if delta_b.ncols() != r {
            return Err(Error::Dimension("DeltaB must be square".into()));
        }
        for (k, pk) in p.iter().enumerate() {
            if pk.ncols() != r {
                return Err(Error::Dimension(format!("P_{} has wrong column count", k)));
            }
            let dev = (pk.transpose() * pk - DMatrix::identity(r, r)).norm();
            if dev > 1e-10 * r as f64 {
                return Err(Error::Dimension(format!(
                    "P_{} is not column-orthonormal (deviation {:.3e})",
                    k, dev
                )));
            }
        }
        Ok(Self { p, delta_b })
    }

    /// `B_k = P_k DeltaB` for every k; these satisfy the PARAFAC2 constraint
    /// exactly by construction.
    pub fn implied_factors(&self) -> Vec<DMatrix<f64>> {
        self.p.iter().map(|pk| pk * &self.delta_b).collect()
    }
}

/// Reconstructs all slices `X̂_k = A D_k B_k^T`.
pub fn reconstruct(model: &Parafac2Model) -> RaggedTensor {
    let slices = (0..model.nslices())
        .map(|k| model.reconstruct_slice(k))
        .collect();
    RaggedTensor { slices }
}

/// Relative sum of squared errors:
/// `sum_k ||X_k - A D_k B_k^T||_F^2 / sum_k ||X_k||_F^2`.
pub fn relative_sse(model: &Parafac2Model, data: &RaggedTensor) -> Result<f64> {
    model.check_compatible(data)?;
    let denom = data.norm_squared();
    if denom == 0.0 {
        return Err(Error::InvalidArgument(
            "relative SSE undefined for all-zero data".into(),
        ));
    }
    let mut num = 0.0;
    for k in 0..data.nslices() {
        num += (model.reconstruct_slice(k) - data.slice(k)).norm_squared();
    }
    Ok(num / denom)
}

/// Khatri-Rao product: column r of the result is `kron(u_r, v_r)`.
pub fn khatri_rao(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.ncols() != v.ncols() {
        return Err(Error::Dimension(format!(
            "Khatri-Rao needs equal column counts, got {} and {}",
            u.ncols(),
            v.ncols()
        )));
    }
    let (n, m, r) = (u.nrows(), v.nrows(), u.ncols());
    let mut out = DMatrix::zeros(n * m, r);
    for c in 0..r {
        for i in 0..n {
            for j in 0..m {
                out[(i * m + j, c)] = u[(i, c)] * v[(j, c)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky_solve_normal;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(i: usize, js: &[usize], r: usize, seed: u64) -> Parafac2Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(i, r, |_, _| rng.gen::<f64>() - 0.5);
        let b = js
            .iter()
            .map(|&j| DMatrix::from_fn(j, r, |_, _| rng.gen::<f64>() - 0.5))
            .collect();
        let c = DMatrix::from_fn(js.len(), r, |_, _| rng.gen::<f64>() - 0.5);
        Parafac2Model::new(a, b, c).unwrap()
    }

    #[test]
    fn reconstruct_identity_factors() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let model = Parafac2Model::new(
            eye.clone(),
            vec![eye.clone(), eye.clone()],
            DMatrix::from_element(2, 2, 1.0),
        )
        .unwrap();
        let out = reconstruct(&model);
        for k in 0..2 {
            assert!((out.slice(k) - &eye).norm() < 1e-15);
        }
    }

    #[test]
    fn reconstruct_zero_weights() {
        let mut model = random_model(3, &[4, 4], 2, 1);
        model.c.fill(0.0);
        let out = reconstruct(&model);
        assert_eq!(out.slice(0).norm(), 0.0);
        assert_eq!(out.slice(1).norm(), 0.0);
    }

    #[test]
    fn reconstruct_matches_triple_loop() {
        let model = random_model(3, &[4, 4], 2, 2);
        let out = reconstruct(&model);
        for k in 0..2 {
            for i in 0..3 {
                for j in 0..4 {
                    let mut s = 0.0;
                    for r in 0..2 {
                        s += model.a[(i, r)] * model.c[(k, r)] * model.b[k][(j, r)];
                    }
                    assert!((out.slice(k)[(i, j)] - s).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn relative_sse_exact_and_zero_model() {
        let model = random_model(3, &[4, 5], 2, 3);
        let data = reconstruct(&model);
        assert!(relative_sse(&model, &data).unwrap() < 1e-12);

        let mut zero = model.clone();
        zero.a.fill(0.0);
        assert!((relative_sse(&zero, &data).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relative_sse_matches_loop_oracle() {
        let model = random_model(4, &[3, 5, 2], 3, 4);
        let noisy = random_model(4, &[3, 5, 2], 3, 5);
        let data = reconstruct(&noisy);
        let got = relative_sse(&model, &data).unwrap();

        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..3 {
            let xk = data.slice(k);
            for i in 0..4 {
                for j in 0..xk.ncols() {
                    let mut pred = 0.0;
                    for r in 0..3 {
                        pred += model.a[(i, r)] * model.c[(k, r)] * model.b[k][(j, r)];
                    }
                    num += (xk[(i, j)] - pred).powi(2);
                    den += xk[(i, j)].powi(2);
                }
            }
        }
        assert!((got - num / den).abs() < 1e-12);
    }

    #[test]
    fn relative_sse_zero_data_errors() {
        let model = random_model(2, &[2], 1, 6);
        let data = RaggedTensor::new(vec![DMatrix::zeros(2, 2)]).unwrap();
        assert!(relative_sse(&model, &data).is_err());
    }

    #[test]
    fn khatri_rao_hand_examples() {
        let u = dmatrix![1.0; 2.0];
        let v = dmatrix![3.0; 4.0];
        let kr = khatri_rao(&u, &v).unwrap();
        assert_eq!(kr, dmatrix![3.0; 4.0; 6.0; 8.0]);

        let eye = DMatrix::<f64>::identity(2, 2);
        let kr = khatri_rao(&eye, &eye).unwrap();
        let mut want = DMatrix::zeros(4, 2);
        want[(0, 0)] = 1.0;
        want[(3, 1)] = 1.0;
        assert_eq!(kr, want);
    }

    #[test]
    fn khatri_rao_gram_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = DMatrix::from_fn(3, 2, |_, _| rng.gen::<f64>());
        let v = DMatrix::from_fn(4, 2, |_, _| rng.gen::<f64>());
        let kr = khatri_rao(&u, &v).unwrap();
        let lhs = kr.transpose() * &kr;
        let rhs = (u.transpose() * &u).component_mul(&(v.transpose() * &v));
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn khatri_rao_column_mismatch() {
        let u = DMatrix::<f64>::zeros(2, 2);
        let v = DMatrix::<f64>::zeros(2, 3);
        assert!(khatri_rao(&u, &v).is_err());
    }

    #[test]
    fn cholesky_solve_identity_and_scaled() {
        let rhs = dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 6.0];
        let eye = DMatrix::identity(2, 2);
        let x = cholesky_solve_normal(&eye, &rhs).unwrap();
        assert!((&x - &rhs).norm() < 1e-14);

        let x = cholesky_solve_normal(&(2.0 * eye), &rhs).unwrap();
        assert!((&x - rhs / 2.0).norm() < 1e-14);
    }

    #[test]
    fn cholesky_solve_random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = DMatrix::from_fn(4, 4, |_, _| rng.gen::<f64>() - 0.5);
        let g = &m * m.transpose() + DMatrix::identity(4, 4);
        let rhs = DMatrix::from_fn(6, 4, |_, _| rng.gen::<f64>());
        let x = cholesky_solve_normal(&g, &rhs).unwrap();
        assert!((&x * &g - &rhs).norm() < 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let g = dmatrix![1.0, 0.0; 0.0, -1.0];
        let rhs = DMatrix::zeros(2, 2);
        assert!(cholesky_solve_normal(&g, &rhs).is_err());
    }

    #[test]
    fn ragged_tensor_rejects_bad_shapes() {
        assert!(RaggedTensor::new(vec![]).is_err());
        let a = DMatrix::<f64>::zeros(2, 3);
        let b = DMatrix::<f64>::zeros(3, 3);
        assert!(RaggedTensor::new(vec![a, b]).is_err());
        let nan = DMatrix::from_element(2, 2, f64::NAN);
        assert!(RaggedTensor::new(vec![nan]).is_err());
    }
}
