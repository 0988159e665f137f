//! Proximal operators and projections used by the ADMM subproblems, including
//! the approximate projection onto the PARAFAC2 constraint set.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{procrustes_factor, CholeskyFactor};
use crate::tensor::CouplingVariables;

/// Per-mode regularization choice. Column-wise penalties (graph Laplacian,
/// TV, unimodality) act on each column of a factor matrix independently.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ProxSpec {
    #[default]
    None,
    NonNegative,
    Ridge(f64),
    GraphLaplacian {
        laplacian: DMatrix<f64>,
        strength: f64,
    },
    TotalVariation(f64),
    Unimodal,
    UnimodalNonNegative,
}

impl ProxSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProxSpec::Ridge(g) if *g < 0.0 => {
                Err(Error::InvalidArgument("ridge strength must be >= 0".into()))
            }
            ProxSpec::TotalVariation(s) if *s < 0.0 => {
                Err(Error::InvalidArgument("TV strength must be >= 0".into()))
            }
            ProxSpec::GraphLaplacian { laplacian, strength } => {
                if *strength < 0.0 {
                    return Err(Error::InvalidArgument("Laplacian strength must be >= 0".into()));
                }
                let n = laplacian.nrows();
                if laplacian.ncols() != n {
                    return Err(Error::Dimension("Laplacian must be square".into()));
                }
                let scale = laplacian.norm().max(1.0);
                if (laplacian - laplacian.transpose()).norm() > 1e-10 * scale {
                    return Err(Error::InvalidArgument("Laplacian must be symmetric".into()));
                }
                for i in 0..n {
                    let row_sum: f64 = laplacian.row(i).iter().sum();
                    if row_sum.abs() > 1e-8 * scale {
                        return Err(Error::InvalidArgument(format!(
                            "Laplacian row {} does not sum to zero",
                            i
                        )));
                    }
                    for j in 0..n {
                        if i != j && laplacian[(i, j)] > 1e-12 * scale {
                            return Err(Error::InvalidArgument(
                                "Laplacian off-diagonals must be non-positive".into(),
                            ));
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, ProxSpec::None)
    }

    pub fn is_nonneg_only(&self) -> bool {
        matches!(self, ProxSpec::None | ProxSpec::NonNegative)
    }
}

/// Stateful wrapper around a [`ProxSpec`] that caches the shifted-Laplacian
/// Cholesky factorization per penalty parameter.
#[derive(Debug, Clone)]
pub struct ProxOp {
    spec: ProxSpec,
    laplacian_cache: HashMap<u64, CholeskyFactor>,
}

impl ProxOp {
    pub fn new(spec: ProxSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            laplacian_cache: HashMap::new(),
        })
    }

    pub fn spec(&self) -> &ProxSpec {
        &self.spec
    }

    /// Evaluates `prox_{g/rho}(m)`.
    pub fn apply(&mut self, m: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
        match &self.spec {
            ProxSpec::None => Ok(m.clone()),
            ProxSpec::NonNegative => Ok(prox_nonneg(m, rho)),
            ProxSpec::Ridge(g) => Ok(m * (rho / (rho + 2.0 * g))),
            ProxSpec::GraphLaplacian { laplacian, strength } => {
                if laplacian.nrows() != m.nrows() {
                    return Err(Error::Dimension(format!(
                        "Laplacian is {}x{} but factor has {} rows",
                        laplacian.nrows(),
                        laplacian.ncols(),
                        m.nrows()
                    )));
                }
                if rho <= 0.0 {
                    return Err(Error::InvalidArgument("Laplacian prox needs rho > 0".into()));
                }
                if self.laplacian_cache.len() > 64 {
                    self.laplacian_cache.clear();
                }
                let strength = *strength;
                let factor = match self.laplacian_cache.entry(rho.to_bits()) {
                    std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                    std::collections::hash_map::Entry::Vacant(e) => {
                        let mut shifted = laplacian * strength;
                        for i in 0..shifted.nrows() {
                            shifted[(i, i)] += rho / 2.0;
                        }
                        e.insert(CholeskyFactor::factor(&shifted)?)
                    }
                };
                let mut out = m * (rho / 2.0);
                factor.solve_in_place(&mut out);
                Ok(out)
            }
            ProxSpec::TotalVariation(strength) => {
                let lambda = strength / rho;
                let mut out = m.clone();
                for c in 0..m.ncols() {
                    let col: Vec<f64> = m.column(c).iter().copied().collect();
                    let denoised = prox_tv_slice(&col, lambda);
                    for (i, v) in denoised.into_iter().enumerate() {
                        out[(i, c)] = v;
                    }
                }
                Ok(out)
            }
            ProxSpec::Unimodal | ProxSpec::UnimodalNonNegative => {
                let nonneg = matches!(self.spec, ProxSpec::UnimodalNonNegative);
                let mut out = m.clone();
                for c in 0..m.ncols() {
                    let col: Vec<f64> = m.column(c).iter().copied().collect();
                    let fitted = unimodal_slice(&col, nonneg);
                    for (i, v) in fitted.into_iter().enumerate() {
                        out[(i, c)] = v;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Penalty value `g(m)`. Indicator penalties report 0: they are evaluated
    /// on auxiliary variables, which satisfy their constraint by construction.
    pub fn penalty(&self, m: &DMatrix<f64>) -> f64 {
        match &self.spec {
            ProxSpec::None
            | ProxSpec::NonNegative
            | ProxSpec::Unimodal
            | ProxSpec::UnimodalNonNegative => 0.0,
            ProxSpec::Ridge(g) => g * m.norm_squared(),
            ProxSpec::GraphLaplacian { laplacian, strength } => {
                let mut total = 0.0;
                for c in 0..m.ncols() {
                    let col = m.column(c);
                    total += (laplacian * col).dot(&col);
                }
                strength * total
            }
            ProxSpec::TotalVariation(strength) => {
                let mut total = 0.0;
                for c in 0..m.ncols() {
                    for i in 1..m.nrows() {
                        total += (m[(i, c)] - m[(i - 1, c)]).abs();
                    }
                }
                strength * total
            }
        }
    }
}

/// Elementwise projection onto the non-negative orthant (independent of rho).
pub fn prox_nonneg(m: &DMatrix<f64>, _rho: f64) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

/// `(strength*L + (rho/2) I)^{-1} (rho/2) x`.
pub fn prox_graph_laplacian(
    x: &DVector<f64>,
    laplacian: &DMatrix<f64>,
    strength: f64,
    rho: f64,
) -> Result<DVector<f64>> {
    let mut op = ProxOp::new(ProxSpec::GraphLaplacian {
        laplacian: laplacian.clone(),
        strength,
    })?;
    let m = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    let out = op.apply(&m, rho)?;
    Ok(DVector::from_column_slice(out.column(0).as_slice()))
}

/// Exact minimizer of `lambda*TV(y) + 0.5*||y - x||^2` (Condat's direct
/// 1-D total variation algorithm, O(n) in practice).
pub fn prox_tv(x: &DVector<f64>, lambda: f64) -> DVector<f64> {
    DVector::from_vec(prox_tv_slice(x.as_slice(), lambda))
}

fn prox_tv_slice(y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    if n == 0 || lambda <= 0.0 {
        return y.to_vec();
    }
    let mut x = vec![0.0; n];
    // 0-based translation of Condat's taut-string pseudocode
    let mut k = 0usize;
    let mut k0 = 0usize;
    let mut km = 0usize;
    let mut kp = 0usize;
    let mut vmin = y[0] - lambda;
    let mut vmax = y[0] + lambda;
    let mut umin = lambda;
    let mut umax = -lambda;
    loop {
        if k == n - 1 {
            x[k] = vmin + umin;
            break;
        }
        loop {
            if y[k + 1] + umin < vmin - lambda {
                for i in k0..=km {
                    x[i] = vmin;
                }
                k = km + 1;
                k0 = k;
                km = k;
                kp = k;
                vmin = y[k];
                vmax = y[k] + 2.0 * lambda;
                umin = lambda;
                umax = -lambda;
            } else if y[k + 1] + umax > vmax + lambda {
                for i in k0..=kp {
                    x[i] = vmax;
                }
                k = kp + 1;
                k0 = k;
                km = k;
                kp = k;
                vmin = y[k] - 2.0 * lambda;
                vmax = y[k];
                umin = lambda;
                umax = -lambda;
            } else {
                k += 1;
                umin += y[k] - vmin;
                umax += y[k] - vmax;
                if umin >= lambda {
                    vmin += (umin - lambda) / (k - k0 + 1) as f64;
                    umin = lambda;
                    km = k;
                }
                if umax <= -lambda {
                    vmax += (umax + lambda) / (k - k0 + 1) as f64;
                    umax = -lambda;
                    kp = k;
                }
            }
            if k >= n - 1 {
                break;
            }
        }
        if umin < 0.0 {
            for i in k0..=km {
                x[i] = vmin;
            }
            k = km + 1;
            k0 = k;
            km = k;
            vmin = y[k];
            umin = lambda;
            umax = y[k] + lambda - vmax;
        } else if umax > 0.0 {
            for i in k0..=kp {
                x[i] = vmax;
            }
            k = kp + 1;
            k0 = k;
            kp = k;
            vmax = y[k];
            umax = -lambda;
            umin = y[k] - lambda - vmin;
        } else {
            let v = vmin + umin / (k - k0 + 1) as f64;
            for i in k0..n {
                x[i] = v;
            }
            break;
        }
    }
    x
}

/// Euclidean projection onto unimodal (rise-then-fall) vectors, optionally
/// clipped to the non-negative orthant before scoring. Ties between mode
/// positions resolve to the smallest index.
pub fn prox_unimodal(x: &DVector<f64>, nonneg: bool) -> DVector<f64> {
    DVector::from_vec(unimodal_slice(x.as_slice(), nonneg))
}

#[derive(Clone, Copy)]
struct IsoBlock {
    sum: f64,
    sumsq: f64,
    w: f64,
}

impl IsoBlock {
    fn mean(&self) -> f64 {
        self.sum / self.w
    }
    fn score(&self, nonneg: bool) -> f64 {
        if nonneg && self.mean() < 0.0 {
            // clipped to zero: residual is the raw sum of squares
            self.sumsq
        } else {
            (self.sumsq - self.sum * self.sum / self.w).max(0.0)
        }
    }
}

/// Incremental PAVA for increasing isotonic regression. `errors[m]` is the
/// squared error of the best increasing fit to `x[0..=m]` (with non-negative
/// clipping applied to the scoring when `nonneg` is set).
fn prefix_isotonic_errors(x: &[f64], nonneg: bool) -> Vec<f64> {
    let mut blocks: Vec<IsoBlock> = Vec::with_capacity(x.len());
    let mut total = 0.0;
    let mut errors = Vec::with_capacity(x.len());
    for &v in x {
        let mut blk = IsoBlock {
            sum: v,
            sumsq: v * v,
            w: 1.0,
        };
        let mut blk_score = blk.score(nonneg);
        while let Some(last) = blocks.last() {
            if last.mean() > blk.mean() {
                total -= last.score(nonneg);
                blk.sum += last.sum;
                blk.sumsq += last.sumsq;
                blk.w += last.w;
                blk_score = blk.score(nonneg);
                blocks.pop();
            } else {
                break;
            }
        }
        total += blk_score;
        blocks.push(blk);
        errors.push(total);
    }
    errors
}

/// Increasing isotonic fit of `x` by PAVA.
fn isotonic_increasing(x: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(IsoBlock, usize)> = Vec::with_capacity(x.len());
    for &v in x {
        let mut blk = IsoBlock {
            sum: v,
            sumsq: v * v,
            w: 1.0,
        };
        let mut len = 1usize;
        while let Some((last, last_len)) = blocks.last() {
            if last.mean() > blk.mean() {
                blk.sum += last.sum;
                blk.sumsq += last.sumsq;
                blk.w += last.w;
                len += last_len;
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push((blk, len));
    }
    let mut out = Vec::with_capacity(x.len());
    for (blk, len) in blocks {
        let m = blk.mean();
        out.extend(std::iter::repeat(m).take(len));
    }
    out
}

fn unimodal_slice(x: &[f64], nonneg: bool) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let err_inc = prefix_isotonic_errors(x, nonneg);
    let rev: Vec<f64> = x.iter().rev().copied().collect();
    let err_dec_rev = prefix_isotonic_errors(&rev, nonneg);
    // err_dec[m]: error of the best decreasing fit to x[m..]
    let err_dec = |m: usize| -> f64 {
        if m >= n {
            0.0
        } else {
            err_dec_rev[n - 1 - m]
        }
    };
    let mut best_mode = 0usize;
    let mut best_err = f64::INFINITY;
    for m in 0..n {
        let e = err_inc[m] + err_dec(m + 1);
        if e < best_err {
            best_err = e;
            best_mode = m;
        }
    }
    let mut fit = isotonic_increasing(&x[..=best_mode]);
    if best_mode + 1 < n {
        let tail_rev: Vec<f64> = x[best_mode + 1..].iter().rev().copied().collect();
        let mut tail = isotonic_increasing(&tail_rev);
        tail.reverse();
        fit.extend(tail);
    }
    if nonneg {
        for v in fit.iter_mut() {
            *v = v.max(0.0);
        }
    }
    fit
}

/// Approximate projection onto the PARAFAC2 constraint set by alternating
/// per-slice orthogonal Procrustes solves with a weighted average update of
/// the blueprint matrix. The returned `Y_k = P_k DeltaB` have identical
/// cross-products by construction.
pub fn project_parafac2(
    bt: &[DMatrix<f64>],
    rho: &[f64],
    warm: &CouplingVariables,
    sweeps: usize,
) -> Result<(CouplingVariables, Vec<DMatrix<f64>>)> {
    if bt.len() != rho.len() || bt.len() != warm.p.len() {
        return Err(Error::Dimension(
            "projection inputs must have one entry per slice".into(),
        ));
    }
    if sweeps == 0 {
        return Err(Error::InvalidArgument("sweeps must be >= 1".into()));
    }
    let r = warm.delta_b.nrows();
    let rho_total: f64 = rho.iter().sum();
    if rho_total <= 0.0 {
        return Err(Error::InvalidArgument("penalty weights must be positive".into()));
    }

    let mut delta = warm.delta_b.clone();
    if delta.norm() < 1e-14 {
        // degenerate warm start: rescaled identity avoids a zero SVD
        let total_cols: usize = bt.iter().map(|m| m.ncols()).sum();
        let mean_col_norm = bt
            .iter()
            .flat_map(|m| (0..m.ncols()).map(move |c| m.column(c).norm()))
            .sum::<f64>()
            / total_cols.max(1) as f64;
        delta = DMatrix::identity(r, r) * mean_col_norm.max(1e-8);
    }
    let mut p = warm.p.clone();
    for _ in 0..sweeps {
        for (k, btk) in bt.iter().enumerate() {
            p[k] = procrustes_factor(&(btk * delta.transpose()));
        }
        let mut acc = DMatrix::zeros(r, r);
        for (k, btk) in bt.iter().enumerate() {
            acc += rho[k] * (p[k].transpose() * btk);
        }
        delta = acc / rho_total;
    }
    let y: Vec<DMatrix<f64>> = p.iter().map(|pk| pk * &delta).collect();
    Ok((CouplingVariables { p, delta_b: delta }, y))
}

/// Objective of the projection subproblem: `sum_k (rho_k/2)||Bt_k - P_k DeltaB||_F^2`.
pub fn projection_objective(bt: &[DMatrix<f64>], rho: &[f64], coupling: &CouplingVariables) -> f64 {
    bt.iter()
        .zip(rho)
        .zip(&coupling.p)
        .map(|((btk, &rk), pk)| 0.5 * rk * (btk - pk * &coupling.delta_b).norm_squared())
        .sum()
}
