//! Inner ADMM solvers for the three factor blocks, penalty-parameter
//! heuristics, and residual-based inner stopping.
//!
//! Each `update_*` call runs one inner ADMM loop for its block with the other
//! blocks held fixed. Right-hand sides and Cholesky factors of the
//! normal-equation systems are computed once per call (i.e. once per outer
//! iteration) and reused across inner iterations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;
use crate::prox::{project_parafac2, ProxOp};
use crate::tensor::{CouplingVariables, Parafac2Model, RaggedTensor};

/// Auxiliary variables, scaled duals, and penalty parameters for all blocks.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub z_a: DMatrix<f64>,
    pub mu_a: DMatrix<f64>,
    pub z_b: Vec<DMatrix<f64>>,
    pub mu_z_b: Vec<DMatrix<f64>>,
    /// Coupling split for the constant-cross-product constraint.
    pub coupling: CouplingVariables,
    pub y_b: Vec<DMatrix<f64>>,
    pub mu_y_b: Vec<DMatrix<f64>>,
    /// Auxiliary copy of C, row k holding the diagonal of D_k.
    pub z_c: DMatrix<f64>,
    pub mu_c: DMatrix<f64>,
    pub rho_a: f64,
    pub rho_b: Vec<f64>,
    pub rho_d: Vec<f64>,
}

impl AdmmState {
    /// State with aux = primal, duals = 0, penalties from the heuristic.
    /// `coupling` must be shape-compatible with the model's B factors.
    pub fn at_model(model: &Parafac2Model, coupling: CouplingVariables) -> Result<Self> {
        let (rho_a, rho_b, rho_d) = penalty_heuristics(model);
        let k = model.nslices();
        if coupling.p.len() != k {
            return Err(Error::Dimension("coupling slice count mismatch".into()));
        }
        Ok(Self {
            z_a: model.a.clone(),
            mu_a: DMatrix::zeros(model.a.nrows(), model.a.ncols()),
            z_b: model.b.clone(),
            mu_z_b: model.b.iter().map(|b| DMatrix::zeros(b.nrows(), b.ncols())).collect(),
            y_b: coupling.implied_factors(),
            mu_y_b: model.b.iter().map(|b| DMatrix::zeros(b.nrows(), b.ncols())).collect(),
            coupling,
            z_c: model.c.clone(),
            mu_c: DMatrix::zeros(model.c.nrows(), model.c.ncols()),
            rho_a,
            rho_b,
            rho_d,
        })
    }

    /// Recomputes the penalty parameters from the current model.
    pub fn refresh_penalties(&mut self, model: &Parafac2Model) {
        let (a, b, d) = penalty_heuristics(model);
        self.rho_a = a;
        self.rho_b = b;
        self.rho_d = d;
    }
}

/// Inner-loop stopping rule on relative primal/dual residuals.
#[derive(Debug, Clone, Copy)]
pub struct InnerStopRule {
    pub eps: f64,
    pub max_inner: usize,
}

impl Default for InnerStopRule {
    fn default() -> Self {
        Self { eps: 1e-5, max_inner: 5 }
    }
}

impl InnerStopRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("inner tolerance must be > 0".into()));
        }
        if self.max_inner == 0 {
            return Err(Error::InvalidArgument("max_inner must be >= 1".into()));
        }
        Ok(())
    }
}

/// Relative primal and dual residuals `(||x-z||/||x||, ||z-z_prev||/||z||)`.
/// Zero-norm denominators fall back to the absolute residual.
pub fn inner_residuals(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    z_prev: &DMatrix<f64>,
) -> (f64, f64) {
    let primal = (x - z).norm();
    let dual = (z - z_prev).norm();
    let xn = x.norm();
    let zn = z.norm();
    (
        if xn > 0.0 { primal / xn } else { primal },
        if zn > 0.0 { dual / zn } else { dual },
    )
}

const RHO_FLOOR: f64 = 1e-12;

fn clamp_rho(rho: f64, what: &str) -> f64 {
    if rho < RHO_FLOOR {
        log::warn!("penalty parameter for {} degenerate ({:.3e}); clamped to {:.0e}", what, rho, RHO_FLOOR);
        RHO_FLOOR
    } else {
        rho
    }
}

/// Trace-based penalty heuristic:
/// `rho_A = tr(sum_k D_k B_k'B_k D_k)/R`, `rho_Bk = tr(D_k A'A D_k)/R`,
/// `rho_Dk = tr(A'A * B_k'B_k)/R`, each clamped to a tiny positive floor.
pub fn penalty_heuristics(model: &Parafac2Model) -> (f64, Vec<f64>, Vec<f64>) {
    let r = model.rank();
    let ata = model.a.transpose() * &model.a;
    let mut rho_a = 0.0;
    let mut rho_b = Vec::with_capacity(model.nslices());
    let mut rho_d = Vec::with_capacity(model.nslices());
    for k in 0..model.nslices() {
        let btb = model.b[k].transpose() * &model.b[k];
        let ck = model.c.row(k);
        let mut tr_a = 0.0;
        let mut tr_b = 0.0;
        let mut tr_d = 0.0;
        for j in 0..r {
            tr_a += ck[j] * ck[j] * btb[(j, j)];
            tr_b += ck[j] * ck[j] * ata[(j, j)];
            tr_d += ata[(j, j)] * btb[(j, j)];
        }
        rho_a += tr_a / r as f64;
        rho_b.push(clamp_rho(tr_b / r as f64, "B block"));
        rho_d.push(clamp_rho(tr_d / r as f64, "D block"));
    }
    (clamp_rho(rho_a, "A block"), rho_b, rho_d)
}

fn check_finite(m: &DMatrix<f64>, context: &str, iteration: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context: context.into(), iteration })
    }
}

/// One inner ADMM loop for the evolving-mode factors: per-slice least-squares
/// update, regularizer prox on the Z split, approximate projection onto the
/// constraint set on the Y split, then dual ascent. Returns the number of
/// inner iterations performed.
#[allow(clippy::too_many_arguments)]
pub fn update_b_block(
    data: &RaggedTensor,
    model: &mut Parafac2Model,
    state: &mut AdmmState,
    prox: &mut ProxOp,
    ridge: f64,
    rule: &InnerStopRule,
    projection_sweeps: usize,
) -> Result<usize> {
    rule.validate()?;
    let nk = data.nslices();
    let ata = model.a.transpose() * &model.a;
    // per-slice caches: rhs_k = X_k' A D_k, chol of (D_k A'A D_k + (g+rho) I)
    let mut rhs = Vec::with_capacity(nk);
    let mut chol = Vec::with_capacity(nk);
    for k in 0..nk {
        let dk = DMatrix::from_diagonal(&DVector::from_iterator(
            model.rank(),
            model.c.row(k).iter().copied(),
        ));
        rhs.push(data.slice(k).transpose() * &model.a * &dk);
        let mut gram = &dk * &ata * &dk;
        for j in 0..model.rank() {
            gram[(j, j)] += ridge + state.rho_b[k];
        }
        chol.push(CholeskyFactor::factor(&gram)?);
    }

    let mut iters = 0;
    for q in 0..rule.max_inner {
        iters = q + 1;
        for k in 0..nk {
            let half_rho = state.rho_b[k] / 2.0;
            let combined = (&state.z_b[k] - &state.mu_z_b[k] + &state.y_b[k] - &state.mu_y_b[k])
                * half_rho;
            model.b[k] = chol[k].solve_right(&(&rhs[k] + combined));
            check_finite(&model.b[k], "B update", q)?;
        }
        let z_prev = state.z_b.clone();
        for k in 0..nk {
            state.z_b[k] = prox.apply(&(&model.b[k] + &state.mu_z_b[k]), state.rho_b[k])?;
        }
        let y_prev = state.y_b.clone();
        let shifted: Vec<DMatrix<f64>> = (0..nk)
            .map(|k| &model.b[k] + &state.mu_y_b[k])
            .collect();
        let (coupling, y) =
            project_parafac2(&shifted, &state.rho_b, &state.coupling, projection_sweeps)?;
        state.coupling = coupling;
        state.y_b = y;
        for k in 0..nk {
            state.mu_z_b[k] += &model.b[k] - &state.z_b[k];
            state.mu_y_b[k] += &model.b[k] - &state.y_b[k];
        }
        let mut done = true;
        for k in 0..nk {
            let (pz, dz) = inner_residuals(&model.b[k], &state.z_b[k], &z_prev[k]);
            let (py, dy) = inner_residuals(&model.b[k], &state.y_b[k], &y_prev[k]);
            if pz > rule.eps || dz > rule.eps || py > rule.eps || dy > rule.eps {
                done = false;
                break;
            }
        }
        if done {
            break;
        }
    }
    Ok(iters)
}

/// One inner ADMM loop for the static mode (coupled-matrix form).
pub fn update_a_block_cmf(
    data: &RaggedTensor,
    model: &mut Parafac2Model,
    state: &mut AdmmState,
    prox: &mut ProxOp,
    ridge: f64,
    rule: &InnerStopRule,
) -> Result<usize> {
    rule.validate()?;
    let r = model.rank();
    // Gamma_k = B_k D_k; caches: sum_k X_k Gamma_k and its Gram
    let mut rhs = DMatrix::zeros(model.a.nrows(), r);
    let mut gram = DMatrix::zeros(r, r);
    for k in 0..data.nslices() {
        let dk = DMatrix::from_diagonal(&DVector::from_iterator(
            r,
            model.c.row(k).iter().copied(),
        ));
        let gamma = &model.b[k] * &dk;
        rhs += data.slice(k) * &gamma;
        gram += gamma.transpose() * gamma;
    }
    for j in 0..r {
        gram[(j, j)] += (2.0 * ridge + state.rho_a) / 2.0;
    }
    let chol = CholeskyFactor::factor(&gram)?;
    let half_rho = state.rho_a / 2.0;

    let mut iters = 0;
    for q in 0..rule.max_inner {
        iters = q + 1;
        model.a = chol.solve_right(&(&rhs + (&state.z_a - &state.mu_a) * half_rho));
        check_finite(&model.a, "A update", q)?;
        let z_prev = state.z_a.clone();
        state.z_a = prox.apply(&(&model.a + &state.mu_a), state.rho_a)?;
        state.mu_a += &model.a - &state.z_a;
        let (p, d) = inner_residuals(&model.a, &state.z_a, &z_prev);
        if p <= rule.eps && d <= rule.eps {
            break;
        }
    }
    Ok(iters)
}

/// One inner ADMM loop for the slice weights (coupled-matrix form). Each
/// slice's system is the Hadamard-product Gram `A'A * B_k'B_k` shifted by
/// `(2g+rho)/2`.
pub fn update_d_block_cmf(
    data: &RaggedTensor,
    model: &mut Parafac2Model,
    state: &mut AdmmState,
    prox: &mut ProxOp,
    ridge: f64,
    rule: &InnerStopRule,
) -> Result<usize> {
    rule.validate()?;
    let r = model.rank();
    let nk = data.nslices();
    let ata = model.a.transpose() * &model.a;
    let mut rhs = Vec::with_capacity(nk);
    let mut chol = Vec::with_capacity(nk);
    for k in 0..nk {
        let axb = model.a.transpose() * data.slice(k) * &model.b[k];
        rhs.push(DVector::from_fn(r, |j, _| axb[(j, j)]));
        let btb = model.b[k].transpose() * &model.b[k];
        let mut gram = ata.component_mul(&btb);
        for j in 0..r {
            gram[(j, j)] += (2.0 * ridge + state.rho_d[k]) / 2.0;
        }
        chol.push(CholeskyFactor::factor(&gram)?);
    }

    let mut iters = 0;
    for q in 0..rule.max_inner {
        iters = q + 1;
        for k in 0..nk {
            let half_rho = state.rho_d[k] / 2.0;
            let v = DVector::from_fn(r, |j, _| state.z_c[(k, j)] - state.mu_c[(k, j)]);
            let mut sys = DMatrix::from_column_slice(r, 1, (&rhs[k] + v * half_rho).as_slice());
            chol[k].solve_in_place(&mut sys);
            for j in 0..r {
                model.c[(k, j)] = sys[(j, 0)];
            }
        }
        check_finite(&model.c, "D update", q)?;
        let z_prev = state.z_c.clone();
        // prox applied per slice so each row sees its own penalty parameter
        for k in 0..nk {
            let row = DMatrix::from_fn(1, r, |_, j| model.c[(k, j)] + state.mu_c[(k, j)]);
            let zk = prox.apply(&row, state.rho_d[k])?;
            for j in 0..r {
                state.z_c[(k, j)] = zk[(0, j)];
            }
        }
        state.mu_c += &model.c - &state.z_c;
        let (p, d) = inner_residuals(&model.c, &state.z_c, &z_prev);
        if p <= rule.eps && d <= rule.eps {
            break;
        }
    }
    Ok(iters)
}

/// CP-form penalty heuristics on the projected tensor:
/// `rho_A = tr(DeltaB'DeltaB * C'C)/R`, `rho_C = tr(A'A * DeltaB'DeltaB)/R`.
pub fn penalty_heuristics_cp(
    a: &DMatrix<f64>,
    delta_b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> (f64, f64) {
    let r = delta_b.ncols();
    let dtd = delta_b.transpose() * delta_b;
    let ctc = c.transpose() * c;
    let ata = a.transpose() * a;
    let mut rho_a = 0.0;
    let mut rho_c = 0.0;
    for j in 0..r {
        rho_a += dtd[(j, j)] * ctc[(j, j)];
        rho_c += ata[(j, j)] * dtd[(j, j)];
    }
    (
        clamp_rho(rho_a / r as f64, "A block (cp)"),
        clamp_rho(rho_c / r as f64, "C block (cp)"),
    )
}

/// CP-form A update on the projected slices `T_k = X_k P_k`. Assumes primal
/// feasibility of the evolving mode (B_k = P_k DeltaB).
pub fn update_a_block_cp(
    t: &[DMatrix<f64>],
    model: &mut Parafac2Model,
    state: &mut AdmmState,
    prox: &mut ProxOp,
    ridge: f64,
    rule: &InnerStopRule,
) -> Result<usize> {
    rule.validate()?;
    let r = model.rank();
    let delta = &state.coupling.delta_b;
    // MTTKRP: sum_k T_k DeltaB D_k; Gram: DeltaB'DeltaB * C'C
    let mut rhs = DMatrix::zeros(model.a.nrows(), r);
    for (k, tk) in t.iter().enumerate() {
        let td = tk * delta;
        for j in 0..r {
            let w = model.c[(k, j)];
            for i in 0..rhs.nrows() {
                rhs[(i, j)] += td[(i, j)] * w;
            }
        }
    }
    let mut gram = (delta.transpose() * delta)
        .component_mul(&(model.c.transpose() * &model.c));
    for j in 0..r {
        gram[(j, j)] += (2.0 * ridge + state.rho_a) / 2.0;
    }
    let chol = CholeskyFactor::factor(&gram)?;
    let half_rho = state.rho_a / 2.0;

    let mut iters = 0;
    for q in 0..rule.max_inner {
        iters = q + 1;
        model.a = chol.solve_right(&(&rhs + (&state.z_a - &state.mu_a) * half_rho));
        check_finite(&model.a, "A update (cp)", q)?;
        let z_prev = state.z_a.clone();
        state.z_a = prox.apply(&(&model.a + &state.mu_a), state.rho_a)?;
        state.mu_a += &model.a - &state.z_a;
        let (p, d) = inner_residuals(&model.a, &state.z_a, &z_prev);
        if p <= rule.eps && d <= rule.eps {
            break;
        }
    }
    Ok(iters)
}

/// CP-form C update on the projected slices.
#[allow(clippy::too_many_arguments)]
pub fn update_d_block_cp(
    t: &[DMatrix<f64>],
    model: &mut Parafac2Model,
    state: &mut AdmmState,
    prox: &mut ProxOp,
    ridge: f64,
    rule: &InnerStopRule,
    rho_c: f64,
) -> Result<usize> {
    rule.validate()?;
    let r = model.rank();
    let delta = &state.coupling.delta_b;
    // row k of the MTTKRP is diag(A' T_k DeltaB)
    let mut rhs = DMatrix::zeros(t.len(), r);
    for (k, tk) in t.iter().enumerate() {
        let atd = model.a.transpose() * tk * delta;
        for j in 0..r {
            rhs[(k, j)] = atd[(j, j)];
        }
    }
    let mut gram = (model.a.transpose() * &model.a)
        .component_mul(&(delta.transpose() * delta));
    for j in 0..r {
        gram[(j, j)] += (2.0 * ridge + rho_c) / 2.0;
    }
    let chol = CholeskyFactor::factor(&gram)?;
    let half_rho = rho_c / 2.0;

    let mut iters = 0;
    for q in 0..rule.max_inner {
        iters = q + 1;
        let mut sys = (&rhs + (&state.z_c - &state.mu_c) * half_rho).transpose();
        chol.solve_in_place(&mut sys);
        model.c = sys.transpose();
        check_finite(&model.c, "C update (cp)", q)?;
        let z_prev = state.z_c.clone();
        state.z_c = prox.apply(&(&model.c + &state.mu_c), rho_c)?;
        state.mu_c += &model.c - &state.z_c;
        let (p, d) = inner_residuals(&model.c, &state.z_c, &z_prev);
        if p <= rule.eps && d <= rule.eps {
            break;
        }
    }
    Ok(iters)
}
