//! Outer fitting loops: AO-ADMM, the classical ALS baseline, and the
//! flexible-coupling HALS baseline, plus initialization and the
//! multi-initialization driver.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{
    penalty_heuristics_cp, update_a_block_cmf, update_a_block_cp, update_b_block,
    update_d_block_cmf, update_d_block_cp, AdmmState, InnerStopRule,
};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve_normal, procrustes_factor};
use crate::prox::{project_parafac2, ProxOp, ProxSpec};
use crate::tensor::{relative_sse, CouplingVariables, Parafac2Model, RaggedTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Alternating optimization with inner ADMM loops (coupled-matrix form).
    AoAdmm,
    /// Same outer scheme with CP-form A/D updates on the projected tensor.
    AoAdmmCp,
    /// Classical ALS via the orthogonal reparametrization B_k = P_k DeltaB.
    Als,
    /// Flexible-coupling HALS with an increasing coupling penalty.
    FlexHals,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub rank: usize,
    pub algorithm: Algorithm,
    pub max_outer: usize,
    pub eps_rel: f64,
    pub eps_abs: f64,
    pub inner_a: InnerStopRule,
    pub inner_b: InnerStopRule,
    pub inner_d: InnerStopRule,
    pub spec_a: ProxSpec,
    pub spec_b: ProxSpec,
    pub spec_c: ProxSpec,
    pub ridge_a: f64,
    pub ridge_b: f64,
    pub ridge_c: f64,
    pub seed: u64,
    /// Extra scaling of the evolving-mode penalty parameters.
    pub rho_b_scale: f64,
    /// Sweeps of the constraint-set projection per inner ADMM iteration.
    pub projection_sweeps: usize,
    /// Unconstrained ALS iterations used to warm-start AO-ADMM.
    pub als_warmstart_iters: usize,
    /// Initial coupling-penalty balance factor for the HALS baseline.
    pub flex_mu_balance: f64,
    /// Per-iteration growth of the coupling penalty for the HALS baseline.
    pub flex_mu_growth: f64,
}

impl SolveOptions {
    pub fn new(rank: usize, algorithm: Algorithm) -> Self {
        Self {
            rank,
            algorithm,
            max_outer: 2000,
            eps_rel: 1e-8,
            eps_abs: 1e-7,
            inner_a: InnerStopRule::default(),
            inner_b: InnerStopRule::default(),
            inner_d: InnerStopRule::default(),
            spec_a: ProxSpec::None,
            spec_b: ProxSpec::None,
            spec_c: ProxSpec::None,
            ridge_a: 0.0,
            ridge_b: 0.0,
            ridge_c: 0.0,
            seed: 0,
            rho_b_scale: 1.0,
            projection_sweeps: 1,
            als_warmstart_iters: 0,
            flex_mu_balance: 0.1,
            flex_mu_growth: 1.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be >= 1".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidArgument("max_outer must be >= 1".into()));
        }
        if !(self.eps_rel > 0.0 && self.eps_abs > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be > 0".into()));
        }
        if !(self.rho_b_scale > 0.0) {
            return Err(Error::InvalidArgument("rho_b_scale must be > 0".into()));
        }
        if self.projection_sweeps == 0 {
            return Err(Error::InvalidArgument("projection_sweeps must be >= 1".into()));
        }
        if !(self.flex_mu_growth >= 1.0) {
            return Err(Error::InvalidArgument("flex_mu_growth must be >= 1".into()));
        }
        self.inner_a.validate()?;
        self.inner_b.validate()?;
        self.inner_d.validate()?;
        self.spec_a.validate()?;
        self.spec_b.validate()?;
        self.spec_c.validate()?;
        for (g, name) in [(self.ridge_a, "A"), (self.ridge_b, "B"), (self.ridge_c, "C")] {
            if g < 0.0 {
                return Err(Error::InvalidArgument(format!("ridge on {} must be >= 0", name)));
            }
        }
        Ok(())
    }
}

/// Outcome of a single fit. Traces have one entry per outer iteration plus
/// the initial point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
    pub wall_ms: u64,
    pub final_loss: f64,
    pub final_rel_sse: f64,
    /// f + g per outer iteration.
    pub loss_trace: Vec<f64>,
    /// ||B_k - Z_Bk|| aggregated over k.
    pub gap_b_split: Vec<f64>,
    /// ||B_k - Y_Bk|| aggregated over k.
    pub gap_b_coupling: Vec<f64>,
    pub gap_a: Vec<f64>,
    pub gap_d: Vec<f64>,
    /// Coupling-penalty schedule (flexible-coupling baseline only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mu_trace: Vec<f64>,
}

fn agg_gap(xs: &[DMatrix<f64>], zs: &[DMatrix<f64>]) -> f64 {
    xs.iter()
        .zip(zs)
        .map(|(x, z)| (x - z).norm_squared())
        .sum::<f64>()
        .sqrt()
}

fn sse(data: &RaggedTensor, model: &Parafac2Model) -> f64 {
    (0..data.nslices())
        .map(|k| (data.slice(k) - model.reconstruct_slice(k)).norm_squared())
        .sum()
}

fn check_rank_feasible(data: &RaggedTensor, rank: usize) -> Result<()> {
    for k in 0..data.nslices() {
        if data.slice(k).ncols() < rank {
            return Err(Error::InvalidArgument(format!(
                "slice {} has {} columns, fewer than rank {}",
                k,
                data.slice(k).ncols(),
                rank
            )));
        }
    }
    Ok(())
}

/// Random initialization: all factor, auxiliary, and dual entries ~ U(0,1);
/// P_k starts as the first R identity columns. Deterministic given the seed.
pub fn initialize(data: &RaggedTensor, opts: &SolveOptions, seed: u64) -> Result<(Parafac2Model, AdmmState)> {
    check_rank_feasible(data, opts.rank)?;
    let r = opts.rank;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mat = |nr: usize, nc: usize| DMatrix::from_fn(nr, nc, |_, _| rng.gen::<f64>());

    let a = mat(data.nrows(), r);
    let b: Vec<DMatrix<f64>> = (0..data.nslices())
        .map(|k| mat(data.slice(k).ncols(), r))
        .collect();
    let c = mat(data.nslices(), r);
    let model = Parafac2Model::new(a, b, c)?;

    let p: Vec<DMatrix<f64>> = (0..data.nslices())
        .map(|k| {
            let j = data.slice(k).ncols();
            DMatrix::from_fn(j, r, |row, col| if row == col { 1.0 } else { 0.0 })
        })
        .collect();
    let delta_b = mat(r, r);
    let coupling = CouplingVariables { p, delta_b };

    let mut state = AdmmState::at_model(&model, coupling)?;
    state.z_a = mat(data.nrows(), r);
    state.mu_a = mat(data.nrows(), r);
    for k in 0..data.nslices() {
        let j = data.slice(k).ncols();
        state.z_b[k] = mat(j, r);
        state.mu_z_b[k] = mat(j, r);
        state.mu_y_b[k] = mat(j, r);
    }
    state.z_c = mat(data.nslices(), r);
    state.mu_c = mat(data.nslices(), r);
    Ok((model, state))
}

/// Outer stopping helper: absolute-or-relative-decrease on one scalar trace.
fn stalled(prev: f64, cur: f64, eps_abs: f64, eps_rel: f64) -> bool {
    cur < eps_abs || (prev - cur).abs() < eps_rel * prev.abs()
}

struct Regularizers {
    a: ProxOp,
    b: ProxOp,
    c: ProxOp,
}

impl Regularizers {
    fn new(opts: &SolveOptions) -> Result<Self> {
        Ok(Self {
            a: ProxOp::new(opts.spec_a.clone())?,
            b: ProxOp::new(opts.spec_b.clone())?,
            c: ProxOp::new(opts.spec_c.clone())?,
        })
    }

    /// Regularization value g: penalties on the auxiliary copies plus the
    /// smooth ridge terms on the primal blocks.
    fn penalty(&self, model: &Parafac2Model, state: &AdmmState, opts: &SolveOptions) -> f64 {
        let mut g = self.a.penalty(&state.z_a) + self.c.penalty(&state.z_c);
        for z in &state.z_b {
            g += self.b.penalty(z);
        }
        g += opts.ridge_a * model.a.norm_squared();
        g += opts.ridge_c * model.c.norm_squared();
        for b in &model.b {
            g += opts.ridge_b * b.norm_squared();
        }
        g
    }
}

/// AO-ADMM outer loop (block order: evolving mode, static mode, weights).
pub fn fit_aoadmm(
    data: &RaggedTensor,
    opts: &SolveOptions,
    init: (Parafac2Model, AdmmState),
) -> Result<(Parafac2Model, FitReport)> {
    opts.validate()?;
    check_rank_feasible(data, opts.rank)?;
    let start = Instant::now();
    let (mut model, mut state) = init;
    model.check_compatible(data)?;
    let mut regs = Regularizers::new(opts)?;
    let cp = opts.algorithm == Algorithm::AoAdmmCp;

    if opts.als_warmstart_iters > 0 {
        als_warmstart(data, opts, &mut model, &mut state)?;
    }

    let mut report = FitReport {
        seed: opts.seed,
        iterations: 0,
        converged: false,
        feasible: false,
        wall_ms: 0,
        final_loss: f64::NAN,
        final_rel_sse: f64::NAN,
        loss_trace: Vec::new(),
        gap_b_split: Vec::new(),
        gap_b_coupling: Vec::new(),
        gap_a: Vec::new(),
        gap_d: Vec::new(),
        mu_trace: Vec::new(),
    };
    let record = |model: &Parafac2Model, state: &AdmmState, regs: &Regularizers, rep: &mut FitReport| {
        let loss = sse(data, model) + regs.penalty(model, state, opts);
        rep.loss_trace.push(loss);
        rep.gap_b_split.push(agg_gap(&model.b, &state.z_b));
        rep.gap_b_coupling.push(agg_gap(&model.b, &state.y_b));
        rep.gap_a.push((&model.a - &state.z_a).norm());
        rep.gap_d.push((&model.c - &state.z_c).norm());
        loss
    };
    let mut prev_loss = record(&model, &state, &regs, &mut report);
    if !prev_loss.is_finite() {
        return Err(Error::NonFinite { context: "initial loss".into(), iteration: 0 });
    }

    for t in 1..=opts.max_outer {
        state.refresh_penalties(&model);
        for rho in state.rho_b.iter_mut() {
            *rho *= opts.rho_b_scale;
        }
        update_b_block(
            data,
            &mut model,
            &mut state,
            &mut regs.b,
            opts.ridge_b,
            &opts.inner_b,
            opts.projection_sweeps,
        )?;
        if cp {
            let t_slices: Vec<DMatrix<f64>> = (0..data.nslices())
                .map(|k| data.slice(k) * &state.coupling.p[k])
                .collect();
            let (rho_a, rho_c) =
                penalty_heuristics_cp(&model.a, &state.coupling.delta_b, &model.c);
            state.rho_a = rho_a;
            update_a_block_cp(&t_slices, &mut model, &mut state, &mut regs.a, opts.ridge_a, &opts.inner_a)?;
            update_d_block_cp(
                &t_slices,
                &mut model,
                &mut state,
                &mut regs.c,
                opts.ridge_c,
                &opts.inner_d,
                rho_c,
            )?;
        } else {
            update_a_block_cmf(data, &mut model, &mut state, &mut regs.a, opts.ridge_a, &opts.inner_a)?;
            update_d_block_cmf(data, &mut model, &mut state, &mut regs.c, opts.ridge_c, &opts.inner_d)?;
        }

        let loss = record(&model, &state, &regs, &mut report);
        report.iterations = t;
        if !loss.is_finite() {
            return Err(Error::NonFinite { context: "outer loss".into(), iteration: t });
        }

        let n = report.loss_trace.len();
        let loss_ok = stalled(prev_loss, loss, opts.eps_abs, opts.eps_rel);
        let gaps_ok = [
            &report.gap_b_split,
            &report.gap_b_coupling,
            &report.gap_a,
            &report.gap_d,
        ]
        .iter()
        .all(|tr| stalled(tr[n - 2], tr[n - 1], opts.eps_abs, opts.eps_rel));
        prev_loss = loss;
        if loss_ok && gaps_ok {
            report.converged = true;
            break;
        }
    }

    let n = report.loss_trace.len();
    report.feasible = report.gap_b_split[n - 1] < opts.eps_abs
        && report.gap_b_coupling[n - 1] < opts.eps_abs
        && report.gap_a[n - 1] < opts.eps_abs
        && report.gap_d[n - 1] < opts.eps_abs;
    report.final_loss = report.loss_trace[n - 1];
    report.final_rel_sse = relative_sse(&model, data)?;
    report.wall_ms = start.elapsed().as_millis() as u64;
    Ok((model, report))
}

/// A few unconstrained ALS iterations to move AO-ADMM's starting point into
/// a reasonable basin; auxiliaries are re-centered on the warm-started model.
fn als_warmstart(
    data: &RaggedTensor,
    opts: &SolveOptions,
    model: &mut Parafac2Model,
    state: &mut AdmmState,
) -> Result<()> {
    let mut als_opts = SolveOptions::new(opts.rank, Algorithm::Als);
    als_opts.max_outer = opts.als_warmstart_iters;
    als_opts.eps_abs = f64::MIN_POSITIVE;
    als_opts.eps_rel = f64::MIN_POSITIVE;
    let init = (model.clone(), state.clone());
    let (warm, _) = fit_als(data, &als_opts, init)?;
    // carry over the coupling implied by the ALS parametrization
    let r = opts.rank;
    let mut coupling = state.coupling.clone();
    for k in 0..data.nslices() {
        coupling.p[k] = procrustes_factor(&(&warm.b[k] * coupling.delta_b.transpose()));
    }
    let mut acc = DMatrix::zeros(r, r);
    for k in 0..data.nslices() {
        acc += coupling.p[k].transpose() * &warm.b[k];
    }
    coupling.delta_b = acc / data.nslices() as f64;
    *model = warm;
    *state = AdmmState::at_model(model, coupling)?;
    Ok(())
}

fn require_nonneg_or_none(spec: &ProxSpec, mode: &str, algo: &str) -> Result<()> {
    if spec.is_nonneg_only() {
        Ok(())
    } else {
        Err(Error::UnsupportedConstraint(format!(
            "{} supports only non-negativity; mode {} has a different constraint",
            algo, mode
        )))
    }
}

/// HALS pass over the columns of `f` minimizing tr(F G F') - 2 tr(F' M),
/// optionally clipped at zero.
fn hals_columns(f: &mut DMatrix<f64>, gram: &DMatrix<f64>, mttkrp: &DMatrix<f64>, nonneg: bool) {
    let r = f.ncols();
    for col in 0..r {
        let denom = gram[(col, col)].max(1e-300);
        let fg = &*f * gram.column(col);
        for i in 0..f.nrows() {
            let mut v = f[(i, col)] + (mttkrp[(i, col)] - fg[i]) / denom;
            if nonneg {
                v = v.max(0.0);
            }
            f[(i, col)] = v;
        }
    }
}

/// Classical ALS (orthogonal reparametrization + 5 CP-ALS sweeps on the
/// projected tensor). Non-negativity is supported on the static mode and the
/// weights only; any evolving-mode constraint is rejected.
pub fn fit_als(
    data: &RaggedTensor,
    opts: &SolveOptions,
    init: (Parafac2Model, AdmmState),
) -> Result<(Parafac2Model, FitReport)> {
    opts.validate()?;
    check_rank_feasible(data, opts.rank)?;
    if !opts.spec_b.is_none() {
        return Err(Error::UnsupportedConstraint(
            "ALS cannot constrain the evolving mode; its B_k are implicit".into(),
        ));
    }
    require_nonneg_or_none(&opts.spec_a, "A", "ALS")?;
    require_nonneg_or_none(&opts.spec_c, "C", "ALS")?;
    if opts.ridge_a != 0.0 || opts.ridge_b != 0.0 || opts.ridge_c != 0.0 {
        return Err(Error::UnsupportedConstraint("ALS does not support ridge penalties".into()));
    }
    let start = Instant::now();
    let (model, state) = init;
    model.check_compatible(data)?;
    let r = opts.rank;
    let nk = data.nslices();
    let nn_a = matches!(opts.spec_a, ProxSpec::NonNegative);
    let nn_c = matches!(opts.spec_c, ProxSpec::NonNegative);

    let mut a = model.a.clone();
    let mut c = model.c.clone();
    let mut p = state.coupling.p.clone();
    let mut delta = state.coupling.delta_b.clone();

    let mut report = FitReport {
        seed: opts.seed,
        iterations: 0,
        converged: false,
        feasible: true,
        wall_ms: 0,
        final_loss: f64::NAN,
        final_rel_sse: f64::NAN,
        loss_trace: Vec::new(),
        gap_b_split: Vec::new(),
        gap_b_coupling: Vec::new(),
        gap_a: Vec::new(),
        gap_d: Vec::new(),
        mu_trace: Vec::new(),
    };
    let current_sse = |a: &DMatrix<f64>, c: &DMatrix<f64>, p: &[DMatrix<f64>], delta: &DMatrix<f64>| {
        let mut f = 0.0;
        for k in 0..nk {
            let bk = &p[k] * delta;
            let dk = DMatrix::from_diagonal(&DVector::from_iterator(r, c.row(k).iter().copied()));
            f += (data.slice(k) - a * dk * bk.transpose()).norm_squared();
        }
        f
    };
    let mut prev = current_sse(&a, &c, &p, &delta);
    report.loss_trace.push(prev);
    for tr in [
        &mut report.gap_b_split,
        &mut report.gap_b_coupling,
        &mut report.gap_a,
        &mut report.gap_d,
    ] {
        tr.push(0.0);
    }

    for t in 1..=opts.max_outer {
        let mut t_slices = Vec::with_capacity(nk);
        for k in 0..nk {
            let dk = DMatrix::from_diagonal(&DVector::from_iterator(r, c.row(k).iter().copied()));
            p[k] = procrustes_factor(&(data.slice(k).transpose() * &a * &dk * delta.transpose()));
            t_slices.push(data.slice(k) * &p[k]);
        }
        for _sweep in 0..5 {
            // A update
            let ctc = c.transpose() * &c;
            let dtd = delta.transpose() * &delta;
            let gram_a = dtd.component_mul(&ctc);
            let mut m_a = DMatrix::zeros(a.nrows(), r);
            for k in 0..nk {
                let td = &t_slices[k] * &delta;
                for j in 0..r {
                    let w = c[(k, j)];
                    for i in 0..a.nrows() {
                        m_a[(i, j)] += td[(i, j)] * w;
                    }
                }
            }
            if nn_a {
                hals_columns(&mut a, &gram_a, &m_a, true);
            } else {
                a = cholesky_solve_normal(&gram_a, &m_a)?;
            }
            // DeltaB update (always unconstrained)
            let ata = a.transpose() * &a;
            let gram_d = ata.component_mul(&(c.transpose() * &c));
            let mut m_d = DMatrix::zeros(r, r);
            for k in 0..nk {
                let ta = t_slices[k].transpose() * &a;
                for j in 0..r {
                    let w = c[(k, j)];
                    for i in 0..r {
                        m_d[(i, j)] += ta[(i, j)] * w;
                    }
                }
            }
            delta = cholesky_solve_normal(&gram_d, &m_d)?;
            // C update
            let dtd = delta.transpose() * &delta;
            let gram_c = ata.component_mul(&dtd);
            let mut m_c = DMatrix::zeros(nk, r);
            for k in 0..nk {
                let atd = a.transpose() * &t_slices[k] * &delta;
                for j in 0..r {
                    m_c[(k, j)] = atd[(j, j)];
                }
            }
            if nn_c {
                hals_columns(&mut c, &gram_c, &m_c, true);
            } else {
                c = cholesky_solve_normal(&gram_c, &m_c)?;
            }
        }

        let f = current_sse(&a, &c, &p, &delta);
        if !f.is_finite() {
            return Err(Error::NonFinite { context: "ALS loss".into(), iteration: t });
        }
        report.loss_trace.push(f);
        for tr in [
            &mut report.gap_b_split,
            &mut report.gap_b_coupling,
            &mut report.gap_a,
            &mut report.gap_d,
        ] {
            tr.push(0.0);
        }
        report.iterations = t;
        let done = stalled(prev, f, opts.eps_abs, opts.eps_rel);
        prev = f;
        if done {
            report.converged = true;
            break;
        }
    }

    let b: Vec<DMatrix<f64>> = p.iter().map(|pk| pk * &delta).collect();
    let out = Parafac2Model::new(a, b, c)?;
    report.final_loss = prev;
    report.final_rel_sse = relative_sse(&out, data)?;
    report.wall_ms = start.elapsed().as_millis() as u64;
    Ok((out, report))
}

/// Flexible-coupling baseline: HALS column updates of all blocks under
/// non-negativity, with the coupling penalty mu_t ramped up every iteration
/// until the coupling residual is negligible.
pub fn fit_flex_hals(
    data: &RaggedTensor,
    opts: &SolveOptions,
    init: (Parafac2Model, AdmmState),
) -> Result<(Parafac2Model, FitReport)> {
    opts.validate()?;
    check_rank_feasible(data, opts.rank)?;
    for (spec, mode) in [(&opts.spec_a, "A"), (&opts.spec_b, "B"), (&opts.spec_c, "C")] {
        require_nonneg_or_none(spec, mode, "flexible-coupling HALS")?;
    }
    if opts.ridge_a != 0.0 || opts.ridge_b != 0.0 || opts.ridge_c != 0.0 {
        return Err(Error::UnsupportedConstraint(
            "flexible-coupling HALS does not support ridge penalties".into(),
        ));
    }
    let start = Instant::now();
    let (mut model, state) = init;
    model.check_compatible(data)?;
    let r = opts.rank;
    let nk = data.nslices();
    let nn_a = matches!(opts.spec_a, ProxSpec::NonNegative);
    let nn_b = matches!(opts.spec_b, ProxSpec::NonNegative);
    let nn_c = matches!(opts.spec_c, ProxSpec::NonNegative);
    let mut coupling = state.coupling.clone();

    let coupling_sq = |model: &Parafac2Model, coupling: &CouplingVariables| -> f64 {
        (0..nk)
            .map(|k| (&model.b[k] - &coupling.p[k] * &coupling.delta_b).norm_squared())
            .sum()
    };
    let mut mu = {
        let gap = coupling_sq(&model, &coupling).max(1e-300);
        opts.flex_mu_balance * sse(data, &model) / gap
    };
    if !mu.is_finite() || mu <= 0.0 {
        mu = 1.0;
    }
    let mut mu_frozen = false;

    let mut report = FitReport {
        seed: opts.seed,
        iterations: 0,
        converged: false,
        feasible: false,
        wall_ms: 0,
        final_loss: f64::NAN,
        final_rel_sse: f64::NAN,
        loss_trace: Vec::new(),
        gap_b_split: Vec::new(),
        gap_b_coupling: Vec::new(),
        gap_a: Vec::new(),
        gap_d: Vec::new(),
        mu_trace: Vec::new(),
    };
    let record = |model: &Parafac2Model, coupling: &CouplingVariables, rep: &mut FitReport| {
        let f = sse(data, model);
        rep.loss_trace.push(f);
        let gap = coupling_sq(model, coupling).sqrt();
        rep.gap_b_coupling.push(gap);
        rep.gap_b_split.push(0.0);
        rep.gap_a.push(0.0);
        rep.gap_d.push(0.0);
        (f, gap)
    };
    let (mut prev_loss, mut prev_gap) = record(&model, &coupling, &mut report);

    for t in 1..=opts.max_outer {
        // A
        let mut gram = DMatrix::zeros(r, r);
        let mut mttkrp = DMatrix::zeros(model.a.nrows(), r);
        for k in 0..nk {
            let dk = DMatrix::from_diagonal(&DVector::from_iterator(
                r,
                model.c.row(k).iter().copied(),
            ));
            let gamma = &model.b[k] * dk;
            gram += gamma.transpose() * &gamma;
            mttkrp += data.slice(k) * gamma;
        }
        if nn_a {
            hals_columns(&mut model.a, &gram, &mttkrp, true);
        } else {
            model.a = cholesky_solve_normal(&gram, &mttkrp)?;
        }
        // B_k with the coupling pull toward P_k DeltaB
        let ata = model.a.transpose() * &model.a;
        for k in 0..nk {
            let dk = DMatrix::from_diagonal(&DVector::from_iterator(
                r,
                model.c.row(k).iter().copied(),
            ));
            let mut gram = &dk * &ata * &dk;
            for j in 0..r {
                gram[(j, j)] += mu;
            }
            let target = &coupling.p[k] * &coupling.delta_b;
            let mttkrp = data.slice(k).transpose() * &model.a * &dk + target * mu;
            if nn_b {
                hals_columns(&mut model.b[k], &gram, &mttkrp, true);
            } else {
                model.b[k] = cholesky_solve_normal(&gram, &mttkrp)?;
            }
        }
        // D_k
        for k in 0..nk {
            let btb = model.b[k].transpose() * &model.b[k];
            let gram = ata.component_mul(&btb);
            let axb = model.a.transpose() * data.slice(k) * &model.b[k];
            let mut row = DMatrix::from_fn(1, r, |_, j| model.c[(k, j)]);
            let m_row = DMatrix::from_fn(1, r, |_, j| axb[(j, j)]);
            if nn_c {
                hals_columns(&mut row, &gram, &m_row, true);
            } else {
                row = cholesky_solve_normal(&gram, &m_row)?;
            }
            for j in 0..r {
                model.c[(k, j)] = row[(0, j)];
            }
        }
        // coupling variables, then the mu ramp
        let weights = vec![1.0; nk];
        let (next, _) = project_parafac2(&model.b, &weights, &coupling, 1)?;
        coupling = next;

        let (loss, gap) = record(&model, &coupling, &mut report);
        report.iterations = t;
        report.mu_trace.push(mu);
        if !loss.is_finite() {
            return Err(Error::NonFinite { context: "HALS loss".into(), iteration: t });
        }
        if !mu_frozen {
            if gap < opts.eps_abs {
                mu_frozen = true;
            } else {
                mu *= opts.flex_mu_growth;
            }
        }

        let loss_ok = stalled(prev_loss, loss, opts.eps_abs, opts.eps_rel);
        let gap_ok = stalled(prev_gap, gap, opts.eps_abs, opts.eps_rel);
        prev_loss = loss;
        prev_gap = gap;
        if loss_ok && gap_ok {
            report.converged = true;
            break;
        }
    }

    let n = report.loss_trace.len();
    report.feasible = report.gap_b_coupling[n - 1] < opts.eps_abs;
    report.final_loss = report.loss_trace[n - 1];
    report.final_rel_sse = relative_sse(&model, data)?;
    report.wall_ms = start.elapsed().as_millis() as u64;
    Ok((model, report))
}

/// Runs one seeded fit with the configured algorithm.
pub fn fit(data: &RaggedTensor, opts: &SolveOptions) -> Result<(Parafac2Model, FitReport)> {
    let init = initialize(data, opts, opts.seed)?;
    match opts.algorithm {
        Algorithm::AoAdmm | Algorithm::AoAdmmCp => fit_aoadmm(data, opts, init),
        Algorithm::Als => fit_als(data, opts, init),
        Algorithm::FlexHals => fit_flex_hals(data, opts, init),
    }
}

/// One initialization's outcome inside a multi-start run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitRun {
    pub seed: u64,
    pub selected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<FitReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct MultiInitFit {
    pub model: Parafac2Model,
    pub selected: usize,
    pub runs: Vec<InitRun>,
}

/// Runs `n_init` seeded fits (seeds `opts.seed..opts.seed+n_init`) and keeps
/// the lowest final loss among converged-and-feasible runs, falling back to
/// the lowest loss overall if none qualify. Ties break by seed order.
pub fn multi_init_fit(data: &RaggedTensor, opts: &SolveOptions, n_init: usize) -> Result<MultiInitFit> {
    if n_init == 0 {
        return Err(Error::InvalidArgument("n_init must be >= 1".into()));
    }
    opts.validate()?;
    let outcomes: Vec<(u64, Result<(Parafac2Model, FitReport)>)> = (0..n_init as u64)
        .into_par_iter()
        .map(|i| {
            let seed = opts.seed.wrapping_add(i);
            let mut o = opts.clone();
            o.seed = seed;
            (seed, fit(data, &o))
        })
        .collect();

    let mut best: Option<(usize, f64, bool)> = None; // (index, loss, qualified)
    for (idx, (_, outcome)) in outcomes.iter().enumerate() {
        if let Ok((_, rep)) = outcome {
            let qualified = rep.converged && rep.feasible;
            let better = match &best {
                None => true,
                Some((_, bl, bq)) => {
                    (qualified && !bq) || (qualified == *bq && rep.final_loss < *bl)
                }
            };
            if better {
                best = Some((idx, rep.final_loss, qualified));
            }
        }
    }
    let selected = best.ok_or(Error::AllInitsDiverged)?.0;

    let mut model = None;
    let runs = outcomes
        .into_iter()
        .enumerate()
        .map(|(idx, (seed, outcome))| match outcome {
            Ok((m, rep)) => {
                if idx == selected {
                    model = Some(m);
                }
                InitRun { seed, selected: idx == selected, report: Some(rep), error: None }
            }
            Err(e) => InitRun { seed, selected: false, report: None, error: Some(e.to_string()) },
        })
        .collect();
    Ok(MultiInitFit { model: model.expect("selected run has a model"), selected, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::reconstruct;

    fn positive_feasible(
        i: usize,
        js: &[usize],
        r: usize,
        seed: u64,
    ) -> (Parafac2Model, CouplingVariables, RaggedTensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<DMatrix<f64>> = js
            .iter()
            .map(|&j| {
                let mut pk = DMatrix::zeros(j, r);
                for col in 0..r {
                    let (s, e) = (col * j / r, (col + 1) * j / r);
                    let w = 1.0 / ((e - s) as f64).sqrt();
                    for row in s..e {
                        pk[(row, col)] = w;
                    }
                }
                pk
            })
            .collect();
        let delta = DMatrix::from_fn(r, r, |_, _| rng.gen::<f64>() + 0.2);
        let coupling = CouplingVariables { p, delta_b: delta };
        let b = coupling.implied_factors();
        let a = DMatrix::from_fn(i, r, |_, _| rng.gen::<f64>() + 0.1);
        let c = DMatrix::from_fn(js.len(), r, |_, _| rng.gen::<f64>() + 0.1);
        let model = Parafac2Model::new(a, b, c).unwrap();
        let data = reconstruct(&model);
        (model, coupling, data)
    }

    #[test]
    fn initialize_is_deterministic_and_valid() {
        let (_, _, data) = positive_feasible(5, &[6, 7], 2, 1);
        let opts = SolveOptions::new(2, Algorithm::AoAdmm);
        let (m1, s1) = initialize(&data, &opts, 42).unwrap();
        let (m2, s2) = initialize(&data, &opts, 42).unwrap();
        assert_eq!(m1.a, m2.a);
        assert_eq!(m1.b, m2.b);
        assert_eq!(m1.c, m2.c);
        assert_eq!(s1.z_a, s2.z_a);
        assert_eq!(s1.mu_c, s2.mu_c);
        assert!(m1.a.iter().all(|v| (0.0..1.0).contains(v)));
        for pk in &s1.coupling.p {
            let eye = DMatrix::identity(2, 2);
            assert_eq!((pk.transpose() * pk - eye).norm(), 0.0);
        }
    }

    #[test]
    fn rank_larger_than_slice_rejected() {
        let (_, _, data) = positive_feasible(5, &[6, 3], 4, 2);
        let opts = SolveOptions::new(4, Algorithm::AoAdmm);
        assert!(matches!(fit(&data, &opts), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn aoadmm_fixed_point_converges_immediately() {
        let (model, coupling, data) = positive_feasible(6, &[6, 8, 7], 2, 3);
        let state = AdmmState::at_model(&model, coupling).unwrap();
        let opts = SolveOptions::new(2, Algorithm::AoAdmm);
        let (out, rep) = fit_aoadmm(&data, &opts, (model, state)).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 2, "took {} iterations", rep.iterations);
        assert!(rep.final_rel_sse < 1e-10, "rel sse {}", rep.final_rel_sse);
        assert_eq!(rep.loss_trace.len(), rep.iterations + 1);
        assert!(out.check_compatible(&data).is_ok());
    }

    #[test]
    fn aoadmm_recovers_noiseless_data() {
        let (_, _, data) = positive_feasible(10, &[10, 10, 10, 10], 2, 4);
        let mut best = f64::INFINITY;
        for seed in 0..3 {
            let mut opts = SolveOptions::new(2, Algorithm::AoAdmm);
            opts.seed = seed;
            opts.max_outer = 1500;
            let (_, rep) = fit(&data, &opts).unwrap();
            best = best.min(rep.final_rel_sse);
        }
        assert!(best < 1e-6, "best rel sse {}", best);
    }

    #[test]
    fn fits_are_deterministic() {
        let (_, _, data) = positive_feasible(6, &[6, 7], 2, 5);
        let mut opts = SolveOptions::new(2, Algorithm::AoAdmm);
        opts.max_outer = 20;
        opts.seed = 9;
        let (_, r1) = fit(&data, &opts).unwrap();
        let (_, r2) = fit(&data, &opts).unwrap();
        assert_eq!(r1.loss_trace, r2.loss_trace);
        assert_eq!(r1.gap_b_coupling, r2.gap_b_coupling);
    }

    #[test]
    fn traces_match_iteration_count() {
        let (_, _, data) = positive_feasible(6, &[6, 7], 2, 6);
        let mut opts = SolveOptions::new(2, Algorithm::AoAdmm);
        opts.max_outer = 7;
        opts.eps_rel = 1e-300; // force running to max_outer
        opts.eps_abs = 1e-300;
        let (_, rep) = fit(&data, &opts).unwrap();
        assert_eq!(rep.iterations, 7);
        for tr in [&rep.loss_trace, &rep.gap_b_split, &rep.gap_b_coupling, &rep.gap_a, &rep.gap_d] {
            assert_eq!(tr.len(), 8);
        }
    }

    #[test]
    fn als_stays_at_noiseless_truth() {
        let (model, coupling, data) = positive_feasible(6, &[6, 8], 2, 7);
        let state = AdmmState::at_model(&model, coupling).unwrap();
        let mut opts = SolveOptions::new(2, Algorithm::Als);
        opts.max_outer = 5;
        opts.eps_rel = 1e-300;
        opts.eps_abs = 1e-300;
        let (_, rep) = fit_als(&data, &opts, (model, state)).unwrap();
        assert!(rep.loss_trace.iter().all(|&f| f < 1e-10), "{:?}", rep.loss_trace);
    }

    #[test]
    fn als_sse_is_monotone_unconstrained() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = RaggedTensor::new(
            (0..4)
                .map(|_| DMatrix::from_fn(7, 9, |_, _| rng.gen::<f64>()))
                .collect(),
        )
        .unwrap();
        let mut opts = SolveOptions::new(3, Algorithm::Als);
        opts.max_outer = 40;
        opts.eps_rel = 1e-300;
        opts.eps_abs = 1e-300;
        let (_, rep) = fit(&data, &opts).unwrap();
        for w in rep.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0]), "SSE rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn als_rejects_evolving_mode_constraint() {
        let (_, _, data) = positive_feasible(5, &[6, 7], 2, 9);
        let mut opts = SolveOptions::new(2, Algorithm::Als);
        opts.spec_b = ProxSpec::NonNegative;
        assert!(matches!(fit(&data, &opts), Err(Error::UnsupportedConstraint(_))));
    }

    #[test]
    fn flex_hals_rejects_non_nn_constraints() {
        let (_, _, data) = positive_feasible(5, &[6, 7], 2, 10);
        let mut opts = SolveOptions::new(2, Algorithm::FlexHals);
        opts.spec_b = ProxSpec::TotalVariation(0.1);
        assert!(matches!(fit(&data, &opts), Err(Error::UnsupportedConstraint(_))));
    }

    #[test]
    fn flex_hals_fixed_point_and_mu_schedule() {
        let (model, coupling, data) = positive_feasible(6, &[6, 8], 2, 11);
        let state = AdmmState::at_model(&model, coupling).unwrap();
        let mut opts = SolveOptions::new(2, Algorithm::FlexHals);
        opts.spec_a = ProxSpec::NonNegative;
        opts.spec_b = ProxSpec::NonNegative;
        opts.spec_c = ProxSpec::NonNegative;
        opts.max_outer = 50;
        let (_, rep) = fit_flex_hals(&data, &opts, (model, state)).unwrap();
        assert!(rep.final_rel_sse * rep.loss_trace[0].max(1.0) < 1e-9 || rep.final_loss < 1e-9);
        let n = rep.gap_b_coupling.len();
        assert!(rep.gap_b_coupling[n - 1] < 1e-6);
        // schedule: strictly increasing until frozen, then constant
        let mut frozen = false;
        for w in rep.mu_trace.windows(2) {
            if w[1] > w[0] {
                assert!(!frozen, "mu grew after freezing");
            } else {
                assert_eq!(w[1], w[0]);
                frozen = true;
            }
        }
    }

    #[test]
    fn multi_init_single_run_is_identity() {
        let (_, _, data) = positive_feasible(6, &[6, 7], 2, 12);
        let mut opts = SolveOptions::new(2, Algorithm::AoAdmm);
        opts.max_outer = 10;
        opts.seed = 3;
        let single = fit(&data, &opts).unwrap();
        let multi = multi_init_fit(&data, &opts, 1).unwrap();
        assert_eq!(multi.selected, 0);
        assert_eq!(multi.runs.len(), 1);
        assert!(multi.runs[0].selected);
        let rep = multi.runs[0].report.as_ref().unwrap();
        assert_eq!(rep.loss_trace, single.1.loss_trace);
    }

    #[test]
    fn multi_init_prefers_converged_runs_then_loss() {
        let (_, _, data) = positive_feasible(6, &[6, 7], 2, 13);
        let mut opts = SolveOptions::new(2, Algorithm::AoAdmm);
        opts.max_outer = 1; // no run converges: fall back to lowest loss
        opts.eps_rel = 1e-300;
        opts.eps_abs = 1e-300;
        let multi = multi_init_fit(&data, &opts, 4).unwrap();
        let losses: Vec<f64> = multi
            .runs
            .iter()
            .map(|r| r.report.as_ref().unwrap().final_loss)
            .collect();
        let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(losses[multi.selected], min);
    }
}
