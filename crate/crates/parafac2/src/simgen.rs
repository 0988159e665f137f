//! Seeded generators for the simulation studies: shifting non-negative
//! components, non-negative factors with a shared cross-product, unimodal
//! Gaussian profiles, smooth polynomial components, piecewise-constant
//! components, and the noise-injection protocol.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{reconstruct, Parafac2Model, RaggedTensor};

/// Which simulation family to generate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Setup {
    /// Cyclically shifted non-negative evolving components.
    Shift,
    /// Non-negative B_k sharing a common cross-product, found by projected
    /// gradient descent. `mix_c` blends strength column 1 into the others to
    /// raise collinearity.
    NnCrossProduct { mix_c: bool },
    /// Gaussian-bump unimodal components drifting one grid index per slice.
    /// `pf2_exact` freezes the per-slice width noise so the constant
    /// cross-product constraint holds up to discretization.
    UnimodalGauss { pf2_exact: bool },
    /// Smooth components spanned by an orthonormalized cubic basis.
    SmoothPoly,
    /// Piecewise-constant components with at most four jumps, ragged widths.
    PiecewiseTv,
    /// Shifted components at the dimensions used for the SNR study.
    CwsnrShift,
    /// Disjoint-support non-negative couplings with Dirichlet-sized blocks.
    Sm1,
}

/// Full description of one simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    pub setup: Setup,
    pub i: usize,
    /// Evolving-mode size range; `j_min == j_max` for non-ragged setups.
    pub j_min: usize,
    pub j_max: usize,
    pub k: usize,
    pub rank: usize,
    pub eta: f64,
    pub seed: u64,
}

impl SimSpec {
    /// Paper-default dimensions and noise level for each setup.
    pub fn defaults(setup: Setup, seed: u64) -> Self {
        let (i, j_min, j_max, k, rank, eta) = match setup {
            Setup::Shift => (30, 40, 40, 50, 3, 0.33),
            Setup::NnCrossProduct { .. } => (50, 50, 100, 15, 3, 0.5),
            Setup::UnimodalGauss { .. } => (10, 50, 50, 15, 5, 0.33),
            Setup::SmoothPoly => (30, 200, 200, 30, 3, 0.5),
            Setup::PiecewiseTv => (30, 200, 250, 30, 3, 0.5),
            Setup::CwsnrShift => (30, 40, 40, 100, 5, 0.33),
            Setup::Sm1 => (30, 100, 100, 70, 5, 0.33),
        };
        Self { setup, i, j_min, j_max, k, rank, eta, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.i == 0 || self.j_min == 0 || self.k == 0 || self.rank == 0 {
            return Err(Error::InvalidArgument("all dimensions must be positive".into()));
        }
        if self.j_min > self.j_max {
            return Err(Error::InvalidArgument("j_min must not exceed j_max".into()));
        }
        if self.eta < 0.0 || !self.eta.is_finite() {
            return Err(Error::InvalidArgument("noise level must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Generates the ground truth and the clean and noisy tensors.
    pub fn generate(&self) -> Result<SimInstance> {
        self.validate()?;
        let truth = match self.setup {
            Setup::Shift | Setup::CwsnrShift => {
                gen_shift(self.i, self.j_min, self.k, self.rank, self.seed)
            }
            Setup::NnCrossProduct { mix_c } => gen_nn_crossproduct(
                self.i,
                (self.j_min, self.j_max),
                self.k,
                self.rank,
                mix_c,
                self.seed,
            )?,
            Setup::UnimodalGauss { pf2_exact } => {
                gen_unimodal(self.i, self.j_min, self.k, self.rank, pf2_exact, self.seed)
            }
            Setup::SmoothPoly => gen_smooth_poly(self.i, self.j_min, self.k, self.rank, self.seed),
            Setup::PiecewiseTv => gen_piecewise_tv(
                self.i,
                (self.j_min, self.j_max),
                self.k,
                self.rank,
                self.seed,
            ),
            Setup::Sm1 => gen_sm1(self.i, self.j_min, self.k, self.rank, self.seed).0,
        };
        let clean = reconstruct(&truth);
        // offset the noise stream from the factor stream
        let noisy = add_noise(&clean, self.eta, self.seed.wrapping_add(0x9e3779b97f4a7c15))?;
        Ok(SimInstance { truth, clean, noisy })
    }
}

/// One generated dataset: ground truth plus clean and noisy observations.
#[derive(Debug, Clone)]
pub struct SimInstance {
    pub truth: Parafac2Model,
    pub clean: RaggedTensor,
    pub noisy: RaggedTensor,
}

fn truncated_normal(rng: &mut ChaCha8Rng, nr: usize, nc: usize) -> DMatrix<f64> {
    DMatrix::from_fn(nr, nc, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v.max(0.0)
    })
}

fn strengths(rng: &mut ChaCha8Rng, k: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, r, |_, _| rng.gen_range(0.1..1.1))
}

/// Adds Gaussian noise drawn jointly over all slices, rescaled so the added
/// perturbation has Frobenius norm exactly `eta` times the data norm.
pub fn add_noise(x: &RaggedTensor, eta: f64, seed: u64) -> Result<RaggedTensor> {
    if eta < 0.0 {
        return Err(Error::InvalidArgument("noise level must be >= 0".into()));
    }
    if eta == 0.0 {
        return Ok(x.clone());
    }
    let x_norm = x.norm();
    if x_norm == 0.0 {
        return Err(Error::InvalidArgument(
            "cannot add relative noise to an all-zero tensor".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: Vec<DMatrix<f64>> = (0..x.nslices())
        .map(|k| {
            DMatrix::from_fn(x.nrows(), x.slice(k).ncols(), |_, _| StandardNormal.sample(&mut rng))
        })
        .collect();
    let e_norm = e.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
    let scale = eta * x_norm / e_norm;
    RaggedTensor::new(
        (0..x.nslices())
            .map(|k| x.slice(k) + &e[k] * scale)
            .collect(),
    )
}

/// Cyclically shifted non-negative components: [B_k]_{j,r} = B~_{(j+k) mod J, r}.
/// Shifting permutes rows, so every Gram equals B~' B~ exactly.
pub fn gen_shift(i: usize, j: usize, k: usize, r: usize, seed: u64) -> Parafac2Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = truncated_normal(&mut rng, i, r);
    let btilde = truncated_normal(&mut rng, j, r);
    let b: Vec<DMatrix<f64>> = (0..k)
        .map(|kk| DMatrix::from_fn(j, r, |row, col| btilde[((row + kk) % j, col)]))
        .collect();
    let c = strengths(&mut rng, k, r);
    Parafac2Model::new(a, b, c).expect("consistent shapes by construction")
}

/// Fits one non-negative matrix to a Gram target by projected gradient
/// descent: min ||B'B - G||^2 over B >= 0. Returns the final loss.
fn pgd_to_gram(
    rng: &mut ChaCha8Rng,
    j: usize,
    r: usize,
    gram: &DMatrix<f64>,
    step: f64,
) -> (DMatrix<f64>, f64) {
    let mut b = DMatrix::from_fn(j, r, |_, _| StandardNormal.sample(rng));
    b.apply(|v: &mut f64| *v = v.max(0.0));
    let mut loss = f64::INFINITY;
    for _ in 0..10_000 {
        let resid = b.transpose() * &b - gram;
        loss = resid.norm_squared();
        if loss < 1e-12 {
            break;
        }
        let grad = &b * resid * 4.0;
        b -= grad * step;
        b.apply(|v: &mut f64| *v = v.max(0.0));
    }
    (b, loss)
}

/// Non-negative B_k all sharing the cross-product of a 100 x R truncated
/// normal matrix, found per slice by projected gradient descent with a
/// step-shrink / re-initialize / re-draw ladder. Ragged widths uniform in
/// `j_range`.
pub fn gen_nn_crossproduct(
    i: usize,
    j_range: (usize, usize),
    k: usize,
    r: usize,
    mix_c: bool,
    seed: u64,
) -> Result<Parafac2Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = truncated_normal(&mut rng, i, r);
    let js: Vec<usize> = (0..k).map(|_| rng.gen_range(j_range.0..=j_range.1)).collect();

    let mut b: Option<Vec<DMatrix<f64>>> = None;
    'redraw: for _ in 0..5 {
        let x = truncated_normal(&mut rng, 100, r);
        let gram = x.transpose() * &x;
        let base_step = 1.0 / (8.0 * gram.norm());
        let mut slices = Vec::with_capacity(k);
        for &j in &js {
            let mut found = None;
            for attempt in 0..10 {
                let step = base_step / 10f64.powi(attempt);
                let (cand, loss) = pgd_to_gram(&mut rng, j, r, &gram, step);
                if loss < 1e-12 {
                    found = Some(cand);
                    break;
                }
            }
            match found {
                Some(cand) => slices.push(cand),
                None => continue 'redraw,
            }
        }
        b = Some(slices);
        break;
    }
    let b = b.ok_or_else(|| {
        Error::Generation("projected gradient descent failed to reach the Gram target".into())
    })?;

    let mut c = strengths(&mut rng, k, r);
    if mix_c {
        for kk in 0..k {
            let first = c[(kk, 0)];
            for col in 0..r {
                c[(kk, col)] = 0.5 * first + 0.5 * c[(kk, col)];
            }
        }
    }
    Parafac2Model::new(a, b, c)
}

/// Gaussian-pdf unimodal components on a 50-point grid over [-10, 10], each
/// drifting by 0.41 (about one grid index) per slice. With `pf2_exact` the
/// widths are constant across slices so the cross-products stay (nearly)
/// constant.
pub fn gen_unimodal(
    i: usize,
    j: usize,
    k: usize,
    r: usize,
    pf2_exact: bool,
    seed: u64,
) -> Parafac2Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = truncated_normal(&mut rng, i, r);
    let mus: Vec<f64> = (0..r).map(|_| rng.gen_range(-7.0..0.0)).collect();
    let sigmas: Vec<f64> = (0..r).map(|_| rng.gen_range(0.5..1.0)).collect();
    let grid: Vec<f64> = (0..j)
        .map(|idx| -10.0 + 20.0 * idx as f64 / (j as f64 - 1.0))
        .collect();
    let b: Vec<DMatrix<f64>> = (0..k)
        .map(|kk| {
            // one width perturbation per slice and component
            let sigma_k: Vec<f64> = (0..r)
                .map(|col| {
                    if pf2_exact {
                        sigmas[col]
                    } else {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        (sigmas[col] + 0.1 * n).max(0.1)
                    }
                })
                .collect();
            DMatrix::from_fn(j, r, |row, col| {
                let mu = mus[col] + 0.41 * kk as f64;
                let z = (grid[row] - mu) / sigma_k[col];
                (-0.5 * z * z).exp() / (sigma_k[col] * (2.0 * std::f64::consts::PI).sqrt())
            })
        })
        .collect();
    let c = strengths(&mut rng, k, r);
    Parafac2Model::new(a, b, c).expect("consistent shapes by construction")
}

/// Orthonormal basis of the cubic polynomials sampled on `j` points over
/// [-1, 1], obtained from the SVD of the Vandermonde matrix.
fn cubic_basis(j: usize) -> DMatrix<f64> {
    let v = DMatrix::from_fn(j, 4, |row, col| {
        let t = -1.0 + 2.0 * row as f64 / (j as f64 - 1.0);
        t.powi(col as i32)
    });
    let svd = v.svd(true, false);
    svd.u.expect("SVD with U requested")
}

/// Smooth components: B_k = M P_k DeltaB with M an orthonormalized cubic
/// basis, P_k random 4x4 orthogonal, DeltaB standard normal.
pub fn gen_smooth_poly(i: usize, j: usize, k: usize, r: usize, seed: u64) -> Parafac2Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = truncated_normal(&mut rng, i, r);
    let m = cubic_basis(j);
    let delta = DMatrix::from_fn(4, r, |_, _| StandardNormal.sample(&mut rng));
    let b: Vec<DMatrix<f64>> = (0..k)
        .map(|_| {
            let s = DMatrix::from_fn(4, 4, |_, _| StandardNormal.sample(&mut rng));
            let qr = s.qr();
            let p = qr.q();
            &m * (p * &delta)
        })
        .collect();
    let c = strengths(&mut rng, k, r);
    Parafac2Model::new(a, b, c).expect("consistent shapes by construction")
}

/// Piecewise-constant components: B_k = Q_k Omega with Q_k the normalized
/// indicators of four contiguous blocks of 1..J_k and Omega holding two
/// standard-normal entries per column. Each column has at most four jumps.
pub fn gen_piecewise_tv(
    i: usize,
    j_range: (usize, usize),
    k: usize,
    r: usize,
    seed: u64,
) -> Parafac2Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = truncated_normal(&mut rng, i, r);
    let mut omega = DMatrix::zeros(4, r);
    for col in 0..r {
        let r1 = rng.gen_range(0..4usize);
        let mut r2 = rng.gen_range(0..3usize);
        if r2 >= r1 {
            r2 += 1;
        }
        omega[(r1, col)] = StandardNormal.sample(&mut rng);
        omega[(r2, col)] = StandardNormal.sample(&mut rng);
    }
    let b: Vec<DMatrix<f64>> = (0..k)
        .map(|_| {
            let j = rng.gen_range(j_range.0..=j_range.1);
            // three interior cuts defining four non-empty contiguous blocks
            let mut cuts = [0usize; 3];
            loop {
                for c in cuts.iter_mut() {
                    *c = rng.gen_range(1..j);
                }
                cuts.sort_unstable();
                if cuts[0] != cuts[1] && cuts[1] != cuts[2] {
                    break;
                }
            }
            let bounds = [0, cuts[0], cuts[1], cuts[2], j];
            let mut q = DMatrix::zeros(j, 4);
            for blk in 0..4 {
                let (s, e) = (bounds[blk], bounds[blk + 1]);
                let w = 1.0 / ((e - s) as f64).sqrt();
                for row in s..e {
                    q[(row, blk)] = w;
                }
            }
            q * &omega
        })
        .collect();
    let c = strengths(&mut rng, k, r);
    Parafac2Model::new(a, b, c).expect("consistent shapes by construction")
}

/// Disjoint-support couplings: indices 1..J are split into R contiguous
/// blocks with Dirichlet(1)-distributed sizes; the nonzeros of each coupling
/// column and of DeltaB are uniform in (0, 1). Returns the raw (orthogonal,
/// unnormalized) support matrices alongside the model.
pub fn gen_sm1(
    i: usize,
    j: usize,
    k: usize,
    r: usize,
    seed: u64,
) -> (Parafac2Model, Vec<DMatrix<f64>>) {
    assert!(j >= r, "need at least one index per component block");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = truncated_normal(&mut rng, i, r);
    let delta = DMatrix::from_fn(r, r, |_, _| rng.gen::<f64>());
    let dir = Dirichlet::new(&vec![1.0; r]).expect("valid concentration parameters");
    let mut ps = Vec::with_capacity(k);
    let b: Vec<DMatrix<f64>> = (0..k)
        .map(|_| {
            // block sizes: Dirichlet weights scaled by J, rounded, each >= 1
            let sizes = loop {
                let w = dir.sample(&mut rng);
                let mut sizes: Vec<usize> =
                    w.iter().map(|&v| (v * j as f64).round() as usize).collect();
                let total: usize = sizes.iter().sum();
                if total >= j {
                    let mut excess = total - j;
                    for s in sizes.iter_mut() {
                        let cut = excess.min(s.saturating_sub(1));
                        *s -= cut;
                        excess -= cut;
                    }
                    if excess > 0 {
                        continue;
                    }
                } else {
                    sizes[r - 1] += j - total;
                }
                if sizes.iter().all(|&s| s >= 1) {
                    break sizes;
                }
            };
            let mut p = DMatrix::zeros(j, r);
            let mut at = 0;
            for (col, &len) in sizes.iter().enumerate() {
                for row in at..at + len {
                    p[(row, col)] = rng.gen::<f64>();
                }
                at += len;
            }
            // unit-normalize the disjoint supports so every slice shares the
            // same Gram DeltaB' DeltaB
            for col in 0..r {
                let n = p.column(col).norm();
                p.column_mut(col).apply(|v: &mut f64| *v /= n);
            }
            let bk = &p * &delta;
            ps.push(p);
            bk
        })
        .collect();
    let c = strengths(&mut rng, k, r);
    (Parafac2Model::new(a, b, c).expect("consistent shapes by construction"), ps)
}

/// Largest Frobenius deviation of any slice's Gram from the first slice's.
pub fn gram_spread(b: &[DMatrix<f64>]) -> f64 {
    let g0 = b[0].transpose() * &b[0];
    b.iter()
        .skip(1)
        .map(|bk| (bk.transpose() * bk - &g0).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relative_sse;

    #[test]
    fn noise_preserves_exact_ratio() {
        let m = gen_shift(6, 8, 4, 2, 1);
        let x = reconstruct(&m);
        assert_eq!(add_noise(&x, 0.0, 5).unwrap().slice(0), x.slice(0));
        for eta in [0.1, 0.33, 2.5] {
            let noisy = add_noise(&x, eta, 5).unwrap();
            let diff: f64 = (0..x.nslices())
                .map(|k| (noisy.slice(k) - x.slice(k)).norm_squared())
                .sum::<f64>()
                .sqrt();
            assert!((diff / x.norm() - eta).abs() < 1e-12);
        }
        let zero = RaggedTensor::new(vec![DMatrix::zeros(3, 3)]).unwrap();
        assert!(add_noise(&zero, 0.5, 0).is_err());
    }

    #[test]
    fn truth_rel_sse_on_noisy_data_near_prediction() {
        let m = gen_shift(30, 40, 50, 3, 2);
        let x = reconstruct(&m);
        let eta = 0.33;
        let noisy = add_noise(&x, eta, 7).unwrap();
        let rel = relative_sse(&m, &noisy).unwrap();
        let predicted = eta * eta / (1.0 + eta * eta);
        assert!(
            (rel - predicted).abs() < 0.2 * predicted,
            "rel {} predicted {}",
            rel,
            predicted
        );
    }

    #[test]
    fn shift_slices_are_cyclic_and_gram_constant() {
        let m = gen_shift(5, 9, 6, 3, 3);
        // slice 0 is the unshifted template; slice 1 is it rotated by one
        for row in 0..9 {
            for col in 0..3 {
                assert_eq!(m.b[1][(row, col)], m.b[0][((row + 1) % 9, col)]);
            }
        }
        assert!(gram_spread(&m.b) < 1e-12);
        assert!(m.a.iter().all(|&v| v >= 0.0));
        assert!(m.c.iter().all(|&v| (0.1..1.1).contains(&v)));
    }

    #[test]
    fn nn_crossproduct_hits_shared_gram() {
        let m = gen_nn_crossproduct(6, (20, 30), 4, 3, false, 4).unwrap();
        assert!(m.b.iter().all(|bk| bk.iter().all(|&v| v >= 0.0)));
        assert!(gram_spread(&m.b) < 1e-5, "spread {}", gram_spread(&m.b));
        // each slice's own Gram deviates from the common target by <= 1e-6
        let g0 = m.b[0].transpose() * &m.b[0];
        for bk in &m.b {
            assert!((bk.transpose() * bk - &g0).norm() < 1e-5);
        }
    }

    #[test]
    fn nn_crossproduct_mixing_raises_strength_collinearity() {
        let plain = gen_nn_crossproduct(6, (20, 25), 4, 3, false, 5).unwrap();
        let mixed = gen_nn_crossproduct(6, (20, 25), 4, 3, true, 5).unwrap();
        let cos = |c: &DMatrix<f64>, p: usize, q: usize| {
            c.column(p).normalize().dot(&c.column(q).normalize())
        };
        assert!(cos(&mixed.c, 0, 1) > cos(&plain.c, 0, 1));
        assert!(cos(&mixed.c, 0, 2) > cos(&plain.c, 0, 2));
    }

    fn is_unimodal(col: &[f64]) -> bool {
        let peak = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        col.windows(2).enumerate().all(|(i, w)| {
            if i < peak {
                w[1] >= w[0] - 1e-14
            } else {
                w[1] <= w[0] + 1e-14
            }
        })
    }

    #[test]
    fn unimodal_columns_are_nonneg_and_unimodal() {
        let m = gen_unimodal(10, 50, 15, 5, false, 6);
        for bk in &m.b {
            for col in 0..5 {
                let v: Vec<f64> = bk.column(col).iter().copied().collect();
                assert!(v.iter().all(|&x| x >= 0.0));
                assert!(is_unimodal(&v));
            }
        }
        // grid spacing is close to the 0.41 per-slice drift (one index)
        assert!((20.0 / 49.0 - 0.41f64).abs() < 0.01);
    }

    #[test]
    fn unimodal_exact_variant_nearly_constant_grams() {
        let exact = gen_unimodal(10, 50, 15, 5, true, 7);
        assert!(gram_spread(&exact.b) < 1e-3, "spread {}", gram_spread(&exact.b));
    }

    #[test]
    fn smooth_poly_components_are_cubic_with_constant_grams() {
        let m = gen_smooth_poly(8, 60, 5, 3, 8);
        assert!(gram_spread(&m.b) < 1e-12);
        let basis = cubic_basis(60);
        assert!((basis.transpose() * &basis - DMatrix::identity(4, 4)).norm() < 1e-12);
        // every column lies in the cubic span: projecting onto the basis
        // reproduces it
        for bk in &m.b {
            let proj = &basis * (basis.transpose() * bk);
            assert!((proj - bk).norm() < 1e-10);
        }
    }

    #[test]
    fn piecewise_tv_columns_have_few_jumps() {
        let m = gen_piecewise_tv(6, (40, 60), 8, 3, 9);
        assert!(gram_spread(&m.b) < 1e-12);
        for bk in &m.b {
            assert!((40..=60).contains(&bk.nrows()));
            for col in 0..3 {
                let v: Vec<f64> = bk.column(col).iter().copied().collect();
                let jumps = v.windows(2).filter(|w| (w[1] - w[0]).abs() > 1e-12).count();
                assert!(jumps <= 4, "column has {} jumps", jumps);
            }
        }
    }

    #[test]
    fn sm1_supports_are_disjoint() {
        let (m, ps) = gen_sm1(6, 20, 5, 4, 10);
        assert!(gram_spread(&m.b) < 1e-10);
        for p in &ps {
            for row in 0..p.nrows() {
                let nonzero = (0..p.ncols()).filter(|&c| p[(row, c)] != 0.0).count();
                assert!(nonzero <= 1, "row {} in multiple supports", row);
            }
            // disjoint supports make the columns mutually orthogonal
            let g = p.transpose() * p;
            for a in 0..p.ncols() {
                for b in 0..p.ncols() {
                    if a != b {
                        assert_eq!(g[(a, b)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for setup in [
            Setup::Shift,
            Setup::UnimodalGauss { pf2_exact: false },
            Setup::PiecewiseTv,
        ] {
            let mut spec = SimSpec::defaults(setup, 11);
            spec.i = 6;
            spec.j_min = 12;
            spec.j_max = 14.max(spec.j_min);
            spec.k = 4;
            spec.rank = 2;
            let x = spec.generate().unwrap();
            let y = spec.generate().unwrap();
            for k in 0..x.noisy.nslices() {
                assert_eq!(x.noisy.slice(k), y.noisy.slice(k));
                assert_eq!(x.clean.slice(k), y.clean.slice(k));
            }
            assert_eq!(x.truth.a, y.truth.a);
        }
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let mut spec = SimSpec::defaults(Setup::Shift, 0);
        spec.eta = -0.1;
        assert!(spec.generate().is_err());
        let mut spec = SimSpec::defaults(Setup::Shift, 0);
        spec.j_min = 10;
        spec.j_max = 5;
        assert!(spec.generate().is_err());
    }
}
