//! Recovery metrics: factor match score with optimal component matching,
//! per-slice cosine similarity, column-wise SNR, degeneracy detection via the
//! triple cosine, and a numerical check of the ridge/penalty scale
//! equivalence.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Parafac2Model, RaggedTensor};

/// Solutions with a triple cosine below this are considered degenerate.
pub const DEGENERACY_THRESHOLD: f64 = -0.85;

/// Outcome of matching estimated components against ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchResult {
    /// Mean per-component score over the matched subset.
    pub fms: f64,
    /// Matched (truth component, estimated component) index pairs;
    /// min(R, R_hat) entries, each index used at most once.
    pub pairs: Vec<(usize, usize)>,
    /// Score of each matched pair, in `pairs` order.
    pub per_component: Vec<f64>,
}

/// Which factor mode a single-mode score should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMode {
    Subject,
    Evolving,
    Strength,
}

fn normalized_or_zero(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n == 0.0 {
        log::warn!("zero-norm component vector in match score; scoring it 0");
        v
    } else {
        v / n
    }
}

/// Stacks each component's evolving-mode vectors across slices into one long
/// vector, so the score treats {B_k} as a single mode.
fn concat_b_column(model: &Parafac2Model, r: usize) -> DVector<f64> {
    let total: usize = model.b.iter().map(|bk| bk.nrows()).sum();
    let mut out = DVector::zeros(total);
    let mut at = 0;
    for bk in &model.b {
        out.rows_mut(at, bk.nrows()).copy_from(&bk.column(r));
        at += bk.nrows();
    }
    out
}

fn mode_vectors(model: &Parafac2Model, mode: FactorMode) -> Vec<DVector<f64>> {
    let r = model.rank();
    (0..r)
        .map(|j| {
            let v = match mode {
                FactorMode::Subject => model.a.column(j).into_owned(),
                FactorMode::Evolving => concat_b_column(model, j),
                FactorMode::Strength => model.c.column(j).into_owned(),
            };
            normalized_or_zero(v)
        })
        .collect()
}

/// Exact maximum-weight assignment of all rows (the smaller side) to distinct
/// columns, by dynamic programming over column subsets. Returns (row, col)
/// pairs. Exact for the sizes used here (component counts).
fn best_assignment(score: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (nr, nc) = (score.nrows(), score.ncols());
    let transposed = nr > nc;
    let s = if transposed { score.transpose() } else { score.clone() };
    let (r, c) = (s.nrows(), s.ncols());
    assert!(c <= 22, "assignment DP limited to 22 columns");
    // dp[mask]: best total matching rows 0..popcount(mask) to columns in mask
    let full = 1usize << c;
    let mut dp = vec![f64::NEG_INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    dp[0] = 0.0;
    for mask in 1..full {
        let row = (mask as u32).count_ones() as usize - 1;
        if row >= r {
            continue;
        }
        for col in 0..c {
            let bit = 1usize << col;
            if mask & bit == 0 {
                continue;
            }
            let prev = dp[mask ^ bit];
            if prev == f64::NEG_INFINITY {
                continue;
            }
            let cand = prev + s[(row, col)];
            if cand > dp[mask] {
                dp[mask] = cand;
                choice[mask] = col;
            }
        }
    }
    let mut best_mask = 0;
    let mut best = f64::NEG_INFINITY;
    for mask in 0..full {
        if (mask as u32).count_ones() as usize == r && dp[mask] > best {
            best = dp[mask];
            best_mask = mask;
        }
    }
    let mut pairs = Vec::with_capacity(r);
    let mut mask = best_mask;
    while mask != 0 {
        let row = (mask as u32).count_ones() as usize - 1;
        let col = choice[mask];
        pairs.push(if transposed { (col, row) } else { (row, col) });
        mask ^= 1 << col;
    }
    pairs.reverse();
    pairs
}

fn score_matrix(truth: &Parafac2Model, est: &Parafac2Model, modes: &[FactorMode]) -> DMatrix<f64> {
    let mut score = DMatrix::from_element(truth.rank(), est.rank(), 1.0);
    for &mode in modes {
        let tv = mode_vectors(truth, mode);
        let ev = mode_vectors(est, mode);
        for r in 0..truth.rank() {
            for s in 0..est.rank() {
                score[(r, s)] *= tv[r].dot(&ev[s]);
            }
        }
    }
    score.apply(|v| *v = v.abs());
    score
}

fn match_from_scores(score: &DMatrix<f64>) -> MatchResult {
    let pairs = best_assignment(score);
    let per_component: Vec<f64> = pairs.iter().map(|&(r, s)| score[(r, s)]).collect();
    let fms = if per_component.is_empty() {
        0.0
    } else {
        per_component.iter().sum::<f64>() / per_component.len() as f64
    };
    MatchResult { fms, pairs, per_component }
}

/// Factor match score over all three modes: mean absolute triple product of
/// normalized component vectors under the best matching of min(R, R_hat)
/// components. The evolving mode concatenates B_k columns across slices.
pub fn fms(truth: &Parafac2Model, est: &Parafac2Model) -> Result<MatchResult> {
    check_mode_compat(truth, est)?;
    let score = score_matrix(
        truth,
        est,
        &[FactorMode::Subject, FactorMode::Evolving, FactorMode::Strength],
    );
    Ok(match_from_scores(&score))
}

/// Single-mode match score. By default components are paired by the joint
/// three-mode matching; `reoptimize` re-solves the assignment on this mode's
/// scores alone.
pub fn fms_single_mode(
    truth: &Parafac2Model,
    est: &Parafac2Model,
    mode: FactorMode,
    reoptimize: bool,
) -> Result<MatchResult> {
    check_mode_compat(truth, est)?;
    let score = score_matrix(truth, est, &[mode]);
    if reoptimize {
        return Ok(match_from_scores(&score));
    }
    let joint = fms(truth, est)?;
    let per_component: Vec<f64> = joint.pairs.iter().map(|&(r, s)| score[(r, s)]).collect();
    let fms = if per_component.is_empty() {
        0.0
    } else {
        per_component.iter().sum::<f64>() / per_component.len() as f64
    };
    Ok(MatchResult { fms, pairs: joint.pairs, per_component })
}

fn check_mode_compat(truth: &Parafac2Model, est: &Parafac2Model) -> Result<()> {
    if truth.a.nrows() != est.a.nrows()
        || truth.c.nrows() != est.c.nrows()
        || truth.b.len() != est.b.len()
        || truth
            .b
            .iter()
            .zip(&est.b)
            .any(|(t, e)| t.nrows() != e.nrows())
    {
        return Err(Error::InvalidArgument(
            "models have incompatible shapes for matching".into(),
        ));
    }
    Ok(())
}

/// Rescales a copy of the model so A and every B_k have unit-norm columns,
/// absorbing the norms into the per-slice strengths.
pub fn normalize_into_strengths(model: &Parafac2Model) -> Parafac2Model {
    let mut out = model.clone();
    let r = out.rank();
    for j in 0..r {
        let na = out.a.column(j).norm();
        if na > 0.0 {
            out.a.column_mut(j).apply(|v| *v /= na);
        }
        for k in 0..out.b.len() {
            let nb = out.b[k].column(j).norm();
            if nb > 0.0 {
                out.b[k].column_mut(j).apply(|v| *v /= nb);
            }
            out.c[(k, j)] *= na * nb;
        }
    }
    out
}

/// Column-wise SNR in dB: squared per-slice strength over squared noise
/// slice norm, after pushing all column norms into the strengths. A noiseless
/// slice yields +inf for its row.
pub fn cwsnr(truth: &Parafac2Model, noise: &RaggedTensor) -> Result<DMatrix<f64>> {
    truth.check_compatible(noise)?;
    let scaled = normalize_into_strengths(truth);
    let (k_n, r) = (scaled.c.nrows(), scaled.rank());
    let mut out = DMatrix::zeros(k_n, r);
    for k in 0..k_n {
        let e2 = noise.slice(k).norm_squared();
        for j in 0..r {
            let d2 = scaled.c[(k, j)] * scaled.c[(k, j)];
            out[(k, j)] = if e2 == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (d2 / e2).log10()
            };
        }
    }
    Ok(out)
}

/// Per-slice, per-component cosine between matched normalized evolving-mode
/// columns. Row k, column i holds the cosine for the i-th matched pair.
pub fn cosine_sim_b(
    truth: &Parafac2Model,
    est: &Parafac2Model,
    pairs: &[(usize, usize)],
) -> Result<DMatrix<f64>> {
    check_mode_compat(truth, est)?;
    let k_n = truth.b.len();
    let mut out = DMatrix::zeros(k_n, pairs.len());
    for k in 0..k_n {
        for (i, &(r, s)) in pairs.iter().enumerate() {
            let t = normalized_or_zero(truth.b[k].column(r).into_owned());
            let e = normalized_or_zero(est.b[k].column(s).into_owned());
            out[(k, i)] = t.dot(&e);
        }
    }
    Ok(out)
}

/// Minimum pairwise normalized triple product across distinct components,
/// using the first two slices' evolving factors. Values below
/// [`DEGENERACY_THRESHOLD`] flag a degenerate solution. `average_slices`
/// replaces the two-slice product with the mean of within-slice products
/// over all k (extension, off by default).
pub fn triple_cosine(model: &Parafac2Model, average_slices: bool) -> Result<(f64, bool)> {
    let r = model.rank();
    if r == 1 {
        return Ok((1.0, false));
    }
    if model.b.len() < 2 {
        return Err(Error::InvalidArgument(
            "triple cosine needs at least two slices".into(),
        ));
    }
    if !average_slices && model.b[0].nrows() != model.b[1].nrows() {
        return Err(Error::InvalidArgument(
            "two-slice triple cosine needs slices 1 and 2 of equal width; \
             use the slice-averaged variant for ragged data"
                .into(),
        ));
    }
    let a = mode_vectors(model, FactorMode::Subject);
    let c = mode_vectors(model, FactorMode::Strength);
    let bcols = |k: usize| -> Vec<DVector<f64>> {
        (0..r)
            .map(|j| normalized_or_zero(model.b[k].column(j).into_owned()))
            .collect()
    };
    let b_all: Vec<Vec<DVector<f64>>> = (0..model.b.len()).map(bcols).collect();
    let mut tc = f64::INFINITY;
    for p in 0..r {
        for q in 0..r {
            if p == q {
                continue;
            }
            let b_term = if average_slices {
                b_all
                    .iter()
                    .map(|bk| bk[p].dot(&bk[q]))
                    .sum::<f64>()
                    / b_all.len() as f64
            } else {
                b_all[0][p].dot(&b_all[1][q])
            };
            tc = tc.min(a[p].dot(&a[q]) * b_term * c[p].dot(&c[q]));
        }
    }
    Ok((tc, tc < DEGENERACY_THRESHOLD))
}

/// A concrete instance of the scale-equivalence setting: a coupling term
/// invariant under (u, v) -> (a u, a^-2 v) plus two absolutely homogeneous
/// penalties of known degree.
pub struct ScaleEquivalenceInstance {
    pub f: Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Sync>,
    pub r_u: Box<dyn Fn(&DVector<f64>) -> f64 + Sync>,
    pub r_v: Box<dyn Fn(&DVector<f64>) -> f64 + Sync>,
    pub d_u: f64,
    pub d_v: f64,
    pub dim_u: usize,
    pub dim_v: usize,
}

impl ScaleEquivalenceInstance {
    /// Ridge penalty on u, graph-Laplacian quadratic on v (path graph), with
    /// a scale-compatible coupling ||u||^2 ||v|| + ||u||^4 ||v||^2.
    pub fn ridge_laplacian(dim_u: usize, dim_v: usize) -> Self {
        Self {
            f: Box::new(|u, v| {
                let (nu2, nv) = (u.norm_squared(), v.norm());
                nu2 * nv + nu2 * nu2 * nv * nv
            }),
            r_u: Box::new(|u| u.norm_squared()),
            r_v: Box::new(|v| {
                (1..v.len())
                    .map(|i| (v[i] - v[i - 1]) * (v[i] - v[i - 1]))
                    .sum()
            }),
            d_u: 2.0,
            d_v: 2.0,
            dim_u,
            dim_v,
        }
    }
}

/// Result of probing the penalty-rescaling identity at random points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleEquivalenceReport {
    pub a: f64,
    /// Exponent of the transferred penalty weight: 2 d_v / d_u.
    pub exponent: f64,
    /// Largest |F1(u, v) - F2(u~, v~)| over the sampled points.
    pub max_abs_gap: f64,
    pub points: usize,
    pub passed: bool,
}

/// Checks that weighting the u-penalty by `a` equals weighting the v-penalty
/// by a^(2 d_v / d_u) under the change of variables u = a^(-1/d_u) u~,
/// v = a^(2/d_u) v~, at `points` random points.
pub fn scale_equivalence_check(
    inst: &ScaleEquivalenceInstance,
    a: f64,
    points: usize,
    seed: u64,
    tol: f64,
) -> Result<ScaleEquivalenceReport> {
    if a <= 0.0 {
        return Err(Error::InvalidArgument("scale factor must be positive".into()));
    }
    let exponent = 2.0 * inst.d_v / inst.d_u;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_abs_gap = 0.0f64;
    for _ in 0..points {
        let ut = DVector::from_fn(inst.dim_u, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let vt = DVector::from_fn(inst.dim_v, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let u = &ut * a.powf(-1.0 / inst.d_u);
        let v = &vt * a.powf(2.0 / inst.d_u);
        let f1 = (inst.f)(&u, &v) + a * (inst.r_u)(&u) + (inst.r_v)(&v);
        let f2 = (inst.f)(&ut, &vt) + (inst.r_u)(&ut) + a.powf(exponent) * (inst.r_v)(&vt);
        max_abs_gap = max_abs_gap.max((f1 - f2).abs());
    }
    Ok(ScaleEquivalenceReport {
        a,
        exponent,
        max_abs_gap,
        points,
        passed: max_abs_gap < tol,
    })
}

/// Spearman rank correlation with average ranks on ties. Returns 0 for
/// degenerate inputs (length < 2 or constant series).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let ranks = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < v.len() {
            let mut j = i;
            while j + 1 < v.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &p in &idx[i..=j] {
                r[p] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..n {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if dx == 0.0 || dy == 0.0 {
        0.0
    } else {
        num / (dx * dy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(i: usize, js: &[usize], r: usize, seed: u64) -> Parafac2Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |nr: usize, nc: usize| DMatrix::from_fn(nr, nc, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let a = mat(i, r);
        let b = js.iter().map(|&j| mat(j, r)).collect();
        let c = mat(js.len(), r);
        Parafac2Model::new(a, b, c).unwrap()
    }

    #[test]
    fn fms_identity_is_one() {
        let m = random_model(6, &[5, 7, 6], 3, 1);
        let res = fms(&m, &m).unwrap();
        assert!((res.fms - 1.0).abs() < 1e-12);
        assert_eq!(res.pairs, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn fms_invariant_to_permutation_and_rescaling() {
        let m = random_model(6, &[5, 7], 3, 2);
        let mut e = m.clone();
        // permute components (2,0,1) and rescale each by alpha in A, 1/alpha in D
        let perm = [2usize, 0, 1];
        let alphas = [3.0, 0.25, -2.0];
        let mut a = e.a.clone();
        let mut c = e.c.clone();
        let mut b = e.b.clone();
        for (dst, &src) in perm.iter().enumerate() {
            a.set_column(dst, &(m.a.column(src) * alphas[dst]));
            c.set_column(dst, &(m.c.column(src) / alphas[dst]));
            for k in 0..b.len() {
                b[k].set_column(dst, &m.b[k].column(src));
            }
        }
        e = Parafac2Model::new(a, b, c).unwrap();
        let res = fms(&m, &e).unwrap();
        assert!((res.fms - 1.0).abs() < 1e-12, "fms {}", res.fms);
        for (dst, &src) in perm.iter().enumerate() {
            assert!(res.pairs.contains(&(src, dst)));
        }
    }

    #[test]
    fn fms_rect_matches_exhaustive_subset_oracle() {
        let truth = random_model(5, &[4, 6], 2, 3);
        let est = random_model(5, &[4, 6], 3, 4);
        let got = fms(&truth, &est).unwrap();
        let score = score_matrix(
            &truth,
            &est,
            &[FactorMode::Subject, FactorMode::Evolving, FactorMode::Strength],
        );
        // every injective map of the 2 truth components into the 3 estimated
        let mut best = f64::NEG_INFINITY;
        for s0 in 0..3 {
            for s1 in 0..3 {
                if s0 == s1 {
                    continue;
                }
                best = best.max((score[(0, s0)] + score[(1, s1)]) / 2.0);
            }
        }
        assert!((got.fms - best).abs() < 1e-12);
    }

    #[test]
    fn single_mode_sign_flip_scores_one() {
        let m = random_model(5, &[4, 5], 3, 5);
        let mut e = m.clone();
        for j in 0..3 {
            let flipped = -e.a.column(j);
            e.a.set_column(j, &flipped);
        }
        let res = fms_single_mode(&m, &e, FactorMode::Subject, false).unwrap();
        assert!((res.fms - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_mode_matches_loop_oracle() {
        let truth = random_model(5, &[4, 6], 3, 6);
        let est = random_model(5, &[4, 6], 3, 7);
        let joint = fms(&truth, &est).unwrap();
        let res = fms_single_mode(&truth, &est, FactorMode::Strength, false).unwrap();
        let mut expect = 0.0;
        for &(r, s) in &joint.pairs {
            let t = truth.c.column(r).normalize();
            let e = est.c.column(s).normalize();
            expect += t.dot(&e).abs();
        }
        expect /= joint.pairs.len() as f64;
        assert!((res.fms - expect).abs() < 1e-12);
    }

    #[test]
    fn cwsnr_zero_db_and_log_law() {
        let mut m = random_model(5, &[4, 6], 2, 8);
        let scaled = normalize_into_strengths(&m);
        // build a noise tensor whose slice norms equal the first strength
        let noise = RaggedTensor::new(
            (0..2)
                .map(|k| {
                    let mut e = DMatrix::from_element(5, if k == 0 { 4 } else { 6 }, 1.0);
                    let target = scaled.c[(k, 0)].abs();
                    let n = e.norm();
                    e *= target / n;
                    e
                })
                .collect(),
        )
        .unwrap();
        let snr = cwsnr(&m, &noise).unwrap();
        for k in 0..2 {
            assert!(snr[(k, 0)].abs() < 1e-10, "expected 0 dB, got {}", snr[(k, 0)]);
        }
        let noise2 = RaggedTensor::new(
            (0..2).map(|k| noise.slice(k) * 2.0).collect(),
        )
        .unwrap();
        let snr2 = cwsnr(&m, &noise2).unwrap();
        for k in 0..2 {
            for j in 0..2 {
                assert!((snr[(k, j)] - snr2[(k, j)] - 20.0 * 2.0f64.log10()).abs() < 1e-10);
            }
        }
        // direct formula loop on a random instance
        m = random_model(6, &[5, 7, 4], 3, 9);
        let e = RaggedTensor::new(
            (0..3)
                .map(|k| DMatrix::from_fn(6, [5, 7, 4][k], |_, _| 0.3 * (k + 1) as f64))
                .collect(),
        )
        .unwrap();
        let got = cwsnr(&m, &e).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                let na = m.a.column(j).norm();
                let nb = m.b[k].column(j).norm();
                let d = m.c[(k, j)] * na * nb;
                let want = 10.0 * (d * d / e.slice(k).norm_squared()).log10();
                assert!((got[(k, j)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cwsnr_zero_noise_slice_is_infinite() {
        let m = random_model(4, &[4, 5], 2, 10);
        let noise = RaggedTensor::new(vec![
            DMatrix::zeros(4, 4),
            DMatrix::from_element(4, 5, 0.1),
        ])
        .unwrap();
        let snr = cwsnr(&m, &noise).unwrap();
        assert!(snr[(0, 0)].is_infinite() && snr[(0, 0)] > 0.0);
        assert!(snr[(1, 0)].is_finite());
    }

    #[test]
    fn cosine_sim_b_identity_and_negation() {
        let m = random_model(5, &[4, 6], 3, 11);
        let pairs = vec![(0, 0), (1, 1), (2, 2)];
        let sim = cosine_sim_b(&m, &m, &pairs).unwrap();
        assert!(sim.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let mut e = m.clone();
        for k in 0..e.b.len() {
            let flipped = -e.b[k].column(1);
            e.b[k].set_column(1, &flipped);
        }
        let sim = cosine_sim_b(&m, &e, &pairs).unwrap();
        for k in 0..2 {
            assert!((sim[(k, 1)] + 1.0).abs() < 1e-12);
            assert!((sim[(k, 0)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn triple_cosine_zero_with_orthogonal_subjects() {
        let mut m = random_model(4, &[4, 4], 2, 12);
        m.a = DMatrix::from_columns(&[
            DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]),
        ]);
        let (tc, flag) = triple_cosine(&m, false).unwrap();
        assert!(tc.abs() < 1e-12);
        assert!(!flag);
    }

    #[test]
    fn triple_cosine_flags_constructed_degenerate_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a1 = DVector::from_fn(5, |_, _| rng.gen::<f64>());
        let b1 = DVector::from_fn(6, |_, _| rng.gen::<f64>());
        let c1 = DVector::from_fn(3, |_, _| rng.gen::<f64>() + 0.1);
        let a = DMatrix::from_columns(&[a1.clone(), a1]);
        let b = vec![
            DMatrix::from_columns(&[b1.clone(), b1.clone()]),
            DMatrix::from_columns(&[b1.clone(), b1.clone()]),
            DMatrix::from_columns(&[b1.clone(), b1]),
        ];
        let c = DMatrix::from_columns(&[c1.clone(), -c1]);
        let m = Parafac2Model::new(a, b, c).unwrap();
        let (tc, flag) = triple_cosine(&m, false).unwrap();
        assert!((tc + 1.0).abs() < 1e-12, "tc {}", tc);
        assert!(flag);
    }

    #[test]
    fn triple_cosine_rank_one_and_oracle() {
        let m1 = random_model(4, &[4, 5], 1, 14);
        assert_eq!(triple_cosine(&m1, false).unwrap(), (1.0, false));

        let m = random_model(6, &[7, 7], 3, 15);
        let (tc, _) = triple_cosine(&m, false).unwrap();
        let mut want = f64::INFINITY;
        for p in 0..3 {
            for q in 0..3 {
                if p == q {
                    continue;
                }
                let v = m.a.column(p).normalize().dot(&m.a.column(q).normalize())
                    * m.b[0].column(p).normalize().dot(&m.b[1].column(q).normalize())
                    * m.c.column(p).normalize().dot(&m.c.column(q).normalize());
                want = want.min(v);
            }
        }
        assert!((tc - want).abs() < 1e-12);

        // ragged widths: two-slice form undefined, averaged form works
        let ragged = random_model(6, &[5, 7], 3, 15);
        assert!(triple_cosine(&ragged, false).is_err());
        assert!(triple_cosine(&ragged, true).is_ok());
    }

    #[test]
    fn scale_equivalence_holds() {
        let inst = ScaleEquivalenceInstance::ridge_laplacian(6, 8);
        for a in [0.25, 1.0, 4.0] {
            let rep = scale_equivalence_check(&inst, a, 100, 21, 1e-10).unwrap();
            assert!(rep.passed, "a={} gap={}", a, rep.max_abs_gap);
            assert_eq!(rep.exponent, 2.0);
        }
        assert!(scale_equivalence_check(&inst, 0.0, 10, 0, 1e-10).is_err());
    }

    #[test]
    fn spearman_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[8.0, 6.0, 4.0, 2.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&x, &[5.0, 5.0, 5.0, 5.0]), 0.0);
    }

    #[test]
    fn zero_norm_component_scores_zero() {
        let m = random_model(5, &[4, 5], 2, 16);
        let mut e = m.clone();
        e.a.set_column(1, &DVector::zeros(5));
        let res = fms(&m, &e).unwrap();
        assert!(res.per_component.iter().any(|&v| v == 0.0));
        assert!(res.fms < 1.0);
    }
}
