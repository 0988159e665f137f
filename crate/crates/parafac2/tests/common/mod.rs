//! Brute-force oracles shared by the integration suites. These are written
//! independently of the library kernels: everything here is plain enumeration
//! over small problem sizes, so agreement with the O(n) implementations is
//! meaningful evidence.

#![allow(dead_code)]

/// Exact 1-D TV prox by exhaustive enumeration.
///
/// Every minimizer of lambda*TV(y) + 0.5*||y - x||^2 is piecewise constant,
/// and on a block [i..j] with boundary jump signs t_l (edge entering from the
/// left, 0 at the array boundary) and t_r (edge leaving to the right) the
/// stationary value is mean(x[i..j]) + lambda*(t_r - t_l)/len. Enumerating
/// all segmentations and all boundary sign patterns therefore produces a
/// candidate set that contains the optimum; every candidate is feasible, so
/// the candidate with the smallest objective is the optimum.
pub fn tv_oracle(x: &[f64], lambda: f64) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 1 && n <= 12, "oracle is exponential in n");
    if lambda <= 0.0 {
        return x.to_vec();
    }
    let objective = |y: &[f64]| -> f64 {
        let mut f = 0.0;
        for i in 0..n {
            f += 0.5 * (y[i] - x[i]) * (y[i] - x[i]);
        }
        for i in 1..n {
            f += lambda * (y[i] - y[i - 1]).abs();
        }
        f
    };
    let mut best = x.to_vec();
    let mut best_obj = objective(&best);
    // bitmask over the n-1 interior edges: set bit = block boundary
    for cut_mask in 0u32..(1 << (n - 1)) {
        let mut blocks: Vec<(usize, usize)> = Vec::new(); // [start, end)
        let mut start = 0;
        for i in 0..n - 1 {
            if cut_mask & (1 << i) != 0 {
                blocks.push((start, i + 1));
                start = i + 1;
            }
        }
        blocks.push((start, n));
        let nb = blocks.len();
        // sign in {-1,+1} per interior boundary
        for sign_mask in 0u32..(1 << (nb - 1)) {
            let sign = |b: usize| -> f64 {
                // sign of the jump at the right edge of block b
                if b + 1 >= nb {
                    0.0
                } else if sign_mask & (1 << b) != 0 {
                    1.0
                } else {
                    -1.0
                }
            };
            let mut y = vec![0.0; n];
            for (b, &(s, e)) in blocks.iter().enumerate() {
                let len = (e - s) as f64;
                let mean: f64 = x[s..e].iter().sum::<f64>() / len;
                let t_l = if b == 0 { 0.0 } else { sign(b - 1) };
                let t_r = sign(b);
                let v = mean + lambda * (t_r - t_l) / len;
                for i in s..e {
                    y[i] = v;
                }
            }
            let obj = objective(&y);
            if obj < best_obj {
                best_obj = obj;
                best = y;
            }
        }
    }
    best
}

/// TV prox objective, for tie reporting.
pub fn tv_objective(x: &[f64], y: &[f64], lambda: f64) -> f64 {
    let mut f = 0.0;
    for i in 0..x.len() {
        f += 0.5 * (y[i] - x[i]) * (y[i] - x[i]);
    }
    for i in 1..x.len() {
        f += lambda * (y[i] - y[i - 1]).abs();
    }
    f
}

/// Best non-decreasing fit to `x` by exhaustive segmentation: each candidate
/// assigns every block its mean and is kept only if block means are
/// non-decreasing. The isotonic optimum is piecewise constant with increasing
/// block means, so it is among the candidates; all candidates are feasible.
fn isotonic_brute(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(n <= 12);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cut_mask in 0u32..(1 << (n - 1)) {
        let mut y = vec![0.0; n];
        let mut start = 0;
        let mut prev_mean = f64::NEG_INFINITY;
        let mut ok = true;
        let push = |s: usize, e: usize, y: &mut Vec<f64>, prev: &mut f64| -> bool {
            let mean: f64 = x[s..e].iter().sum::<f64>() / (e - s) as f64;
            if mean < *prev {
                return false;
            }
            *prev = mean;
            for i in s..e {
                y[i] = mean;
            }
            true
        };
        for i in 0..n - 1 {
            if cut_mask & (1 << i) != 0 {
                if !push(start, i + 1, &mut y, &mut prev_mean) {
                    ok = false;
                    break;
                }
                start = i + 1;
            }
        }
        if ok && push(start, n, &mut y, &mut prev_mean) {
            let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().map_or(true, |(e, _)| err < *e) {
                best = Some((err, y));
            }
        }
    }
    best.unwrap().1
}

/// Unimodal projection by mode enumeration with brute-force isotonic halves.
/// The non-negative variant clips the fitted values at zero before scoring,
/// mirroring the clip-then-score convention. Ties between modes resolve to
/// the smallest mode index.
pub fn unimodal_oracle(x: &[f64], nonneg: bool) -> Vec<f64> {
    let n = x.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mode in 0..n {
        let mut fit = isotonic_brute(&x[..=mode]);
        let mut tail_rev: Vec<f64> = x[mode + 1..].iter().rev().copied().collect();
        tail_rev = isotonic_brute(&tail_rev);
        tail_rev.reverse();
        fit.extend(tail_rev);
        if nonneg {
            for v in fit.iter_mut() {
                *v = v.max(0.0);
            }
        }
        let err: f64 = x.iter().zip(&fit).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().map_or(true, |(e, _)| err < *e) {
            best = Some((err, fit));
        }
    }
    best.unwrap().1
}
