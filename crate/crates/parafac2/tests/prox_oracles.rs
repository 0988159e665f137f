//! Cross-checks the O(n) TV and unimodal projections against exhaustive
//! enumeration oracles on small inputs.

mod common;

use nalgebra::DVector;
use parafac2::prox::{prox_tv, prox_unimodal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn tv_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..200 {
        let n = 1 + trial % 10;
        let lambda = if trial % 2 == 0 { 0.1 } else { 1.0 };
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let got = prox_tv(&DVector::from_vec(x.clone()), lambda);
        let want = common::tv_oracle(&x, lambda);
        for i in 0..n {
            assert!(
                (got[i] - want[i]).abs() < 1e-8,
                "trial {trial}: x={x:?} lambda={lambda} got {got:?} want {want:?}"
            );
        }
    }
}

#[test]
fn unimodal_matches_exhaustive_oracle() {
    let values = [-1.0, 0.0, 1.0, 2.0];
    for n in 1..=6usize {
        let mut idx = vec![0usize; n];
        loop {
            let x: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            for nonneg in [false, true] {
                let got = prox_unimodal(&DVector::from_vec(x.clone()), nonneg);
                let want = common::unimodal_oracle(&x, nonneg);
                let same = got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12);
                if !same {
                    // distinct vectors are only acceptable on exact objective
                    // ties between mode positions
                    let err = |y: &[f64]| -> f64 {
                        x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
                    };
                    let got_v: Vec<f64> = got.iter().copied().collect();
                    assert!(
                        (err(&got_v) - err(&want)).abs() < 1e-12,
                        "x={x:?} nonneg={nonneg} got {got_v:?} want {want:?}"
                    );
                }
            }
            // advance mixed-radix counter
            let mut pos = 0;
            loop {
                if pos == n {
                    break;
                }
                idx[pos] += 1;
                if idx[pos] < values.len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == n {
                break;
            }
        }
    }
}
