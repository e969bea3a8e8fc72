use mc_core::init::trim_factors;
use mc_core::linalg::{
    gaussian_matrix, hard_threshold, random_lowrank, thin_qr, LinearOperator, LowRankMatrix,
};
use mc_core::sampling::{apply_sampling, sample_with_replacement, SamplingMode, SamplingSet};
use mc_core::tangent::{retract, TangentSpace};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    gaussian_matrix(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Sampling set with a planted multiplicity pattern: entry `(i, j)` drawn
/// `(i + 2 j) % 4` times.
fn patterned_set(n: usize) -> SamplingSet {
    let entries: Vec<(usize, usize, u32)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j, ((i + 2 * j) % 4) as u32)))
        .filter(|e| e.2 > 0)
        .collect();
    SamplingSet::from_entries(n, n, &entries, SamplingMode::WithReplacement).unwrap()
}

fn tail_norm(z: &DMatrix<f64>, r: usize) -> f64 {
    let s = z.singular_values();
    let mut s: Vec<f64> = s.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s[r..].iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn thin_qr_reassembles(rows in 1usize..12, extra in 0usize..6, seed in any::<u64>()) {
        let cols = rows.min(1 + extra);
        let y = gaussian(rows, cols, seed);
        let (q, r) = thin_qr(&y).unwrap();
        prop_assert!((q.tr_mul(&q) - DMatrix::identity(cols, cols)).norm() < 1e-12);
        prop_assert!((&q * &r - &y).norm() <= 1e-12 * y.norm().max(1.0));
        for i in 0..cols {
            prop_assert!(r[(i, i)] >= 0.0);
            for j in 0..i {
                prop_assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn hard_threshold_is_optimal_and_idempotent(n in 2usize..14, r in 1usize..5, seed in any::<u64>()) {
        let r = r.min(n);
        let z = gaussian(n, n + 1, seed);
        let h = hard_threshold(&z, r).unwrap();
        let err = (&z - h.to_dense()).norm();
        prop_assert!((err - tail_norm(&z, r)).abs() <= 1e-10 * z.norm());
        // any other rank-r matrix does no better
        let other = hard_threshold(&(h.to_dense() + gaussian(n, n + 1, seed ^ 1) * 0.1), r).unwrap();
        prop_assert!(err <= (&z - other.to_dense()).norm() + 1e-12 * z.norm());
        let again = hard_threshold(&h.to_dense(), r).unwrap();
        prop_assert!((again.to_dense() - h.to_dense()).norm() <= 1e-10 * h.frobenius_norm());
    }

    #[test]
    fn sampling_is_self_adjoint(n in 1usize..10, m in 1usize..60, seed in any::<u64>()) {
        let s = sample_with_replacement(n, m, seed).unwrap();
        let a = gaussian(n, n, seed ^ 2);
        let b = gaussian(n, n, seed ^ 3);
        let pa = apply_sampling(&s, &a).unwrap().to_dense();
        let pb = apply_sampling(&s, &b).unwrap().to_dense();
        prop_assert!((inner(&pa, &b) - inner(&a, &pb)).abs() <= 1e-12 * (1.0 + a.norm() * b.norm()) * m as f64);
    }

    #[test]
    fn tangent_projection_is_a_contraction_onto_rank_2r(n in 3usize..14, r in 1usize..4, seed in any::<u64>()) {
        let r = r.min(n);
        let x = random_lowrank(n, r, seed).unwrap();
        let space = TangentSpace::at(&x);
        let z = gaussian(n, n, seed ^ 4);
        let t = space.project(&z);
        let dense = t.reconstruct();
        prop_assert!(t.norm() <= z.norm() * (1.0 + 1e-12));
        prop_assert!((t.norm() - dense.norm()).abs() <= 1e-10 * z.norm());
        let again = space.project(&dense);
        prop_assert!((again.reconstruct() - &dense).norm() <= 1e-10 * z.norm());
        let sv = dense.singular_values();
        let numerical_rank = sv.iter().filter(|s| **s > 1e-10 * z.norm()).count();
        prop_assert!(numerical_rank <= (2 * r).min(n));
        // the residual is orthogonal to the tangent space
        prop_assert!(inner(&(&z - &dense), &dense).abs() <= 1e-10 * z.norm_squared());
    }

    #[test]
    fn retraction_is_the_best_rank_r_approximation(n in 3usize..16, r in 1usize..4, scale in 0.01f64..10.0, seed in any::<u64>()) {
        let r = r.min(n);
        let x = random_lowrank(n, r, seed).unwrap();
        let t = TangentSpace::at(&x).project(&(gaussian(n, n, seed ^ 5) * scale));
        let w = x.to_dense() + t.reconstruct();
        let Ok(next) = retract(&x, &t, r) else {
            // a collapsed rank is reported, never silently returned
            return Ok(());
        };
        let err = (&w - next.to_dense()).norm();
        prop_assert!((err - tail_norm(&w, r)).abs() <= 1e-9 * w.norm());
        prop_assert!(err <= (&w - x.to_dense()).norm() + 1e-9 * w.norm());
    }

    #[test]
    fn trimming_is_monotone_in_the_cap(n in 4usize..16, r in 1usize..4, lo in 1.0f64..4.0, gap in 0.0f64..4.0, seed in any::<u64>()) {
        let r = r.min(n);
        let z = random_lowrank(n, r, seed).unwrap();
        let hi = lo + gap;
        let small = trim_factors(&z, lo).unwrap();
        let large = trim_factors(&z, hi).unwrap();
        let cap = |mu: f64| (mu * r as f64 / n as f64).sqrt();
        for i in 0..n {
            let (rs, rl, r0) = (small.a.row(i).norm(), large.a.row(i).norm(), z.u().row(i).norm());
            prop_assert!(rs <= cap(lo) * (1.0 + 1e-12));
            prop_assert!(rs <= rl * (1.0 + 1e-12) && rl <= r0 * (1.0 + 1e-12));
            let (cs, cl, c0) = (small.b.row(i).norm(), large.b.row(i).norm(), z.v().row(i).norm());
            prop_assert!(cs <= cap(lo) * (1.0 + 1e-12));
            prop_assert!(cs <= cl * (1.0 + 1e-12) && cl <= c0 * (1.0 + 1e-12));
        }
        prop_assert_eq!(&small.sigma, z.sigma());
    }
}

#[test]
fn sampling_twice_squares_multiplicities() {
    let s = patterned_set(9);
    let z = gaussian(9, 9, 11);
    let once = apply_sampling(&s, &z).unwrap();
    let twice = apply_sampling(&s, &once).unwrap().to_dense();
    for i in 0..9 {
        for j in 0..9 {
            let k = ((i + 2 * j) % 4) as f64;
            assert!((twice[(i, j)] - k * k * z[(i, j)]).abs() <= 1e-14 * z[(i, j)].abs().max(1.0));
        }
    }
}

#[test]
fn operator_norm_of_sampling_is_the_largest_multiplicity() {
    // P_Omega is diagonal in the entry basis
    let s = patterned_set(7);
    let mut best = 0.0f64;
    for seed in 0..50 {
        let z = gaussian(7, 7, seed);
        best = best.max(apply_sampling(&s, &z).unwrap().frobenius_norm() / z.norm());
    }
    assert!(best <= s.max_repetition() as f64 + 1e-12);
    assert_eq!(s.max_repetition(), 3);
}

#[test]
fn repetitions_stay_below_the_logarithmic_bound() {
    // with beta = 2 the bound fails with probability at most n^-2
    for n in [9usize, 20, 50] {
        let bound = 8.0 / 3.0 * 2.0 * (n as f64).ln();
        let m = (n as f64 * (n as f64).ln()).round() as usize;
        let within = (0..100)
            .filter(|&seed| (sample_with_replacement(n, m, seed).unwrap().max_repetition() as f64) <= bound)
            .count();
        assert!(within >= 95, "n = {n}: {within}/100 within {bound}");
    }
}

#[test]
fn low_rank_operator_agrees_with_dense() {
    let x: LowRankMatrix = random_lowrank(8, 3, 5).unwrap();
    let y = gaussian(8, 4, 6);
    assert!((x.apply(&y) - x.to_dense() * &y).norm() <= 1e-12 * y.norm() * x.frobenius_norm());
}
