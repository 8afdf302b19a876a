//! Solver-level checks against independent oracles: threshold operator
//! properties, agreement with a from-scratch coordinate-descent lasso,
//! optimality conditions, and invariance to the starting point.

mod common;

use common::{
    cd_lasso, fd_gradient, gaussian_design, max_abs_diff, oracle_mean_loss, oracle_objective,
    orthonormal_design, outcomes_for, random_coefficients,
};
use fedtrans::glm::{GlmFamily, PartitionedDataset};
use fedtrans::solver::{
    hard_threshold_topk, lambda_max, soft_threshold, solve_l1, GlmObjective, L1Penalty,
};
use ndarray::{Array1, ArrayView1};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_problem(
    family: GlmFamily,
    n: usize,
    p: usize,
    nonzeros: usize,
    seed: u64,
) -> PartitionedDataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = gaussian_design(n, p, &mut rng);
    let truth = random_coefficients(p, nonzeros, &mut rng);
    let outcomes = outcomes_for(family, design.view(), truth.view(), &mut rng);
    PartitionedDataset::from_plain(design, outcomes).expect("valid dataset")
}

fn solve_dataset(
    family: GlmFamily,
    data: &PartitionedDataset<f64>,
    lambda: f64,
    init: ArrayView1<f64>,
) -> Array1<f64> {
    let objective =
        GlmObjective::mean_loss(family, data, data.all_rows()).expect("objective builds");
    let penalty = L1Penalty::uniform(lambda);
    solve_l1(&objective, &penalty, init, 1e-10, 50_000)
        .expect("solver runs")
        .coefficients
}

proptest! {
    #[test]
    fn soft_threshold_shrinks_toward_zero(
        values in proptest::collection::vec(-10.0f64..10.0, 1..30),
        tau in 0.0f64..5.0,
    ) {
        let input = Array1::from_vec(values);
        let output = soft_threshold(input.view(), tau);
        for (v, s) in input.iter().zip(output.iter()) {
            // Exact formula: sign(v) · max(|v| − τ, 0).
            let expected = v.signum() * (v.abs() - tau).max(0.0);
            prop_assert!((s - expected).abs() <= 1e-15);
            // Never crosses zero, never grows.
            prop_assert!(s.abs() <= v.abs() + 1e-15);
            prop_assert!(*s == 0.0 || s.signum() == v.signum());
            // Moves by at most τ.
            prop_assert!((v - s).abs() <= tau + 1e-15);
        }
    }

    #[test]
    fn hard_threshold_keeps_exactly_the_largest_entries(
        values in proptest::collection::vec(-10.0f64..10.0, 1..30),
        k in 0usize..35,
    ) {
        let input = Array1::from_vec(values);
        let output = hard_threshold_topk(input.view(), k);
        let kept: Vec<usize> = (0..input.len()).filter(|&j| output[j] != 0.0).collect();
        let dropped: Vec<usize> = (0..input.len())
            .filter(|&j| output[j] == 0.0 && input[j] != 0.0)
            .collect();
        // At most k survivors, each preserved bit-for-bit.
        prop_assert!(kept.len() <= k.min(input.len()));
        for &j in &kept {
            prop_assert_eq!(output[j], input[j]);
        }
        // Every survivor dominates every casualty in magnitude.
        for &a in &kept {
            for &b in &dropped {
                prop_assert!(input[a].abs() >= input[b].abs());
            }
        }
        // k covering everything is the identity.
        if k >= input.len() {
            prop_assert_eq!(output, input);
        }
    }
}

#[test]
fn orthonormal_design_admits_a_closed_form_solution() {
    // With XᵀX/n = I the penalized gaussian fit decouples coordinatewise
    // into soft(XᵀY/n, λ).
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let (n, p) = (60, 12);
        let design = orthonormal_design(n, p, &mut rng);
        let truth = random_coefficients(p, 5, &mut rng);
        let outcomes = outcomes_for(GlmFamily::Gaussian, design.view(), truth.view(), &mut rng);
        let z = design.t().dot(&outcomes) / n as f64;
        let lambda = 0.2;
        let closed_form = soft_threshold(z.view(), lambda);

        let data = PartitionedDataset::from_plain(design, outcomes).expect("valid dataset");
        let fitted = solve_dataset(
            GlmFamily::Gaussian,
            &data,
            lambda,
            Array1::zeros(p).view(),
        );
        assert!(
            max_abs_diff(fitted.view(), closed_form.view()) < 1e-8,
            "seed {seed}: solver deviates from the closed form"
        );
    }
}

#[test]
fn solver_matches_coordinate_descent_oracle_on_small_problems() {
    for (family, seed) in [
        (GlmFamily::Gaussian, 11u64),
        (GlmFamily::Gaussian, 12),
        (GlmFamily::Logistic, 13),
        (GlmFamily::Logistic, 14),
    ] {
        let data = small_problem(family, 40, 8, 4, seed);
        let lambda = 0.08;
        let fitted = solve_dataset(family, &data, lambda, Array1::zeros(8).view());
        let oracle = cd_lasso(
            family,
            data.design(),
            data.outcomes(),
            lambda,
            200_000,
            1e-13,
        );
        let f_fit = oracle_objective(family, data.design(), data.outcomes(), lambda, fitted.view());
        let f_oracle =
            oracle_objective(family, data.design(), data.outcomes(), lambda, oracle.view());
        let gap = f_fit - f_oracle;
        assert!(
            gap < 1e-8,
            "{family:?} seed {seed}: solver objective exceeds oracle by {gap:.3e}"
        );
    }
}

#[test]
fn solution_satisfies_subgradient_optimality() {
    for (family, seed) in [(GlmFamily::Gaussian, 21u64), (GlmFamily::Logistic, 22)] {
        let data = small_problem(family, 50, 10, 4, seed);
        let lambda = 0.05;
        let fitted = solve_dataset(family, &data, lambda, Array1::zeros(10).view());
        // Gradient from finite differences of an independent loss, so the
        // optimality check shares nothing with the solver.
        let grad = fd_gradient(
            |b| oracle_mean_loss(family, data.design(), data.outcomes(), b),
            fitted.view(),
            1e-6,
        );
        for j in 0..fitted.len() {
            if fitted[j] != 0.0 {
                let residual = (grad[j] + lambda * fitted[j].signum()).abs();
                assert!(
                    residual < 1e-4,
                    "{family:?} active coordinate {j}: stationarity residual {residual:.3e}"
                );
            } else {
                assert!(
                    grad[j].abs() <= lambda + 1e-4,
                    "{family:?} inactive coordinate {j}: |gradient| {:.3e} exceeds λ",
                    grad[j].abs()
                );
            }
        }
    }
}

#[test]
fn solution_is_invariant_to_the_starting_point() {
    let data = small_problem(GlmFamily::Logistic, 60, 12, 5, 31);
    let objective = GlmObjective::mean_loss(GlmFamily::Logistic, &data, data.all_rows())
        .expect("objective builds");
    let penalty = L1Penalty::uniform(0.06);
    let tol = 1e-10;
    let mut objectives = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for start in 0..3 {
        let init: Array1<f64> = if start == 0 {
            Array1::zeros(12)
        } else {
            random_coefficients(12, 12, &mut rng)
        };
        let out =
            solve_l1(&objective, &penalty, init.view(), tol, 50_000).expect("solver runs");
        assert!(out.converged, "start {start} failed to converge");
        objectives.push(out.objective_value);
    }
    let spread = objectives
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - objectives.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    assert!(
        spread <= 10.0 * tol,
        "objective spread {spread:.3e} across starts exceeds 10·tol"
    );
}

#[test]
fn penalties_at_or_above_lambda_max_zero_the_solution() {
    for family in [GlmFamily::Gaussian, GlmFamily::Logistic] {
        let data = small_problem(family, 50, 10, 4, 41);
        let objective =
            GlmObjective::mean_loss(family, &data, data.all_rows()).expect("objective builds");
        let penalty_shape = L1Penalty::<f64>::uniform(1.0);
        let cap = lambda_max(&objective, &penalty_shape);
        assert!(cap > 0.0);

        let at_cap = solve_dataset(family, &data, cap * 1.000001, Array1::zeros(10).view());
        assert!(
            at_cap.iter().all(|v| *v == 0.0),
            "{family:?}: nonzero solution at λ ≥ λ_max"
        );
        let below = solve_dataset(family, &data, cap * 0.8, Array1::zeros(10).view());
        assert!(
            below.iter().any(|v| *v != 0.0),
            "{family:?}: solution still zero well below λ_max"
        );
    }
}
