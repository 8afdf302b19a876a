//! L1-penalized optimization of smooth convex objectives.
//!
//! [`solve_l1`] minimizes `f(b) + λ · Σ_{j penalized} |b_j|` for any
//! [`SmoothObjective`] `f` with an accelerated proximal-gradient method
//! (FISTA-style momentum, backtracking line search, monotone safeguard).  The
//! same solver is used for full GLM losses, for quadratic surrogates built
//! from federation messages, and for weighted sums of surrogates; nothing in
//! it knows which one it is minimizing.
//!
//! Stopping is governed by the KKT residual in the max norm: at a solution,
//! active coordinates satisfy `∇f(b)_j = −λ·sign(b_j)`, inactive penalized
//! coordinates satisfy `|∇f(b)_j| ≤ λ`, and unpenalized coordinates satisfy
//! `∇f(b)_j = 0`; the residual measures the worst violation.

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{self, GlmFamily, PartitionedDataset};
use crate::scalar::{real, Scalar};

/// Default KKT tolerance for penalized solves.
pub const DEFAULT_TOL: f64 = 1e-7;
/// Default iteration cap for penalized solves.
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Power-iteration count used for curvature estimates.
pub const CURVATURE_POWER_ITERS: usize = 20;

/// Smooth convex part of a penalized objective.
///
/// Implementations return non-finite values rather than erroring when an
/// evaluation overflows; the solver treats those as divergence.
pub trait SmoothObjective<S: Scalar> {
    /// Dimension of the parameter vector.
    fn dim(&self) -> usize;
    /// Objective value at `point`.
    fn value(&self, point: ArrayView1<S>) -> S;
    /// Gradient at `point`.
    fn gradient(&self, point: ArrayView1<S>) -> Array1<S>;
    /// Estimate of the largest Hessian eigenvalue near `point`, used for the
    /// initial step size.  `None` lets the solver fall back to backtracking
    /// from a unit step.
    fn curvature(&self, _point: ArrayView1<S>) -> Option<S> {
        None
    }
}

/// Penalty configuration shared by the estimator layer.
///
/// `lambda` is the penalty level for a concrete solve; the constants are the
/// knobs of the `√(log p / n)`-type rate formulas used when penalty levels
/// are derived from sample sizes rather than given directly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Penalty level λ ≥ 0.
    pub lambda: f64,
    /// Multiplier on `√(log p / n)` penalty rates.
    pub rate_constant: f64,
    /// Multiplier on initialization penalty rates.
    pub init_constant: f64,
    /// Hard-threshold budget for communication anchors; `None` derives
    /// `round(√(n_init / log p))` from the initialization sample size.
    pub anchor_budget: Option<usize>,
    /// Whether an intercept column participates in the L1 penalty.
    pub penalize_intercept: bool,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            rate_constant: 1.0,
            init_constant: 1.0,
            anchor_budget: None,
            penalize_intercept: false,
        }
    }
}

impl PenaltyConfig {
    /// Solver-level penalty for a design with or without an intercept column.
    pub fn l1_penalty<S: Scalar>(&self, has_intercept: bool) -> L1Penalty<S> {
        let unpenalized = if has_intercept && !self.penalize_intercept {
            vec![0]
        } else {
            Vec::new()
        };
        L1Penalty {
            lambda: real::<S>(self.lambda),
            unpenalized,
        }
    }
}

/// Concrete L1 penalty handed to [`solve_l1`].
#[derive(Debug, Clone)]
pub struct L1Penalty<S> {
    /// Penalty level λ ≥ 0.
    pub lambda: S,
    /// Coordinates excluded from the penalty (typically empty or `[0]` for an
    /// intercept).
    pub unpenalized: Vec<usize>,
}

impl<S: Scalar> L1Penalty<S> {
    /// Penalize every coordinate at level `lambda`.
    pub fn uniform(lambda: S) -> Self {
        Self {
            lambda,
            unpenalized: Vec::new(),
        }
    }

    fn mask(&self, dim: usize) -> Vec<bool> {
        let mut penalized = vec![true; dim];
        for &j in &self.unpenalized {
            if j < dim {
                penalized[j] = false;
            }
        }
        penalized
    }
}

/// Result of a penalized solve.
#[derive(Debug, Clone)]
pub struct SolverOutput<S> {
    /// Final iterate (best found when not converged).
    pub coefficients: Array1<S>,
    /// Whether the KKT residual met the tolerance within the iteration cap.
    pub converged: bool,
    /// Iterations performed.
    pub iterations: usize,
    /// Final KKT residual (max norm).
    pub kkt_residual: S,
    /// Final penalized objective value.
    pub objective_value: S,
}

/// Elementwise soft threshold: `sign(v) · max(|v| − tau, 0)`.
pub fn soft_threshold<S: Scalar>(values: ArrayView1<S>, tau: S) -> Array1<S> {
    assert!(tau >= S::zero(), "soft threshold requires tau >= 0");
    values.mapv(|v| soft_threshold_scalar(v, tau))
}

/// Scalar soft threshold.
#[inline]
pub fn soft_threshold_scalar<S: Scalar>(v: S, tau: S) -> S {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        S::zero()
    }
}

/// Keeps the `k` largest-magnitude entries of `values` and zeroes the rest.
///
/// Magnitude ties are broken toward the lowest index, so the result is a
/// deterministic function of its inputs.  `k` at or above the length returns
/// the input unchanged.
pub fn hard_threshold_topk<S: Scalar>(values: ArrayView1<S>, k: usize) -> Array1<S> {
    let p = values.len();
    if k >= p {
        return values.to_owned();
    }
    let mut out = Array1::zeros(p);
    if k == 0 {
        return out;
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .abs()
            .partial_cmp(&values[a].abs())
            .expect("finite magnitudes")
            .then(a.cmp(&b))
    });
    for &j in order.iter().take(k) {
        out[j] = values[j];
    }
    out
}

/// Largest penalty level with a nonzero solution: `‖∇f(0)‖∞` over penalized
/// coordinates.
pub fn lambda_max<S: Scalar, O: SmoothObjective<S> + ?Sized>(
    objective: &O,
    penalty_mask_from: &L1Penalty<S>,
) -> S {
    let zero = Array1::<S>::zeros(objective.dim());
    let g = objective.gradient(zero.view());
    let mask = penalty_mask_from.mask(objective.dim());
    g.iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .fold(S::zero(), |a, (v, _)| a.max(v.abs()))
}

fn l1_norm_masked<S: Scalar>(v: &Array1<S>, mask: &[bool]) -> S {
    v.iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .fold(S::zero(), |a, (x, _)| a + x.abs())
}

fn kkt_residual<S: Scalar>(x: &Array1<S>, g: &Array1<S>, lambda: S, mask: &[bool]) -> S {
    let mut worst = S::zero();
    for j in 0..x.len() {
        let r = if !mask[j] {
            g[j].abs()
        } else if x[j] > S::zero() {
            (g[j] + lambda).abs()
        } else if x[j] < S::zero() {
            (g[j] - lambda).abs()
        } else {
            (g[j].abs() - lambda).max(S::zero())
        };
        worst = worst.max(r);
    }
    worst
}

/// Proximal step `prox_{step·λ‖·‖₁}(point − step·grad)` honoring the penalty
/// mask.
fn prox_step<S: Scalar>(
    point: &Array1<S>,
    grad: &Array1<S>,
    step: S,
    lambda: S,
    mask: &[bool],
) -> Array1<S> {
    let tau = step * lambda;
    let mut out = Array1::zeros(point.len());
    for j in 0..point.len() {
        let v = point[j] - step * grad[j];
        out[j] = if mask[j] {
            soft_threshold_scalar(v, tau)
        } else {
            v
        };
    }
    out
}

/// Backtracks the step size until the quadratic majorization holds, returning
/// the accepted point, its smooth value and the step used.
fn backtrack<S: Scalar, O: SmoothObjective<S> + ?Sized>(
    objective: &O,
    base: &Array1<S>,
    f_base: S,
    g_base: &Array1<S>,
    mut step: S,
    lambda: S,
    mask: &[bool],
    iterations: usize,
) -> Result<(Array1<S>, S, S)> {
    let half = real::<S>(0.5);
    let slack = real::<S>(1e-12) * (S::one() + f_base.abs());
    for _ in 0..80 {
        let candidate = prox_step(base, g_base, step, lambda, mask);
        let f_cand = objective.value(candidate.view());
        if f_cand.is_finite() {
            let diff = &candidate - base;
            let lin: S = diff
                .iter()
                .zip(g_base.iter())
                .fold(S::zero(), |a, (d, g)| a + *d * *g);
            let quad = diff.iter().fold(S::zero(), |a, d| a + *d * *d) / (step + step);
            if f_cand <= f_base + lin + quad + slack {
                return Ok((candidate, f_cand, step));
            }
        }
        step = step * half;
        if step < real::<S>(1e-300) {
            return Err(Error::SolverDiverged {
                iterations,
                context: "backtracking step underflowed".to_string(),
            });
        }
    }
    Err(Error::SolverDiverged {
        iterations,
        context: "backtracking failed to satisfy majorization".to_string(),
    })
}

/// Minimizes `objective(b) + λ Σ_{penalized} |b_j|` from `init`.
///
/// Accelerated proximal gradient with backtracking; the momentum step is
/// guarded so the penalized objective never increases from one accepted
/// iterate to the next.  Convergence is declared when the KKT residual drops
/// to `tol`; hitting `max_iter` returns the best iterate with
/// `converged = false`.
pub fn solve_l1<S: Scalar, O: SmoothObjective<S> + ?Sized>(
    objective: &O,
    penalty: &L1Penalty<S>,
    init: ArrayView1<S>,
    tol: S,
    max_iter: usize,
) -> Result<SolverOutput<S>> {
    let p = objective.dim();
    if init.len() != p {
        return Err(Error::dim("solver init vs objective dim", p, init.len()));
    }
    if penalty.lambda < S::zero() {
        return Err(Error::contract("negative penalty level"));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "solver init".to_string(),
        });
    }
    let lambda = penalty.lambda;
    let mask = penalty.mask(p);

    let curvature = objective
        .curvature(init)
        .filter(|l| l.is_finite() && *l > S::zero())
        .unwrap_or_else(S::one);
    let mut step = S::one() / curvature;

    let mut x = init.to_owned();
    let mut f_x = objective.value(x.view());
    if !f_x.is_finite() {
        return Err(Error::SolverDiverged {
            iterations: 0,
            context: "objective not finite at init".to_string(),
        });
    }
    let mut pen_x = f_x + lambda * l1_norm_masked(&x, &mask);
    let mut y = x.clone();
    let mut f_y = f_x;
    let mut momentum = S::one();
    let mut iterations = 0;
    let mut kkt = S::infinity();

    while iterations < max_iter {
        iterations += 1;
        let g_y = objective.gradient(y.view());
        if g_y.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDiverged {
                iterations,
                context: "gradient not finite".to_string(),
            });
        }
        let (z, f_z, used_step) =
            backtrack(objective, &y, f_y, &g_y, step, lambda, &mask, iterations)?;
        step = used_step;
        let pen_z = f_z + lambda * l1_norm_masked(&z, &mask);

        let slack = real::<S>(1e-12) * (S::one() + pen_x.abs());
        let x_old = x.clone();
        if pen_z <= pen_x + slack {
            x = z;
            f_x = f_z;
            pen_x = pen_z;
            let four = real::<S>(4.0);
            let next = (S::one() + (S::one() + four * momentum * momentum).sqrt())
                / real::<S>(2.0);
            let weight = (momentum - S::one()) / next;
            momentum = next;
            y = &x + &((&x - &x_old) * weight);
            f_y = objective.value(y.view());
            if !f_y.is_finite() {
                // Momentum overshot into a bad region; restart from x.
                y = x.clone();
                f_y = f_x;
                momentum = S::one();
            }
        } else {
            // Accelerated candidate increased the objective: fall back to a
            // plain proximal step from x, which the majorization guarantees
            // is non-increasing, and restart the momentum.
            let g_x = objective.gradient(x.view());
            let (z2, f_z2, used2) =
                backtrack(objective, &x, f_x, &g_x, step, lambda, &mask, iterations)?;
            step = used2;
            let pen_z2 = f_z2 + lambda * l1_norm_masked(&z2, &mask);
            debug_assert!(
                pen_z2 <= pen_x + slack,
                "proximal step increased the objective: {pen_z2:?} > {pen_x:?}"
            );
            if pen_z < pen_z2 {
                x = z;
                f_x = f_z;
                pen_x = pen_z;
            } else {
                x = z2;
                f_x = f_z2;
                pen_x = pen_z2;
            }
            momentum = S::one();
            y = x.clone();
            f_y = f_x;
        }

        let g_x = objective.gradient(x.view());
        kkt = kkt_residual(&x, &g_x, lambda, &mask);
        if kkt <= tol {
            return Ok(SolverOutput {
                coefficients: x,
                converged: true,
                iterations,
                kkt_residual: kkt,
                objective_value: pen_x,
            });
        }
    }

    Ok(SolverOutput {
        coefficients: x,
        converged: false,
        iterations,
        kkt_residual: kkt,
        objective_value: pen_x,
    })
}

/// Deterministic power-iteration estimate of the largest eigenvalue of a
/// symmetric PSD operator given through its matvec.
pub fn power_iteration_estimate<S: Scalar>(
    dim: usize,
    iters: usize,
    matvec: impl Fn(&Array1<S>) -> Array1<S>,
) -> S {
    if dim == 0 {
        return S::zero();
    }
    // Fixed quasi-random start; no RNG so the estimate is a pure function of
    // the operator.
    let mut v = Array1::from_shape_fn(dim, |j| {
        real::<S>((((j + 1) as f64) * 0.754_877_666_2).fract() - 0.5)
    });
    let norm = v.iter().fold(S::zero(), |a, x| a + *x * *x).sqrt();
    if norm > S::zero() {
        v = v / norm;
    } else {
        v[0] = S::one();
    }
    let mut estimate = S::zero();
    for _ in 0..iters {
        let w = matvec(&v);
        let norm = w.iter().fold(S::zero(), |a, x| a + *x * *x).sqrt();
        if !(norm.is_finite() && norm > S::zero()) {
            return estimate;
        }
        estimate = norm;
        v = w / norm;
    }
    estimate
}

/// Sample-mean GLM loss over a row subset, exposed as a [`SmoothObjective`].
pub struct GlmObjective<'a, S: Scalar> {
    family: GlmFamily,
    data: &'a PartitionedDataset<S>,
    rows: Vec<usize>,
    scale: S,
}

impl<'a, S: Scalar> GlmObjective<'a, S> {
    /// Mean loss `(1/|rows|) Σ` over `rows`.
    pub fn mean_loss(
        family: GlmFamily,
        data: &'a PartitionedDataset<S>,
        rows: Vec<usize>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptySubset {
                context: "glm objective".to_string(),
            });
        }
        family.check_outcomes(&data.outcomes(), &rows)?;
        let scale = S::one() / S::from_usize(rows.len()).expect("usize fits scalar");
        Ok(Self {
            family,
            data,
            rows,
            scale,
        })
    }

    /// Loss `scale · Σ` over `rows` with a caller-chosen scale, for objectives
    /// normalized by something other than the subset size (e.g. a grand total
    /// shared across several terms).
    pub fn scaled(
        family: GlmFamily,
        data: &'a PartitionedDataset<S>,
        rows: Vec<usize>,
        scale: S,
    ) -> Result<Self> {
        if !(scale > S::zero()) {
            return Err(Error::contract("objective scale must be positive"));
        }
        let mut objective = Self::mean_loss(family, data, rows)?;
        objective.scale = scale;
        Ok(objective)
    }

    /// Rows this objective sums over.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }
}

/// Evaluates an inner objective at `point + offset`.
///
/// Turns `b ↦ f(shift + b)` or `b ↦ f(b − contrast)` into a
/// [`SmoothObjective`] without re-deriving gradients: the chain rule for a
/// pure translation is the identity.
pub struct OffsetObjective<S, O> {
    inner: O,
    offset: Array1<S>,
}

impl<S: Scalar, O: SmoothObjective<S>> OffsetObjective<S, O> {
    /// Wraps `inner` so that evaluation at `b` means `inner` at `b + offset`.
    pub fn new(inner: O, offset: Array1<S>) -> Result<Self> {
        if offset.len() != inner.dim() {
            return Err(Error::dim("offset vs objective dim", inner.dim(), offset.len()));
        }
        Ok(Self { inner, offset })
    }
}

impl<S: Scalar, O: SmoothObjective<S>> SmoothObjective<S> for OffsetObjective<S, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, point: ArrayView1<S>) -> S {
        let moved = &point.to_owned() + &self.offset;
        self.inner.value(moved.view())
    }

    fn gradient(&self, point: ArrayView1<S>) -> Array1<S> {
        let moved = &point.to_owned() + &self.offset;
        self.inner.gradient(moved.view())
    }

    fn curvature(&self, point: ArrayView1<S>) -> Option<S> {
        let moved = &point.to_owned() + &self.offset;
        self.inner.curvature(moved.view())
    }
}

/// Sum of smooth objectives over a common parameter vector.
///
/// The reported curvature is the sum of the terms' curvatures — an upper
/// bound on the true top eigenvalue (spectral norms are subadditive), which
/// only makes the solver's initial step conservative, never invalid.
pub struct SumObjective<'a, S> {
    terms: Vec<Box<dyn SmoothObjective<S> + 'a>>,
}

impl<'a, S: Scalar> SumObjective<'a, S> {
    /// Validates that the terms agree on the dimension.
    pub fn new(terms: Vec<Box<dyn SmoothObjective<S> + 'a>>) -> Result<Self> {
        let Some(first) = terms.first() else {
            return Err(Error::contract("objective sum needs at least one term"));
        };
        let dim = first.dim();
        for term in &terms {
            if term.dim() != dim {
                return Err(Error::dim("objective sum term", dim, term.dim()));
            }
        }
        Ok(Self { terms })
    }
}

impl<S: Scalar> SmoothObjective<S> for SumObjective<'_, S> {
    fn dim(&self) -> usize {
        self.terms[0].dim()
    }

    fn value(&self, point: ArrayView1<S>) -> S {
        self.terms
            .iter()
            .fold(S::zero(), |acc, t| acc + t.value(point))
    }

    fn gradient(&self, point: ArrayView1<S>) -> Array1<S> {
        let mut out = Array1::<S>::zeros(self.dim());
        for term in &self.terms {
            out += &term.gradient(point);
        }
        out
    }

    fn curvature(&self, point: ArrayView1<S>) -> Option<S> {
        let mut total = S::zero();
        for term in &self.terms {
            total += term.curvature(point)?;
        }
        Some(total)
    }
}

impl<S: Scalar> SmoothObjective<S> for GlmObjective<'_, S> {
    fn dim(&self) -> usize {
        self.data.n_features()
    }

    fn value(&self, point: ArrayView1<S>) -> S {
        match glm::neg_log_lik(self.family, self.data, &self.rows, point) {
            Ok(v) => v * self.scale,
            Err(_) => S::infinity(),
        }
    }

    fn gradient(&self, point: ArrayView1<S>) -> Array1<S> {
        match glm::gradient(self.family, self.data, &self.rows, point) {
            Ok(g) => g * self.scale,
            Err(_) => Array1::from_elem(self.data.n_features(), S::nan()),
        }
    }

    fn curvature(&self, point: ArrayView1<S>) -> Option<S> {
        // Power iteration on H(point) = scale · Σ ψ̈(η_i) x_i x_iᵀ without
        // forming the matrix.
        let design = self.data.design();
        let weights: Vec<S> = self
            .rows
            .iter()
            .map(|&i| self.family.variance(design.row(i).dot(&point)))
            .collect();
        let estimate = power_iteration_estimate(self.dim(), CURVATURE_POWER_ITERS, |v| {
            let mut out = Array1::<S>::zeros(v.len());
            for (idx, &i) in self.rows.iter().enumerate() {
                let x = design.row(i);
                let coeff = weights[idx] * x.dot(v);
                out.scaled_add(coeff, &x);
            }
            out * self.scale
        });
        Some(estimate.max(real::<S>(1e-12)))
    }
}

/// Fold assignment and seeding for [`cross_validate_lambda`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossValidationPlan {
    /// Number of folds (≥ 2).
    pub folds: usize,
    /// Seed for the fold shuffle.
    pub seed: u64,
}

impl Default for CrossValidationPlan {
    fn default() -> Self {
        Self { folds: 5, seed: 0 }
    }
}

fn fold_assignment(rows: &[usize], folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut shuffled = rows.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let mut out = vec![Vec::new(); folds];
    for (i, row) in shuffled.into_iter().enumerate() {
        out[i % folds].push(row);
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    out
}

fn folds_have_both_classes<S: Scalar>(
    data: &PartitionedDataset<S>,
    folds: &[Vec<usize>],
) -> bool {
    folds.iter().all(|fold| {
        let mut seen_zero = false;
        let mut seen_one = false;
        for &i in fold {
            if data.outcomes()[i] == S::zero() {
                seen_zero = true;
            } else {
                seen_one = true;
            }
        }
        seen_zero && seen_one
    })
}

/// Selects a penalty level from a decreasing grid by K-fold cross-validation
/// of the mean held-out negative log-likelihood.  Ties prefer the larger
/// (sparser) penalty.
///
/// `fit` is called with a penalty level and the training rows of a fold and
/// must return fitted coefficients; a failed fit scores as `+∞` for that grid
/// point.
pub fn cross_validate_lambda<S: Scalar, F>(
    family: GlmFamily,
    data: &PartitionedDataset<S>,
    rows: &[usize],
    grid: &[S],
    plan: &CrossValidationPlan,
    mut fit: F,
) -> Result<S>
where
    F: FnMut(S, &[usize]) -> Result<Array1<S>>,
{
    if grid.is_empty() {
        return Err(Error::CrossValidation("empty penalty grid".to_string()));
    }
    for pair in grid.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(Error::CrossValidation(
                "penalty grid must be strictly decreasing".to_string(),
            ));
        }
    }
    if plan.folds < 2 {
        return Err(Error::CrossValidation("need at least 2 folds".to_string()));
    }
    if rows.len() < plan.folds {
        return Err(Error::CrossValidation(format!(
            "{} rows cannot form {} folds",
            rows.len(),
            plan.folds
        )));
    }

    let mut folds = fold_assignment(rows, plan.folds, plan.seed);
    if family == GlmFamily::Logistic && !folds_have_both_classes(data, &folds) {
        folds = fold_assignment(rows, plan.folds, plan.seed.wrapping_add(1));
        if !folds_have_both_classes(data, &folds) {
            return Err(Error::CrossValidation(
                "a fold contains a single outcome class after re-randomization".to_string(),
            ));
        }
    }

    let mut best: Option<(S, S)> = None; // (lambda, score)
    for &lambda in grid {
        let mut score = S::zero();
        let mut failed = false;
        for held_out in 0..plan.folds {
            let mut train: Vec<usize> = Vec::with_capacity(rows.len() - folds[held_out].len());
            for (f, fold) in folds.iter().enumerate() {
                if f != held_out {
                    train.extend_from_slice(fold);
                }
            }
            train.sort_unstable();
            match fit(lambda, &train) {
                Ok(coef) => {
                    let nll = glm::neg_log_lik(family, data, &folds[held_out], coef.view())
                        .unwrap_or_else(|_| S::infinity());
                    score += nll;
                }
                Err(err) => {
                    log::warn!("cross-validation fit failed at lambda {lambda}: {err}");
                    failed = true;
                    break;
                }
            }
        }
        if failed || !score.is_finite() {
            continue;
        }
        let improved = match best {
            None => true,
            // Strict improvement only: ties keep the earlier, larger lambda.
            Some((_, best_score)) => score < best_score,
        };
        if improved {
            best = Some((lambda, score));
        }
    }
    best.map(|(lambda, _)| lambda).ok_or_else(|| {
        Error::CrossValidation("every grid point failed to fit".to_string())
    })
}
