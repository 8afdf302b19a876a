//! Shared oracles for the integration suites.
//!
//! Everything here is written against raw arrays with its own arithmetic —
//! finite differences, an independent coordinate-descent lasso, closed-form
//! orthonormal solutions — so that agreement with the library is evidence,
//! not tautology.
#![allow(dead_code)]

use fedtrans::glm::GlmFamily;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, point: ArrayView1<f64>, eps: f64) -> Array1<f64>
where
    F: Fn(ArrayView1<f64>) -> f64,
{
    let p = point.len();
    let mut grad = Array1::zeros(p);
    let mut work = point.to_owned();
    for j in 0..p {
        let orig = work[j];
        work[j] = orig + eps;
        let up = f(work.view());
        work[j] = orig - eps;
        let down = f(work.view());
        work[j] = orig;
        grad[j] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Central-difference Jacobian of a vector function (columns are directional
/// differences).  Applied to an analytic gradient this yields the Hessian.
pub fn fd_jacobian<G>(g: G, point: ArrayView1<f64>, eps: f64) -> Array2<f64>
where
    G: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    let p = point.len();
    let mut jac = Array2::zeros((p, p));
    let mut work = point.to_owned();
    for j in 0..p {
        let orig = work[j];
        work[j] = orig + eps;
        let up = g(work.view());
        work[j] = orig - eps;
        let down = g(work.view());
        work[j] = orig;
        for i in 0..p {
            jac[[i, j]] = (up[i] - down[i]) / (2.0 * eps);
        }
    }
    jac
}

fn oracle_softplus(t: f64) -> f64 {
    if t > 35.0 {
        t
    } else if t < -35.0 {
        0.0
    } else {
        t.exp().ln_1p()
    }
}

fn oracle_sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Mean GLM loss `(1/n) Σ ψ(xᵢᵀb) − yᵢ·xᵢᵀb`, computed from scratch.
pub fn oracle_mean_loss(
    family: GlmFamily,
    design: ArrayView2<f64>,
    outcomes: ArrayView1<f64>,
    coefficients: ArrayView1<f64>,
) -> f64 {
    let n = design.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        let eta = design.row(i).dot(&coefficients);
        let cumulant = match family {
            GlmFamily::Gaussian => 0.5 * eta * eta,
            GlmFamily::Logistic => oracle_softplus(eta),
        };
        acc += cumulant - outcomes[i] * eta;
    }
    acc / n as f64
}

/// Penalized oracle objective: mean loss plus `λ‖b‖₁`.
pub fn oracle_objective(
    family: GlmFamily,
    design: ArrayView2<f64>,
    outcomes: ArrayView1<f64>,
    lambda: f64,
    coefficients: ArrayView1<f64>,
) -> f64 {
    oracle_mean_loss(family, design, outcomes, coefficients)
        + lambda * coefficients.iter().map(|v| v.abs()).sum::<f64>()
}

fn oracle_soft(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Independent penalized-lasso oracle: cyclic coordinate descent on the mean
/// GLM loss with per-coordinate majorization.
///
/// Each coordinate takes a prox step with its own Lipschitz constant
/// (`mean(x_j²)` for gaussian, a quarter of that for logistic, since the
/// logistic variance is at most 1/4).  Cycles until the largest coordinate
/// change in a sweep falls below `tol`.  Slow but simple, and it shares no
/// code with the library solver.
pub fn cd_lasso(
    family: GlmFamily,
    design: ArrayView2<f64>,
    outcomes: ArrayView1<f64>,
    lambda: f64,
    max_sweeps: usize,
    tol: f64,
) -> Array1<f64> {
    let n = design.nrows();
    let p = design.ncols();
    assert!(n > 0 && p > 0);
    let inv_n = 1.0 / n as f64;
    let lipschitz: Vec<f64> = (0..p)
        .map(|j| {
            let mean_sq = design.column(j).iter().map(|x| x * x).sum::<f64>() * inv_n;
            let l = match family {
                GlmFamily::Gaussian => mean_sq,
                GlmFamily::Logistic => 0.25 * mean_sq,
            };
            l.max(1e-12)
        })
        .collect();
    let mut beta = Array1::<f64>::zeros(p);
    let mut eta = Array1::<f64>::zeros(n);
    for _ in 0..max_sweeps {
        let mut max_change = 0.0_f64;
        for j in 0..p {
            let mut grad_j = 0.0;
            for i in 0..n {
                let mu = match family {
                    GlmFamily::Gaussian => eta[i],
                    GlmFamily::Logistic => oracle_sigmoid(eta[i]),
                };
                grad_j += design[[i, j]] * (mu - outcomes[i]);
            }
            grad_j *= inv_n;
            let l = lipschitz[j];
            let old = beta[j];
            let new = oracle_soft(old - grad_j / l, lambda / l);
            if new != old {
                let delta = new - old;
                for i in 0..n {
                    eta[i] += delta * design[[i, j]];
                }
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tol {
            break;
        }
    }
    beta
}

/// Design with exactly orthonormal `XᵀX/n = I`: Gram–Schmidt columns of a
/// Gaussian matrix scaled by `√n`.  Requires `p ≤ n`.
pub fn orthonormal_design(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    assert!(p <= n, "orthonormal design needs p <= n");
    let mut q = Array2::<f64>::zeros((n, p));
    for j in 0..p {
        let mut col: Array1<f64> = (0..n)
            .map(|_| StandardNormal.sample(rng))
            .collect::<Vec<f64>>()
            .into();
        // Two passes of modified Gram–Schmidt for numerical orthogonality.
        for _ in 0..2 {
            for k in 0..j {
                let proj = q.column(k).dot(&col);
                let prev = q.column(k).to_owned();
                col.scaled_add(-proj, &prev);
            }
        }
        let norm = col.dot(&col).sqrt();
        assert!(norm > 1e-8, "degenerate Gram–Schmidt column");
        col.mapv_inplace(|v| v / norm);
        q.column_mut(j).assign(&col);
    }
    q * (n as f64).sqrt()
}

/// Sparse coefficient vector with `nonzeros` leading entries drawn uniform
/// in `±[0.5, 1.5]`.
pub fn random_coefficients(p: usize, nonzeros: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let mut beta = Array1::<f64>::zeros(p);
    for j in 0..nonzeros.min(p) {
        let magnitude = rng.gen_range(0.5..1.5);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        beta[j] = sign * magnitude;
    }
    beta
}

/// Dense standard-normal design.
pub fn gaussian_design(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let values: Vec<f64> = (0..n * p).map(|_| StandardNormal.sample(rng)).collect();
    Array2::from_shape_vec((n, p), values).expect("shape matches draw count")
}

/// Outcomes for a design and truth under a family: gaussian adds unit noise,
/// logistic draws Bernoulli at the sigmoid mean.
pub fn outcomes_for(
    family: GlmFamily,
    design: ArrayView2<f64>,
    truth: ArrayView1<f64>,
    rng: &mut ChaCha8Rng,
) -> Array1<f64> {
    let n = design.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let eta = design.row(i).dot(&truth);
        y[i] = match family {
            GlmFamily::Gaussian => {
                let noise: f64 = StandardNormal.sample(rng);
                eta + noise
            }
            GlmFamily::Logistic => {
                if rng.gen_bool(oracle_sigmoid(eta).clamp(1e-12, 1.0 - 1e-12)) {
                    1.0
                } else {
                    0.0
                }
            }
        };
    }
    y
}

/// Largest absolute entry difference between two vectors.
pub fn max_abs_diff(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Euclidean distance between two vectors.
pub fn l2_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Median of a slice (average of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

/// Arithmetic mean of a slice.
pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    values.iter().sum::<f64>() / values.len() as f64
}
