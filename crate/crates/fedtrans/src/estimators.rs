//! Transfer-learning estimators over partitioned GLM data.
//!
//! Population id 0 is always the target population; every other id is a
//! source population.  The estimators come in two flavors:
//!
//! * **Pooled** ([`pooled_transfer`]): direct three-step transfer learning
//!   with individual-level access — fit each source, learn a sparse contrast
//!   against the target, then fit jointly with the contrasts fixed.  Used for
//!   initialization on a single site's shard and as the oracle the federated
//!   variants are tested against.
//! * **Federated** ([`fed_transfer_full_hessian`],
//!   [`fed_transfer_local_hessian`], [`fed_lasso`], [`fed_target_only`]):
//!   the same three steps driven entirely by encoded gradient/Hessian
//!   messages.  Each round, hard-thresholded anchor vectors are broadcast,
//!   sites answer with local summaries, and every subproblem is solved on
//!   quadratic surrogates assembled from those messages.  The full-Hessian
//!   variant pools curvature from every site; the local-Hessian variant uses
//!   only the leading site's curvature and halves its penalties round by
//!   round toward the rate values, trading accuracy per round for far less
//!   traffic.
//!
//! [`aggregate`] guards against negative transfer: held-out validation rows
//! from the leading site's target cell pick between the transfer estimate
//! and a target-only estimate by validation log-likelihood.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{run_exchange, CommLedger, QuadraticSurrogate, SiteNode, WeightedSurrogateSum};
use crate::glm::{self, GlmFamily, PartitionedDataset};
use crate::solver::{
    self, cross_validate_lambda, hard_threshold_topk, solve_l1, CrossValidationPlan, GlmObjective,
    OffsetObjective, PenaltyConfig, SmoothObjective, SolverOutput, SumObjective,
};

/// The target population's id.
pub const TARGET_POPULATION: u32 = 0;

/// Which estimator drives a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Direct pooled fit (requires individual-level access).
    Pooled,
    /// Federated rounds with gradients and Hessians from every site.
    FullHessian,
    /// Federated rounds with gradients only; curvature from the leading site.
    LocalHessian,
}

/// How the starting values are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Pooled transfer fit on the leading site's own shard (the leading site
    /// must hold every population).
    SingleSite,
    /// Per-population local lasso at whichever site holds that population's
    /// largest cell.
    MultiSite,
}

/// Penalty-level selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Tuning {
    /// Rate formulas `c₀·√(log p / n)` with the sample sizes of each
    /// subproblem; `c₀` is [`PenaltyConfig::rate_constant`].  When the
    /// heterogeneity level `h` is known (synthetic data), the joint penalty
    /// adds `h·log p / n⁰`.
    Theory {
        /// Known contrast sparsity level, when available.
        heterogeneity: Option<f64>,
    },
    /// Explicit penalty levels, applied as-is every round.
    Fixed {
        /// Source-fit penalty (every source population).
        lambda_w: f64,
        /// Contrast-fit penalty.
        lambda_delta: f64,
        /// Joint-fit penalty (also the target-only penalty).
        lambda_beta: f64,
    },
    /// Calibrates the rate constant by cross-validating a plain lasso on the
    /// leading site's target cell, then proceeds as `Theory`.
    CrossValidated {
        /// Penalty-grid resolution (log-spaced from λ_max down to λ_max/100).
        grid_points: usize,
        /// Cross-validation folds.
        folds: usize,
        /// Fold-shuffle seed.
        seed: u64,
    },
}

/// Full configuration for one estimator run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Communication rounds T ≥ 1.
    pub rounds: usize,
    /// Estimator flavor.
    pub algorithm: Algorithm,
    /// Initialization strategy.
    pub init: InitStrategy,
    /// Leading site id (hosts initialization, validation data, and — for the
    /// local-Hessian variant — the curvature).
    pub leading_site: u32,
    /// Penalty constants and anchor budget.
    pub penalty: PenaltyConfig,
    /// Penalty-level selection mode.
    pub tuning: Tuning,
    /// Nonzero budget for the thresholded contrasts; `None` derives
    /// `⌊√(n⁰ / log p)⌋` from the total target sample size.
    pub delta_budget: Option<usize>,
    /// Whether the final estimate passes through validation-based selection
    /// against a target-only fit.
    pub aggregation: bool,
    /// Fraction of the leading site's target cell held out for validation.
    pub validation_fraction: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            rounds: 1,
            algorithm: Algorithm::FullHessian,
            init: InitStrategy::SingleSite,
            leading_site: 0,
            penalty: PenaltyConfig::default(),
            tuning: Tuning::Theory {
                heterogeneity: None,
            },
            delta_budget: None,
            aggregation: true,
            validation_fraction: 0.2,
        }
    }
}

impl EstimatorConfig {
    /// Checks field-level invariants.
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if !(self.penalty.rate_constant > 0.0) {
            return Err(Error::config("penalty.rate_constant", "must be positive"));
        }
        if !(self.penalty.init_constant >= 1.0) {
            return Err(Error::config("penalty.init_constant", "must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config(
                "validation_fraction",
                "must lie strictly between 0 and 1",
            ));
        }
        if let Tuning::Fixed {
            lambda_w,
            lambda_delta,
            lambda_beta,
        } = self.tuning
        {
            for (name, v) in [
                ("tuning.lambda_w", lambda_w),
                ("tuning.lambda_delta", lambda_delta),
                ("tuning.lambda_beta", lambda_beta),
            ] {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::config(name, "must be a finite non-negative number"));
                }
            }
        }
        if let Tuning::CrossValidated {
            grid_points, folds, ..
        } = self.tuning
        {
            if grid_points < 2 {
                return Err(Error::config("tuning.grid_points", "must be at least 2"));
            }
            if folds < 2 {
                return Err(Error::config("tuning.folds", "must be at least 2"));
            }
        }
        Ok(())
    }
}

/// Fitted coefficients for the target and each source population.
///
/// `delta` holds the thresholded contrasts the joint step actually used.
/// Each contrast is estimated in its own subproblem; no algebraic identity
/// between `beta`, `w`, and `delta` is asserted for the estimates.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    /// Target coefficient estimate (the final round's).
    pub beta: Array1<f64>,
    /// Source coefficient estimates, by population id.
    pub w: BTreeMap<u32, Array1<f64>>,
    /// Thresholded contrast estimates, by population id.
    pub delta: BTreeMap<u32, Array1<f64>>,
    /// Target estimate after each completed round (index 0 = round 1).
    pub beta_rounds: Vec<Array1<f64>>,
    /// Rounds fully completed.
    pub round_index: usize,
    /// Whether every subproblem met the solver tolerance and no round was
    /// aborted.
    pub converged: bool,
    /// Context of the aborted subproblem, when a round was cut short.
    pub failure: Option<String>,
}

/// Starting values for the federated loops.
#[derive(Debug, Clone)]
pub struct Initialization {
    /// Initial target estimate.
    pub beta: Array1<f64>,
    /// Initial source estimates, by population id.
    pub w: BTreeMap<u32, Array1<f64>>,
    /// Sample size behind each population's initial estimate (drives derived
    /// anchor budgets and the local-Hessian penalty schedule).
    pub init_counts: BTreeMap<u32, usize>,
}

/// Outcome of validation-based selection between two candidate estimates.
#[derive(Debug, Clone)]
pub struct AggregationChoice {
    /// Candidate matrix, p×2: column 0 = target-only, column 1 = transfer.
    pub candidates: Array2<f64>,
    /// Index of the selected column.
    pub selected: usize,
    /// Validation log-likelihood of each column.
    pub log_likelihoods: [f64; 2],
    /// The selected column.
    pub beta: Array1<f64>,
}

/// Scope of a federated lasso fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopulationSelector {
    /// One population's rows only.
    Single(u32),
    /// Every row, population labels ignored.
    All,
}

/// Rate-formula penalty `c₀ √(log p / n)`.
fn rate_lambda(c0: f64, p: usize, n: usize) -> f64 {
    c0 * ((p as f64).ln() / n as f64).sqrt()
}

/// Resolved penalty levels for one run.
#[derive(Debug, Clone)]
struct ResolvedPenalties {
    lambda_w: BTreeMap<u32, f64>,
    lambda_delta: f64,
    lambda_beta: f64,
    /// Rate constant the levels were derived from (`None` for fixed levels;
    /// fixed levels are immune to the per-round schedule).
    rate_constant: Option<f64>,
}

impl ResolvedPenalties {
    fn from_counts(
        tuning_constant: Option<f64>,
        tuning: &Tuning,
        p: usize,
        counts: &BTreeMap<u32, usize>,
    ) -> Result<Self> {
        let n_target = *counts.get(&TARGET_POPULATION).ok_or_else(|| {
            Error::EmptySubset {
                context: "target population".to_string(),
            }
        })?;
        let n_total: usize = counts.values().sum();
        match tuning {
            Tuning::Fixed {
                lambda_w,
                lambda_delta,
                lambda_beta,
            } => Ok(Self {
                lambda_w: counts
                    .keys()
                    .filter(|&&k| k != TARGET_POPULATION)
                    .map(|&k| (k, *lambda_w))
                    .collect(),
                lambda_delta: *lambda_delta,
                lambda_beta: *lambda_beta,
                rate_constant: None,
            }),
            Tuning::Theory { heterogeneity } => {
                let c0 = tuning_constant.expect("theory tuning carries a rate constant");
                let mut lambda_beta = rate_lambda(c0, p, n_total);
                if let Some(h) = heterogeneity {
                    lambda_beta += h * (p as f64).ln() / n_target as f64;
                }
                Ok(Self {
                    lambda_w: counts
                        .iter()
                        .filter(|&(&k, _)| k != TARGET_POPULATION)
                        .map(|(&k, &n)| (k, rate_lambda(c0, p, n)))
                        .collect(),
                    lambda_delta: rate_lambda(c0, p, n_target),
                    lambda_beta,
                    rate_constant: Some(c0),
                })
            }
            Tuning::CrossValidated { .. } => {
                let c0 = tuning_constant.expect("calibrated tuning carries a rate constant");
                Self::from_counts(
                    Some(c0),
                    &Tuning::Theory {
                        heterogeneity: None,
                    },
                    p,
                    counts,
                )
            }
        }
    }
}

/// Effective rate constant: configured for theory mode, cross-validated on
/// the leading site's target cell otherwise, absent for fixed levels.
fn effective_rate_constant(
    family: GlmFamily,
    config: &EstimatorConfig,
    calibration: Option<(&PartitionedDataset<f64>, &[usize])>,
) -> Result<Option<f64>> {
    match &config.tuning {
        Tuning::Fixed { .. } => Ok(None),
        Tuning::Theory { .. } => Ok(Some(config.penalty.rate_constant)),
        Tuning::CrossValidated {
            grid_points,
            folds,
            seed,
        } => {
            let (data, rows) = calibration.ok_or_else(|| {
                Error::config(
                    "tuning",
                    "cross-validated tuning needs leading-site target rows to calibrate on",
                )
            })?;
            if rows.is_empty() {
                return Err(Error::EmptySubset {
                    context: "penalty calibration rows".to_string(),
                });
            }
            let objective = GlmObjective::mean_loss(family, data, rows.to_vec())?;
            let penalty_shape = config.penalty.l1_penalty::<f64>(data.has_intercept());
            let top = solver::lambda_max(&objective, &penalty_shape);
            if !(top > 0.0) {
                return Err(Error::CrossValidation(
                    "flat objective: cannot build a penalty grid".to_string(),
                ));
            }
            let m = *grid_points;
            let grid: Vec<f64> = (0..m)
                .map(|i| top * (0.01f64).powf(i as f64 / (m - 1) as f64))
                .collect();
            let plan = CrossValidationPlan {
                folds: *folds,
                seed: *seed,
            };
            let chosen = cross_validate_lambda(family, data, rows, &grid, &plan, |lambda, train| {
                let obj = GlmObjective::mean_loss(family, data, train.to_vec())?;
                let mut pen = config.penalty.clone();
                pen.lambda = lambda;
                let out = solve_l1(
                    &obj,
                    &pen.l1_penalty(data.has_intercept()),
                    Array1::zeros(obj.dim()).view(),
                    solver::DEFAULT_TOL,
                    solver::DEFAULT_MAX_ITER,
                )?;
                Ok(out.coefficients)
            })?;
            let p = data.n_features();
            Ok(Some(chosen / ((p as f64).ln() / rows.len() as f64).sqrt()))
        }
    }
}

/// One penalized solve with the configured penalty shape.
fn penalized_solve<O: SmoothObjective<f64> + ?Sized>(
    objective: &O,
    lambda: f64,
    config: &EstimatorConfig,
    has_intercept: bool,
    init: &Array1<f64>,
) -> Result<SolverOutput<f64>> {
    let mut pen = config.penalty.clone();
    pen.lambda = lambda;
    solve_l1(
        objective,
        &pen.l1_penalty(has_intercept),
        init.view(),
        solver::DEFAULT_TOL,
        solver::DEFAULT_MAX_ITER,
    )
}

/// Anchor nonzero budget for one population: configured, or
/// `round(√(n_init / log p))`, at least 1.
fn anchor_budget(config: &EstimatorConfig, p: usize, n_init: usize) -> usize {
    config.penalty.anchor_budget.unwrap_or_else(|| {
        let formula = (n_init as f64 / (p as f64).ln()).sqrt().round() as usize;
        formula.max(1)
    })
}

/// Population sample sizes across a site list.
fn population_counts(sites: &[SiteNode]) -> BTreeMap<u32, usize> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for site in sites {
        for pop in site.populations() {
            *counts.entry(pop).or_default() += site.population_count(pop);
        }
    }
    counts
}

/// The site with a given id.
fn find_site<'a>(sites: &'a [SiteNode], site_id: u32) -> Result<&'a SiteNode> {
    sites
        .iter()
        .find(|s| s.site_id() == site_id)
        .ok_or_else(|| Error::config("leading_site", format!("no site with id {site_id}")))
}

/// Site holding the most rows of one population (ties → lowest site id).
fn largest_site_for(sites: &[SiteNode], population: u32) -> Result<&SiteNode> {
    let mut best: Option<(&SiteNode, usize)> = None;
    for site in sites {
        let n = site.population_count(population);
        if n == 0 {
            continue;
        }
        let replace = match best {
            None => true,
            Some((b, bn)) => n > bn || (n == bn && site.site_id() < b.site_id()),
        };
        if replace {
            best = Some((site, n));
        }
    }
    best.map(|(s, _)| s).ok_or_else(|| Error::EmptySubset {
        context: format!("population {population} has no rows at any site"),
    })
}

/// Plain penalized fit on a row subset of one dataset.
fn local_lasso(
    family: GlmFamily,
    data: &PartitionedDataset<f64>,
    rows: Vec<usize>,
    lambda: f64,
    config: &EstimatorConfig,
) -> Result<SolverOutput<f64>> {
    let objective = GlmObjective::mean_loss(family, data, rows)?;
    let init = Array1::zeros(objective.dim());
    penalized_solve(&objective, lambda, config, data.has_intercept(), &init)
}

/// Pooled three-step transfer fit with individual-level access.
///
/// Fits each source population, learns a thresholded contrast toward the
/// target for each, then fits the target jointly over all rows with each
/// source's loss evaluated at the contrast-corrected point.  With no source
/// populations present this reduces to a penalized target-only fit.
pub fn pooled_transfer(
    data: &PartitionedDataset<f64>,
    family: GlmFamily,
    config: &EstimatorConfig,
) -> Result<CoefficientSet> {
    config.validate()?;
    let p = data.n_features();
    let target_rows = data.population_rows(TARGET_POPULATION);
    if target_rows.is_empty() {
        return Err(Error::EmptySubset {
            context: "target population".to_string(),
        });
    }
    let mut counts = BTreeMap::new();
    for pop in data.populations() {
        counts.insert(pop, data.population_count(pop));
    }
    let leading_target: Vec<usize> = data
        .cell_rows(config.leading_site, TARGET_POPULATION)
        .map(|r| r.to_vec())
        .unwrap_or_else(|| target_rows.clone());
    let c0 = effective_rate_constant(family, config, Some((data, &leading_target)))?;
    let penalties = ResolvedPenalties::from_counts(c0, &config.tuning, p, &counts)?;
    let budget = contrast_budget(config, counts[&TARGET_POPULATION], p);

    let mut w = BTreeMap::new();
    let mut delta = BTreeMap::new();
    let mut converged = true;

    // Source fits and contrasts.
    for (&pop, _) in counts.iter().filter(|&(&k, _)| k != TARGET_POPULATION) {
        let rows = data.population_rows(pop);
        let source_obj = GlmObjective::mean_loss(family, data, rows)?;
        let init = Array1::zeros(p);
        let fit = penalized_solve(
            &source_obj,
            penalties.lambda_w[&pop],
            config,
            data.has_intercept(),
            &init,
        )?;
        converged &= fit.converged;

        let target_obj = GlmObjective::mean_loss(family, data, target_rows.clone())?;
        let shifted = OffsetObjective::new(target_obj, fit.coefficients.clone())?;
        let contrast_fit = penalized_solve(
            &shifted,
            penalties.lambda_delta,
            config,
            data.has_intercept(),
            &Array1::zeros(p),
        )?;
        converged &= contrast_fit.converged;
        delta.insert(
            pop,
            hard_threshold_topk(contrast_fit.coefficients.view(), budget),
        );
        w.insert(pop, fit.coefficients);
    }

    // Joint fit over every row, sources evaluated at contrast-corrected
    // points, all scaled by the grand total.
    let n_total: usize = counts.values().sum();
    let scale = 1.0 / n_total as f64;
    let mut terms: Vec<Box<dyn SmoothObjective<f64>>> = Vec::new();
    terms.push(Box::new(GlmObjective::scaled(
        family,
        data,
        target_rows,
        scale,
    )?));
    for (&pop, contrast) in &delta {
        let rows = data.population_rows(pop);
        let obj = GlmObjective::scaled(family, data, rows, scale)?;
        terms.push(Box::new(OffsetObjective::new(obj, -contrast.clone())?));
    }
    let joint = SumObjective::new(terms)?;
    let joint_fit = penalized_solve(
        &joint,
        penalties.lambda_beta,
        config,
        data.has_intercept(),
        &Array1::zeros(p),
    )?;
    converged &= joint_fit.converged;

    Ok(CoefficientSet {
        beta: joint_fit.coefficients.clone(),
        w,
        delta,
        beta_rounds: vec![joint_fit.coefficients],
        round_index: 0,
        converged,
        failure: None,
    })
}

/// Contrast nonzero budget: configured, or `⌊√(n⁰ / log p)⌋`.
fn contrast_budget(config: &EstimatorConfig, n_target: usize, p: usize) -> usize {
    config
        .delta_budget
        .unwrap_or_else(|| (n_target as f64 / (p as f64).ln()).sqrt().floor() as usize)
}

/// Starting values from a pooled fit on the leading site's own shard.
///
/// Requires the leading site to hold every population present anywhere;
/// otherwise errors and the multi-site strategy should be used.
pub fn init_single_site(
    sites: &[SiteNode],
    family: GlmFamily,
    config: &EstimatorConfig,
) -> Result<Initialization> {
    config.validate()?;
    let leading = find_site(sites, config.leading_site)?;
    let counts = population_counts(sites);
    let mut init_counts = BTreeMap::new();
    for &pop in counts.keys() {
        let n = leading.population_count(pop);
        if n == 0 {
            return Err(Error::config(
                "init",
                format!(
                    "leading site {} holds no rows for population {pop}; \
                     use the multi-site initialization strategy",
                    leading.site_id()
                ),
            ));
        }
        init_counts.insert(pop, n);
    }
    let fitted = pooled_transfer(leading.local_dataset(), family, config)?;
    Ok(Initialization {
        beta: fitted.beta,
        w: fitted.w,
        init_counts,
    })
}

/// Starting values from per-population local fits.
///
/// Each population is fitted at the site holding its largest cell (ties →
/// lowest site id) with penalty `c₁·√(log p / n_cell)`.  When the population
/// is a small minority at that site (under 20% of the site's rows) and the
/// site also holds target rows, a local pooled transfer fit is used instead
/// so the minority cell can borrow strength from the site's other rows.
pub fn init_multi_site(
    sites: &[SiteNode],
    family: GlmFamily,
    config: &EstimatorConfig,
) -> Result<Initialization> {
    config.validate()?;
    let counts = population_counts(sites);
    if !counts.contains_key(&TARGET_POPULATION) {
        return Err(Error::EmptySubset {
            context: "target population".to_string(),
        });
    }
    let mut beta = None;
    let mut w = BTreeMap::new();
    let mut init_counts = BTreeMap::new();
    for &pop in counts.keys() {
        let host = largest_site_for(sites, pop)?;
        let local = host.local_dataset();
        let cell = local.population_rows(pop);
        let n_cell = cell.len();
        init_counts.insert(pop, n_cell);
        let p = local.n_features();
        let share = n_cell as f64 / local.n_rows() as f64;
        let minority = share < 0.2;
        let has_target_rows = local.population_count(TARGET_POPULATION) > 0;

        let coefficients = if minority && has_target_rows && pop != TARGET_POPULATION {
            // Minority source cell: borrow strength from the host site's
            // other populations through a local transfer fit.
            let mut local_config = config.clone();
            local_config.leading_site = host.site_id();
            let fitted = pooled_transfer(local, family, &local_config)?;
            fitted.w.get(&pop).cloned().unwrap_or_else(|| {
                log::warn!(
                    "population {pop} missing from local transfer fit at site {}; \
                     falling back to a plain local fit",
                    host.site_id()
                );
                Array1::zeros(p)
            })
        } else if minority && pop == TARGET_POPULATION && local.populations().len() > 1 {
            // Minority target cell: same idea, taking the transfer fit's
            // target estimate.
            let mut local_config = config.clone();
            local_config.leading_site = host.site_id();
            pooled_transfer(local, family, &local_config)?.beta
        } else {
            let lambda = rate_lambda(config.penalty.init_constant, p, n_cell);
            local_lasso(family, local, cell, lambda, config)?.coefficients
        };

        if pop == TARGET_POPULATION {
            beta = Some(coefficients);
        } else {
            w.insert(pop, coefficients);
        }
    }
    Ok(Initialization {
        beta: beta.expect("target population verified present"),
        w,
        init_counts,
    })
}

/// Dispatches to the configured initialization strategy.
pub fn initialize(
    sites: &[SiteNode],
    family: GlmFamily,
    config: &EstimatorConfig,
) -> Result<Initialization> {
    match config.init {
        InitStrategy::SingleSite => init_single_site(sites, family, config),
        InitStrategy::MultiSite => init_multi_site(sites, family, config),
    }
}

/// Per-round penalty level under the local-Hessian schedule: starts at the
/// initialization rate and halves each round, floored at the target level.
fn scheduled(level: f64, init_level: f64, round: usize) -> f64 {
    level.max(init_level * 0.5_f64.powi(round as i32))
}

/// Shared driver for both federated transfer variants.
fn fed_transfer_rounds(
    sites: &[SiteNode],
    family: GlmFamily,
    config: &EstimatorConfig,
    ledger: &mut CommLedger,
    local_hessian: bool,
) -> Result<CoefficientSet> {
    config.validate()?;
    if sites.is_empty() {
        return Err(Error::EmptySubset {
            context: "site list".to_string(),
        });
    }
    let counts = population_counts(sites);
    if !counts.contains_key(&TARGET_POPULATION) {
        return Err(Error::EmptySubset {
            context: "target population".to_string(),
        });
    }
    let leading = find_site(sites, config.leading_site)?;
    if local_hessian {
        for &pop in counts.keys() {
            if leading.population_count(pop) == 0 {
                return Err(Error::config(
                    "leading_site",
                    format!(
                        "the local-Hessian variant needs population {pop} at leading site {}",
                        leading.site_id()
                    ),
                ));
            }
        }
    }
    let p = leading.local_dataset().n_features();
    let calib_rows = leading
        .local_dataset()
        .population_rows(TARGET_POPULATION);
    let c0 = effective_rate_constant(
        family,
        config,
        Some((leading.local_dataset(), &calib_rows)),
    )?;
    let mut calibrated = config.clone();
    if let (Some(c0), Tuning::CrossValidated { .. }) = (c0, &config.tuning) {
        // Initialization reuses the calibrated constant instead of
        // re-running cross-validation inside each local fit.
        calibrated.tuning = Tuning::Theory {
            heterogeneity: None,
        };
        calibrated.penalty.rate_constant = c0;
    }
    let initialization = initialize(sites, family, &calibrated)?;
    let penalties = ResolvedPenalties::from_counts(c0, &calibrated.tuning, p, &counts)?;
    let n_target = counts[&TARGET_POPULATION];
    let n_total: usize = counts.values().sum();
    let budget = contrast_budget(config, n_target, p);
    let populations: Vec<u32> = counts.keys().copied().collect();
    let source_pops: Vec<u32> = populations
        .iter()
        .copied()
        .filter(|&k| k != TARGET_POPULATION)
        .collect();

    // Initialization penalty levels, for the local-Hessian schedule.
    let init_level = |pop: u32| {
        let n = initialization
            .init_counts
            .get(&pop)
            .copied()
            .unwrap_or(n_target);
        rate_lambda(config.penalty.init_constant, p, n)
    };

    let mut beta = initialization.beta.clone();
    let mut w = initialization.w.clone();
    let mut delta: BTreeMap<u32, Array1<f64>> = BTreeMap::new();
    let mut beta_rounds = Vec::with_capacity(config.rounds);
    let mut converged = true;
    let has_intercept = leading.local_dataset().has_intercept();

    for round in 1..=config.rounds {
        // (a) Hard-thresholded anchors.
        let mut anchors = BTreeMap::new();
        anchors.insert(
            TARGET_POPULATION,
            hard_threshold_topk(
                beta.view(),
                anchor_budget(config, p, initialization.init_counts[&TARGET_POPULATION]),
            ),
        );
        for &pop in &source_pops {
            let n_init = initialization
                .init_counts
                .get(&pop)
                .copied()
                .unwrap_or(n_target);
            anchors.insert(
                pop,
                hard_threshold_topk(w[&pop].view(), anchor_budget(config, p, n_init)),
            );
        }

        // (b) One exchange: gradients always, Hessians only for the
        // full-Hessian variant.
        let exchange = run_exchange(
            sites,
            &populations,
            &anchors,
            !local_hessian,
            round as u32,
            ledger,
        )?;

        // (c) Per-population surrogates.
        let mut surrogates: BTreeMap<u32, QuadraticSurrogate> = BTreeMap::new();
        for &pop in &populations {
            let anchor = anchors[&pop].clone();
            let surrogate = if local_hessian {
                let (packed, _) = leading.local_hessian(pop, &anchor)?;
                QuadraticSurrogate::with_local_hessian(
                    anchor,
                    exchange.gradients_for(pop),
                    packed,
                )?
            } else {
                exchange.surrogate(pop, &anchor)?
            };
            surrogates.insert(pop, surrogate);
        }

        // Per-round penalty levels.
        let schedule_on = local_hessian && penalties.rate_constant.is_some();
        let level_w = |pop: u32| {
            let base = penalties.lambda_w[&pop];
            if schedule_on {
                scheduled(base, init_level(pop), round)
            } else {
                base
            }
        };
        let level_delta = if schedule_on {
            scheduled(
                penalties.lambda_delta,
                init_level(TARGET_POPULATION),
                round,
            )
        } else {
            penalties.lambda_delta
        };
        let level_beta = if schedule_on {
            scheduled(penalties.lambda_beta, init_level(TARGET_POPULATION), round)
        } else {
            penalties.lambda_beta
        };

        // Round body; a diverging subproblem aborts the round.
        let round_result = (|| -> Result<(BTreeMap<u32, Array1<f64>>, BTreeMap<u32, Array1<f64>>, Array1<f64>, bool)> {
            let mut round_w = BTreeMap::new();
            let mut round_delta = BTreeMap::new();
            let mut round_ok = true;

            for &pop in &source_pops {
                let fit = penalized_solve(
                    &surrogates[&pop],
                    level_w(pop),
                    config,
                    has_intercept,
                    &w[&pop],
                )?;
                round_ok &= fit.converged;
                round_w.insert(pop, fit.coefficients);
            }

            for &pop in &source_pops {
                // Contrast subproblem: target surrogate evaluated at the
                // freshly fitted source coefficients plus the contrast.
                let shifted = surrogates[&TARGET_POPULATION].shifted(round_w[&pop].view())?;
                let fit = penalized_solve(
                    &shifted,
                    level_delta,
                    config,
                    has_intercept,
                    &Array1::zeros(p),
                )?;
                round_ok &= fit.converged;
                round_delta.insert(pop, hard_threshold_topk(fit.coefficients.view(), budget));
            }

            // Joint subproblem: sample-share-weighted surrogates, each
            // source's evaluated at the contrast-corrected point.
            let mut weighted = Vec::with_capacity(populations.len());
            weighted.push((
                n_target as f64 / n_total as f64,
                surrogates[&TARGET_POPULATION].clone(),
            ));
            for &pop in &source_pops {
                let moved = surrogates[&pop].shifted((-&round_delta[&pop]).view())?;
                weighted.push((counts[&pop] as f64 / n_total as f64, moved));
            }
            let joint = WeightedSurrogateSum::new(weighted)?;
            let fit = penalized_solve(&joint, level_beta, config, has_intercept, &beta)?;
            round_ok &= fit.converged;
            Ok((round_w, round_delta, fit.coefficients, round_ok))
        })();

        match round_result {
            Ok((round_w, round_delta, round_beta, round_ok)) => {
                w = round_w;
                delta = round_delta;
                beta = round_beta;
                converged &= round_ok;
                beta_rounds.push(beta.clone());
            }
            Err(Error::SolverDiverged { iterations, context }) => {
                return Ok(CoefficientSet {
                    beta,
                    w,
                    delta,
                    beta_rounds,
                    round_index: round - 1,
                    converged: false,
                    failure: Some(format!(
                        "solver diverged after {iterations} iterations in round {round}: {context}"
                    )),
                });
            }
            Err(other) => return Err(other),
        }
    }

    Ok(CoefficientSet {
        beta,
        w,
        delta,
        beta_rounds,
        round_index: config.rounds,
        converged,
        failure: None,
    })
}

/// Federated transfer fit with pooled curvature.
///
/// Every site contributes gradients and Hessians each round; all three
/// subproblem families are solved on the pooled surrogates.  For gaussian
/// outcomes the surrogates are exact, so a single round reproduces
/// [`pooled_transfer`] regardless of how rows are split across sites.
pub fn fed_transfer_full_hessian(
    sites: &[SiteNode],
    family: GlmFamily,
    config: &EstimatorConfig,
    ledger: &mut CommLedger,
) -> Result<CoefficientSet> {
    fed_transfer_rounds(sites, family, config, ledger, false)
}

/// Federated transfer fit with leading-site curvature only.
///
/// Sites transmit gradients only; the leading site computes every
/// population's curvature from its own rows and that matrix never crosses
/// the wire.  Under rate-based tuning the penalties start at the
/// initialization level and halve each round down to the rate values,
/// compensating for the cruder curvature in early rounds.
pub fn fed_transfer_local_hessian(
    sites: &[SiteNode],
    family: GlmFamily,
    config: &EstimatorConfig,
    ledger: &mut CommLedger,
) -> Result<CoefficientSet> {
    fed_transfer_rounds(sites, family, config, ledger, true)
}

/// Federated penalized fit of one population (or of everything pooled).
///
/// Per round: hard-threshold the current estimate into an anchor, exchange
/// gradient and Hessian messages for the selected scope, and re-fit on the
/// surrogate.  `Single(0)` is the federated target-only baseline and touches
/// no source rows; `All` ignores population labels entirely.
pub fn fed_lasso(
    sites: &[SiteNode],
    family: GlmFamily,
    selector: PopulationSelector,
    config: &EstimatorConfig,
    ledger: &mut CommLedger,
) -> Result<Array1<f64>> {
    config.validate()?;
    if sites.is_empty() {
        return Err(Error::EmptySubset {
            context: "site list".to_string(),
        });
    }
    let counts = population_counts(sites);
    let populations: Vec<u32> = match selector {
        PopulationSelector::Single(pop) => {
            if !counts.contains_key(&pop) {
                return Err(Error::EmptySubset {
                    context: format!("population {pop} has no rows at any site"),
                });
            }
            vec![pop]
        }
        PopulationSelector::All => counts.keys().copied().collect(),
    };
    let n_scope: usize = populations.iter().map(|k| counts[k]).sum();

    // Initialization: local fit at the site with the most in-scope rows.
    let host = match selector {
        PopulationSelector::Single(pop) => largest_site_for(sites, pop)?,
        PopulationSelector::All => sites
            .iter()
            .max_by(|a, b| {
                let an = a.local_dataset().n_rows();
                let bn = b.local_dataset().n_rows();
                an.cmp(&bn).then(b.site_id().cmp(&a.site_id()))
            })
            .expect("site list verified non-empty"),
    };
    let local = host.local_dataset();
    let p = local.n_features();
    let init_rows: Vec<usize> = match selector {
        PopulationSelector::Single(pop) => local.population_rows(pop),
        PopulationSelector::All => local.all_rows(),
    };
    let n_init = init_rows.len();
    let init_lambda = rate_lambda(config.penalty.init_constant, p, n_init);
    let mut estimate = local_lasso(family, local, init_rows, init_lambda, config)?.coefficients;

    // Penalty level for the federated refits.
    let lambda = match &config.tuning {
        Tuning::Fixed { lambda_beta, .. } => *lambda_beta,
        Tuning::Theory { .. } => rate_lambda(config.penalty.rate_constant, p, n_scope),
        Tuning::CrossValidated { .. } => {
            let calib_rows: Vec<usize> = match selector {
                PopulationSelector::Single(pop) => local.population_rows(pop),
                PopulationSelector::All => local.all_rows(),
            };
            let c0 = effective_rate_constant(family, config, Some((local, &calib_rows)))?
                .expect("cross-validated tuning yields a constant");
            rate_lambda(c0, p, n_scope)
        }
    };

    let budget = anchor_budget(config, p, n_init);
    for round in 1..=config.rounds {
        let anchor = hard_threshold_topk(estimate.view(), budget);
        let mut anchors = BTreeMap::new();
        for &pop in &populations {
            anchors.insert(pop, anchor.clone());
        }
        let exchange = run_exchange(sites, &populations, &anchors, true, round as u32, ledger)?;
        let objective: Box<dyn SmoothObjective<f64>> = if populations.len() == 1 {
            Box::new(exchange.surrogate(populations[0], &anchor)?)
        } else {
            let mut weighted = Vec::with_capacity(populations.len());
            for &pop in &populations {
                weighted.push((
                    counts[&pop] as f64 / n_scope as f64,
                    exchange.surrogate(pop, &anchor)?,
                ));
            }
            Box::new(WeightedSurrogateSum::new(weighted)?)
        };
        let fit = penalized_solve(
            objective.as_ref(),
            lambda,
            config,
            local.has_intercept(),
            &estimate,
        )?;
        estimate = fit.coefficients;
    }
    Ok(estimate)
}

/// Federated target-only baseline: [`fed_lasso`] restricted to the target
/// population.  Reads no source rows, so its output is invariant to source
/// data entirely.
pub fn fed_target_only(
    sites: &[SiteNode],
    family: GlmFamily,
    config: &EstimatorConfig,
    ledger: &mut CommLedger,
) -> Result<Array1<f64>> {
    fed_lasso(
        sites,
        family,
        PopulationSelector::Single(TARGET_POPULATION),
        config,
        ledger,
    )
}

/// Seeded held-out validation rows: a fraction of the leading site's target
/// cell, drawn without replacement, returned ascending.
///
/// The returned row indices refer to `data`; callers must exclude them from
/// every training subset.
pub fn validation_split(
    data: &PartitionedDataset<f64>,
    leading_site: u32,
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(
            "validation_fraction",
            "must lie strictly between 0 and 1",
        ));
    }
    let cell = data
        .cell_rows(leading_site, TARGET_POPULATION)
        .ok_or_else(|| {
            Error::config(
                "leading_site",
                format!("site {leading_site} holds no target rows to validate on"),
            )
        })?;
    let m = ((fraction * cell.len() as f64).ceil() as usize).max(1);
    if m >= cell.len() {
        return Err(Error::config(
            "validation_fraction",
            format!(
                "holding out {m} of {} target rows at site {leading_site} leaves none to train on",
                cell.len()
            ),
        ));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pool = cell.to_vec();
    pool.shuffle(&mut rng);
    let mut chosen: Vec<usize> = pool.into_iter().take(m).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Validation-based selection between a target-only and a transfer estimate.
///
/// Picks the candidate with the larger validation log-likelihood
/// `Σ yᵢ·ηᵢ − ψ(ηᵢ)`; ties go to the target-only column, the conservative
/// choice.  A candidate whose likelihood cannot be evaluated scores −∞.
pub fn aggregate(
    beta_target: &Array1<f64>,
    beta_transfer: &Array1<f64>,
    family: GlmFamily,
    data: &PartitionedDataset<f64>,
    validation_rows: &[usize],
) -> Result<AggregationChoice> {
    if validation_rows.is_empty() {
        return Err(Error::EmptySubset {
            context: "validation rows".to_string(),
        });
    }
    let p = data.n_features();
    if beta_target.len() != p {
        return Err(Error::dim("target candidate", p, beta_target.len()));
    }
    if beta_transfer.len() != p {
        return Err(Error::dim("transfer candidate", p, beta_transfer.len()));
    }
    if family == GlmFamily::Logistic {
        let first = data.outcomes()[validation_rows[0]];
        if validation_rows
            .iter()
            .all(|&i| data.outcomes()[i] == first)
        {
            log::warn!(
                "validation set has a single outcome class; selection is still by log-likelihood"
            );
        }
    }
    let log_lik = |candidate: &Array1<f64>| -> f64 {
        match glm::neg_log_lik(family, data, validation_rows, candidate.view()) {
            Ok(v) => -v,
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let log_likelihoods = [log_lik(beta_target), log_lik(beta_transfer)];
    let selected = usize::from(log_likelihoods[1] > log_likelihoods[0]);
    let mut candidates = Array2::zeros((p, 2));
    candidates.column_mut(0).assign(beta_target);
    candidates.column_mut(1).assign(beta_transfer);
    let beta = if selected == 0 {
        beta_target.clone()
    } else {
        beta_transfer.clone()
    };
    Ok(AggregationChoice {
        candidates,
        selected,
        log_likelihoods,
        beta,
    })
}
