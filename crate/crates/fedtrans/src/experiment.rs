//! Config-driven experiment orchestration.
//!
//! One experiment = one scenario family × a list of methods × replications.
//! Each replication draws a fresh scenario from a derived seed (or reuses a
//! scenario loaded from disk), holds out validation rows from the leading
//! site's target cell, fits every requested method on the remaining rows,
//! and evaluates on the scenario's held-out test set.  Rows land in a CSV,
//! per-method aggregates in a summary JSON, and every output file is listed
//! in a manifest with its content digest.
//!
//! All methods train on the same rows — the validation holdout is excluded
//! uniformly, not only for the methods that use it — so comparisons across
//! methods are like-for-like.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{
    aggregate, fed_lasso, fed_target_only, fed_transfer_full_hessian, pooled_transfer,
    validation_split, Algorithm, EstimatorConfig, InitStrategy, PopulationSelector, Tuning,
    TARGET_POPULATION,
};
use crate::federation::{CommLedger, MessageKind, SiteNode};
use crate::glm::{GlmFamily, PartitionedDataset};
use crate::metrics::{
    auc, mse, odds_ratio_quintiles, sse, summarize_methods, MethodSummary, ReplicationReport,
};
use crate::sim::{
    build_federated_scenario, coefficients_to_raw, derive_seed, load_scenario, Scenario, SimConfig,
};
use crate::solver::PenaltyConfig;

/// A method in the comparison study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Federated penalized fit on target-population rows only.
    TargetOnly,
    /// Federated penalized fit on source-population rows, evaluated on the
    /// target test set.
    SourceOnly,
    /// Federated penalized fit on all rows, population labels ignored.
    Combined,
    /// Transfer estimator, one communication round, with aggregation.
    ProposedT1,
    /// Transfer estimator, three communication rounds, with aggregation.
    ProposedT3,
    /// Pooled transfer fit with individual-level access (no communication).
    Pooled,
}

impl Method {
    /// Stable name used in report rows and summaries.
    pub fn name(self) -> &'static str {
        match self {
            Method::TargetOnly => "target_only",
            Method::SourceOnly => "source_only",
            Method::Combined => "combined",
            Method::ProposedT1 => "proposed_t1",
            Method::ProposedT3 => "proposed_t3",
            Method::Pooled => "pooled",
        }
    }
}

/// Where a replication's scenario comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSpec {
    /// Directory written by the scenario serializer; every replication
    /// reuses the same data (only fit-time randomness varies).
    Path(String),
    /// Generate fresh data per replication from the derived seed.
    Inline(SimConfig),
}

fn default_tuning() -> Tuning {
    Tuning::Theory {
        heterogeneity: None,
    }
}

fn default_leading_site() -> u32 {
    1
}

fn default_rate_constant() -> f64 {
    1.0
}

fn default_init_constant() -> f64 {
    1.0
}

fn default_aggregation() -> bool {
    true
}

fn default_validation_fraction() -> f64 {
    0.2
}

fn default_baseline_rounds() -> usize {
    3
}

/// Full experiment description (one JSON document).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario source: an inline generator config or a directory path.
    pub scenario: ScenarioSpec,
    /// Methods to fit, in report order.
    pub methods: Vec<Method>,
    /// Replication count.
    pub replications: usize,
    /// Root seed; per-replication seeds are derived from it.  Exactly one of
    /// this and `seeds` must be set.
    #[serde(default)]
    pub root_seed: Option<u64>,
    /// Explicit per-replication seeds (length must equal `replications`).
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Output directory for the CSV, summary, and manifest.
    pub output_dir: String,
    /// Outcome family.
    pub family: GlmFamily,
    /// Penalty-level selection mode.
    #[serde(default = "default_tuning")]
    pub tuning: Tuning,
    /// Leading site (initialization, validation rows, curvature).
    #[serde(default = "default_leading_site")]
    pub leading_site: u32,
    /// Rate constant c₀ in the penalty formulas.
    #[serde(default = "default_rate_constant")]
    pub rate_constant: f64,
    /// Initialization constant c₁ in the local-fit penalty formula.
    #[serde(default = "default_init_constant")]
    pub init_constant: f64,
    /// Anchor nonzero budget; derived from sample sizes when absent.
    #[serde(default)]
    pub anchor_budget: Option<usize>,
    /// Contrast nonzero budget; derived from sample sizes when absent.
    #[serde(default)]
    pub delta_budget: Option<usize>,
    /// Whether proposed methods pass through validation-based selection.
    #[serde(default = "default_aggregation")]
    pub aggregation: bool,
    /// Fraction of the leading site's target cell held out for validation.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    /// Communication rounds for the three baseline lasso methods.
    #[serde(default = "default_baseline_rounds")]
    pub baseline_rounds: usize,
}

impl ExperimentConfig {
    /// Checks field-level invariants; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("methods", "must name at least one method"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::config(
                    "methods",
                    format!("method {} listed twice", m.name()),
                ));
            }
        }
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        match (&self.root_seed, &self.seeds) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "root_seed/seeds",
                    "set exactly one of root_seed and seeds, not both",
                ));
            }
            (None, None) => {
                return Err(Error::config(
                    "root_seed/seeds",
                    "set exactly one of root_seed and seeds",
                ));
            }
            (None, Some(list)) => {
                if list.len() != self.replications {
                    return Err(Error::config(
                        "seeds",
                        format!(
                            "seed list has {} entries but replications is {}",
                            list.len(),
                            self.replications
                        ),
                    ));
                }
            }
            (Some(_), None) => {}
        }
        if self.baseline_rounds == 0 {
            return Err(Error::config("baseline_rounds", "must be at least 1"));
        }
        if let ScenarioSpec::Inline(sim) = &self.scenario {
            sim.validate()?;
        }
        // Estimator-level invariants, checked once up front so `describe`
        // rejects broken configs before any work happens.
        self.estimator_config(1).validate()?;
        Ok(())
    }

    /// Per-replication seeds, derived or explicit.
    pub fn resolved_seeds(&self) -> Vec<u64> {
        match (&self.root_seed, &self.seeds) {
            (_, Some(list)) => list.clone(),
            (Some(root), None) => (0..self.replications)
                .map(|r| derive_seed(*root, "replication", r as u32, 0))
                .collect(),
            (None, None) => Vec::new(),
        }
    }

    /// The estimator configuration shared by every method, at a given round
    /// count.
    fn estimator_config(&self, rounds: usize) -> EstimatorConfig {
        EstimatorConfig {
            rounds,
            algorithm: Algorithm::FullHessian,
            init: InitStrategy::SingleSite,
            leading_site: self.leading_site,
            penalty: PenaltyConfig {
                lambda: 0.0,
                rate_constant: self.rate_constant,
                init_constant: self.init_constant,
                anchor_budget: self.anchor_budget,
                penalize_intercept: false,
            },
            tuning: self.tuning.clone(),
            delta_budget: self.delta_budget,
            aggregation: self.aggregation,
            validation_fraction: self.validation_fraction,
        }
    }
}

/// One failed (method, replication) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    /// Method that failed.
    pub method: String,
    /// Replication seed it failed on.
    pub seed: u64,
    /// Error text.
    pub message: String,
}

/// Everything an experiment run produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// All report rows, replication-major in config method order.
    pub reports: Vec<ReplicationReport>,
    /// Per-method aggregates over successful replications.
    pub summaries: Vec<MethodSummary>,
    /// Failures (paired with NaN rows in `reports`).
    pub errors: Vec<FailureRecord>,
    /// The seeds actually used, in replication order.
    pub seeds: Vec<u64>,
    /// Path of the CSV the rows were written to.
    pub csv_path: PathBuf,
    /// Path of the summary JSON.
    pub summary_path: PathBuf,
    /// Path of the manifest JSON.
    pub manifest_path: PathBuf,
}

/// The CSV column order (stable, documented interface).
pub const CSV_HEADER: &str =
    "method,seed,mse,sse,auc,odds_ratio,comm_gradient_bytes,comm_hessian_bytes,rounds,wall_ms";

fn csv_row(report: &ReplicationReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        report.method,
        report.seed,
        report.mse,
        report.sse,
        report.auc,
        report.odds_ratio,
        report.comm_gradient_bytes,
        report.comm_hessian_bytes,
        report.rounds,
        report.wall_ms
    )
}

/// Fits one method on prepared replication data; returns the estimate in
/// the scenario's (standardized) coordinates plus rounds used.
fn fit_method(
    method: Method,
    config: &ExperimentConfig,
    scenario: &Scenario,
    training_sites: &[SiteNode],
    training_pooled: &PartitionedDataset<f64>,
    validation_rows: &[usize],
    ledger: &mut CommLedger,
) -> Result<(Array1<f64>, u32)> {
    let family = config.family;
    match method {
        Method::TargetOnly => {
            let est = config.estimator_config(config.baseline_rounds);
            let beta = fed_target_only(training_sites, family, &est, ledger)?;
            Ok((beta, config.baseline_rounds as u32))
        }
        Method::SourceOnly => {
            let est = config.estimator_config(config.baseline_rounds);
            let source_pop = training_pooled
                .populations()
                .into_iter()
                .find(|&k| k != TARGET_POPULATION)
                .ok_or_else(|| Error::EmptySubset {
                    context: "source population".to_string(),
                })?;
            let beta = fed_lasso(
                training_sites,
                family,
                PopulationSelector::Single(source_pop),
                &est,
                ledger,
            )?;
            Ok((beta, config.baseline_rounds as u32))
        }
        Method::Combined => {
            let est = config.estimator_config(config.baseline_rounds);
            let beta = fed_lasso(
                training_sites,
                family,
                PopulationSelector::All,
                &est,
                ledger,
            )?;
            Ok((beta, config.baseline_rounds as u32))
        }
        Method::ProposedT1 | Method::ProposedT3 => {
            let rounds = if method == Method::ProposedT1 { 1 } else { 3 };
            let est = config.estimator_config(rounds);
            let fitted = fed_transfer_full_hessian(training_sites, family, &est, ledger)?;
            let mut beta = fitted.beta;
            if config.aggregation {
                let target_candidate = fed_target_only(training_sites, family, &est, ledger)?;
                let choice = aggregate(
                    &target_candidate,
                    &beta,
                    family,
                    &scenario.pooled,
                    validation_rows,
                )?;
                beta = choice.beta;
            }
            Ok((beta, rounds as u32))
        }
        Method::Pooled => {
            let mut est = config.estimator_config(1);
            est.algorithm = Algorithm::Pooled;
            let fitted = pooled_transfer(training_pooled, family, &est)?;
            Ok((fitted.beta, 0))
        }
    }
}

/// Evaluates a fitted estimate on the scenario's test set and truth.
fn evaluate(
    method: Method,
    seed: u64,
    estimate: &Array1<f64>,
    scenario: &Scenario,
    ledger: &CommLedger,
    rounds: u32,
    wall_ms: f64,
) -> ReplicationReport {
    let raw = coefficients_to_raw(estimate.view(), scenario.test_scales.view());
    let coef_sse = sse(raw.view(), scenario.truth.beta.view()).unwrap_or(f64::NAN);
    let coef_mse = mse(raw.view(), scenario.truth.beta.view()).unwrap_or(f64::NAN);
    let scores = scenario.test.design().dot(estimate);
    let labels = scenario.test.outcomes();
    // Rank metrics are defined for binary outcomes only; a gaussian test set
    // reports NaN there.
    let auc_value = auc(scores.view(), labels).unwrap_or(f64::NAN);
    let or_value = odds_ratio_quintiles(scores.view(), labels).unwrap_or(f64::NAN);
    ReplicationReport {
        method: method.name().to_string(),
        seed,
        mse: coef_mse,
        sse: coef_sse,
        auc: auc_value,
        odds_ratio: or_value,
        comm_gradient_bytes: ledger.total_payload_bytes(MessageKind::Gradient),
        comm_hessian_bytes: ledger.total_payload_bytes(MessageKind::Hessian),
        rounds,
        wall_ms,
    }
}

fn failure_report(method: Method, seed: u64, ledger: &CommLedger) -> ReplicationReport {
    ReplicationReport {
        method: method.name().to_string(),
        seed,
        mse: f64::NAN,
        sse: f64::NAN,
        auc: f64::NAN,
        odds_ratio: f64::NAN,
        comm_gradient_bytes: ledger.total_payload_bytes(MessageKind::Gradient),
        comm_hessian_bytes: ledger.total_payload_bytes(MessageKind::Hessian),
        rounds: 0,
        wall_ms: 0.0,
    }
}

/// Runs one replication: scenario, holdout, every method, evaluation.
fn run_replication(
    config: &ExperimentConfig,
    base_scenario: Option<&Scenario>,
    seed: u64,
) -> Result<(Vec<ReplicationReport>, Vec<FailureRecord>)> {
    let scenario = match (&config.scenario, base_scenario) {
        (_, Some(loaded)) => loaded.clone(),
        (ScenarioSpec::Inline(sim), None) => {
            let mut sim = sim.clone();
            sim.seed = seed;
            build_federated_scenario(&sim, config.family)?
        }
        (ScenarioSpec::Path(_), None) => {
            return Err(Error::contract(
                "scenario path must be loaded before replications run".to_string(),
            ));
        }
    };

    let validation_rows = validation_split(
        &scenario.pooled,
        config.leading_site,
        config.validation_fraction,
        derive_seed(seed, "validation", 0, 0),
    )?;
    let training_rows = scenario.pooled.complement_rows(&validation_rows);
    let training_pooled = scenario.pooled.subset(&training_rows)?;
    let training_sites = training_pooled
        .site_partitions()?
        .into_iter()
        .map(|(site, shard)| SiteNode::new(site, config.family, shard))
        .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::with_capacity(config.methods.len());
    let mut errors = Vec::new();
    for &method in &config.methods {
        let mut ledger = CommLedger::new();
        let start = Instant::now();
        match fit_method(
            method,
            config,
            &scenario,
            &training_sites,
            &training_pooled,
            &validation_rows,
            &mut ledger,
        ) {
            Ok((estimate, rounds)) => {
                let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                reports.push(evaluate(
                    method, seed, &estimate, &scenario, &ledger, rounds, wall_ms,
                ));
            }
            Err(err) => {
                log::warn!("method {} failed on seed {seed}: {err}", method.name());
                errors.push(FailureRecord {
                    method: method.name().to_string(),
                    seed,
                    message: err.to_string(),
                });
                reports.push(failure_report(method, seed, &ledger));
            }
        }
    }
    Ok((reports, errors))
}

fn write_output_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(PathBuf, String)> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok((path, format!("{:x}", Sha256::digest(bytes))))
}

/// Summary document persisted as JSON next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryDocument {
    /// The fully resolved configuration the run used.
    pub config: ExperimentConfig,
    /// Seeds in replication order.
    pub seeds: Vec<u64>,
    /// Per-method aggregates.
    pub methods: Vec<MethodSummary>,
    /// Failures, if any.
    pub errors: Vec<FailureRecord>,
}

/// Runs a full experiment and writes `results.csv`, `summary.json`, and
/// `manifest.json` into the configured output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let seeds = config.resolved_seeds();
    let out_dir = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    // A path scenario is loaded once and shared by every replication.
    let base_scenario = match &config.scenario {
        ScenarioSpec::Path(path) => {
            let (_, family, scenario) = load_scenario(Path::new(path))?;
            if family != config.family {
                return Err(Error::config(
                    "family",
                    format!(
                        "config family {:?} disagrees with the scenario's {family:?}",
                        config.family
                    ),
                ));
            }
            Some(scenario)
        }
        ScenarioSpec::Inline(_) => None,
    };

    let replication_results: Vec<Result<(Vec<ReplicationReport>, Vec<FailureRecord>)>> = seeds
        .par_iter()
        .map(|&seed| run_replication(config, base_scenario.as_ref(), seed))
        .collect();

    let mut reports = Vec::with_capacity(seeds.len() * config.methods.len());
    let mut errors = Vec::new();
    for result in replication_results {
        let (mut rep_reports, mut rep_errors) = result?;
        reports.append(&mut rep_reports);
        errors.append(&mut rep_errors);
    }
    let summaries = summarize_methods(&reports);

    // CSV.
    let mut csv = String::with_capacity(64 * (reports.len() + 1));
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for report in &reports {
        csv.push_str(&csv_row(report));
        csv.push('\n');
    }
    let (csv_path, csv_digest) = write_output_file(&out_dir, "results.csv", csv.as_bytes())?;

    // Summary JSON.
    let summary = SummaryDocument {
        config: config.clone(),
        seeds: seeds.clone(),
        methods: summaries.clone(),
        errors: errors.clone(),
    };
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::json("experiment summary", e))?;
    let (summary_path, summary_digest) =
        write_output_file(&out_dir, "summary.json", summary_json.as_bytes())?;

    // Manifest, listing every produced file with its digest.
    let mut files = BTreeMap::new();
    files.insert("results.csv".to_string(), csv_digest);
    files.insert("summary.json".to_string(), summary_digest);
    let manifest = serde_json::json!({
        "config": config,
        "seeds": seeds,
        "files": files,
    });
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::json("experiment manifest", e))?;
    let (manifest_path, _) = write_output_file(&out_dir, "manifest.json", manifest_json.as_bytes())?;

    Ok(ExperimentOutput {
        reports,
        summaries,
        errors,
        seeds,
        csv_path,
        summary_path,
        manifest_path,
    })
}

/// Parses, validates, and resolves a config document for display: the
/// resolved JSON plus the derived penalty formulas.
pub fn describe_config(config: &ExperimentConfig) -> Result<String> {
    config.validate()?;
    let resolved = serde_json::to_string_pretty(config)
        .map_err(|e| Error::json("experiment config", e))?;
    let mut text = String::new();
    text.push_str(&resolved);
    text.push('\n');
    text.push_str(&format!(
        "seeds: {:?}\n",
        config.resolved_seeds()
    ));
    match &config.tuning {
        Tuning::Theory { heterogeneity } => {
            text.push_str(&format!(
                "penalty levels: lambda_w = {c0}*sqrt(log p / n_source_pop); \
                 lambda_delta = {c0}*sqrt(log p / n_target); \
                 lambda_beta = {c0}*sqrt(log p / n_total)",
                c0 = config.rate_constant
            ));
            match heterogeneity {
                Some(h) => text.push_str(&format!(" + {h}*log p / n_target\n")),
                None => text.push('\n'),
            }
        }
        Tuning::Fixed {
            lambda_w,
            lambda_delta,
            lambda_beta,
        } => {
            text.push_str(&format!(
                "penalty levels (fixed): lambda_w = {lambda_w}; lambda_delta = {lambda_delta}; \
                 lambda_beta = {lambda_beta}\n"
            ));
        }
        Tuning::CrossValidated {
            grid_points,
            folds,
            seed,
        } => {
            text.push_str(&format!(
                "penalty levels: rate constant cross-validated on the leading site's target cell \
                 ({grid_points}-point grid, {folds} folds, seed {seed}), then rate formulas\n"
            ));
        }
    }
    text.push_str(&format!(
        "initialization penalty: {c1}*sqrt(log p / n_init_cell)\n",
        c1 = config.init_constant
    ));
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{CovarianceSpec, ShiftKind, Standardization};

    fn tiny_sim(seed: u64) -> SimConfig {
        SimConfig {
            sites: 2,
            n_target: 60,
            n_source: 90,
            n_features: 16,
            sparsity: 4,
            shift_support: 2,
            shift_size: 0.5,
            shift_kind: ShiftKind::Constant,
            target_covariance: CovarianceSpec {
                blocks: 4,
                block_size: 4,
                rho: 0.3,
            },
            source_covariance: CovarianceSpec {
                blocks: 2,
                block_size: 8,
                rho: 0.5,
            },
            test_size: 80,
            standardization: Standardization::ScaleOnly,
            seed,
        }
    }

    fn tiny_experiment(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            scenario: ScenarioSpec::Inline(tiny_sim(1)),
            methods: vec![Method::TargetOnly, Method::ProposedT1, Method::Pooled],
            replications: 2,
            root_seed: Some(42),
            seeds: None,
            output_dir: dir.display().to_string(),
            family: GlmFamily::Logistic,
            tuning: default_tuning(),
            leading_site: 1,
            rate_constant: 0.5,
            init_constant: 1.0,
            anchor_budget: None,
            delta_budget: None,
            aggregation: true,
            validation_fraction: 0.2,
            baseline_rounds: 2,
        }
    }

    #[test]
    fn config_validation_names_offending_fields() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_experiment(dir.path());
        config.methods.clear();
        assert!(config.validate().unwrap_err().to_string().contains("methods"));

        let mut config = tiny_experiment(dir.path());
        config.methods.push(Method::TargetOnly);
        assert!(config.validate().unwrap_err().to_string().contains("twice"));

        let mut config = tiny_experiment(dir.path());
        config.seeds = Some(vec![1, 2, 3]);
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("root_seed"), "{err}");

        let mut config = tiny_experiment(dir.path());
        config.baseline_rounds = 0;
        assert!(config
            .validate()
            .unwrap_err()
            .to_string()
            .contains("baseline_rounds"));

        let mut config = tiny_experiment(dir.path());
        if let ScenarioSpec::Inline(sim) = &mut config.scenario {
            sim.target_covariance.blocks = 5;
        }
        assert!(config
            .validate()
            .unwrap_err()
            .to_string()
            .contains("target_covariance"));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let json = r#"{
            "scenario": {"sites": 1},
            "methods": ["target_only"],
            "replications": 1,
            "root_seed": 7,
            "output_dir": "/tmp/x",
            "family": "logistic",
            "definitely_a_typo": true
        }"#;
        let parsed: std::result::Result<ExperimentConfig, _> = serde_json::from_str(json);
        assert!(parsed.is_err());
    }

    #[test]
    fn seed_resolution_is_deterministic_and_respects_lists() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_experiment(dir.path());
        assert_eq!(config.resolved_seeds(), config.resolved_seeds());
        assert_eq!(config.resolved_seeds().len(), 2);

        let mut config = tiny_experiment(dir.path());
        config.root_seed = None;
        config.seeds = Some(vec![9, 8]);
        assert_eq!(config.resolved_seeds(), vec![9, 8]);
    }

    #[test]
    fn experiment_produces_rows_summaries_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_experiment(dir.path());
        let output = run_experiment(&config).unwrap();

        // One row per (replication, method).
        assert_eq!(output.reports.len(), 2 * 3);
        assert!(output.errors.is_empty(), "{:?}", output.errors);
        assert_eq!(output.summaries.len(), 3);
        for summary in &output.summaries {
            assert_eq!(summary.replications, 2);
            assert_eq!(summary.failures, 0);
            assert!(summary.auc.mean.is_finite());
        }

        // Pooled transmits nothing; federated methods transmit gradients.
        let by_name = |name: &str| {
            output
                .summaries
                .iter()
                .find(|s| s.method == name)
                .unwrap()
                .clone()
        };
        assert_eq!(by_name("pooled").comm_gradient_bytes, 0);
        assert!(by_name("target_only").comm_gradient_bytes > 0);
        assert_eq!(by_name("target_only").comm_hessian_bytes > 0, true);
        assert!(by_name("proposed_t1").comm_hessian_bytes > 0);

        // Files exist and the CSV has header plus one line per row.
        let csv = std::fs::read_to_string(&output.csv_path).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 6);
        assert!(output.summary_path.exists());
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&output.manifest_path).unwrap()).unwrap();
        assert!(manifest["files"]["results.csv"].is_string());

        // Re-running the same config reproduces the CSV except for wall
        // times, which are the only nondeterministic column.
        let output2 = run_experiment(&config).unwrap();
        let strip_wall = |text: &str| -> String {
            text.lines()
                .map(|line| {
                    let mut parts: Vec<&str> = line.split(',').collect();
                    parts.pop();
                    parts.join(",")
                })
                .collect::<Vec<String>>()
                .join("\n")
        };
        let csv2 = std::fs::read_to_string(&output2.csv_path).unwrap();
        assert_eq!(strip_wall(&csv), strip_wall(&csv2));
    }

    #[test]
    fn method_failure_yields_nan_row_and_error_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_experiment(dir.path());
        config.methods = vec![Method::TargetOnly, Method::Pooled];
        config.replications = 1;
        // More folds than the calibration cell has rows: every method's
        // penalty calibration fails, each failure is recorded per row, and
        // the experiment still completes.
        config.tuning = Tuning::CrossValidated {
            grid_points: 4,
            folds: 50,
            seed: 1,
        };
        let output = run_experiment(&config).unwrap();
        assert_eq!(output.errors.len(), 2);
        assert_eq!(output.reports.len(), 2);
        for report in &output.reports {
            assert!(report.mse.is_nan());
        }
        for summary in &output.summaries {
            assert_eq!(summary.failures, 1);
        }
        let csv = std::fs::read_to_string(&output.csv_path).unwrap();
        assert!(csv.contains("NaN"));
    }

    #[test]
    fn bad_leading_site_is_a_config_level_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_experiment(dir.path());
        config.methods = vec![Method::TargetOnly];
        config.leading_site = 9;
        assert!(run_experiment(&config).is_err());
    }

    #[test]
    fn describe_prints_resolved_penalties() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_experiment(dir.path());
        let text = describe_config(&config).unwrap();
        assert!(text.contains("lambda_w"));
        assert!(text.contains("seeds:"));
        assert!(text.contains("0.5"));
    }

    #[test]
    fn path_scenarios_are_loaded_and_family_checked() {
        let dir = tempfile::tempdir().unwrap();
        let scenario_dir = dir.path().join("scenario");
        let sim = tiny_sim(5);
        let scenario = build_federated_scenario(&sim, GlmFamily::Logistic).unwrap();
        crate::sim::write_scenario(&scenario_dir, &sim, GlmFamily::Logistic, &scenario).unwrap();

        let mut config = tiny_experiment(dir.path());
        config.scenario = ScenarioSpec::Path(scenario_dir.display().to_string());
        config.methods = vec![Method::TargetOnly];
        config.replications = 1;
        config.root_seed = Some(3);
        let output = run_experiment(&config).unwrap();
        assert_eq!(output.reports.len(), 1);
        assert!(output.errors.is_empty());

        config.family = GlmFamily::Gaussian;
        let err = run_experiment(&config).unwrap_err().to_string();
        assert!(err.contains("family"), "{err}");
    }
}
