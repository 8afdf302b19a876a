//! Coefficient and prediction metrics, plus replication aggregation.
//!
//! The prediction metrics are rank-based: AUC is the Mann-Whitney
//! probability that a positive outscores a negative (ties count one half),
//! and the quintile odds ratio compares outcome odds between the top and
//! bottom 20% of scores.  Both are exactly invariant under strictly
//! increasing score transforms.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-coordinate mean squared error `‖estimate − truth‖² / p`.
pub fn mse<S: Scalar>(estimate: ArrayView1<S>, truth: ArrayView1<S>) -> Result<S> {
    let total = sse(estimate, truth)?;
    Ok(total / S::from_usize(estimate.len()).expect("dimension fits the scalar type"))
}

/// Total squared error `‖estimate − truth‖²`.
pub fn sse<S: Scalar>(estimate: ArrayView1<S>, truth: ArrayView1<S>) -> Result<S> {
    if estimate.len() != truth.len() {
        return Err(Error::dim("mse operands", truth.len(), estimate.len()));
    }
    if estimate.is_empty() {
        return Err(Error::EmptySubset {
            context: "mse operands".to_string(),
        });
    }
    let mut total = S::zero();
    for (&e, &t) in estimate.iter().zip(truth.iter()) {
        let d = e - t;
        total += d * d;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite {
            context: "squared error".to_string(),
        });
    }
    Ok(total)
}

fn check_binary_scores<S: Scalar>(
    scores: ArrayView1<S>,
    labels: ArrayView1<S>,
    context: &str,
) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::dim(context, labels.len(), scores.len()));
    }
    if scores.is_empty() {
        return Err(Error::EmptySubset {
            context: context.to_string(),
        });
    }
    for &s in scores.iter() {
        if !s.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{context} scores"),
            });
        }
    }
    let mut positives = 0;
    let mut negatives = 0;
    for (row, &y) in labels.iter().enumerate() {
        if y == S::one() {
            positives += 1;
        } else if y == S::zero() {
            negatives += 1;
        } else {
            return Err(Error::InvalidOutcome {
                row,
                value: y.into_f64(),
            });
        }
    }
    Ok((positives, negatives))
}

/// Area under the ROC curve in Mann-Whitney form: the fraction of
/// (positive, negative) pairs where the positive's score is higher, ties
/// counting one half.  Errors when only one class is present.
pub fn auc<S: Scalar>(scores: ArrayView1<S>, labels: ArrayView1<S>) -> Result<f64> {
    let (positives, negatives) = check_binary_scores(scores, labels, "auc")?;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "auc needs both outcome classes".to_string(),
        ));
    }
    // Average ranks (1-based) with ties sharing their midpoint rank.
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("scores checked finite")
    });
    let mut rank_sum_positive = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Rows i..=j share the average of ranks i+1..=j+1.
        let shared = (i + 1 + j + 1) as f64 / 2.0;
        for &row in &order[i..=j] {
            if labels[row] == S::one() {
                rank_sum_positive += shared;
            }
        }
        i = j + 1;
    }
    let np = positives as f64;
    let u = rank_sum_positive - np * (np + 1.0) / 2.0;
    Ok(u / (np * negatives as f64))
}

/// Odds ratio between the top and bottom score quintiles.
///
/// Rows are stably sorted by score; the bottom and top `⌊n/5⌋` rows form the
/// comparison groups (boundary ties resolved by the stable order).  When any
/// of the four outcome cells is zero, the Haldane-Anscombe correction adds
/// 0.5 to all four, keeping the ratio finite.
pub fn odds_ratio_quintiles<S: Scalar>(
    scores: ArrayView1<S>,
    labels: ArrayView1<S>,
) -> Result<f64> {
    let (positives, negatives) = check_binary_scores(scores, labels, "odds_ratio")?;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "odds ratio needs both outcome classes".to_string(),
        ));
    }
    let n = scores.len();
    if n < 10 {
        return Err(Error::UndefinedMetric(format!(
            "odds ratio needs at least 10 samples, found {n}"
        )));
    }
    let group = n / 5;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("scores checked finite")
    });
    let count_positive = |rows: &[usize]| rows.iter().filter(|&&r| labels[r] == S::one()).count();
    let bottom = &order[..group];
    let top = &order[n - group..];
    let mut top_pos = count_positive(top) as f64;
    let mut top_neg = group as f64 - top_pos;
    let mut bottom_pos = count_positive(bottom) as f64;
    let mut bottom_neg = group as f64 - bottom_pos;
    if top_pos == 0.0 || top_neg == 0.0 || bottom_pos == 0.0 || bottom_neg == 0.0 {
        top_pos += 0.5;
        top_neg += 0.5;
        bottom_pos += 0.5;
        bottom_neg += 0.5;
    }
    Ok((top_pos / top_neg) / (bottom_pos / bottom_neg))
}

/// One method's evaluation on one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    /// Method name.
    pub method: String,
    /// Replication seed.
    pub seed: u64,
    /// Coefficient mean squared error (per coordinate).
    pub mse: f64,
    /// Coefficient total squared error.
    pub sse: f64,
    /// Out-of-sample AUC.
    pub auc: f64,
    /// Top-vs-bottom-quintile odds ratio.
    pub odds_ratio: f64,
    /// Gradient payload bytes the method transmitted.
    pub comm_gradient_bytes: u64,
    /// Hessian payload bytes the method transmitted.
    pub comm_hessian_bytes: u64,
    /// Communication rounds the method ran.
    pub rounds: u32,
    /// Wall-clock fit time in milliseconds.
    pub wall_ms: f64,
}

/// Mean / median / standard error of one metric over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Arithmetic mean.
    pub mean: f64,
    /// Median (midpoint of the two central values for even counts).
    pub median: f64,
    /// Standard error of the mean (sample standard deviation / √n; zero for
    /// a single replication).
    pub standard_error: f64,
}

impl MetricSummary {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        };
        let standard_error = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self {
            mean,
            median,
            standard_error,
        }
    }
}

/// One method's metrics aggregated over its successful replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    /// Method name.
    pub method: String,
    /// Replications that produced finite metrics.
    pub replications: usize,
    /// Replications that failed (excluded from the statistics).
    pub failures: usize,
    /// Coefficient MSE statistics.
    pub mse: MetricSummary,
    /// AUC statistics.
    pub auc: MetricSummary,
    /// Odds-ratio statistics.
    pub odds_ratio: MetricSummary,
    /// Total gradient payload bytes over all replications.
    pub comm_gradient_bytes: u64,
    /// Total Hessian payload bytes over all replications.
    pub comm_hessian_bytes: u64,
    /// Mean wall-clock fit time in milliseconds.
    pub mean_wall_ms: f64,
}

/// Aggregates replication rows per method, preserving first-appearance
/// method order.  Rows with non-finite MSE count as failures and are
/// excluded from the statistics.
pub fn summarize_methods(reports: &[ReplicationReport]) -> Vec<MethodSummary> {
    let mut order: Vec<&str> = Vec::new();
    for report in reports {
        if !order.contains(&report.method.as_str()) {
            order.push(&report.method);
        }
    }
    order
        .into_iter()
        .map(|method| {
            let rows: Vec<&ReplicationReport> =
                reports.iter().filter(|r| r.method == method).collect();
            let ok: Vec<&&ReplicationReport> =
                rows.iter().filter(|r| r.mse.is_finite()).collect();
            let failures = rows.len() - ok.len();
            let collect = |f: fn(&ReplicationReport) -> f64| -> Vec<f64> {
                ok.iter().map(|r| f(r)).collect()
            };
            let fallback = MetricSummary {
                mean: f64::NAN,
                median: f64::NAN,
                standard_error: f64::NAN,
            };
            let stat = |values: Vec<f64>| {
                if values.is_empty() {
                    fallback.clone()
                } else {
                    MetricSummary::from_values(&values)
                }
            };
            MethodSummary {
                method: method.to_string(),
                replications: ok.len(),
                failures,
                mse: stat(collect(|r| r.mse)),
                auc: stat(collect(|r| r.auc)),
                odds_ratio: stat(collect(|r| r.odds_ratio)),
                comm_gradient_bytes: rows.iter().map(|r| r.comm_gradient_bytes).sum(),
                comm_hessian_bytes: rows.iter().map(|r| r.comm_hessian_bytes).sum(),
                mean_wall_ms: if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| r.wall_ms).sum::<f64>() / ok.len() as f64
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mse_follows_the_per_coordinate_convention() {
        let v = array![1.0, 2.0, -0.5];
        assert_eq!(mse(v.view(), v.view()).unwrap(), 0.0);
        let e = array![1.0, 0.0];
        let t = array![0.0, 0.0];
        assert_eq!(mse(e.view(), t.view()).unwrap(), 0.5);
        assert_eq!(sse(e.view(), t.view()).unwrap(), 1.0);
        // Independent recomputation on an arbitrary pair.
        let a = array![0.3, -1.2, 2.0, 0.0];
        let b = array![1.0, -1.0, 1.5, 0.25];
        let direct: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / 4.0;
        assert!((mse(a.view(), b.view()).unwrap() - direct).abs() < 1e-15);
        assert!(mse(a.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn auc_matches_hand_enumerations() {
        // Perfect separation.
        let s = array![0.9, 0.8, 0.2, 0.1];
        let y = array![1.0, 1.0, 0.0, 0.0];
        assert_eq!(auc(s.view(), y.view()).unwrap(), 1.0);
        // All ties.
        let s = array![0.5, 0.5, 0.5, 0.5];
        assert_eq!(auc(s.view(), y.view()).unwrap(), 0.5);
        // Two concordant and two discordant pairs.
        let s = array![0.9, 0.3, 0.8, 0.2];
        let y = array![1.0, 0.0, 0.0, 1.0];
        assert_eq!(auc(s.view(), y.view()).unwrap(), 0.5);
        // Single class is undefined.
        let y = array![1.0, 1.0, 1.0, 1.0];
        assert!(matches!(
            auc(s.view(), y.view()),
            Err(Error::UndefinedMetric(_))
        ));
        // Non-binary labels are rejected.
        let y = array![1.0, 0.5, 0.0, 1.0];
        assert!(auc(s.view(), y.view()).is_err());
    }

    #[test]
    fn auc_counts_cross_class_ties_as_half() {
        let s = array![0.7, 0.7, 0.1, 0.9];
        let y = array![1.0, 0.0, 0.0, 1.0];
        // Pairs: (0.7+,0.7−)=½, (0.7+,0.1−)=1, (0.9+,0.7−)=1, (0.9+,0.1−)=1.
        let expected = (0.5 + 1.0 + 1.0 + 1.0) / 4.0;
        assert!((auc(s.view(), y.view()).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn auc_is_invariant_under_increasing_transforms_and_flips_under_negation() {
        let s = array![0.2, -1.0, 3.0, 0.7, 0.5, -0.3, 1.9, 0.0];
        let y = array![0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let base = auc(s.view(), y.view()).unwrap();
        let transformed = s.mapv(|v: f64| (3.0 * v).exp());
        assert_eq!(auc(transformed.view(), y.view()).unwrap(), base);
        let negated = s.mapv(|v| -v);
        assert_eq!(auc(negated.view(), y.view()).unwrap() + base, 1.0);
    }

    #[test]
    fn odds_ratio_matches_the_hand_worked_case() {
        let s = Array1::from_iter((1..=10).map(|v| v as f64));
        let y = array![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let or = odds_ratio_quintiles(s.view(), y.view()).unwrap();
        // Top pair both positive, bottom pair both negative; correction
        // applies: (2.5/0.5)/(0.5/2.5) = 25.
        assert!((or - 25.0).abs() < 1e-12, "or {or}");
    }

    use ndarray::Array1;

    #[test]
    fn odds_ratio_is_rank_based_and_guards_small_inputs() {
        let s = Array1::from_iter((0..20).map(|v| v as f64 / 7.3 - 1.0));
        let mut y = Array1::zeros(20);
        for i in 12..20 {
            y[i] = 1.0;
        }
        let base = odds_ratio_quintiles(s.view(), y.view()).unwrap();
        let transformed = s.mapv(|v| v.powi(3) + 2.0 * v);
        assert_eq!(
            odds_ratio_quintiles(transformed.view(), y.view()).unwrap(),
            base
        );
        let tiny = array![1.0, 2.0, 3.0, 4.0];
        let ty = array![0.0, 1.0, 0.0, 1.0];
        assert!(odds_ratio_quintiles(tiny.view(), ty.view()).is_err());
    }

    #[test]
    fn odds_ratio_without_zero_cells_is_uncorrected() {
        // 10 rows: bottom pair has 1 positive, top pair has 1 positive.
        let s = Array1::from_iter((1..=10).map(|v| v as f64));
        let y = array![1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        // Top = rows 9, 10 (scores 9, 10): one positive, one negative; bottom
        // = rows 1, 2: one positive, one negative; OR = 1 exactly.
        assert_eq!(odds_ratio_quintiles(s.view(), y.view()).unwrap(), 1.0);
    }

    fn report(method: &str, seed: u64, mse: f64, auc: f64) -> ReplicationReport {
        ReplicationReport {
            method: method.to_string(),
            seed,
            mse,
            sse: mse * 4.0,
            auc,
            odds_ratio: 2.0,
            comm_gradient_bytes: 100,
            comm_hessian_bytes: 50,
            rounds: 1,
            wall_ms: 10.0,
        }
    }

    #[test]
    fn summaries_report_mean_median_se_and_skip_failures() {
        let rows = vec![
            report("alpha", 1, 1.0, 0.6),
            report("alpha", 2, 3.0, 0.7),
            report("alpha", 3, 2.0, 0.8),
            report("alpha", 4, f64::NAN, f64::NAN),
            report("beta", 1, 5.0, 0.5),
        ];
        let summaries = summarize_methods(&rows);
        assert_eq!(summaries.len(), 2);
        let alpha = &summaries[0];
        assert_eq!(alpha.method, "alpha");
        assert_eq!(alpha.replications, 3);
        assert_eq!(alpha.failures, 1);
        assert!((alpha.mse.mean - 2.0).abs() < 1e-15);
        assert_eq!(alpha.mse.median, 2.0);
        // Sample SD of {1,2,3} is 1; SE = 1/√3.
        assert!((alpha.mse.standard_error - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(alpha.comm_gradient_bytes, 400);
        let beta = &summaries[1];
        assert_eq!(beta.replications, 1);
        assert_eq!(beta.mse.standard_error, 0.0);
    }
}
