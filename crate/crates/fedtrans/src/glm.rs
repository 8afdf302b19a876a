//! Canonical-link GLM losses over a site/population-partitioned dataset.
//!
//! The negative log-likelihood of a canonical GLM on a row subset `I` is
//!
//! ```text
//! L(b) = Σ_{i ∈ I} { ψ(xᵢᵀb) − yᵢ · xᵢᵀb }
//! ```
//!
//! with cumulant ψ, mean function ψ̇ and variance function ψ̈.  [`neg_log_lik`],
//! [`gradient`] and [`hessian`] return the *unnormalized* sums; callers divide
//! by their own sample sizes.
//!
//! Summation order is part of the contract: rows are accumulated per site (in
//! subset order, which is ascending for canonical subsets) and the per-site
//! partial sums are combined in ascending site order.  A loss over rows that
//! span several sites is therefore bit-identical to the sum of the per-site
//! losses — the property the federation layer relies on when it reassembles
//! pooled quantities from per-site messages.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// Linear predictors beyond this magnitude switch the logistic cumulant to its
/// asymptotic form; `exp` would otherwise overflow long before `f64` does
/// lose precision.
const LOGISTIC_CUTOFF: f64 = 35.0;
/// Logistic means are clamped to `[CLAMP, 1 − CLAMP]` so variance weights and
/// log-likelihood contributions stay finite and strictly positive.
const LOGISTIC_MEAN_CLAMP: f64 = 1e-15;

/// Distribution family of a canonical-link GLM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmFamily {
    /// Identity link, ψ(t) = t²/2.  Squared-error loss up to constants.
    Gaussian,
    /// Logit link, ψ(t) = ln(1 + eᵗ).  Outcomes must be 0/1.
    Logistic,
}

impl GlmFamily {
    /// Cumulant ψ(t).
    pub fn cumulant<S: Scalar>(self, t: S) -> S {
        match self {
            GlmFamily::Gaussian => t * t / real::<S>(2.0),
            GlmFamily::Logistic => {
                let cutoff = real::<S>(LOGISTIC_CUTOFF);
                if t > cutoff {
                    // ln(1+eᵗ) = t + ln(1+e⁻ᵗ); the correction is below f64
                    // resolution past the cutoff.
                    t
                } else if t < -cutoff {
                    t.exp()
                } else if t > S::zero() {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                }
            }
        }
    }

    /// Mean function ψ̇(t).  Logistic means are clamped away from {0, 1}.
    pub fn mean<S: Scalar>(self, t: S) -> S {
        match self {
            GlmFamily::Gaussian => t,
            GlmFamily::Logistic => {
                let mu = if t >= S::zero() {
                    S::one() / (S::one() + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (S::one() + e)
                };
                let lo = real::<S>(LOGISTIC_MEAN_CLAMP);
                mu.max(lo).min(S::one() - lo)
            }
        }
    }

    /// Variance function ψ̈(t) = ψ̇(t)(1 − ψ̇(t)) for logistic, 1 for gaussian.
    pub fn variance<S: Scalar>(self, t: S) -> S {
        match self {
            GlmFamily::Gaussian => S::one(),
            GlmFamily::Logistic => {
                let mu = self.mean(t);
                mu * (S::one() - mu)
            }
        }
    }

    /// Validates outcome values for this family on the given rows.
    pub fn check_outcomes<S: Scalar>(self, outcomes: &ArrayView1<S>, rows: &[usize]) -> Result<()> {
        if self == GlmFamily::Logistic {
            for &i in rows {
                let y = outcomes[i];
                if !(y == S::zero() || y == S::one()) {
                    return Err(Error::InvalidOutcome {
                        row: i,
                        value: y.into_f64(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Dataset whose rows are labeled with the site that holds them and the
/// population they were sampled from.
///
/// Population `0` is the target population by convention; higher ids are
/// source populations.  Each row belongs to exactly one `(site, population)`
/// cell, and cell row lists are kept sorted ascending so that every canonical
/// traversal has a fixed order.
#[derive(Debug, Clone)]
pub struct PartitionedDataset<S> {
    design: Array2<S>,
    outcomes: Array1<S>,
    site_ids: Vec<u32>,
    population_ids: Vec<u32>,
    cells: BTreeMap<(u32, u32), Vec<usize>>,
    has_intercept: bool,
}

impl<S: Scalar> PartitionedDataset<S> {
    /// Builds a dataset from row-aligned design, outcomes and labels.
    ///
    /// `has_intercept` declares that column 0 of the design is a constant
    /// intercept column; penalized fits exclude it from the L1 penalty unless
    /// configured otherwise.
    pub fn new(
        design: Array2<S>,
        outcomes: Array1<S>,
        site_ids: Vec<u32>,
        population_ids: Vec<u32>,
        has_intercept: bool,
    ) -> Result<Self> {
        let n = design.nrows();
        if outcomes.len() != n {
            return Err(Error::dim("outcomes vs design rows", n, outcomes.len()));
        }
        if site_ids.len() != n {
            return Err(Error::dim("site_ids vs design rows", n, site_ids.len()));
        }
        if population_ids.len() != n {
            return Err(Error::dim(
                "population_ids vs design rows",
                n,
                population_ids.len(),
            ));
        }
        for (i, v) in design.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("design entry {i}"),
                });
            }
        }
        for (i, v) in outcomes.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("outcome {i}"),
                });
            }
        }
        let mut cells: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            cells
                .entry((site_ids[i], population_ids[i]))
                .or_default()
                .push(i);
        }
        // Entries were pushed in ascending row order already; keep the
        // invariant explicit.
        for rows in cells.values_mut() {
            rows.sort_unstable();
        }
        Ok(Self {
            design,
            outcomes,
            site_ids,
            population_ids,
            cells,
            has_intercept,
        })
    }

    /// Single-site, single-population dataset (test and local-fit helper).
    pub fn from_plain(design: Array2<S>, outcomes: Array1<S>) -> Result<Self> {
        let n = design.nrows();
        Self::new(design, outcomes, vec![0; n], vec![0; n], false)
    }

    /// Number of rows.
    pub fn n_rows(&self) -> usize {
        self.design.nrows()
    }

    /// Number of design columns.
    pub fn n_features(&self) -> usize {
        self.design.ncols()
    }

    /// Whether column 0 is a constant intercept column.
    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    /// Design matrix view.
    pub fn design(&self) -> ArrayView2<'_, S> {
        self.design.view()
    }

    /// Outcome vector view.
    pub fn outcomes(&self) -> ArrayView1<'_, S> {
        self.outcomes.view()
    }

    /// Site id of each row.
    pub fn site_ids(&self) -> &[u32] {
        &self.site_ids
    }

    /// Population id of each row.
    pub fn population_ids(&self) -> &[u32] {
        &self.population_ids
    }

    /// Sorted distinct site ids.
    pub fn sites(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self.cells.keys().map(|&(m, _)| m).collect();
        out.dedup();
        out
    }

    /// Sorted distinct population ids.
    pub fn populations(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self.cells.keys().map(|&(_, k)| k).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Rows of one `(site, population)` cell, ascending; `None` if absent.
    pub fn cell_rows(&self, site: u32, population: u32) -> Option<&[usize]> {
        self.cells.get(&(site, population)).map(|v| v.as_slice())
    }

    /// Rows of one population across all sites, sites ascending and rows
    /// ascending within each site.
    pub fn population_rows(&self, population: u32) -> Vec<usize> {
        let mut out = Vec::new();
        for (&(_, k), rows) in &self.cells {
            if k == population {
                out.extend_from_slice(rows);
            }
        }
        out
    }

    /// All rows in canonical order: cells ascending by (site, population).
    pub fn all_rows(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_rows());
        for rows in self.cells.values() {
            out.extend_from_slice(rows);
        }
        out
    }

    /// Sample size of one population across sites.
    pub fn population_count(&self, population: u32) -> usize {
        self.cells
            .iter()
            .filter(|&(&(_, k), _)| k == population)
            .map(|(_, rows)| rows.len())
            .sum()
    }

    /// Copies a row subset into a standalone dataset, keeping labels and the
    /// intercept flag.  Rows are taken in the order given and must be unique.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        self.check_rows(rows, "subset")?;
        let mut seen = vec![false; self.n_rows()];
        for &i in rows {
            if seen[i] {
                return Err(Error::contract(format!("subset: duplicate row index {i}")));
            }
            seen[i] = true;
        }
        let p = self.n_features();
        let design = Array2::from_shape_fn((rows.len(), p), |(r, c)| self.design[[rows[r], c]]);
        let outcomes = Array1::from_iter(rows.iter().map(|&i| self.outcomes[i]));
        Self::new(
            design,
            outcomes,
            rows.iter().map(|&i| self.site_ids[i]).collect(),
            rows.iter().map(|&i| self.population_ids[i]).collect(),
            self.has_intercept,
        )
    }

    /// Complement of a row subset, ascending.
    pub fn complement_rows(&self, rows: &[usize]) -> Vec<usize> {
        let mut drop = vec![false; self.n_rows()];
        for &i in rows {
            if i < drop.len() {
                drop[i] = true;
            }
        }
        (0..self.n_rows()).filter(|&i| !drop[i]).collect()
    }

    /// Splits into one standalone dataset per site, ascending by site id.
    pub fn site_partitions(&self) -> Result<Vec<(u32, Self)>> {
        let mut out = Vec::new();
        for site in self.sites() {
            let rows: Vec<usize> = (0..self.n_rows())
                .filter(|&i| self.site_ids[i] == site)
                .collect();
            out.push((site, self.subset(&rows)?));
        }
        Ok(out)
    }

    fn check_rows(&self, rows: &[usize], context: &str) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::EmptySubset {
                context: context.to_string(),
            });
        }
        let n = self.n_rows();
        for &i in rows {
            if i >= n {
                return Err(Error::contract(format!(
                    "{context}: row index {i} out of bounds for {n} rows"
                )));
            }
        }
        Ok(())
    }

    /// Splits a row subset into per-site runs, preserving subset order inside
    /// each site, with sites ascending.  This is the canonical accumulation
    /// order shared by pooled and federated computations.
    fn site_runs<'a>(&self, rows: &'a [usize]) -> Vec<(u32, Vec<usize>)> {
        let mut grouped: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &i in rows {
            grouped.entry(self.site_ids[i]).or_default().push(i);
        }
        grouped.into_iter().collect()
    }
}

fn check_coefficients<S: Scalar>(p: usize, coefficients: ArrayView1<S>) -> Result<()> {
    if coefficients.len() != p {
        return Err(Error::dim("coefficients vs design columns", p, coefficients.len()));
    }
    for v in coefficients.iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "coefficients".to_string(),
            });
        }
    }
    Ok(())
}

/// Unnormalized negative log-likelihood over `rows`.
pub fn neg_log_lik<S: Scalar>(
    family: GlmFamily,
    data: &PartitionedDataset<S>,
    rows: &[usize],
    coefficients: ArrayView1<S>,
) -> Result<S> {
    data.check_rows(rows, "neg_log_lik")?;
    check_coefficients(data.n_features(), coefficients)?;
    family.check_outcomes(&data.outcomes(), rows)?;
    let mut partials: Vec<S> = Vec::new();
    for (_, site_rows) in data.site_runs(rows) {
        let mut acc = S::zero();
        for &i in &site_rows {
            let eta = data.design.row(i).dot(&coefficients);
            acc += family.cumulant(eta) - data.outcomes[i] * eta;
        }
        partials.push(acc);
    }
    let total = partials.into_iter().fold(S::zero(), |a, b| a + b);
    if !total.is_finite() {
        return Err(Error::NonFinite {
            context: "neg_log_lik value".to_string(),
        });
    }
    Ok(total)
}

/// Unnormalized gradient `Σ xᵢ (ψ̇(xᵢᵀb) − yᵢ)` over `rows`.
pub fn gradient<S: Scalar>(
    family: GlmFamily,
    data: &PartitionedDataset<S>,
    rows: &[usize],
    coefficients: ArrayView1<S>,
) -> Result<Array1<S>> {
    data.check_rows(rows, "gradient")?;
    check_coefficients(data.n_features(), coefficients)?;
    family.check_outcomes(&data.outcomes(), rows)?;
    let p = data.n_features();
    let mut partials: Vec<Array1<S>> = Vec::new();
    for (_, site_rows) in data.site_runs(rows) {
        let mut acc = Array1::<S>::zeros(p);
        for &i in &site_rows {
            let x = data.design.row(i);
            let eta = x.dot(&coefficients);
            let resid = family.mean(eta) - data.outcomes[i];
            acc.scaled_add(resid, &x);
        }
        partials.push(acc);
    }
    let mut total = Array1::<S>::zeros(p);
    for part in partials {
        total += &part;
    }
    if total.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "gradient".to_string(),
        });
    }
    Ok(total)
}

/// Index of `(i, j)`, `j ≤ i`, in a row-major packed lower triangle.
#[inline]
pub fn packed_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

/// Length of the packed lower triangle of a `p × p` symmetric matrix.
#[inline]
pub fn packed_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Unnormalized Hessian `Σ xᵢxᵢᵀ ψ̈(xᵢᵀb)` over `rows`, packed lower triangle
/// in row-major order.  This is the representation that crosses the wire.
pub fn hessian_packed<S: Scalar>(
    family: GlmFamily,
    data: &PartitionedDataset<S>,
    rows: &[usize],
    coefficients: ArrayView1<S>,
) -> Result<Array1<S>> {
    data.check_rows(rows, "hessian")?;
    check_coefficients(data.n_features(), coefficients)?;
    family.check_outcomes(&data.outcomes(), rows)?;
    let p = data.n_features();
    let len = packed_len(p);
    let mut partials: Vec<Array1<S>> = Vec::new();
    for (_, site_rows) in data.site_runs(rows) {
        let mut acc = Array1::<S>::zeros(len);
        let acc_slice = acc.as_slice_mut().expect("freshly allocated is standard layout");
        for &i in &site_rows {
            let x = data.design.row(i);
            let eta = x.dot(&coefficients);
            let w = family.variance(eta);
            let x_slice = x.to_slice().expect("row of standard-layout matrix");
            for a in 0..p {
                let wxa = w * x_slice[a];
                let base = a * (a + 1) / 2;
                for b in 0..=a {
                    acc_slice[base + b] += wxa * x_slice[b];
                }
            }
        }
        partials.push(acc);
    }
    let mut total = Array1::<S>::zeros(len);
    for part in partials {
        total += &part;
    }
    if total.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "hessian".to_string(),
        });
    }
    Ok(total)
}

/// Unnormalized Hessian over `rows` as a full symmetric matrix.
///
/// The upper triangle is mirrored from the lower one, so `(j, l)` and `(l, j)`
/// are bit-identical by construction.
pub fn hessian<S: Scalar>(
    family: GlmFamily,
    data: &PartitionedDataset<S>,
    rows: &[usize],
    coefficients: ArrayView1<S>,
) -> Result<Array2<S>> {
    let packed = hessian_packed(family, data, rows, coefficients)?;
    Ok(unpack_symmetric(packed.view(), data.n_features()))
}

/// Expands a packed lower triangle into a full symmetric matrix.
pub fn unpack_symmetric<S: Scalar>(packed: ArrayView1<S>, p: usize) -> Array2<S> {
    debug_assert_eq!(packed.len(), packed_len(p));
    let mut out = Array2::<S>::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let v = packed[packed_index(i, j)];
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}
