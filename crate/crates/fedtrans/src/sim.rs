//! Synthetic genotype-like federated scenarios.
//!
//! Generates multi-site, two-population datasets that mimic polygenic risk
//! prediction: latent multivariate-normal draws with block-AR(1) correlation
//! are cut into `{0, 1, 2}` genotype categories at Hardy-Weinberg quantiles,
//! outcomes follow a sparse GLM, and the source population's coefficients
//! differ from the target's on a small support.
//!
//! All randomness flows from one root seed through [`derive_seed`]; no
//! global generator state is touched, and regenerating with the same
//! configuration is bit-identical.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::federation::SiteNode;
use crate::glm::{GlmFamily, PartitionedDataset};

/// Block-diagonal AR(1) correlation structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSpec {
    /// Number of diagonal blocks.
    pub blocks: usize,
    /// Rows/columns per block.
    pub block_size: usize,
    /// Within-block correlation decay base, strictly inside (0, 1).
    pub rho: f64,
}

impl CovarianceSpec {
    fn validate(&self, p: usize, field: &str) -> Result<()> {
        if self.blocks * self.block_size != p {
            return Err(Error::config(
                field,
                format!(
                    "blocks ({}) x block_size ({}) must equal n_features ({p})",
                    self.blocks, self.block_size
                ),
            ));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config(field, "rho must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

/// How the source population's coefficients differ from the target's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// Every shifted coordinate moves by exactly the shift size.
    Constant,
    /// Each shifted coordinate moves by an independent normal draw with the
    /// shift size as its standard deviation.
    Normal,
}

/// Per-cell design standardization, computed locally from that cell's rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    /// Raw `{0, 1, 2}` counts.
    Raw,
    /// Divide each column by its cell standard deviation.  Preserves the
    /// no-intercept model exactly (a column rescaling is absorbed into the
    /// coefficients), which is why it is the default.
    ScaleOnly,
    /// Subtract the cell mean, then divide by the cell standard deviation.
    /// Centering shifts the linear predictor, which a no-intercept model
    /// cannot absorb; use only when an intercept is appended externally.
    CenterScale,
}

/// Full description of one synthetic federated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Number of sites M; sites are numbered 1..=M.
    pub sites: usize,
    /// Target-population rows per site.
    pub n_target: usize,
    /// Source-population rows per site.
    pub n_source: usize,
    /// Feature count p.
    pub n_features: usize,
    /// Nonzeros in the target coefficient vector.
    pub sparsity: usize,
    /// Size of the coefficient-shift support H.
    pub shift_support: usize,
    /// Shift magnitude (the constant for [`ShiftKind::Constant`], the
    /// standard deviation for [`ShiftKind::Normal`]).
    pub shift_size: f64,
    /// Shift pattern.
    pub shift_kind: ShiftKind,
    /// Target-population latent correlation.
    pub target_covariance: CovarianceSpec,
    /// Source-population latent correlation.
    pub source_covariance: CovarianceSpec,
    /// Held-out target-population test rows.
    pub test_size: usize,
    /// Design standardization mode.
    #[serde(default = "default_standardization")]
    pub standardization: Standardization,
    /// Root seed; every stream derives from it.
    pub seed: u64,
}

fn default_standardization() -> Standardization {
    Standardization::ScaleOnly
}

impl SimConfig {
    /// Checks field-level invariants.
    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 {
            return Err(Error::config("sites", "must be at least 1"));
        }
        if self.n_target == 0 || self.n_source == 0 {
            return Err(Error::config(
                "n_target/n_source",
                "per-site cells must be non-empty",
            ));
        }
        if self.n_features == 0 {
            return Err(Error::config("n_features", "must be at least 1"));
        }
        if self.sparsity > self.n_features {
            return Err(Error::config(
                "sparsity",
                "cannot exceed the feature count",
            ));
        }
        if self.shift_support > self.n_features {
            return Err(Error::config(
                "shift_support",
                "cannot exceed the feature count",
            ));
        }
        if !self.shift_size.is_finite() || self.shift_size < 0.0 {
            return Err(Error::config(
                "shift_size",
                "must be a finite non-negative number",
            ));
        }
        self.target_covariance
            .validate(self.n_features, "target_covariance")?;
        self.source_covariance
            .validate(self.n_features, "source_covariance")?;
        if self.test_size == 0 {
            return Err(Error::config("test_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Desk-scale default: runs the full method comparison in seconds.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            sites: 3,
            n_target: 100,
            n_source: 500,
            n_features: 200,
            sparsity: 20,
            shift_support: 5,
            shift_size: 0.5,
            shift_kind: ShiftKind::Constant,
            target_covariance: CovarianceSpec {
                blocks: 4,
                block_size: 50,
                rho: 0.3,
            },
            source_covariance: CovarianceSpec {
                blocks: 2,
                block_size: 100,
                rho: 0.5,
            },
            test_size: 1000,
            standardization: Standardization::ScaleOnly,
            seed,
        }
    }

    /// Paper-scale preset (compute-heavy; not exercised by the test suite).
    pub fn paper_scale(seed: u64) -> Self {
        Self {
            sites: 5,
            n_target: 400,
            n_source: 2000,
            n_features: 2000,
            sparsity: 100,
            shift_support: 10,
            shift_size: 0.5,
            shift_kind: ShiftKind::Constant,
            target_covariance: CovarianceSpec {
                blocks: 40,
                block_size: 50,
                rho: 0.3,
            },
            source_covariance: CovarianceSpec {
                blocks: 20,
                block_size: 100,
                rho: 0.5,
            },
            test_size: 1000,
            standardization: Standardization::ScaleOnly,
            seed,
        }
    }
}

/// True generating quantities of a scenario.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Target coefficients (sparsity-many nonzeros).
    pub beta: Array1<f64>,
    /// Source coefficients (`beta` plus shifts on the support).
    pub w: Array1<f64>,
    /// Indices where `w` differs from `beta`, ascending.
    pub shift_support: Vec<usize>,
    /// Per-column minor allele frequencies, shared by both populations.
    pub mafs: Array1<f64>,
}

/// A fully materialized scenario: per-site nodes, the identical pooled view,
/// a held-out test set, and the generating truth.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// One node per site, holding that site's (already standardized) rows.
    pub sites: Vec<SiteNode>,
    /// All training rows in one dataset — the exact concatenation of the
    /// site shards, so pooled and federated fits see identical numbers.
    pub pooled: PartitionedDataset<f64>,
    /// Held-out target-population test rows (standardized with the leading
    /// site's target-cell statistics).
    pub test: PartitionedDataset<f64>,
    /// Generating truth in raw (unstandardized) coordinates.
    pub truth: GroundTruth,
    /// Column centers applied to the test set (zeros unless centering).
    pub test_means: Array1<f64>,
    /// Column divisors applied to the test set (ones when raw).
    pub test_scales: Array1<f64>,
}

/// Derives a stream seed from the root seed, a stage tag, and cell labels
/// (FNV-1a over the concatenated little-endian bytes).
pub fn derive_seed(root: u64, stage: &str, site: u32, population: u32) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(PRIME);
        }
    };
    eat(&root.to_le_bytes());
    eat(stage.as_bytes());
    eat(&site.to_le_bytes());
    eat(&population.to_le_bytes());
    hash
}

/// Block-diagonal AR(1) correlation matrix: within a block, entry (i, j) is
/// `rho^|i−j|`; across blocks, zero; unit diagonal.
pub fn gen_covariance(blocks: usize, block_size: usize, rho: f64) -> Result<Array2<f64>> {
    if blocks == 0 || block_size == 0 {
        return Err(Error::config(
            "covariance",
            "blocks and block_size must be positive",
        ));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::config(
            "covariance",
            "rho must lie strictly between 0 and 1",
        ));
    }
    let p = blocks * block_size;
    let mut sigma = Array2::zeros((p, p));
    for b in 0..blocks {
        let base = b * block_size;
        for i in 0..block_size {
            for j in 0..block_size {
                sigma[[base + i, base + j]] = rho.powi((i as i32 - j as i32).abs());
            }
        }
    }
    Ok(sigma)
}

/// Dense lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix; fails on a non-positive pivot.
pub fn cholesky_lower(matrix: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let p = matrix.nrows();
    if matrix.ncols() != p {
        return Err(Error::dim("cholesky input", p, matrix.ncols()));
    }
    let mut lower: Array2<f64> = Array2::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let mut sum = matrix[[i, j]];
            for k in 0..j {
                sum -= lower[[i, k]] * lower[[j, k]];
            }
            if i == j {
                if sum <= 1e-12 {
                    return Err(Error::CholeskyFailure { pivot: i });
                }
                lower[[i, i]] = sum.sqrt();
            } else {
                lower[[i, j]] = sum / lower[[j, j]];
            }
        }
    }
    Ok(lower)
}

/// Per-column minor allele frequencies, uniform on (0, 0.5) clipped to
/// [0.01, 0.5] so no column is (almost surely) constant at small n.
pub fn gen_mafs(p: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_iter((0..p).map(|_| rng.gen_range(0.0..0.5f64).max(0.01)))
}

/// Genotype matrix with entries in `{0, 1, 2}`.
///
/// Draws latent rows `z ~ N(0, Σ)` and cuts column j at the standard-normal
/// quantiles of the Hardy-Weinberg cell probabilities for its minor allele
/// frequency f: `P(0) = (1−f)²`, `P(1) = 2f(1−f)`, `P(2) = f²`, i.e. 0 below
/// `Φ⁻¹((1−f)²)`, 2 above `Φ⁻¹(1−f²)`, 1 between.
pub fn gen_genotypes(
    n: usize,
    sigma: &ArrayView2<f64>,
    mafs: ArrayView1<f64>,
    seed: u64,
) -> Result<Array2<f64>> {
    let p = sigma.nrows();
    if mafs.len() != p {
        return Err(Error::dim("mafs vs covariance", p, mafs.len()));
    }
    for &f in mafs.iter() {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config("mafs", "frequencies must lie inside (0, 1)"));
        }
    }
    let lower = cholesky_lower(sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latent = Array2::zeros((n, p));
    for mut row in latent.axis_iter_mut(Axis(0)) {
        for v in row.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
    }
    // z = g·Lᵀ gives rows with covariance L·Lᵀ = Σ.
    let latent = latent.dot(&lower.t());

    let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
    let mut genotypes = Array2::zeros((n, p));
    for j in 0..p {
        let f = mafs[j];
        let lo = normal.inverse_cdf((1.0 - f) * (1.0 - f));
        let hi = normal.inverse_cdf(1.0 - f * f);
        for i in 0..n {
            let z = latent[[i, j]];
            genotypes[[i, j]] = if z < lo {
                0.0
            } else if z > hi {
                2.0
            } else {
                1.0
            };
        }
    }
    Ok(genotypes)
}

/// Sparse target coefficients and shifted source coefficients.
///
/// The target vector has `sparsity` uniformly chosen nonzero coordinates
/// with values i.i.d. uniform on (−0.5, 0.5); the shift support H is a
/// uniform subset of the given size; the source vector adds the configured
/// shift on H.  Minor allele frequencies are drawn from their own derived
/// stream so both populations share them.
pub fn gen_coefficients(
    kind: ShiftKind,
    sparsity: usize,
    shift_support: usize,
    shift_size: f64,
    p: usize,
    seed: u64,
) -> Result<GroundTruth> {
    if sparsity > p || shift_support > p {
        return Err(Error::config(
            "sparsity/shift_support",
            "cannot exceed the feature count",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "coefficients", 0, 0));
    let mut beta = Array1::zeros(p);
    let support = rand::seq::index::sample(&mut rng, p, sparsity);
    for j in support.iter() {
        beta[j] = rng.gen_range(-0.5..0.5);
    }
    let mut h_set: Vec<usize> = rand::seq::index::sample(&mut rng, p, shift_support).into_vec();
    h_set.sort_unstable();
    let mut w = beta.clone();
    for &j in &h_set {
        let shift = match kind {
            ShiftKind::Constant => shift_size,
            ShiftKind::Normal => shift_size * rng.sample::<f64, _>(StandardNormal),
        };
        w[j] += shift;
    }
    let mafs = gen_mafs(p, derive_seed(seed, "mafs", 0, 0));
    Ok(GroundTruth {
        beta,
        w,
        shift_support: h_set,
        mafs,
    })
}

/// Independent Bernoulli outcomes with logistic success probabilities.
pub fn gen_logistic_outcomes(
    design: ArrayView2<f64>,
    coefficients: ArrayView1<f64>,
    seed: u64,
) -> Result<Array1<f64>> {
    if design.ncols() != coefficients.len() {
        return Err(Error::dim(
            "outcome coefficients",
            design.ncols(),
            coefficients.len(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta = design.dot(&coefficients);
    Ok(eta.mapv(|t| {
        let pr = GlmFamily::Logistic.mean(t);
        if rng.gen::<f64>() < pr {
            1.0
        } else {
            0.0
        }
    }))
}

/// Continuous outcomes `y = xᵀb + ε`, `ε ~ N(0, noise_sd²)`.
pub fn gen_gaussian_outcomes(
    design: ArrayView2<f64>,
    coefficients: ArrayView1<f64>,
    noise_sd: f64,
    seed: u64,
) -> Result<Array1<f64>> {
    if design.ncols() != coefficients.len() {
        return Err(Error::dim(
            "outcome coefficients",
            design.ncols(),
            coefficients.len(),
        ));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::config("noise_sd", "must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta = design.dot(&coefficients);
    Ok(eta.mapv(|t| t + noise_sd * rng.sample::<f64, _>(StandardNormal)))
}

/// Per-column centers and scales of one cell under a standardization mode.
fn cell_statistics(design: &ArrayView2<f64>, mode: Standardization) -> (Array1<f64>, Array1<f64>) {
    let p = design.ncols();
    match mode {
        Standardization::Raw => (Array1::zeros(p), Array1::ones(p)),
        Standardization::ScaleOnly | Standardization::CenterScale => {
            let n = design.nrows() as f64;
            let means = design.sum_axis(Axis(0)) / n;
            let mut scales = Array1::ones(p);
            for j in 0..p {
                let mut ss = 0.0;
                for i in 0..design.nrows() {
                    let d = design[[i, j]] - means[j];
                    ss += d * d;
                }
                let sd = (ss / n).sqrt();
                // A (near-)constant column is left untouched rather than
                // amplified to infinity.
                if sd > 1e-12 {
                    scales[j] = sd;
                }
            }
            let centers = if mode == Standardization::CenterScale {
                means
            } else {
                Array1::zeros(p)
            };
            (centers, scales)
        }
    }
}

fn apply_transform(design: &mut Array2<f64>, means: &Array1<f64>, scales: &Array1<f64>) {
    for j in 0..design.ncols() {
        let m = means[j];
        let s = 1.0 / scales[j];
        for i in 0..design.nrows() {
            design[[i, j]] = (design[[i, j]] - m) * s;
        }
    }
}

/// Maps coefficients fitted on scaled columns back to raw coordinates
/// (divides by the column scale; exact for scale-only standardization).
pub fn coefficients_to_raw(estimate: ArrayView1<f64>, scales: ArrayView1<f64>) -> Array1<f64> {
    Array1::from_iter(
        estimate
            .iter()
            .zip(scales.iter())
            .map(|(&b, &s)| b / s),
    )
}

/// The target population id used by every generated scenario.
const TARGET_POP: u32 = 0;
/// The (single) source population id used by every generated scenario.
const SOURCE_POP: u32 = 1;

/// Builds a full federated scenario: per-site target and source cells with
/// the respective covariances, shared allele frequencies, a held-out target
/// test set, and standardization baked into the returned datasets.
pub fn build_federated_scenario(config: &SimConfig, family: GlmFamily) -> Result<Scenario> {
    config.validate()?;
    let p = config.n_features;
    let truth = gen_coefficients(
        config.shift_kind,
        config.sparsity,
        config.shift_support,
        config.shift_size,
        p,
        config.seed,
    )?;
    let sigma_target = gen_covariance(
        config.target_covariance.blocks,
        config.target_covariance.block_size,
        config.target_covariance.rho,
    )?;
    let sigma_source = gen_covariance(
        config.source_covariance.blocks,
        config.source_covariance.block_size,
        config.source_covariance.rho,
    )?;

    let draw_outcomes = |design: &Array2<f64>, coef: &Array1<f64>, seed: u64| -> Result<Array1<f64>> {
        match family {
            GlmFamily::Logistic => gen_logistic_outcomes(design.view(), coef.view(), seed),
            GlmFamily::Gaussian => gen_gaussian_outcomes(design.view(), coef.view(), 1.0, seed),
        }
    };

    // Generate every training cell in raw coordinates.
    let mut cells: BTreeMap<(u32, u32), (Array2<f64>, Array1<f64>)> = BTreeMap::new();
    for m in 1..=config.sites as u32 {
        for (pop, n_cell, sigma, coef) in [
            (TARGET_POP, config.n_target, &sigma_target, &truth.beta),
            (SOURCE_POP, config.n_source, &sigma_source, &truth.w),
        ] {
            let design = gen_genotypes(
                n_cell,
                &sigma.view(),
                truth.mafs.view(),
                derive_seed(config.seed, "design", m, pop),
            )?;
            let outcomes = draw_outcomes(&design, coef, derive_seed(config.seed, "outcome", m, pop))?;
            cells.insert((m, pop), (design, outcomes));
        }
    }

    // Test set: a fresh target-population draw, tagged with pseudo-site 0.
    let mut test_design = gen_genotypes(
        config.test_size,
        &sigma_target.view(),
        truth.mafs.view(),
        derive_seed(config.seed, "design", 0, TARGET_POP),
    )?;
    let test_outcomes = draw_outcomes(
        &test_design,
        &truth.beta,
        derive_seed(config.seed, "outcome", 0, TARGET_POP),
    )?;

    // Standardize each training cell with its own local statistics; the test
    // set uses the leading (lowest-id) site's target-cell statistics.
    let leading_site = 1u32;
    let (test_means, test_scales) = {
        let (design, _) = &cells[&(leading_site, TARGET_POP)];
        cell_statistics(&design.view(), config.standardization)
    };
    for ((_, _), (design, _)) in cells.iter_mut() {
        let (means, scales) = cell_statistics(&design.view(), config.standardization);
        apply_transform(design, &means, &scales);
    }
    apply_transform(&mut test_design, &test_means, &test_scales);

    // Assemble the pooled training dataset site-major, target cell first.
    let n_train = config.sites * (config.n_target + config.n_source);
    let mut design = Array2::zeros((n_train, p));
    let mut outcomes = Array1::zeros(n_train);
    let mut site_ids = Vec::with_capacity(n_train);
    let mut population_ids = Vec::with_capacity(n_train);
    let mut row = 0;
    for ((site, pop), (cell_design, cell_outcomes)) in &cells {
        for i in 0..cell_design.nrows() {
            design.row_mut(row).assign(&cell_design.row(i));
            outcomes[row] = cell_outcomes[i];
            site_ids.push(*site);
            population_ids.push(*pop);
            row += 1;
        }
    }
    let pooled = PartitionedDataset::new(design, outcomes, site_ids, population_ids, false)?;
    let sites = pooled
        .site_partitions()?
        .into_iter()
        .map(|(site, shard)| SiteNode::new(site, family, shard))
        .collect::<Result<Vec<_>>>()?;
    let test = PartitionedDataset::new(
        test_design,
        test_outcomes,
        vec![0; config.test_size],
        vec![TARGET_POP; config.test_size],
        false,
    )?;

    Ok(Scenario {
        sites,
        pooled,
        test,
        truth,
        test_means,
        test_scales,
    })
}

/// Manifest written alongside a serialized scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioManifest {
    /// The generating configuration.
    pub config: SimConfig,
    /// Outcome family the scenario was drawn for.
    pub family: GlmFamily,
    /// Shift support of the generating truth.
    pub shift_support: Vec<usize>,
    /// File name → SHA-256 content digest (hex) for every data file.
    pub files: BTreeMap<String, String>,
}

fn matrix_bytes(matrix: &ArrayView2<f64>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(8 + matrix.len() * 8);
    bytes.extend_from_slice(&(matrix.nrows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(matrix.ncols() as u32).to_le_bytes());
    for row in matrix.axis_iter(Axis(0)) {
        for &v in row.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

fn vector_bytes(vector: &ArrayView1<f64>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(4 + vector.len() * 8);
    bytes.extend_from_slice(&(vector.len() as u32).to_le_bytes());
    for &v in vector.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn parse_matrix(bytes: &[u8], name: &str) -> Result<Array2<f64>> {
    if bytes.len() < 8 {
        return Err(Error::contract(format!("{name}: truncated matrix header")));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let p = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let expected = 8 + n * p * 8;
    if bytes.len() != expected {
        return Err(Error::contract(format!(
            "{name}: expected {expected} bytes for a {n}x{p} matrix, found {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((n, p), values)
        .map_err(|e| Error::contract(format!("{name}: {e}")))
}

fn parse_vector(bytes: &[u8], name: &str) -> Result<Array1<f64>> {
    if bytes.len() < 4 {
        return Err(Error::contract(format!("{name}: truncated vector header")));
    }
    let len = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let expected = 4 + len * 8;
    if bytes.len() != expected {
        return Err(Error::contract(format!(
            "{name}: expected {expected} bytes for a length-{len} vector, found {}",
            bytes.len()
        )));
    }
    Ok(Array1::from_iter(
        bytes[4..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
    ))
}

/// Serializes a scenario to a directory: one matrix file per training cell
/// (u32 rows, u32 cols, little-endian f64 row-major) with its outcomes in a
/// companion vector file, the test set, the truth vectors, and a JSON
/// manifest listing every file with its SHA-256 digest.
pub fn write_scenario(
    dir: &Path,
    config: &SimConfig,
    family: GlmFamily,
    scenario: &Scenario,
) -> Result<ScenarioManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut files = BTreeMap::new();
    let mut emit = |name: String, bytes: Vec<u8>| -> Result<()> {
        let digest = format!("{:x}", Sha256::digest(&bytes));
        let path = dir.join(&name);
        let mut file = std::fs::File::create(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(&bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        files.insert(name, digest);
        Ok(())
    };

    for site in &scenario.sites {
        let local = site.local_dataset();
        for pop in site.populations() {
            let rows = local.population_rows(pop);
            let cell = local.subset(&rows)?;
            emit(
                format!("site{}_pop{}_design.bin", site.site_id(), pop),
                matrix_bytes(&cell.design()),
            )?;
            emit(
                format!("site{}_pop{}_outcomes.bin", site.site_id(), pop),
                vector_bytes(&cell.outcomes()),
            )?;
        }
    }
    emit("test_design.bin".to_string(), matrix_bytes(&scenario.test.design()))?;
    emit(
        "test_outcomes.bin".to_string(),
        vector_bytes(&scenario.test.outcomes()),
    )?;
    emit("truth_beta.bin".to_string(), vector_bytes(&scenario.truth.beta.view()))?;
    emit("truth_w.bin".to_string(), vector_bytes(&scenario.truth.w.view()))?;
    emit("truth_mafs.bin".to_string(), vector_bytes(&scenario.truth.mafs.view()))?;
    emit(
        "test_means.bin".to_string(),
        vector_bytes(&scenario.test_means.view()),
    )?;
    emit(
        "test_scales.bin".to_string(),
        vector_bytes(&scenario.test_scales.view()),
    )?;

    let manifest = ScenarioManifest {
        config: config.clone(),
        family,
        shift_support: scenario.truth.shift_support.clone(),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::json("scenario manifest", e))?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, json)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(manifest)
}

/// Loads a scenario directory written by [`write_scenario`], verifying every
/// file digest against the manifest.
pub fn load_scenario(dir: &Path) -> Result<(SimConfig, GlmFamily, Scenario)> {
    let manifest_path = dir.join("manifest.json");
    let manifest_text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: ScenarioManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::json("scenario manifest", e))?;
    manifest.config.validate()?;

    let read_file = |name: &str| -> Result<Vec<u8>> {
        let digest = manifest.files.get(name).ok_or_else(|| {
            Error::contract(format!("manifest lists no file named {name}"))
        })?;
        let path = dir.join(name);
        let bytes =
            std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let actual = format!("{:x}", Sha256::digest(&bytes));
        if &actual != digest {
            return Err(Error::contract(format!(
                "digest mismatch for {name}: manifest {digest}, file {actual}"
            )));
        }
        Ok(bytes)
    };

    let config = &manifest.config;
    let p = config.n_features;
    let n_train = config.sites * (config.n_target + config.n_source);
    let mut design = Array2::zeros((n_train, p));
    let mut outcomes = Array1::zeros(n_train);
    let mut site_ids = Vec::with_capacity(n_train);
    let mut population_ids = Vec::with_capacity(n_train);
    let mut row = 0;
    for m in 1..=config.sites as u32 {
        for (pop, n_cell) in [(TARGET_POP, config.n_target), (SOURCE_POP, config.n_source)] {
            let name = format!("site{m}_pop{pop}_design.bin");
            let cell_design = parse_matrix(&read_file(&name)?, &name)?;
            let name = format!("site{m}_pop{pop}_outcomes.bin");
            let cell_outcomes = parse_vector(&read_file(&name)?, &name)?;
            if cell_design.nrows() != n_cell || cell_design.ncols() != p {
                return Err(Error::contract(format!(
                    "site {m} population {pop}: cell shape {}x{} disagrees with the manifest config",
                    cell_design.nrows(),
                    cell_design.ncols()
                )));
            }
            if cell_outcomes.len() != n_cell {
                return Err(Error::dim(
                    "cell outcomes vs design rows",
                    n_cell,
                    cell_outcomes.len(),
                ));
            }
            for i in 0..n_cell {
                design.row_mut(row).assign(&cell_design.row(i));
                outcomes[row] = cell_outcomes[i];
                site_ids.push(m);
                population_ids.push(pop);
                row += 1;
            }
        }
    }
    let pooled = PartitionedDataset::new(design, outcomes, site_ids, population_ids, false)?;
    let sites = pooled
        .site_partitions()?
        .into_iter()
        .map(|(site, shard)| SiteNode::new(site, manifest.family, shard))
        .collect::<Result<Vec<_>>>()?;

    let test_design = parse_matrix(&read_file("test_design.bin")?, "test_design.bin")?;
    let test_outcomes = parse_vector(&read_file("test_outcomes.bin")?, "test_outcomes.bin")?;
    let n_test = test_design.nrows();
    let test = PartitionedDataset::new(
        test_design,
        test_outcomes,
        vec![0; n_test],
        vec![TARGET_POP; n_test],
        false,
    )?;

    let truth = GroundTruth {
        beta: parse_vector(&read_file("truth_beta.bin")?, "truth_beta.bin")?,
        w: parse_vector(&read_file("truth_w.bin")?, "truth_w.bin")?,
        shift_support: manifest.shift_support.clone(),
        mafs: parse_vector(&read_file("truth_mafs.bin")?, "truth_mafs.bin")?,
    };
    let test_means = parse_vector(&read_file("test_means.bin")?, "test_means.bin")?;
    let test_scales = parse_vector(&read_file("test_scales.bin")?, "test_scales.bin")?;

    let family = manifest.family;
    Ok((
        manifest.config,
        family,
        Scenario {
            sites,
            pooled,
            test,
            truth,
            test_means,
            test_scales,
        },
    ))
}
