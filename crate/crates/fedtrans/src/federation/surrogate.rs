//! Quadratic likelihood summaries assembled from encoded messages.
//!
//! This module is the privacy boundary of the federation layer: everything
//! in it is built from [`GradientMessage`] and [`HessianMessage`] payloads
//! (plus, for the single-Hessian variant, one curvature matrix a leading
//! site computed for itself).  Nothing here touches individual-level rows,
//! and the types expose no way to recover them — a deliberate property that
//! the test suite checks against this file's source.
//!
//! A [`QuadraticSurrogate`] is a second-order expansion of a population's
//! per-observation loss around an agreed anchor vector: the pooled gradient
//! supplies the linear term and the pooled (or leading-site) Hessian the
//! quadratic term.  Minimizing it under an ℓ₁ penalty stands in for the
//! pooled fit no site could run alone.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::solver::{power_iteration_estimate, SmoothObjective, CURVATURE_POWER_ITERS};

use super::codec::{anchor_digest, GradientMessage, HessianMessage};

/// Symmetric matrix–vector product from lower-triangular packed storage.
fn packed_matvec(packed: &Array1<f64>, dim: usize, v: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::<f64>::zeros(dim);
    let entries = packed.as_slice().expect("packed storage is contiguous");
    let mut idx = 0;
    for i in 0..dim {
        let mut acc = 0.0;
        for j in 0..i {
            let h = entries[idx];
            acc += h * v[j];
            out[j] += h * v[i];
            idx += 1;
        }
        // Diagonal entry.
        acc += entries[idx] * v[i];
        idx += 1;
        out[i] += acc;
    }
    out
}

/// Validates a set of gradient messages against an anchor and pools them.
///
/// Returns the summed payload, total sample count, population id and the
/// ascending site list.  Summation follows ascending site id so the result
/// is independent of arrival order, bit for bit.
fn pool_gradients(
    anchor: ArrayView1<f64>,
    gradients: &[GradientMessage],
) -> Result<(Array1<f64>, u64, u32, Vec<u32>)> {
    if gradients.is_empty() {
        return Err(Error::contract("no gradient messages to pool"));
    }
    let digest = anchor_digest(anchor);
    let population_id = gradients[0].population_id;
    let dim = anchor.len();
    let mut order: Vec<&GradientMessage> = gradients.iter().collect();
    order.sort_by_key(|m| m.site_id);
    let mut sites = Vec::with_capacity(order.len());
    let mut sum = Array1::<f64>::zeros(dim);
    let mut n_total: u64 = 0;
    for msg in order {
        if msg.population_id != population_id {
            return Err(Error::contract(format!(
                "gradient messages mix populations {population_id} and {}",
                msg.population_id
            )));
        }
        if msg.anchor_digest != digest {
            return Err(Error::contract(format!(
                "site {} gradient was computed at a stale anchor \
                 (digest {:#018x}, expected {:#018x})",
                msg.site_id, msg.anchor_digest, digest
            )));
        }
        if msg.payload.len() != dim {
            return Err(Error::dim(
                format!("site {} gradient", msg.site_id),
                dim,
                msg.payload.len(),
            ));
        }
        if sites.last() == Some(&msg.site_id) {
            return Err(Error::contract(format!(
                "duplicate gradient message from site {}",
                msg.site_id
            )));
        }
        if msg.n_local == 0 {
            return Err(Error::contract(format!(
                "site {} reported zero local samples",
                msg.site_id
            )));
        }
        sites.push(msg.site_id);
        sum += &msg.payload;
        n_total += msg.n_local;
    }
    Ok((sum, n_total, population_id, sites))
}

/// Second-order expansion of a population's per-observation loss.
///
/// `value`/`gradient` are those of
/// `b ↦ ḡᵀ(b − a) + ½ (b − a)ᵀ H̄ (b − a)`
/// where `a` is the anchor, `ḡ` the pooled per-observation gradient at `a`
/// and `H̄` the per-observation curvature matrix.  The constant term is
/// dropped: it shifts every value equally and never moves a minimizer.
#[derive(Debug, Clone)]
pub struct QuadraticSurrogate {
    population_id: u32,
    anchor: Array1<f64>,
    gradient: Array1<f64>,
    hessian_packed: Array1<f64>,
    n_total: u64,
    sites: Vec<u32>,
}

impl QuadraticSurrogate {
    /// Builds a surrogate from matched gradient and Hessian message sets.
    ///
    /// Every message must carry the digest of `anchor`, belong to the same
    /// population, and appear exactly once per site; the Hessian site set
    /// must equal the gradient site set with matching local sample counts.
    /// Both pooled terms are divided by the total sample count.
    pub fn from_messages(
        anchor: Array1<f64>,
        gradients: &[GradientMessage],
        hessians: &[HessianMessage],
    ) -> Result<Self> {
        let (grad_sum, n_total, population_id, sites) =
            pool_gradients(anchor.view(), gradients)?;
        if hessians.is_empty() {
            return Err(Error::contract("no Hessian messages to pool"));
        }
        let dim = anchor.len();
        let packed_len = crate::glm::packed_len(dim);
        let digest = anchor_digest(anchor.view());
        let mut order: Vec<&HessianMessage> = hessians.iter().collect();
        order.sort_by_key(|m| m.site_id);
        let mut hess_sites = Vec::with_capacity(order.len());
        let mut hess_sum = Array1::<f64>::zeros(packed_len);
        for msg in order {
            if msg.population_id != population_id {
                return Err(Error::contract(format!(
                    "Hessian messages mix populations {population_id} and {}",
                    msg.population_id
                )));
            }
            if msg.anchor_digest != digest {
                return Err(Error::contract(format!(
                    "site {} Hessian was computed at a stale anchor",
                    msg.site_id
                )));
            }
            if msg.dim != dim {
                return Err(Error::dim(
                    format!("site {} Hessian dimension", msg.site_id),
                    dim,
                    msg.dim,
                ));
            }
            if msg.payload.len() != packed_len {
                return Err(Error::dim(
                    format!("site {} packed Hessian entries", msg.site_id),
                    packed_len,
                    msg.payload.len(),
                ));
            }
            if hess_sites.last() == Some(&msg.site_id) {
                return Err(Error::contract(format!(
                    "duplicate Hessian message from site {}",
                    msg.site_id
                )));
            }
            hess_sites.push(msg.site_id);
            hess_sum += &msg.payload;
        }
        if hess_sites != sites {
            return Err(Error::contract(format!(
                "gradient sites {sites:?} and Hessian sites {hess_sites:?} differ"
            )));
        }
        for g in gradients {
            if let Some(h) = hessians.iter().find(|h| h.site_id == g.site_id) {
                if h.n_local != g.n_local {
                    return Err(Error::contract(format!(
                        "site {} reports {} samples in its gradient but {} in its Hessian",
                        g.site_id, g.n_local, h.n_local
                    )));
                }
            }
        }
        let scale = 1.0 / n_total as f64;
        Ok(Self {
            population_id,
            anchor,
            gradient: grad_sum * scale,
            hessian_packed: hess_sum * scale,
            n_total,
            sites,
        })
    }

    /// Builds a surrogate whose linear term pools every site's gradient but
    /// whose curvature is a single already-normalized packed Hessian (the
    /// leading site's own, in the single-Hessian algorithm variant).
    pub fn with_local_hessian(
        anchor: Array1<f64>,
        gradients: &[GradientMessage],
        hessian_packed: Array1<f64>,
    ) -> Result<Self> {
        let (grad_sum, n_total, population_id, sites) =
            pool_gradients(anchor.view(), gradients)?;
        let packed_len = crate::glm::packed_len(anchor.len());
        if hessian_packed.len() != packed_len {
            return Err(Error::dim(
                "packed Hessian entries",
                packed_len,
                hessian_packed.len(),
            ));
        }
        let scale = 1.0 / n_total as f64;
        Ok(Self {
            population_id,
            anchor,
            gradient: grad_sum * scale,
            hessian_packed,
            n_total,
            sites,
        })
    }

    /// Population this surrogate summarizes.
    pub fn population_id(&self) -> u32 {
        self.population_id
    }

    /// Expansion point.
    pub fn anchor(&self) -> &Array1<f64> {
        &self.anchor
    }

    /// Pooled per-observation gradient at the anchor.
    pub fn gradient_at_anchor(&self) -> &Array1<f64> {
        &self.gradient
    }

    /// Per-observation curvature, packed lower-triangular.
    pub fn hessian_packed(&self) -> &Array1<f64> {
        &self.hessian_packed
    }

    /// Total samples behind the pooled gradient.
    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    /// Sites that contributed, ascending.
    pub fn sites(&self) -> &[u32] {
        &self.sites
    }

    /// Parameter dimension.
    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// Surrogate for the reparameterized function `b ↦ R(b + offset)`.
    ///
    /// The quadratic itself is unchanged; only its expansion point moves to
    /// `anchor − offset`, so the stored gradient and curvature still apply.
    pub fn shifted(&self, offset: ArrayView1<f64>) -> Result<Self> {
        if offset.len() != self.dim() {
            return Err(Error::dim("surrogate shift offset", self.dim(), offset.len()));
        }
        Ok(Self {
            population_id: self.population_id,
            anchor: &self.anchor - &offset,
            gradient: self.gradient.clone(),
            hessian_packed: self.hessian_packed.clone(),
            n_total: self.n_total,
            sites: self.sites.clone(),
        })
    }
}

impl SmoothObjective<f64> for QuadraticSurrogate {
    fn dim(&self) -> usize {
        self.anchor.len()
    }

    fn value(&self, point: ArrayView1<f64>) -> f64 {
        let diff = &point.to_owned() - &self.anchor;
        let hd = packed_matvec(&self.hessian_packed, self.dim(), diff.view());
        self.gradient.dot(&diff) + 0.5 * diff.dot(&hd)
    }

    fn gradient(&self, point: ArrayView1<f64>) -> Array1<f64> {
        let diff = &point.to_owned() - &self.anchor;
        &self.gradient + &packed_matvec(&self.hessian_packed, self.dim(), diff.view())
    }

    fn curvature(&self, _point: ArrayView1<f64>) -> Option<f64> {
        Some(power_iteration_estimate(
            self.dim(),
            CURVATURE_POWER_ITERS,
            |v| packed_matvec(&self.hessian_packed, self.dim(), v.view()),
        ))
    }
}

/// Convex combination `b ↦ Σ wᵢ Rᵢ(b)` of surrogates over one parameter.
///
/// Used by the joint step, where each population's surrogate (shifted by its
/// population-specific contrast) enters with weight proportional to its
/// sample share.
#[derive(Debug, Clone)]
pub struct WeightedSurrogateSum {
    terms: Vec<(f64, QuadraticSurrogate)>,
}

impl WeightedSurrogateSum {
    /// Validates weights (finite, non-negative, not all zero) and matching
    /// dimensions.
    pub fn new(terms: Vec<(f64, QuadraticSurrogate)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::contract("weighted surrogate sum needs at least one term"));
        }
        let dim = terms[0].1.dim();
        let mut weight_total = 0.0;
        for (weight, surrogate) in &terms {
            if !weight.is_finite() || *weight < 0.0 {
                return Err(Error::config("weight", format!("invalid weight {weight}")));
            }
            if surrogate.dim() != dim {
                return Err(Error::dim("weighted surrogate sum term", dim, surrogate.dim()));
            }
            weight_total += weight;
        }
        if weight_total <= 0.0 {
            return Err(Error::config("weight", "weights sum to zero"));
        }
        Ok(Self { terms })
    }

    /// The weighted terms, in construction order.
    pub fn terms(&self) -> &[(f64, QuadraticSurrogate)] {
        &self.terms
    }
}

impl SmoothObjective<f64> for WeightedSurrogateSum {
    fn dim(&self) -> usize {
        self.terms[0].1.dim()
    }

    fn value(&self, point: ArrayView1<f64>) -> f64 {
        self.terms
            .iter()
            .map(|(w, s)| w * s.value(point))
            .sum()
    }

    fn gradient(&self, point: ArrayView1<f64>) -> Array1<f64> {
        let mut out = Array1::<f64>::zeros(self.dim());
        for (w, s) in &self.terms {
            out += &(s.gradient(point) * *w);
        }
        out
    }

    fn curvature(&self, _point: ArrayView1<f64>) -> Option<f64> {
        let dim = self.dim();
        Some(power_iteration_estimate(dim, CURVATURE_POWER_ITERS, |v| {
            let mut out = Array1::<f64>::zeros(dim);
            for (w, s) in &self.terms {
                out += &(packed_matvec(&s.hessian_packed, dim, v.view()) * *w);
            }
            out
        }))
    }
}
