//! A participating site that computes local likelihood summaries.
//!
//! Each site owns a private shard of the data.  During a communication
//! round it receives per-population anchor vectors and replies with encoded
//! gradient (and optionally Hessian) messages evaluated on its local rows at
//! those anchors.  Raw rows never leave this module; only the encoded
//! summaries returned by [`SiteNode::compute`] travel.

use std::collections::BTreeMap;

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::glm::{self, GlmFamily, PartitionedDataset};

use super::codec::{anchor_digest, GradientMessage, HessianMessage, Message};

/// One site's compute node.
#[derive(Debug, Clone)]
pub struct SiteNode {
    site_id: u32,
    family: GlmFamily,
    data: PartitionedDataset<f64>,
}

impl SiteNode {
    /// Wraps a site's local shard.  `data` must contain rows for exactly one
    /// site id equal to `site_id`.
    pub fn new(site_id: u32, family: GlmFamily, data: PartitionedDataset<f64>) -> Result<Self> {
        let sites = data.sites();
        if sites.as_slice() != [site_id] {
            return Err(Error::contract(format!(
                "site node {site_id} given data for sites {sites:?}"
            )));
        }
        family.check_outcomes(&data.outcomes(), &data.all_rows())?;
        Ok(Self {
            site_id,
            family,
            data,
        })
    }

    /// This site's identifier.
    pub fn site_id(&self) -> u32 {
        self.site_id
    }

    /// Outcome family used for local evaluations.
    pub fn family(&self) -> GlmFamily {
        self.family
    }

    /// Populations present on this site, ascending.
    pub fn populations(&self) -> Vec<u32> {
        self.data.populations()
    }

    /// Local row count for one population (0 when absent).
    pub fn population_count(&self, population_id: u32) -> usize {
        self.data.population_rows(population_id).len()
    }

    /// Read access to the local shard.  For site-local estimation only; the
    /// exchange layer must move encoded messages, never this reference.
    pub fn local_dataset(&self) -> &PartitionedDataset<f64> {
        &self.data
    }

    /// Encoded messages for every population held locally, evaluated at the
    /// anchors supplied per population.  Errors if an anchor is missing for a
    /// held population.  `want_hessian` controls whether Hessian messages are
    /// produced alongside gradients.
    pub fn compute(
        &self,
        anchors: &BTreeMap<u32, Array1<f64>>,
        want_hessian: bool,
    ) -> Result<Vec<Message>> {
        let populations = self.populations();
        for pop in &populations {
            if !anchors.contains_key(pop) {
                return Err(Error::contract(format!(
                    "site {} holds population {pop} but no anchor was supplied",
                    self.site_id
                )));
            }
        }
        self.compute_for(&populations, anchors, want_hessian)
    }

    /// Encoded messages restricted to `populations` (those absent from this
    /// site are skipped).  Populations listed must have anchors.
    pub fn compute_for(
        &self,
        populations: &[u32],
        anchors: &BTreeMap<u32, Array1<f64>>,
        want_hessian: bool,
    ) -> Result<Vec<Message>> {
        let p = self.data.n_features();
        let mut out = Vec::new();
        for &pop in populations {
            let rows = self.data.population_rows(pop);
            if rows.is_empty() {
                continue;
            }
            let anchor = anchors.get(&pop).ok_or_else(|| {
                Error::contract(format!("no anchor supplied for population {pop}"))
            })?;
            if anchor.len() != p {
                return Err(Error::dim(
                    format!("anchor for population {pop}"),
                    p,
                    anchor.len(),
                ));
            }
            let digest = anchor_digest(anchor.view());
            let gradient = glm::gradient(self.family, &self.data, &rows, anchor.view())?;
            out.push(Message::Gradient(GradientMessage {
                site_id: self.site_id,
                population_id: pop,
                n_local: rows.len() as u64,
                anchor_digest: digest,
                payload: gradient,
            }));
            if want_hessian {
                let packed = glm::hessian_packed(self.family, &self.data, &rows, anchor.view())?;
                out.push(Message::Hessian(HessianMessage {
                    site_id: self.site_id,
                    population_id: pop,
                    n_local: rows.len() as u64,
                    anchor_digest: digest,
                    dim: p,
                    payload: packed,
                }));
            }
        }
        Ok(out)
    }

    /// Per-observation-normalized local Hessian for one population at an
    /// anchor, packed lower-triangular.  Used by the single-Hessian algorithm
    /// variant where the leading site inverts only its own curvature; the
    /// result stays local and is never encoded.
    pub fn local_hessian(
        &self,
        population_id: u32,
        anchor: &Array1<f64>,
    ) -> Result<(Array1<f64>, usize)> {
        let rows = self.data.population_rows(population_id);
        if rows.is_empty() {
            return Err(Error::contract(format!(
                "site {} holds no rows for population {population_id}",
                self.site_id
            )));
        }
        let mut packed = glm::hessian_packed(self.family, &self.data, &rows, anchor.view())?;
        let scale = 1.0 / rows.len() as f64;
        packed.mapv_inplace(|v| v * scale);
        Ok((packed, rows.len()))
    }
}
