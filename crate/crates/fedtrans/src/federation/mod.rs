//! Cross-site exchange of encoded likelihood summaries.
//!
//! The federation layer moves second-order information — never rows — between
//! sites and the coordinating process:
//!
//! * [`codec`] defines the wire format: a fixed 40-byte header followed by a
//!   little-endian float64 payload (full gradient, or packed lower-triangular
//!   Hessian).
//! * [`site`] wraps each site's private shard and answers anchor broadcasts
//!   with encoded messages.
//! * [`ledger`] records the exact byte count of every transmission.
//! * [`surrogate`] reassembles decoded messages into quadratic expansions of
//!   the pooled loss, the objects the estimators actually minimize.
//!
//! [`run_exchange`] drives one round: every site evaluates its local summary
//! at the broadcast anchors, the encoded bytes pass through the ledger, and
//! the decoded messages come back grouped by population.  Because each
//! message crosses the encode→decode boundary, anything the estimators see
//! is guaranteed representable on the wire, and the ledger's byte totals are
//! exact by construction.

pub mod codec;
pub mod ledger;
pub mod site;
pub mod surrogate;

pub use codec::{
    anchor_digest, decode_message, encode_message, GradientMessage, HessianMessage, Message,
    MessageKind, HEADER_LEN,
};
pub use ledger::{CommLedger, LedgerEntry, LedgerReport, RoundSummary};
pub use site::SiteNode;
pub use surrogate::{QuadraticSurrogate, WeightedSurrogateSum};

use std::collections::BTreeMap;

use ndarray::Array1;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Decoded messages from one exchange round, grouped by population.
#[derive(Debug, Clone, Default)]
pub struct ExchangeOutput {
    /// Gradient messages per population, in ascending site order.
    pub gradients: BTreeMap<u32, Vec<GradientMessage>>,
    /// Hessian messages per population, in ascending site order.
    pub hessians: BTreeMap<u32, Vec<HessianMessage>>,
}

impl ExchangeOutput {
    /// Gradient messages for one population (empty slice when none arrived).
    pub fn gradients_for(&self, population_id: u32) -> &[GradientMessage] {
        self.gradients
            .get(&population_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Hessian messages for one population (empty slice when none arrived).
    pub fn hessians_for(&self, population_id: u32) -> &[HessianMessage] {
        self.hessians
            .get(&population_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Builds the pooled surrogate for one population from this round's
    /// messages, checked against `anchor`.
    pub fn surrogate(&self, population_id: u32, anchor: &Array1<f64>) -> Result<QuadraticSurrogate> {
        QuadraticSurrogate::from_messages(
            anchor.clone(),
            self.gradients_for(population_id),
            self.hessians_for(population_id),
        )
    }
}

/// Runs one communication round.
///
/// Each site in `sites` evaluates its local summaries for the listed
/// `populations` (skipping those it does not hold) at the per-population
/// `anchors`, encodes them, and the encoded bytes are recorded in `ledger`
/// under `round` before being decoded back into [`ExchangeOutput`].  Site
/// computation runs in parallel; ledger entries and output vectors follow
/// the order of `sites`, so results are deterministic for a fixed site list.
pub fn run_exchange(
    sites: &[SiteNode],
    populations: &[u32],
    anchors: &BTreeMap<u32, Array1<f64>>,
    want_hessian: bool,
    round: u32,
    ledger: &mut CommLedger,
) -> Result<ExchangeOutput> {
    let mut seen = Vec::new();
    for site in sites {
        if seen.contains(&site.site_id()) {
            return Err(Error::contract(format!(
                "site {} appears twice in the exchange",
                site.site_id()
            )));
        }
        seen.push(site.site_id());
    }

    let encoded_per_site: Vec<Vec<Vec<u8>>> = sites
        .par_iter()
        .map(|site| {
            let messages = site.compute_for(populations, anchors, want_hessian)?;
            Ok(messages.iter().map(encode_message).collect())
        })
        .collect::<Result<_>>()?;

    let mut output = ExchangeOutput::default();
    for blobs in encoded_per_site {
        for bytes in blobs {
            let message = decode_message(&bytes)?;
            ledger.record(
                round,
                message.site_id(),
                message.population_id(),
                message.kind(),
                (bytes.len() - HEADER_LEN) as u64,
                bytes.len() as u64,
            );
            match message {
                Message::Gradient(g) => {
                    output.gradients.entry(g.population_id).or_default().push(g)
                }
                Message::Hessian(h) => {
                    output.hessians.entry(h.population_id).or_default().push(h)
                }
            }
        }
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{self, GlmFamily, PartitionedDataset};
    use ndarray::{array, Array2};

    /// Two gaussian sites holding one population each plus a shared one.
    fn exchange_fixture() -> (Vec<SiteNode>, PartitionedDataset<f64>) {
        let design = Array2::from_shape_vec(
            (6, 2),
            vec![
                1.0, 0.5, //
                -0.5, 1.0, //
                2.0, -1.0, //
                0.0, 1.5, //
                1.0, 1.0, //
                -1.0, 0.5,
            ],
        )
        .unwrap();
        let outcomes = array![0.2, -0.1, 1.3, 0.4, 0.9, -0.6];
        let site_ids = vec![1, 1, 1, 2, 2, 2];
        let population_ids = vec![0, 0, 1, 0, 1, 1];
        let pooled = PartitionedDataset::new(
            design.clone(),
            outcomes.clone(),
            site_ids.clone(),
            population_ids.clone(),
            false,
        )
        .unwrap();
        let mut sites = Vec::new();
        for id in [1u32, 2] {
            let rows: Vec<usize> = (0..6).filter(|&i| site_ids[i] == id).collect();
            let local_design =
                Array2::from_shape_fn((rows.len(), 2), |(r, c)| design[[rows[r], c]]);
            let local_outcomes = Array1::from_iter(rows.iter().map(|&i| outcomes[i]));
            let local = PartitionedDataset::new(
                local_design,
                local_outcomes,
                rows.iter().map(|_| id).collect(),
                rows.iter().map(|&i| population_ids[i]).collect(),
                false,
            )
            .unwrap();
            sites.push(SiteNode::new(id, GlmFamily::Gaussian, local).unwrap());
        }
        (sites, pooled)
    }

    #[test]
    fn exchange_reproduces_pooled_gradient_exactly() {
        let (sites, pooled) = exchange_fixture();
        let anchor = array![0.3, -0.7];
        let mut anchors = BTreeMap::new();
        anchors.insert(0, anchor.clone());
        anchors.insert(1, anchor.clone());
        let mut ledger = CommLedger::new();
        let out = run_exchange(&sites, &[0, 1], &anchors, true, 1, &mut ledger).unwrap();

        for pop in [0u32, 1] {
            let surrogate = out.surrogate(pop, &anchor).unwrap();
            let rows = pooled.population_rows(pop);
            let direct =
                glm::gradient(GlmFamily::Gaussian, &pooled, &rows, anchor.view()).unwrap();
            // Same scaling operation the surrogate uses (multiply by the
            // precomputed reciprocal), so equality is exact.
            let normalized = direct * (1.0 / rows.len() as f64);
            assert_eq!(surrogate.gradient_at_anchor(), &normalized, "population {pop}");
        }
    }

    #[test]
    fn ledger_matches_encoded_lengths_exactly() {
        let (sites, _) = exchange_fixture();
        let anchor = array![0.0, 0.0];
        let mut anchors = BTreeMap::new();
        anchors.insert(0, anchor.clone());
        anchors.insert(1, anchor);
        let mut ledger = CommLedger::new();
        run_exchange(&sites, &[0, 1], &anchors, true, 1, &mut ledger).unwrap();
        // 2 sites × 2 populations × (gradient + Hessian).
        assert_eq!(ledger.entries().len(), 8);
        for entry in ledger.entries() {
            assert_eq!(entry.encoded_bytes, entry.payload_bytes + HEADER_LEN as u64);
        }
        // p = 2: gradient payload 16 bytes, packed Hessian payload 24 bytes.
        assert_eq!(ledger.total_payload_bytes(MessageKind::Gradient), 4 * 16);
        assert_eq!(ledger.total_payload_bytes(MessageKind::Hessian), 4 * 24);
    }

    #[test]
    fn absent_population_yields_no_messages() {
        let (sites, _) = exchange_fixture();
        let mut anchors = BTreeMap::new();
        anchors.insert(9, array![0.0, 0.0]);
        let mut ledger = CommLedger::new();
        let out = run_exchange(&sites, &[9], &anchors, true, 1, &mut ledger).unwrap();
        assert!(out.gradients_for(9).is_empty());
        assert_eq!(ledger.entries().len(), 0);
    }

    #[test]
    fn duplicate_site_listing_is_refused() {
        let (sites, _) = exchange_fixture();
        let doubled = vec![sites[0].clone(), sites[0].clone()];
        let mut anchors = BTreeMap::new();
        anchors.insert(0, array![0.0, 0.0]);
        let mut ledger = CommLedger::new();
        assert!(run_exchange(&doubled, &[0], &anchors, false, 1, &mut ledger).is_err());
    }
}
