//! Byte-exact accounting of cross-site traffic.
//!
//! Every encoded message is recorded with its round, sender, population,
//! kind, payload size and full encoded size.  Totals are the basis for the
//! communication-cost comparisons between algorithm variants, so the ledger
//! is append-only and the report derives everything from the raw entries.
//!
//! Two byte counts are kept deliberately: `encoded_bytes` covers every byte
//! that crossed the wire (header included) and must equal the sum of encoded
//! message lengths exactly; `payload_bytes` counts only the float64 payload,
//! which is the quantity with clean closed forms (8p per gradient,
//! 4p(p+1) per Hessian) used in traffic-ratio checks.

use serde::Serialize;

use super::codec::MessageKind;

/// One recorded transmission.
#[derive(Debug, Clone, Serialize)]
pub struct LedgerEntry {
    /// Communication round the message belonged to (1-based).
    pub round: u32,
    /// Sending site.
    pub site_id: u32,
    /// Population the summary covered.
    pub population_id: u32,
    /// Gradient or Hessian.
    pub kind: MessageKind,
    /// Payload bytes (excluding the 40-byte header).
    pub payload_bytes: u64,
    /// Full encoded length in bytes.
    pub encoded_bytes: u64,
}

/// Append-only communication ledger.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CommLedger {
    entries: Vec<LedgerEntry>,
}

/// Per-round traffic summary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RoundSummary {
    /// Round index (1-based).
    pub round: u32,
    /// Number of gradient messages.
    pub gradient_messages: u64,
    /// Gradient payload bytes.
    pub gradient_payload_bytes: u64,
    /// Gradient bytes including headers.
    pub gradient_encoded_bytes: u64,
    /// Number of Hessian messages.
    pub hessian_messages: u64,
    /// Hessian payload bytes.
    pub hessian_payload_bytes: u64,
    /// Hessian bytes including headers.
    pub hessian_encoded_bytes: u64,
}

/// Ledger report: per-round rows plus grand totals.
#[derive(Debug, Clone, Serialize)]
pub struct LedgerReport {
    /// One row per round, ascending.
    pub rounds: Vec<RoundSummary>,
    /// Total gradient payload bytes across rounds.
    pub total_gradient_payload_bytes: u64,
    /// Total Hessian payload bytes across rounds.
    pub total_hessian_payload_bytes: u64,
    /// Total bytes across all messages, headers included.
    pub total_encoded_bytes: u64,
    /// Total message count.
    pub total_messages: u64,
}

impl CommLedger {
    /// Fresh, empty ledger.
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one transmitted message.
    pub fn record(
        &mut self,
        round: u32,
        site_id: u32,
        population_id: u32,
        kind: MessageKind,
        payload_bytes: u64,
        encoded_bytes: u64,
    ) {
        self.entries.push(LedgerEntry {
            round,
            site_id,
            population_id,
            kind,
            payload_bytes,
            encoded_bytes,
        });
    }

    /// Raw entries, in recording order.
    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Number of distinct rounds recorded.
    pub fn round_count(&self) -> u32 {
        self.entries.iter().map(|e| e.round).max().unwrap_or(0)
    }

    /// Total encoded bytes, headers included.
    pub fn total_encoded_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.encoded_bytes).sum()
    }

    /// Total payload bytes for one message kind.
    pub fn total_payload_bytes(&self, kind: MessageKind) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.payload_bytes)
            .sum()
    }

    /// Merges another ledger's entries into this one (used when an estimator
    /// runs sub-procedures with their own ledgers).
    pub fn absorb(&mut self, other: CommLedger) {
        self.entries.extend(other.entries);
    }

    /// Per-round summary rows plus totals.
    pub fn report(&self) -> LedgerReport {
        let mut rounds: Vec<RoundSummary> = Vec::new();
        for entry in &self.entries {
            let row = match rounds.iter_mut().find(|r| r.round == entry.round) {
                Some(row) => row,
                None => {
                    rounds.push(RoundSummary {
                        round: entry.round,
                        ..RoundSummary::default()
                    });
                    rounds.last_mut().expect("just pushed")
                }
            };
            match entry.kind {
                MessageKind::Gradient => {
                    row.gradient_messages += 1;
                    row.gradient_payload_bytes += entry.payload_bytes;
                    row.gradient_encoded_bytes += entry.encoded_bytes;
                }
                MessageKind::Hessian => {
                    row.hessian_messages += 1;
                    row.hessian_payload_bytes += entry.payload_bytes;
                    row.hessian_encoded_bytes += entry.encoded_bytes;
                }
            }
        }
        rounds.sort_by_key(|r| r.round);
        LedgerReport {
            total_gradient_payload_bytes: self.total_payload_bytes(MessageKind::Gradient),
            total_hessian_payload_bytes: self.total_payload_bytes(MessageKind::Hessian),
            total_encoded_bytes: self.total_encoded_bytes(),
            total_messages: self.entries.len() as u64,
            rounds,
        }
    }
}
