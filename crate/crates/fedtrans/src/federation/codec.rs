//! Binary wire format for cross-site summary messages.
//!
//! Every message is a fixed 40-byte header followed by a little-endian
//! float64 payload:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "FTLM"
//!      4     2  version (u16 LE, currently 1)
//!      6     1  message type (1 = gradient, 2 = Hessian)
//!      7     4  site id (u32 LE)
//!     11     4  population id (u32 LE)
//!     15     4  parameter dimension p (u32 LE)
//!     19     8  local sample size n_local (u64 LE)
//!     27     8  anchor digest (u64 LE, FNV-1a over the anchor's LE bytes)
//!     35     5  reserved, zero
//!     40     —  payload: p float64 values (gradient) or p(p+1)/2 float64
//!               values (Hessian lower triangle, row-major)
//! ```
//!
//! Payloads are *unnormalized* per-site sums; receivers divide by the summed
//! `n_local`.  Hessians travel as the packed lower triangle — symmetry makes
//! the upper half redundant, which is where the factor-(p+1)/2 gap between
//! Hessian and gradient traffic comes from.
//!
//! The anchor digest lets the receiver verify that a summary was evaluated at
//! the anchor it is about to be combined with; a mismatch means a stale or
//! corrupted message and must abort the combine.

use ndarray::ArrayView1;

use crate::error::{CodecError, Result};
use crate::glm::packed_len;
use crate::Vector;

/// Magic bytes opening every message.
pub const MAGIC: [u8; 4] = *b"FTLM";
/// Wire version this build speaks.
pub const WIRE_VERSION: u16 = 1;
/// Fixed header length in bytes.
pub const HEADER_LEN: usize = 40;
const RESERVED_LEN: usize = 5;

/// Discriminates the two message payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    /// Per-site gradient sum at the anchor.
    Gradient,
    /// Per-site Hessian sum at the anchor, packed lower triangle.
    Hessian,
}

impl MessageKind {
    fn wire_byte(self) -> u8 {
        match self {
            MessageKind::Gradient => 1,
            MessageKind::Hessian => 2,
        }
    }
}

/// Per-site gradient sum `Σ_i xᵢ(ψ̇(xᵢᵀå) − yᵢ)` over one local cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMessage {
    /// Sending site.
    pub site_id: u32,
    /// Population the summed rows belong to.
    pub population_id: u32,
    /// Number of rows in the local cell.
    pub n_local: u64,
    /// Digest of the anchor the gradient was evaluated at.
    pub anchor_digest: u64,
    /// Unnormalized gradient sum, length p.
    pub payload: Vector,
}

/// Per-site Hessian sum over one local cell, packed lower triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMessage {
    /// Sending site.
    pub site_id: u32,
    /// Population the summed rows belong to.
    pub population_id: u32,
    /// Number of rows in the local cell.
    pub n_local: u64,
    /// Digest of the anchor the Hessian was evaluated at.
    pub anchor_digest: u64,
    /// Parameter dimension p.
    pub dim: usize,
    /// Unnormalized Hessian sum, packed lower triangle of length p(p+1)/2.
    pub payload: Vector,
}

/// A decoded wire message.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Gradient summary.
    Gradient(GradientMessage),
    /// Hessian summary.
    Hessian(HessianMessage),
}

impl Message {
    /// Message kind tag.
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Gradient(_) => MessageKind::Gradient,
            Message::Hessian(_) => MessageKind::Hessian,
        }
    }

    /// Sending site.
    pub fn site_id(&self) -> u32 {
        match self {
            Message::Gradient(m) => m.site_id,
            Message::Hessian(m) => m.site_id,
        }
    }

    /// Population the summary covers.
    pub fn population_id(&self) -> u32 {
        match self {
            Message::Gradient(m) => m.population_id,
            Message::Hessian(m) => m.population_id,
        }
    }

    /// Payload length in float64 values.
    pub fn payload_len(&self) -> usize {
        match self {
            Message::Gradient(m) => m.payload.len(),
            Message::Hessian(m) => m.payload.len(),
        }
    }
}

/// FNV-1a (64-bit) digest of a vector's canonical little-endian float64
/// bytes.  Used to pin messages to the anchor they were computed at.
pub fn anchor_digest(anchor: ArrayView1<'_, f64>) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for v in anchor.iter() {
        for byte in v.to_le_bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(PRIME);
        }
    }
    hash
}

/// Encodes a message into its wire representation.
pub fn encode_message(message: &Message) -> Vec<u8> {
    let (kind, site_id, population_id, n_local, digest, dim, payload) = match message {
        Message::Gradient(m) => (
            MessageKind::Gradient,
            m.site_id,
            m.population_id,
            m.n_local,
            m.anchor_digest,
            m.payload.len(),
            &m.payload,
        ),
        Message::Hessian(m) => (
            MessageKind::Hessian,
            m.site_id,
            m.population_id,
            m.n_local,
            m.anchor_digest,
            m.dim,
            &m.payload,
        ),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    out.push(kind.wire_byte());
    out.extend_from_slice(&site_id.to_le_bytes());
    out.extend_from_slice(&population_id.to_le_bytes());
    out.extend_from_slice(&u32::try_from(dim).expect("dimension fits u32").to_le_bytes());
    out.extend_from_slice(&n_local.to_le_bytes());
    out.extend_from_slice(&digest.to_le_bytes());
    out.extend_from_slice(&[0_u8; RESERVED_LEN]);
    for v in payload.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    debug_assert_eq!(out.len(), HEADER_LEN + 8 * payload.len());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, field: &'static str) -> std::result::Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < len {
            return Err(CodecError::Truncated {
                field,
                needed: len,
                available: self.buf.len() - self.pos,
            });
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}

/// Decodes a wire message, verifying magic, version, type and payload length.
pub fn decode_message(bytes: &[u8]) -> Result<Message> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CodecError::BadMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        }
        .into());
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != WIRE_VERSION {
        return Err(CodecError::UnsupportedVersion { found: version }.into());
    }
    let kind_byte = r.take(1, "msg_type")?[0];
    let kind = match kind_byte {
        1 => MessageKind::Gradient,
        2 => MessageKind::Hessian,
        other => return Err(CodecError::UnknownMessageType { found: other }.into()),
    };
    let site_id = u32::from_le_bytes(r.take(4, "site_id")?.try_into().unwrap());
    let population_id = u32::from_le_bytes(r.take(4, "population_id")?.try_into().unwrap());
    let dim = u32::from_le_bytes(r.take(4, "p")?.try_into().unwrap()) as usize;
    let n_local = u64::from_le_bytes(r.take(8, "n_local")?.try_into().unwrap());
    let digest = u64::from_le_bytes(r.take(8, "anchor_digest")?.try_into().unwrap());
    let _reserved = r.take(RESERVED_LEN, "reserved")?;

    let expected_values = match kind {
        MessageKind::Gradient => dim,
        MessageKind::Hessian => packed_len(dim),
    };
    let remaining = bytes.len() - r.pos;
    if remaining != 8 * expected_values {
        return Err(CodecError::PayloadLength {
            expected: 8 * expected_values,
            found: remaining,
        }
        .into());
    }
    let mut payload = Vector::zeros(expected_values);
    for i in 0..expected_values {
        let chunk = r.take(8, "payload")?;
        payload[i] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(match kind {
        MessageKind::Gradient => Message::Gradient(GradientMessage {
            site_id,
            population_id,
            n_local,
            anchor_digest: digest,
            payload,
        }),
        MessageKind::Hessian => Message::Hessian(HessianMessage {
            site_id,
            population_id,
            n_local,
            anchor_digest: digest,
            dim,
            payload,
        }),
    })
}
