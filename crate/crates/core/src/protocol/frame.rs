//! SSlot/DSlot frame images.
//!
//! Layout (all multi-byte fields big endian):
//!
//! ```text
//! legacy   : control(1) | payload(0..=cap)                    cap = 1 (SSlot), 14 (DSlot)
//! secured  : control(1) | counter(4) | payload | tag(tau/8)   DSlot only, 4 + payload + tag <= 14
//! ```
//!
//! Control octet: bit 7 direction (1 = uplink), bits 6..5 retry count (0..=2),
//! bit 4 service flag, bit 3 pairing flag, bits 2..0 reserved (zero).

use crc::{Crc, CRC_8_SMBUS};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::secure::TagLength;

/// Octets of a DSlot after the control octet.
pub const DSLOT_NET_OCTETS: usize = 14;
/// Octets of an SSlot after the control octet.
pub const SSLOT_NET_OCTETS: usize = 1;
pub const COUNTER_OCTETS: usize = 4;

const DIRECTION_BIT: u8 = 0x80;
const RETRY_SHIFT: u8 = 5;
const RETRY_MASK: u8 = 0x60;
const SERVICE_BIT: u8 = 0x10;
const PAIRING_BIT: u8 = 0x08;
const RESERVED_MASK: u8 = 0x07;

const LEGACY_CRC: Crc<u8> = Crc::<u8>::new(&CRC_8_SMBUS);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
pub enum SlotKind {
    SSlot,
    DSlot,
}

impl SlotKind {
    /// Slot units counted toward the per-track and per-cell limits.
    pub fn units(self) -> usize {
        match self {
            SlotKind::SSlot => 1,
            SlotKind::DSlot => 2,
        }
    }

    pub fn net_octets(self) -> usize {
        match self {
            SlotKind::SSlot => SSLOT_NET_OCTETS,
            SlotKind::DSlot => DSLOT_NET_OCTETS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Downlink,
    Uplink,
}

impl Direction {
    pub fn opposite(self) -> Direction {
        match self {
            Direction::Downlink => Direction::Uplink,
            Direction::Uplink => Direction::Downlink,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ControlOctet {
    pub direction: Direction,
    pub retry: u8,
    pub service: bool,
    pub pairing: bool,
}

impl ControlOctet {
    pub fn new(direction: Direction, retry: u8) -> Self {
        ControlOctet {
            direction,
            retry,
            service: false,
            pairing: false,
        }
    }

    pub fn to_byte(self) -> Result<u8, FrameError> {
        if self.retry > 2 {
            return Err(FrameError::Malformed(MalformedReason::RetryCount(self.retry)));
        }
        let mut b = self.retry << RETRY_SHIFT;
        if self.direction == Direction::Uplink {
            b |= DIRECTION_BIT;
        }
        if self.service {
            b |= SERVICE_BIT;
        }
        if self.pairing {
            b |= PAIRING_BIT;
        }
        Ok(b)
    }

    pub fn from_byte(b: u8) -> Result<Self, FrameError> {
        if b & RESERVED_MASK != 0 {
            return Err(FrameError::Malformed(MalformedReason::ReservedBits(b)));
        }
        let retry = (b & RETRY_MASK) >> RETRY_SHIFT;
        if retry > 2 {
            return Err(FrameError::Malformed(MalformedReason::RetryCount(retry)));
        }
        Ok(ControlOctet {
            direction: if b & DIRECTION_BIT != 0 {
                Direction::Uplink
            } else {
                Direction::Downlink
            },
            retry,
            service: b & SERVICE_BIT != 0,
            pairing: b & PAIRING_BIT != 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameSecurity {
    Legacy,
    Secured(TagLength),
}

/// What a receiver must know to parse a frame image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameFormat {
    pub kind: SlotKind,
    pub security: FrameSecurity,
}

impl FrameFormat {
    pub fn new(kind: SlotKind, security: FrameSecurity) -> Self {
        FrameFormat { kind, security }
    }

    /// Largest payload the format carries.
    pub fn payload_capacity(&self) -> Result<usize, FrameError> {
        match (self.kind, self.security) {
            (kind, FrameSecurity::Legacy) => Ok(kind.net_octets()),
            (SlotKind::SSlot, FrameSecurity::Secured(_)) => {
                Err(FrameError::Malformed(MalformedReason::SecuredSSlot))
            }
            (SlotKind::DSlot, FrameSecurity::Secured(tau)) => DSLOT_NET_OCTETS
                .checked_sub(COUNTER_OCTETS + tau.bytes())
                .ok_or(FrameError::Malformed(MalformedReason::TagTooLong(tau.bits()))),
        }
    }

    /// Wire length for a full-capacity frame.
    pub fn full_wire_len(&self) -> Result<usize, FrameError> {
        Ok(1 + match self.security {
            FrameSecurity::Legacy => self.payload_capacity()?,
            FrameSecurity::Secured(tau) => {
                COUNTER_OCTETS + self.payload_capacity()? + tau.bytes()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pub kind: SlotKind,
    pub control: ControlOctet,
    /// Present only on secured frames.
    pub counter: Option<u32>,
    pub payload: Vec<u8>,
    /// Present only on secured frames.
    pub tag: Option<Vec<u8>>,
}

impl Frame {
    pub fn legacy(kind: SlotKind, control: ControlOctet, payload: Vec<u8>) -> Self {
        Frame {
            kind,
            control,
            counter: None,
            payload,
            tag: None,
        }
    }

    pub fn secured(control: ControlOctet, counter: u32, payload: Vec<u8>, tag: Vec<u8>) -> Self {
        Frame {
            kind: SlotKind::DSlot,
            control,
            counter: Some(counter),
            payload,
            tag: Some(tag),
        }
    }

    pub fn format(&self) -> Result<FrameFormat, FrameError> {
        let security = match (&self.counter, &self.tag) {
            (None, None) => FrameSecurity::Legacy,
            (Some(_), Some(tag)) => FrameSecurity::Secured(
                TagLength::new(tag.len() as u16 * 8)
                    .map_err(|_| FrameError::Malformed(MalformedReason::TagLength(tag.len())))?,
            ),
            _ => return Err(FrameError::Malformed(MalformedReason::PartialSecurityFields)),
        };
        Ok(FrameFormat::new(self.kind, security))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedReason {
    /// The payload does not fit the slot.
    PayloadTooLong { len: usize, capacity: usize },
    /// The image is shorter than its fixed fields.
    Truncated { len: usize },
    ReservedBits(u8),
    RetryCount(u8),
    SecuredSSlot,
    TagTooLong(u16),
    TagLength(usize),
    PartialSecurityFields,
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("malformed frame: {0:?}")]
    Malformed(MalformedReason),
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    let format = frame.format()?;
    let capacity = format.payload_capacity()?;
    if frame.payload.len() > capacity {
        return Err(FrameError::Malformed(MalformedReason::PayloadTooLong {
            len: frame.payload.len(),
            capacity,
        }));
    }
    let mut out = Vec::with_capacity(1 + DSLOT_NET_OCTETS);
    out.push(frame.control.to_byte()?);
    if let Some(counter) = frame.counter {
        out.extend_from_slice(&counter.to_be_bytes());
    }
    out.extend_from_slice(&frame.payload);
    if let Some(tag) = &frame.tag {
        out.extend_from_slice(tag);
    }
    Ok(out)
}

pub fn decode_frame(format: FrameFormat, bytes: &[u8]) -> Result<Frame, FrameError> {
    let (&first, rest) = bytes
        .split_first()
        .ok_or(FrameError::Malformed(MalformedReason::Empty))?;
    let control = ControlOctet::from_byte(first)?;
    let capacity = format.payload_capacity()?;
    match format.security {
        FrameSecurity::Legacy => {
            if rest.len() > capacity {
                return Err(FrameError::Malformed(MalformedReason::PayloadTooLong {
                    len: rest.len(),
                    capacity,
                }));
            }
            Ok(Frame::legacy(format.kind, control, rest.to_vec()))
        }
        FrameSecurity::Secured(tau) => {
            let fixed = COUNTER_OCTETS + tau.bytes();
            if rest.len() < fixed {
                return Err(FrameError::Malformed(MalformedReason::Truncated {
                    len: bytes.len(),
                }));
            }
            let payload_len = rest.len() - fixed;
            if payload_len > capacity {
                return Err(FrameError::Malformed(MalformedReason::PayloadTooLong {
                    len: payload_len,
                    capacity,
                }));
            }
            let counter = u32::from_be_bytes(rest[..4].try_into().expect("4 bytes"));
            let payload = rest[4..4 + payload_len].to_vec();
            let tag = rest[4 + payload_len..].to_vec();
            Ok(Frame::secured(control, counter, payload, tag))
        }
    }
}

/// One-octet CRC appended to legacy bursts on the air, standing in for the
/// physical-layer check; secured frames rely on their tag instead.
pub fn legacy_checksum(bytes: &[u8]) -> u8 {
    LEGACY_CRC.checksum(bytes)
}
