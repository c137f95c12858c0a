use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(transparent)]
pub struct MasterId(pub u32);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(transparent)]
pub struct DeviceUid(pub u64);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(transparent)]
pub struct TrackId(pub u8);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(transparent)]
pub struct SlotId(pub u8);

/// A track of a given master.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrackKey {
    pub master_id: MasterId,
    pub track_id: TrackId,
}

/// A W-Port: the master-side attachment point of one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortKey {
    pub master_id: MasterId,
    pub track_id: TrackId,
    pub slot_id: SlotId,
}

impl PortKey {
    pub fn new(master_id: u32, track_id: u8, slot_id: u8) -> Self {
        PortKey {
            master_id: MasterId(master_id),
            track_id: TrackId(track_id),
            slot_id: SlotId(slot_id),
        }
    }

    pub fn track(&self) -> TrackKey {
        TrackKey {
            master_id: self.master_id,
            track_id: self.track_id,
        }
    }

    /// Physical-layer access address of the port's frames.
    pub fn access_address(&self) -> u32 {
        mix(
            self.master_id.0 as u64,
            ((self.track_id.0 as u64) << 8) | self.slot_id.0 as u64,
        )
    }
}

impl TrackKey {
    pub fn new(master_id: u32, track_id: u8) -> Self {
        TrackKey {
            master_id: MasterId(master_id),
            track_id: TrackId(track_id),
        }
    }

    pub fn port(&self, slot: SlotId) -> PortKey {
        PortKey {
            master_id: self.master_id,
            track_id: self.track_id,
            slot_id: slot,
        }
    }

    /// Access address used on the configuration channels while in ServiceMode.
    pub fn config_address(&self) -> u32 {
        mix(self.master_id.0 as u64, 0xC0F1_0000 | self.track_id.0 as u64)
    }
}

fn mix(a: u64, b: u64) -> u32 {
    // splitmix64 finalizer over the packed inputs
    let mut z = (a << 32 | (b & 0xFFFF_FFFF)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) as u32
}

impl fmt::Display for MasterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{:#x}", self.0)
    }
}

impl fmt::Display for DeviceUid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{:#x}", self.0)
    }
}

impl fmt::Display for TrackKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/T{}", self.master_id, self.track_id.0)
    }
}

impl fmt::Display for PortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/T{}/S{}",
            self.master_id, self.track_id.0, self.slot_id.0
        )
    }
}
