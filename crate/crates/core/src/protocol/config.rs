//! JSON cell configuration.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::frame::SlotKind;
use crate::hopping::{Blocklist, DEFAULT_MIN_HOP_DISTANCE_MHZ};
use crate::secure::TagLength;

/// Sub-cycle length in microseconds.
pub const SUB_CYCLE_US: u64 = 1664;
/// Initial transmission plus two repetitions.
pub const MAX_TRANSMISSIONS_PER_CYCLE: u8 = 3;
/// Nominal cycle time in microseconds.
pub const NOMINAL_CYCLE_US: u64 = 5000;
/// Cycles per minute at the nominal cycle time.
pub const CYCLES_PER_MINUTE: u64 = 60_000_000 / NOMINAL_CYCLE_US;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub masters: Vec<MasterConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MasterConfig {
    pub master_id: u32,
    pub tracks: Vec<TrackConfig>,
    /// Ports of this master that listed foreign devices may roam into.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub roaming_allowlist: Vec<RoamingEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RoamingEntry {
    pub device_uid: u64,
    pub track_id: u8,
    pub slot_id: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    pub track_id: u8,
    /// Seed of the hopping table; the master ID when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hopping_seed: Option<u32>,
    #[serde(default, skip_serializing_if = "Blocklist::is_empty")]
    pub blocklist: Blocklist,
    #[serde(default = "default_min_hop")]
    pub min_hop_distance_mhz: u32,
    pub slots: Vec<SlotConfig>,
}

fn default_min_hop() -> u32 {
    DEFAULT_MIN_HOP_DISTANCE_MHZ
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SlotConfig {
    pub slot_id: u8,
    pub kind: SlotKind,
    #[serde(default)]
    pub security: SecurityMode,
    /// Device configured for this port, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_uid: Option<u64>,
    /// Whether the configured device is already paired when the run starts.
    #[serde(default = "default_true")]
    pub paired: bool,
    /// Marks a safety sensor or actuator.
    #[serde(default)]
    pub safety: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SecurityMode {
    #[default]
    Legacy,
    Secured {
        #[serde(default)]
        tau: TagLength,
    },
}

impl SecurityMode {
    pub fn is_secured(&self) -> bool {
        matches!(self, SecurityMode::Secured { .. })
    }
}

/// Media-access timing. Only the sub-cycle count is configurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TimingModel {
    #[serde(default = "default_sub_cycles")]
    pub sub_cycles_per_cycle: u8,
}

fn default_sub_cycles() -> u8 {
    3
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel {
            sub_cycles_per_cycle: 3,
        }
    }
}

impl TimingModel {
    pub fn sub_cycle_us(&self) -> u64 {
        SUB_CYCLE_US
    }

    pub fn cycle_us(&self) -> u64 {
        SUB_CYCLE_US * self.sub_cycles_per_cycle as u64
    }

    pub fn max_transmissions_per_cycle(&self) -> u8 {
        MAX_TRANSMISSIONS_PER_CYCLE
    }

    /// Absolute time of a sub-cycle start, in microseconds.
    pub fn time_us(&self, sub_cycle_counter: u64) -> u64 {
        sub_cycle_counter * SUB_CYCLE_US
    }
}
