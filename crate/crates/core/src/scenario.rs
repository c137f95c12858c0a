//! Scenario files: cell, medium, timeline of pairing events, attacks and
//! detection settings in one JSON document. Unknown keys are rejected.

use schemars::gen::SchemaGenerator;
use schemars::schema::{RootSchema, Schema};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::adversary::{AttackKind, AttackSpec, JamChannels};
use crate::detection::DetectionConfig;
use crate::hopping::Blocklist;
use crate::medium::{bsc_p_for_trial_failure, TraceLevel};
use crate::pairing::PairingMode;
use crate::protocol::{
    build_cell_with_timing, Cell, CellConfig, FrameSecurity, PortKey, TimingModel, TrackKey,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct JamWindow {
    pub start_cycle: u64,
    pub stop_cycle: u64,
    pub channels: JamChannels,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    /// Bit-flip probability of the binary symmetric channel.
    #[serde(default)]
    pub bsc_p: f64,
    /// Alternative to `bsc_p`: probability that one exchange of the first
    /// configured port is hit by at least one bit error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_failure_q: Option<f64>,
    /// Interference not attributed to any attacker.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jam_plan: Vec<JamWindow>,
}

fn default_watchdog() -> u64 {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    /// Cycles without a valid exchange before a port enters its safe state.
    #[serde(default = "default_watchdog")]
    pub watchdog_cycles: u64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            watchdog_cycles: default_watchdog(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RecoveryConfig {
    /// Re-key a locked port out of band after this many cycles in FailState.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconfigure_after_cycles: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default)]
    pub trace_level: TraceLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "action", content = "args", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventAction {
    EnterServiceMode {
        master_id: u32,
        track_id: u8,
    },
    ExitServiceMode {
        master_id: u32,
        track_id: u8,
    },
    PairByUniqueId {
        master_id: u32,
        track_id: u8,
        slot_id: u8,
        device_uid: u64,
        mode: PairingMode,
    },
    PairByButton {
        master_id: u32,
        track_id: u8,
        slot_id: u8,
        device_uid: u64,
        mode: PairingMode,
    },
    Roam {
        device_uid: u64,
        from_master: u32,
        to_master: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lease_cycles: Option<u64>,
    },
    ReturnRoam {
        device_uid: u64,
    },
    AdaptiveSwitch {
        master_id: u32,
        track_id: u8,
        #[serde(default)]
        blocklist: Blocklist,
    },
    SetOobAvailable {
        available: bool,
    },
}

impl EventAction {
    pub fn name(&self) -> &'static str {
        match self {
            EventAction::EnterServiceMode { .. } => "enter_service_mode",
            EventAction::ExitServiceMode { .. } => "exit_service_mode",
            EventAction::PairByUniqueId { .. } => "pair_by_unique_id",
            EventAction::PairByButton { .. } => "pair_by_button",
            EventAction::Roam { .. } => "roam",
            EventAction::ReturnRoam { .. } => "return_roam",
            EventAction::AdaptiveSwitch { .. } => "adaptive_switch",
            EventAction::SetOobAvailable { .. } => "set_oob_available",
        }
    }

    /// Track the action names, if any.
    pub fn track(&self) -> Option<TrackKey> {
        match *self {
            EventAction::EnterServiceMode { master_id, track_id }
            | EventAction::ExitServiceMode { master_id, track_id }
            | EventAction::PairByUniqueId { master_id, track_id, .. }
            | EventAction::PairByButton { master_id, track_id, .. }
            | EventAction::AdaptiveSwitch { master_id, track_id, .. } => {
                Some(TrackKey::new(master_id, track_id))
            }
            _ => None,
        }
    }
}

/// `{"at_cycle": n, "action": "...", "args": {...}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvent", into = "RawEvent")]
pub struct ScenarioEvent {
    pub at_cycle: u64,
    pub action: EventAction,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    at_cycle: u64,
    action: String,
    #[serde(default)]
    args: Value,
}

impl TryFrom<RawEvent> for ScenarioEvent {
    type Error = String;

    fn try_from(raw: RawEvent) -> Result<Self, String> {
        let mut obj = serde_json::Map::new();
        obj.insert("action".into(), Value::String(raw.action.clone()));
        if !raw.args.is_null() {
            obj.insert("args".into(), raw.args);
        }
        let action = serde_json::from_value(Value::Object(obj))
            .map_err(|e| format!("event '{}' at cycle {}: {e}", raw.action, raw.at_cycle))?;
        Ok(ScenarioEvent {
            at_cycle: raw.at_cycle,
            action,
        })
    }
}

impl From<ScenarioEvent> for RawEvent {
    fn from(e: ScenarioEvent) -> Self {
        let v = serde_json::to_value(&e.action).expect("serializable");
        RawEvent {
            at_cycle: e.at_cycle,
            action: v["action"].as_str().expect("tagged").to_owned(),
            args: v.get("args").cloned().unwrap_or(Value::Null),
        }
    }
}

#[derive(JsonSchema)]
#[allow(dead_code)]
struct EventSchema {
    at_cycle: u64,
    #[serde(flatten)]
    action: EventAction,
}

impl JsonSchema for ScenarioEvent {
    fn schema_name() -> String {
        "ScenarioEvent".into()
    }

    fn json_schema(gen: &mut SchemaGenerator) -> Schema {
        // Flattening puts `additionalProperties: false` on every action variant,
        // which would reject `at_cycle`; move the field into each variant.
        let mut v = serde_json::to_value(EventSchema::json_schema(gen)).expect("schema is JSON");
        let at_cycle = v["properties"]["at_cycle"].clone();
        if let Some(obj) = v.as_object_mut() {
            obj.remove("properties");
            obj.remove("required");
        }
        if let Some(variants) = v["oneOf"].as_array_mut() {
            for variant in variants {
                variant["properties"]["at_cycle"] = at_cycle.clone();
                if let Some(req) = variant["required"].as_array_mut() {
                    req.insert(0, Value::String("at_cycle".into()));
                }
            }
        }
        serde_json::from_value(v).expect("schema round-trips")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub horizon_cycles: u64,
    pub cell: CellConfig,
    #[serde(default)]
    pub timing: TimingModel,
    #[serde(default)]
    pub medium: MediumConfig,
    #[serde(default)]
    pub safety: SafetyConfig,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<ScenarioEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn schema() -> RootSchema {
        schemars::schema_for!(Scenario)
    }

    /// Validate and build the cell.
    pub fn validate(&self) -> Result<Cell, ScenarioError> {
        let invalid = |m: String| ScenarioError::Invalid(m);
        let cell = build_cell_with_timing(self.cell.clone(), self.timing)
            .map_err(|e| invalid(e.to_string()))?;
        if self.horizon_cycles == 0 {
            return Err(invalid("horizon_cycles must be at least 1".into()));
        }
        if self.safety.watchdog_cycles == 0 {
            return Err(invalid("watchdog_cycles must be at least 1".into()));
        }
        let p = self.medium.bsc_p;
        if !(0.0..=0.5).contains(&p) {
            return Err(invalid(format!("bsc_p must lie in [0, 0.5], got {p}")));
        }
        if let Some(q) = self.medium.trial_failure_q {
            if !(0.0..1.0).contains(&q) {
                return Err(invalid(format!("trial_failure_q must lie in [0, 1), got {q}")));
            }
            if p != 0.0 {
                return Err(invalid("set either bsc_p or trial_failure_q, not both".into()));
            }
        }
        for w in &self.medium.jam_plan {
            if w.stop_cycle < w.start_cycle {
                return Err(invalid("jam window stops before it starts".into()));
            }
        }
        if self.recovery.reconfigure_after_cycles == Some(0) {
            return Err(invalid("reconfigure_after_cycles must be at least 1".into()));
        }
        if self.detection.flood_factor.is_nan() || self.detection.flood_factor <= 0.0 {
            return Err(invalid("flood_factor must be positive".into()));
        }
        for e in &self.events {
            if let Some(t) = e.action.track() {
                if cell.track(t).is_err() {
                    return Err(invalid(format!(
                        "event '{}' at cycle {} names unknown track {t}",
                        e.action.name(),
                        e.at_cycle
                    )));
                }
            }
        }
        for (i, a) in self.attacks.iter().enumerate() {
            if a.intensity == 0 {
                return Err(invalid(format!("attack {i}: intensity must be at least 1")));
            }
            if let Some(stop) = a.stop_cycle {
                if stop < a.start_cycle {
                    return Err(invalid(format!("attack {i}: stop_cycle before start_cycle")));
                }
            }
            match a.target_port() {
                None if a.kind.needs_target() => {
                    return Err(invalid(format!("attack {i} ({}) needs a target", a.kind.label())))
                }
                Some(t) => {
                    let port = cell
                        .port(t)
                        .ok_or_else(|| invalid(format!("attack {i}: unknown target port {t}")))?;
                    let secured_kind = matches!(
                        a.kind,
                        AttackKind::Forgery | AttackKind::ForgeryLeakedKey
                    );
                    if secured_kind && port.frame_format().security == FrameSecurity::Legacy {
                        return Err(invalid(format!(
                            "attack {i} ({}) needs a secured target port",
                            a.kind.label()
                        )));
                    }
                }
                None => {}
            }
        }
        Ok(cell)
    }

    /// Bit-flip probability after resolving `trial_failure_q`.
    pub fn effective_bsc_p(&self, cell: &Cell) -> f64 {
        match self.medium.trial_failure_q {
            Some(q) => {
                let bits = cell
                    .ports()
                    .next()
                    .map(|p| exchange_bits(p.frame_format()))
                    .unwrap_or(0);
                bsc_p_for_trial_failure(q, bits)
            }
            None => self.medium.bsc_p,
        }
    }

    pub fn safety_ports(&self, cell: &Cell) -> Vec<PortKey> {
        cell.ports().filter(|p| p.safety).map(|p| p.key).collect()
    }
}

/// On-air bits of one full downlink plus uplink.
pub fn exchange_bits(format: crate::protocol::FrameFormat) -> u32 {
    let len = format.full_wire_len().unwrap_or(0)
        + usize::from(format.security == FrameSecurity::Legacy);
    (2 * 8 * len) as u32
}
