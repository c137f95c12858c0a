//! Simulation trace: ordered events plus per-port counters.

use std::io::{self, Write};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{Burst, DeliveryOutcome, Origin};
use crate::adversary::{AttackKind, Learned, Prerequisite};
pub use crate::detection::Alert;
use crate::hopping::ChannelIndex;
use crate::pairing::{PairingMethod, PairingMode};
use crate::protocol::{DeviceUid, PortKey, SlotId, TrackKey};

/// How much of the run is recorded. `Security` drops per-burst and per-grant
/// records and routine acceptances, which keeps million-cycle runs small.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    #[default]
    Full,
    Security,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Checksum,
    Malformed,
    AuthFailure,
    ReplayRejected,
    LinkInFailState,
}

/// Attack parameters recorded at the start of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackInfo {
    pub kind: AttackKind,
    pub target: Option<PortKey>,
    pub start_cycle: u64,
    pub stop_cycle: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    RunStart {
        scenario: String,
        seed: u64,
        horizon_cycles: u64,
        sub_cycles_per_cycle: u8,
        watchdog_cycles: u64,
        safety_ports: Vec<PortKey>,
        attacks: Vec<AttackInfo>,
    },
    Grant {
        cycle: u64,
        sub_cycle: u64,
        track: TrackKey,
        slot: SlotId,
        channel: ChannelIndex,
        attempt: u8,
    },
    Burst(Burst),
    Delivery {
        burst_id: u64,
        outcome: DeliveryOutcome,
    },
    FrameAccepted {
        cycle: u64,
        sub_cycle: u64,
        port: PortKey,
        origin: Origin,
        counter: Option<u32>,
        /// A verbatim copy of a frame the legitimate device sent but the master
        /// never processed.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        relayed: bool,
    },
    FrameRejected {
        cycle: u64,
        sub_cycle: u64,
        port: Option<PortKey>,
        origin: Origin,
        reason: RejectReason,
    },
    /// A delivered frame the master had no processing capacity left for.
    FrameDisplaced {
        cycle: u64,
        sub_cycle: u64,
        track: TrackKey,
        port: Option<PortKey>,
        origin: Origin,
    },
    SlotFailed {
        cycle: u64,
        port: PortKey,
    },
    LinkFailState {
        cycle: u64,
        port: PortKey,
    },
    LinkReconfigured {
        cycle: u64,
        port: PortKey,
    },
    SafeStateEntered {
        cycle: u64,
        port: PortKey,
        safety: bool,
    },
    SafeStateExited {
        cycle: u64,
        port: PortKey,
    },
    ServiceMode {
        cycle: u64,
        track: TrackKey,
        active: bool,
    },
    Paired {
        cycle: u64,
        port: PortKey,
        device_uid: DeviceUid,
        method: PairingMethod,
        mode: PairingMode,
    },
    Unpaired {
        cycle: u64,
        port: PortKey,
        device_uid: DeviceUid,
    },
    PairingRejected {
        cycle: u64,
        action: String,
        error: String,
    },
    Roamed {
        cycle: u64,
        device_uid: DeviceUid,
        from: PortKey,
        to: PortKey,
        lease_until: u64,
    },
    RoamReturned {
        cycle: u64,
        device_uid: DeviceUid,
        home: PortKey,
    },
    TableSwitch {
        cycle: u64,
        track: TrackKey,
        generation: u32,
        sealed: bool,
    },
    AttackStarted {
        cycle: u64,
        attack: usize,
        kind: AttackKind,
    },
    AttackStopped {
        cycle: u64,
        attack: usize,
    },
    PrerequisiteUnmet {
        cycle: u64,
        attack: usize,
        missing: Vec<Prerequisite>,
    },
    KnowledgeUpdate {
        cycle: u64,
        attack: usize,
        learned: Learned,
    },
    PlaintextExposed {
        cycle: u64,
        attack: usize,
        port: PortKey,
    },
    Alert {
        cycle: u64,
        sub_cycle: u64,
        alert: Alert,
    },
    RunEnd {
        cycles: u64,
    },
}

impl TraceEvent {
    /// Events kept at [`TraceLevel::Security`].
    pub fn is_security_relevant(&self) -> bool {
        match self {
            TraceEvent::Grant { .. } | TraceEvent::Burst(_) | TraceEvent::Delivery { .. } => false,
            TraceEvent::FrameAccepted { origin, .. } => origin.is_adversary(),
            TraceEvent::FrameRejected { origin, reason, .. } => {
                origin.is_adversary()
                    || !matches!(reason, RejectReason::Checksum | RejectReason::Malformed)
            }
            _ => true,
        }
    }

    pub fn cycle(&self) -> Option<u64> {
        use TraceEvent::*;
        match self {
            Grant { cycle, .. }
            | FrameAccepted { cycle, .. }
            | FrameRejected { cycle, .. }
            | FrameDisplaced { cycle, .. }
            | SlotFailed { cycle, .. }
            | LinkFailState { cycle, .. }
            | LinkReconfigured { cycle, .. }
            | SafeStateEntered { cycle, .. }
            | SafeStateExited { cycle, .. }
            | ServiceMode { cycle, .. }
            | Paired { cycle, .. }
            | Unpaired { cycle, .. }
            | PairingRejected { cycle, .. }
            | Roamed { cycle, .. }
            | RoamReturned { cycle, .. }
            | TableSwitch { cycle, .. }
            | AttackStarted { cycle, .. }
            | AttackStopped { cycle, .. }
            | PrerequisiteUnmet { cycle, .. }
            | KnowledgeUpdate { cycle, .. }
            | PlaintextExposed { cycle, .. }
            | Alert { cycle, .. } => Some(*cycle),
            RunEnd { cycles } => Some(*cycles),
            RunStart { .. } | Burst(_) | Delivery { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortStats {
    pub port: PortKey,
    pub safety: bool,
    /// Cycles in which the port was scheduled.
    pub cycles_scheduled: u64,
    /// Scheduled cycles in which every attempt failed.
    pub cycle_failures: u64,
    pub attempts: u64,
    pub accepted_frames: u64,
    pub auth_failures: u64,
    pub replays_rejected: u64,
    pub displaced: u64,
    pub safe_state_entries: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSummary {
    pub cycles: u64,
    pub grants: u64,
    pub legit_bursts: u64,
    pub adversary_bursts: u64,
    /// Environmental interference from the jam plan.
    pub interference_bursts: u64,
    pub delivered: u64,
    pub collided: u64,
    pub jammed: u64,
    pub no_listener: u64,
    pub alerts: u64,
    pub ports: Vec<PortStats>,
}

impl PortStats {
    pub fn new(port: PortKey, safety: bool) -> Self {
        PortStats {
            port,
            safety,
            cycles_scheduled: 0,
            cycle_failures: 0,
            attempts: 0,
            accepted_frames: 0,
            auth_failures: 0,
            replays_rejected: 0,
            displaced: 0,
            safe_state_entries: 0,
        }
    }
}

impl SimSummary {
    pub fn port(&self, port: PortKey) -> Option<&PortStats> {
        self.ports.iter().find(|p| p.port == port)
    }

    pub fn record_outcome(&mut self, outcome: DeliveryOutcome) {
        match outcome {
            DeliveryOutcome::Delivered { .. } => self.delivered += 1,
            DeliveryOutcome::Collided => self.collided += 1,
            DeliveryOutcome::Jammed => self.jammed += 1,
            DeliveryOutcome::NoListener => self.no_listener += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub level: TraceLevel,
    pub events: Vec<TraceEvent>,
    pub summary: SimSummary,
}

impl SimTrace {
    pub fn is_complete(&self) -> bool {
        matches!(self.events.first(), Some(TraceEvent::RunStart { .. }))
            && matches!(self.events.last(), Some(TraceEvent::RunEnd { .. }))
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl(text: &str) -> Result<Vec<TraceEvent>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }

    /// Per-port counters as CSV.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "port,safety,cycles_scheduled,cycle_failures,attempts,accepted_frames,auth_failures,replays_rejected,displaced,safe_state_entries"
        )?;
        for p in &self.summary.ports {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                p.port,
                p.safety,
                p.cycles_scheduled,
                p.cycle_failures,
                p.attempts,
                p.accepted_frames,
                p.auth_failures,
                p.replays_rejected,
                p.displaced,
                p.safe_state_entries
            )?;
        }
        Ok(())
    }

    /// Every burst image on the air, concatenated. Used for secrecy checks.
    pub fn transcript(&self) -> Vec<u8> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Burst(b) => Some(b.bytes.as_slice()),
                _ => None,
            })
            .flatten()
            .copied()
            .collect()
    }
}
