//! Security and safety impact of each attack, derived from trace evidence.
//!
//! - Availability: a safe-state entry, or a legitimate frame that was displaced
//!   or refused by a locked or replay-guarded link, while the attack was active
//!   (watchdog delay included).
//! - Integrity: an accepted frame that an attacker originated. A verbatim relay
//!   of a genuine device frame is delayed delivery and does not count.
//! - Confidentiality: process data plaintext exposed to the attacker.
//! - Safety impact: integrity lost on a safety-tagged port.

use std::collections::BTreeSet;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::AttackKind;
use crate::medium::{AttackInfo, Origin, RejectReason, SimTrace, TraceEvent};
use crate::protocol::PortKey;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("trace is incomplete: {0}")]
    IncompleteTrace(String),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
pub enum Impact {
    Availability,
    Integrity,
    Confidentiality,
}

impl Impact {
    pub fn letter(self) -> char {
        match self {
            Impact::Availability => 'A',
            Impact::Integrity => 'I',
            Impact::Confidentiality => 'C',
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub safe_state_entries: u64,
    pub displaced_frames: u64,
    pub refused_frames: u64,
    pub forged_accepts: u64,
    pub plaintext_exposures: u64,
    pub first_impact_cycle: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub attack: usize,
    pub kind: AttackKind,
    /// The attack ran and left at least one impact.
    pub succeeded: bool,
    pub impact: BTreeSet<Impact>,
    pub safety_impact: bool,
    pub evidence: Evidence,
}

impl AttackOutcome {
    pub fn impact_string(&self) -> String {
        impact_string(&self.impact)
    }
}

pub fn impact_string(set: &BTreeSet<Impact>) -> String {
    if set.is_empty() {
        "-".into()
    } else {
        set.iter().map(|i| i.letter()).collect()
    }
}

/// Reference classification of one attack class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Table1Row {
    pub kind: AttackKind,
    pub safety_impact: bool,
    pub impact: &'static [Impact],
}

impl Table1Row {
    pub fn impact_set(&self) -> BTreeSet<Impact> {
        self.impact.iter().copied().collect()
    }
}

use Impact::{Availability as A, Confidentiality as C, Integrity as I};

pub const TABLE1: [Table1Row; 6] = [
    Table1Row { kind: AttackKind::Flooding, safety_impact: false, impact: &[A] },
    Table1Row { kind: AttackKind::Jamming, safety_impact: false, impact: &[A] },
    Table1Row { kind: AttackKind::Replay, safety_impact: false, impact: &[A] },
    Table1Row { kind: AttackKind::Forgery, safety_impact: true, impact: &[A, I] },
    Table1Row { kind: AttackKind::ForgeryLeakedKey, safety_impact: true, impact: &[A, I] },
    Table1Row { kind: AttackKind::CompromisedDevice, safety_impact: true, impact: &[A, I, C] },
];

pub fn table1_row(kind: AttackKind) -> Table1Row {
    *TABLE1.iter().find(|r| r.kind == kind).expect("every kind has a row")
}

/// True when the outcome matches the reference row exactly.
pub fn compare_table1(outcome: &AttackOutcome) -> bool {
    let row = table1_row(outcome.kind);
    outcome.safety_impact == row.safety_impact && outcome.impact == row.impact_set()
}

pub fn classify_trace(trace: &SimTrace) -> Result<Vec<AttackOutcome>, ClassifyError> {
    classify_events(&trace.events)
}

struct Window {
    info: AttackInfo,
    started: Option<u64>,
    stopped: Option<u64>,
}

pub fn classify_events(events: &[TraceEvent]) -> Result<Vec<AttackOutcome>, ClassifyError> {
    let Some(TraceEvent::RunStart {
        watchdog_cycles,
        safety_ports,
        attacks,
        ..
    }) = events.first()
    else {
        return Err(ClassifyError::IncompleteTrace("missing run start".into()));
    };
    let end = match events.last() {
        Some(TraceEvent::RunEnd { cycles }) => *cycles,
        _ => return Err(ClassifyError::IncompleteTrace("missing run end".into())),
    };
    let safety: BTreeSet<PortKey> = safety_ports.iter().copied().collect();
    let mut windows: Vec<Window> = attacks
        .iter()
        .map(|&info| Window {
            info,
            started: None,
            stopped: None,
        })
        .collect();
    for e in events {
        match *e {
            TraceEvent::AttackStarted { cycle, attack, .. } => {
                if let Some(w) = windows.get_mut(attack) {
                    w.started.get_or_insert(cycle);
                }
            }
            TraceEvent::AttackStopped { cycle, attack } => {
                if let Some(w) = windows.get_mut(attack) {
                    w.stopped = Some(cycle);
                }
            }
            _ => {}
        }
    }

    let mut outcomes = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let mut ev = Evidence::default();
        let mut integrity_ports = BTreeSet::new();
        let in_window = |c: u64| match w.started {
            Some(s) => c >= s && c <= w.stopped.unwrap_or(end).saturating_add(*watchdog_cycles + 1),
            None => false,
        };
        let note = |ev: &mut Evidence, c: u64| {
            ev.first_impact_cycle = Some(ev.first_impact_cycle.map_or(c, |f| f.min(c)));
        };
        for e in events {
            match *e {
                TraceEvent::SafeStateEntered { cycle, .. } if in_window(cycle) => {
                    ev.safe_state_entries += 1;
                    note(&mut ev, cycle);
                }
                TraceEvent::FrameDisplaced { cycle, origin, .. }
                    if origin.is_legitimate() && in_window(cycle) =>
                {
                    ev.displaced_frames += 1;
                    note(&mut ev, cycle);
                }
                TraceEvent::FrameRejected {
                    cycle,
                    origin,
                    reason: RejectReason::LinkInFailState | RejectReason::ReplayRejected,
                    ..
                } if origin.is_legitimate() && in_window(cycle) => {
                    ev.refused_frames += 1;
                    note(&mut ev, cycle);
                }
                TraceEvent::FrameAccepted {
                    cycle,
                    port,
                    origin: Origin::Adversary { attack },
                    relayed: false,
                    ..
                } if attack == i => {
                    ev.forged_accepts += 1;
                    integrity_ports.insert(port);
                    note(&mut ev, cycle);
                }
                TraceEvent::PlaintextExposed { cycle, attack, .. } if attack == i => {
                    ev.plaintext_exposures += 1;
                    note(&mut ev, cycle);
                }
                _ => {}
            }
        }
        let mut impact = BTreeSet::new();
        if ev.safe_state_entries + ev.displaced_frames + ev.refused_frames > 0 {
            impact.insert(Impact::Availability);
        }
        if ev.forged_accepts > 0 {
            impact.insert(Impact::Integrity);
        }
        if ev.plaintext_exposures > 0 {
            impact.insert(Impact::Confidentiality);
        }
        outcomes.push(AttackOutcome {
            attack: i,
            kind: w.info.kind,
            succeeded: w.started.is_some() && !impact.is_empty(),
            safety_impact: integrity_ports.iter().any(|p| safety.contains(p)),
            impact,
            evidence: ev,
        });
    }
    Ok(outcomes)
}
