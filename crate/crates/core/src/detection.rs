//! Detection measures: a passive sniffer node watching for flooding and
//! jamming, and the master-side anomaly check on secured ports.

use std::collections::{BTreeMap, VecDeque};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::hopping::{ChannelIndex, CHANNEL_COUNT};
use crate::protocol::PortKey;
use crate::secure::DEFAULT_LOCKOUT_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "alert", rename_all = "snake_case")]
pub enum Alert {
    Flooding {
        channel: ChannelIndex,
        count: u32,
        threshold: u32,
    },
    Jamming {
        channel: ChannelIndex,
        streak: u32,
    },
    Replay {
        port: PortKey,
    },
    FailStateCommand {
        port: PortKey,
    },
}

impl Alert {
    pub fn port(&self) -> Option<PortKey> {
        match *self {
            Alert::Replay { port } | Alert::FailStateCommand { port } => Some(port),
            _ => None,
        }
    }

    pub fn channel(&self) -> Option<ChannelIndex> {
        match *self {
            Alert::Flooding { channel, .. } | Alert::Jamming { channel, .. } => Some(channel),
            _ => None,
        }
    }
}

/// How the sniffer derives the expected per-channel burst rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SnifferMode {
    /// Shares the cell's hopping tables and schedule: expected bursts per channel.
    #[default]
    TableAware,
    /// Knows only the total scheduled traffic, spread evenly over the data channels.
    TableIgnorant,
}

fn default_true() -> bool {
    true
}
fn default_flood_window() -> u32 {
    30
}
fn default_flood_factor() -> f64 {
    3.0
}
fn default_jam_window() -> u32 {
    9
}
fn default_lockout() -> u8 {
    DEFAULT_LOCKOUT_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    #[serde(default = "default_true")]
    pub sniffer: bool,
    #[serde(default)]
    pub sniffer_mode: SnifferMode,
    /// Sliding window of the flooding estimator, in sub-cycles.
    #[serde(default = "default_flood_window")]
    pub flood_window_sub_cycles: u32,
    /// Alert when the windowed count exceeds this multiple of the expected count.
    #[serde(default = "default_flood_factor")]
    pub flood_factor: f64,
    /// Consecutive sub-cycles of undecodable energy before a jamming alert.
    #[serde(default = "default_jam_window")]
    pub jam_window_sub_cycles: u32,
    #[serde(default = "default_true")]
    pub master_anomaly: bool,
    /// Consecutive authentication failures before the master locks a port.
    #[serde(default = "default_lockout")]
    pub lockout_threshold: u8,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            sniffer: true,
            sniffer_mode: SnifferMode::TableAware,
            flood_window_sub_cycles: default_flood_window(),
            flood_factor: default_flood_factor(),
            jam_window_sub_cycles: default_jam_window(),
            master_anomaly: true,
            lockout_threshold: DEFAULT_LOCKOUT_THRESHOLD,
        }
    }
}

/// What the sniffer hears of one burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnifferObservation {
    pub channel: ChannelIndex,
    /// A frame could be demodulated (no collision, no jamming).
    pub decodable: bool,
    /// The burst carries a frame rather than raw carrier energy.
    pub framed: bool,
}

const SLOTS: usize = CHANNEL_COUNT as usize + 1;

#[derive(Debug, Clone)]
pub struct Sniffer {
    mode: SnifferMode,
    window: u32,
    factor: f64,
    jam_window: u32,
    usable_channels: u32,
    // per sub-cycle: (observed, expected) per channel, sparse
    history: VecDeque<(Vec<(u8, u32)>, Vec<(u8, u32)>)>,
    observed: [u32; SLOTS],
    expected: [u32; SLOTS],
    flooding: [bool; SLOTS],
    streak: [u32; SLOTS],
    jam_alerted: [bool; SLOTS],
    streaking: Vec<u8>,
    current: BTreeMap<u8, (u32, bool, bool)>,
    alerts: Vec<(u64, Alert)>,
}

impl Sniffer {
    pub fn new(config: &DetectionConfig, usable_channels: usize) -> Self {
        Sniffer {
            mode: config.sniffer_mode,
            window: config.flood_window_sub_cycles.max(1),
            factor: config.flood_factor,
            jam_window: config.jam_window_sub_cycles.max(1),
            usable_channels: usable_channels.max(1) as u32,
            history: VecDeque::new(),
            observed: [0; SLOTS],
            expected: [0; SLOTS],
            flooding: [false; SLOTS],
            streak: [0; SLOTS],
            jam_alerted: [false; SLOTS],
            streaking: Vec::new(),
            current: BTreeMap::new(),
            alerts: Vec::new(),
        }
    }

    pub fn ingest(&mut self, obs: SnifferObservation) {
        let e = self.current.entry(obs.channel.get()).or_insert((0, false, false));
        if obs.framed {
            e.0 += 1;
        }
        e.1 = true;
        e.2 |= obs.decodable && obs.framed;
    }

    /// Close a sub-cycle. `scheduled` lists the legitimate bursts the schedule
    /// put on each channel.
    pub fn close_sub_cycle(
        &mut self,
        sub_cycle: u64,
        scheduled: &[(ChannelIndex, u32)],
    ) -> Vec<Alert> {
        let mut out = Vec::new();
        let current = std::mem::take(&mut self.current);

        let observed: Vec<(u8, u32)> = current
            .iter()
            .filter(|(_, v)| v.0 > 0)
            .map(|(c, v)| (*c, v.0))
            .collect();
        let expected: Vec<(u8, u32)> = match self.mode {
            SnifferMode::TableAware => scheduled.iter().map(|(c, n)| (c.get(), *n)).collect(),
            SnifferMode::TableIgnorant => {
                // Whole-window total spread evenly; stored on channel 0.
                let total: u32 = scheduled.iter().map(|(_, n)| n).sum();
                vec![(0, total)]
            }
        };
        for &(c, n) in &observed {
            self.observed[c as usize] += n;
        }
        for &(c, n) in &expected {
            self.expected[c as usize] += n;
        }
        self.history.push_back((observed.clone(), expected));
        if self.history.len() > self.window as usize {
            let (o, e) = self.history.pop_front().expect("non-empty");
            for (c, n) in o {
                self.observed[c as usize] -= n;
            }
            for (c, n) in e {
                self.expected[c as usize] -= n;
            }
        }

        let mut touched: Vec<u8> = observed.iter().map(|(c, _)| *c).collect();
        touched.extend((1..SLOTS as u8).filter(|&c| self.flooding[c as usize]));
        touched.sort_unstable();
        touched.dedup();
        for c in touched {
            let expected = match self.mode {
                SnifferMode::TableAware => self.expected[c as usize] as f64,
                SnifferMode::TableIgnorant => self.expected[0] as f64 / self.usable_channels as f64,
            };
            let threshold = (self.factor * expected.max(2.0)).ceil() as u32;
            let count = self.observed[c as usize];
            let ci = ChannelIndex::new(c).expect("observed channel");
            if count > threshold {
                if !self.flooding[c as usize] {
                    self.flooding[c as usize] = true;
                    out.push(Alert::Flooding {
                        channel: ci,
                        count,
                        threshold,
                    });
                }
            } else {
                self.flooding[c as usize] = false;
            }
        }

        // Jamming: energy with nothing decodable, sustained.
        let mut next_streaking = Vec::new();
        for (&c, &(_, energy, decodable)) in &current {
            let i = c as usize;
            if energy && !decodable {
                self.streak[i] += 1;
                next_streaking.push(c);
                if self.streak[i] >= self.jam_window && !self.jam_alerted[i] {
                    self.jam_alerted[i] = true;
                    out.push(Alert::Jamming {
                        channel: ChannelIndex::new(c).expect("observed channel"),
                        streak: self.streak[i],
                    });
                }
            }
        }
        for c in std::mem::take(&mut self.streaking) {
            if !next_streaking.contains(&c) {
                self.streak[c as usize] = 0;
                self.jam_alerted[c as usize] = false;
            }
        }
        self.streaking = next_streaking;

        self.alerts.extend(out.iter().map(|a| (sub_cycle, *a)));
        out
    }

    /// Every alert raised so far with its sub-cycle.
    pub fn alerts(&self) -> &[(u64, Alert)] {
        &self.alerts
    }
}

/// Result of one secured frame at the master, as seen by the anomaly check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkEvent {
    Accepted,
    AuthFailure,
    ReplayRejected,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyStats {
    pub accepted: u64,
    pub auth_failures: u64,
    pub replays: u64,
    pub fail_state_commands: u64,
}

#[derive(Debug, Clone, Default)]
struct PortAnomaly {
    consecutive: u8,
    stats: AnomalyStats,
}

/// Master-side anomaly counters, one per secured port.
#[derive(Debug, Clone)]
pub struct MasterAnomaly {
    threshold: u8,
    ports: BTreeMap<PortKey, PortAnomaly>,
}

impl MasterAnomaly {
    pub fn new(threshold: u8) -> Self {
        MasterAnomaly {
            threshold: threshold.max(1),
            ports: BTreeMap::new(),
        }
    }

    pub fn check(&mut self, port: PortKey, event: LinkEvent) -> Vec<Alert> {
        let p = self.ports.entry(port).or_default();
        match event {
            LinkEvent::Accepted => {
                p.stats.accepted += 1;
                p.consecutive = 0;
                Vec::new()
            }
            LinkEvent::ReplayRejected => {
                p.stats.replays += 1;
                vec![Alert::Replay { port }]
            }
            LinkEvent::AuthFailure => {
                p.stats.auth_failures += 1;
                p.consecutive += 1;
                if p.consecutive >= self.threshold {
                    p.consecutive = 0;
                    p.stats.fail_state_commands += 1;
                    vec![Alert::FailStateCommand { port }]
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Forget the failure streak, e.g. after the port was re-keyed.
    pub fn reset(&mut self, port: PortKey) {
        if let Some(p) = self.ports.get_mut(&port) {
            p.consecutive = 0;
        }
    }

    pub fn stats(&self, port: PortKey) -> AnomalyStats {
        self.ports.get(&port).map(|p| p.stats).unwrap_or_default()
    }
}
