use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::config::{CellConfig, SecurityMode, SlotConfig, TimingModel};
use super::frame::{FrameFormat, FrameSecurity, SlotKind};
use super::ids::{DeviceUid, MasterId, PortKey, SlotId, TrackId, TrackKey};
use crate::hopping::{self, HoppingError, HoppingTable};

pub const MAX_MASTERS: usize = 3;
pub const MAX_TRACKS_PER_MASTER: usize = 5;
pub const MAX_SLOTS_PER_TRACK: usize = 8;
pub const MAX_CELL_UNITS: usize = 120;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Limit {
    Masters { count: usize },
    Tracks { master: MasterId, count: usize },
    Slots { track: TrackKey, count: usize },
    TrackUnits { track: TrackKey, units: usize },
    CellUnits { units: usize },
    SlotId { track: TrackKey, slot: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("capacity exceeded: {0:?}")]
    CapacityExceeded(Limit),
    #[error("duplicate {0}")]
    DuplicateId(String),
    #[error("{0} must not be empty")]
    Empty(String),
    #[error("port {port}: {reason}")]
    InvalidSecurity { port: PortKey, reason: String },
    #[error("sub_cycles_per_cycle must be at least 3, got {0}")]
    InvalidTiming(u8),
    #[error("track {track}: {source}")]
    Hopping {
        track: TrackKey,
        #[source]
        source: HoppingError,
    },
    #[error("roaming entry for {device} names unknown port {port}")]
    UnknownRoamingPort { device: DeviceUid, port: PortKey },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("unknown track {0}")]
    UnknownTrack(TrackKey),
}

/// A configured port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Port {
    pub key: PortKey,
    pub kind: SlotKind,
    pub security: SecurityMode,
    pub device_uid: Option<DeviceUid>,
    pub initially_paired: bool,
    pub safety: bool,
}

impl Port {
    pub fn frame_format(&self) -> FrameFormat {
        let security = match self.security {
            SecurityMode::Legacy => FrameSecurity::Legacy,
            SecurityMode::Secured { tau } => FrameSecurity::Secured(tau),
        };
        FrameFormat::new(self.kind, security)
    }

    fn from_config(track: TrackKey, s: &SlotConfig) -> Port {
        Port {
            key: track.port(SlotId(s.slot_id)),
            kind: s.kind,
            security: s.security,
            device_uid: s.device_uid.map(DeviceUid),
            initially_paired: s.paired && s.device_uid.is_some(),
            safety: s.safety,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Track {
    pub key: TrackKey,
    pub table: HoppingTable,
    /// Offset into the table, so tracks of one master sharing a table never
    /// share a channel in the same sub-cycle.
    pub table_offset: u64,
    pub ports: Vec<Port>,
}

impl Track {
    pub fn port(&self, slot: SlotId) -> Option<&Port> {
        self.ports.iter().find(|p| p.key.slot_id == slot)
    }

    /// Channel of this track in the given sub-cycle under `table`.
    pub fn channel_with(&self, table: &HoppingTable, sub_cycle_counter: u64) -> hopping::ChannelIndex {
        table.next_channel(sub_cycle_counter + self.table_offset)
    }

    pub fn channel(&self, sub_cycle_counter: u64) -> hopping::ChannelIndex {
        self.channel_with(&self.table, sub_cycle_counter)
    }
}

/// A validated cell with its hopping tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    config: CellConfig,
    timing: TimingModel,
    tracks: Vec<Track>,
    index: BTreeMap<TrackKey, usize>,
}

/// Validate `config` and generate one hopping table per track.
pub fn build_cell(config: CellConfig) -> Result<Cell, ConfigError> {
    build_cell_with_timing(config, TimingModel::default())
}

pub fn build_cell_with_timing(config: CellConfig, timing: TimingModel) -> Result<Cell, ConfigError> {
    if timing.sub_cycles_per_cycle < 3 {
        return Err(ConfigError::InvalidTiming(timing.sub_cycles_per_cycle));
    }
    if config.masters.is_empty() {
        return Err(ConfigError::Empty("masters".into()));
    }
    if config.masters.len() > MAX_MASTERS {
        return Err(ConfigError::CapacityExceeded(Limit::Masters {
            count: config.masters.len(),
        }));
    }
    let mut master_ids = BTreeSet::new();
    let mut device_uids = BTreeSet::new();
    let mut cell_units = 0usize;
    let mut tracks = Vec::new();
    for m in &config.masters {
        let master = MasterId(m.master_id);
        if !master_ids.insert(m.master_id) {
            return Err(ConfigError::DuplicateId(format!("master_id {}", m.master_id)));
        }
        if m.tracks.is_empty() {
            return Err(ConfigError::Empty(format!("tracks of {master}")));
        }
        if m.tracks.len() > MAX_TRACKS_PER_MASTER {
            return Err(ConfigError::CapacityExceeded(Limit::Tracks {
                master,
                count: m.tracks.len(),
            }));
        }
        let mut track_ids = BTreeSet::new();
        for (track_index, t) in m.tracks.iter().enumerate() {
            let key = TrackKey {
                master_id: master,
                track_id: TrackId(t.track_id),
            };
            if !track_ids.insert(t.track_id) {
                return Err(ConfigError::DuplicateId(format!("track {key}")));
            }
            if t.slots.is_empty() {
                return Err(ConfigError::Empty(format!("slots of {key}")));
            }
            if t.slots.len() > MAX_SLOTS_PER_TRACK {
                return Err(ConfigError::CapacityExceeded(Limit::Slots {
                    track: key,
                    count: t.slots.len(),
                }));
            }
            let mut slot_ids = BTreeSet::new();
            let mut track_units = 0;
            let mut ports = Vec::with_capacity(t.slots.len());
            for s in &t.slots {
                if s.slot_id as usize >= MAX_SLOTS_PER_TRACK {
                    return Err(ConfigError::CapacityExceeded(Limit::SlotId {
                        track: key,
                        slot: s.slot_id,
                    }));
                }
                if !slot_ids.insert(s.slot_id) {
                    return Err(ConfigError::DuplicateId(format!(
                        "slot {}",
                        key.port(SlotId(s.slot_id))
                    )));
                }
                if let Some(uid) = s.device_uid {
                    if !device_uids.insert(uid) {
                        return Err(ConfigError::DuplicateId(format!("device_uid {uid:#x}")));
                    }
                }
                let port = Port::from_config(key, s);
                if let SecurityMode::Secured { tau } = s.security {
                    if s.kind == SlotKind::SSlot {
                        return Err(ConfigError::InvalidSecurity {
                            port: port.key,
                            reason: "secured mode needs a DSlot; the tag does not fit an SSlot"
                                .into(),
                        });
                    }
                    if !tau.is_slot_length() {
                        return Err(ConfigError::InvalidSecurity {
                            port: port.key,
                            reason: format!("unsupported tag length {tau}"),
                        });
                    }
                }
                track_units += s.kind.units();
                ports.push(port);
            }
            if track_units > MAX_SLOTS_PER_TRACK {
                return Err(ConfigError::CapacityExceeded(Limit::TrackUnits {
                    track: key,
                    units: track_units,
                }));
            }
            cell_units += track_units;
            if cell_units > MAX_CELL_UNITS {
                return Err(ConfigError::CapacityExceeded(Limit::CellUnits { units: cell_units }));
            }
            let seed = t.hopping_seed.unwrap_or(m.master_id);
            let table = hopping::generate_table(seed, &t.blocklist, t.min_hop_distance_mhz)
                .map_err(|source| ConfigError::Hopping { track: key, source })?;
            let table_offset = (track_index * (table.len() / MAX_TRACKS_PER_MASTER)) as u64;
            ports.sort_by_key(|p| p.key.slot_id);
            tracks.push(Track {
                key,
                table,
                table_offset,
                ports,
            });
        }
    }
    let index: BTreeMap<TrackKey, usize> =
        tracks.iter().enumerate().map(|(i, t)| (t.key, i)).collect();
    for m in &config.masters {
        for r in &m.roaming_allowlist {
            let port = PortKey::new(m.master_id, r.track_id, r.slot_id);
            let known = index
                .get(&port.track())
                .is_some_and(|&i| tracks[i].port(port.slot_id).is_some());
            if !known {
                return Err(ConfigError::UnknownRoamingPort {
                    device: DeviceUid(r.device_uid),
                    port,
                });
            }
        }
    }
    Ok(Cell {
        config,
        timing,
        tracks,
        index,
    })
}

impl Cell {
    pub fn config(&self) -> &CellConfig {
        &self.config
    }

    pub fn timing(&self) -> TimingModel {
        self.timing
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn track(&self, key: TrackKey) -> Result<&Track, ScheduleError> {
        self.index
            .get(&key)
            .map(|&i| &self.tracks[i])
            .ok_or(ScheduleError::UnknownTrack(key))
    }

    pub fn track_index(&self, key: TrackKey) -> Option<usize> {
        self.index.get(&key).copied()
    }

    pub fn port(&self, key: PortKey) -> Option<&Port> {
        self.track(key.track()).ok()?.port(key.slot_id)
    }

    pub fn ports(&self) -> impl Iterator<Item = &Port> {
        self.tracks.iter().flat_map(|t| t.ports.iter())
    }

    pub fn masters(&self) -> impl Iterator<Item = MasterId> + '_ {
        self.config.masters.iter().map(|m| MasterId(m.master_id))
    }

    /// Port a device may roam into at `master`, if allowlisted there.
    pub fn roaming_port(&self, master: MasterId, device: DeviceUid) -> Option<PortKey> {
        self.config
            .masters
            .iter()
            .find(|m| m.master_id == master.0)?
            .roaming_allowlist
            .iter()
            .find(|r| r.device_uid == device.0)
            .map(|r| PortKey::new(master.0, r.track_id, r.slot_id))
    }

    /// Slot units in use, a DSlot counting twice.
    pub fn slot_units(&self) -> usize {
        self.ports().map(|p| p.kind.units()).sum()
    }

    /// Every transmission opportunity of the initially paired ports of `track` in
    /// `cycle`, assuming each attempt fails and is repeated.
    pub fn schedule_cycle(
        &self,
        track: TrackKey,
        cycle_index: u64,
    ) -> Result<Vec<super::TransmissionGrant>, ScheduleError> {
        let t = self.track(track)?;
        let active: Vec<SlotId> = t
            .ports
            .iter()
            .filter(|p| p.initially_paired)
            .map(|p| p.key.slot_id)
            .collect();
        let mut sched = super::CycleSchedule::new(self, track, &t.table, cycle_index, active)?;
        let mut out = Vec::new();
        for sub in 0..self.timing.sub_cycles_per_cycle {
            let grants = sched.grants(sub);
            for g in &grants {
                sched.record(g.slot_id, false);
            }
            out.extend(grants);
        }
        Ok(out)
    }
}
