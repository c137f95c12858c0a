//! Pairing and roaming state machine with ServiceMode gating.
//!
//! Legacy pairing sends the device UID and the hopping table in the clear on a
//! configuration channel. Secured pairing takes a 16-byte secret from the
//! out-of-band channel, establishes both link ends, and ships the table only
//! inside a sealed configuration message.
//!
//! Configuration message layout:
//!
//! ```text
//! 0       kind
//! 1..5    master_id, big endian
//! 5       track_id
//! 6       slot_id
//! 7..15   device_uid, big endian
//! 15..17  table offset, big endian
//! 17..21  table generation, big endian
//! 21..    clear: channel sequence, one byte per channel
//!         sealed: counter (4, big endian) || ciphertext || tag; bytes 0..21 are
//!         the associated data
//! ```

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hopping::HoppingTable;
use crate::protocol::{
    Cell, DeviceUid, MasterId, PortKey, SecurityMode, SlotId, TrackId, TrackKey,
};
use crate::rng::StreamRng;
use crate::secure::{establish_link, Role, SecureLink, TagLength};

pub const SECRET_LEN: usize = 16;
/// Default roaming lease: one minute of 5 ms cycles.
pub const DEFAULT_LEASE_CYCLES: u64 = 12_000;
pub const CONFIG_HEADER_LEN: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    Legacy,
    SecuredOob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMethod {
    UniqueId,
    Button,
    Roaming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum PortPairing {
    Unpaired,
    Scanning,
    PairingInProgress {
        method: PairingMethod,
    },
    Paired {
        device_uid: DeviceUid,
    },
    /// A foreign device holding a lease on this port.
    Roamed {
        device_uid: DeviceUid,
        home: PortKey,
        lease_until: u64,
    },
    /// The home port of a device that is currently roaming; inert.
    RoamedAway {
        device_uid: DeviceUid,
        to: PortKey,
    },
}

impl PortPairing {
    /// Device served by the port right now.
    pub fn active_device(&self) -> Option<DeviceUid> {
        match *self {
            PortPairing::Paired { device_uid } | PortPairing::Roamed { device_uid, .. } => {
                Some(device_uid)
            }
            _ => None,
        }
    }

    fn is_free(&self) -> bool {
        matches!(self, PortPairing::Unpaired | PortPairing::Scanning)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PairingError {
    #[error("unknown track {0}")]
    UnknownTrack(TrackKey),
    #[error("unknown port {0}")]
    UnknownPort(PortKey),
    #[error("track {0} is not in ServiceMode")]
    NotInServiceMode(TrackKey),
    #[error("port {0} is occupied")]
    PortOccupied(PortKey),
    #[error("out-of-band channel unavailable")]
    OOBUnavailable,
    #[error("port {0} is not pre-configured")]
    PortNotPreconfigured(PortKey),
    #[error("device {device} is not on the roaming allowlist of {master}")]
    NotAllowlisted { device: DeviceUid, master: MasterId },
    #[error("device {0} already holds a roaming lease")]
    LeaseActiveElsewhere(DeviceUid),
    #[error("device {0} is already paired")]
    DeviceAlreadyPaired(DeviceUid),
    #[error("device {0} is not paired at the given master")]
    NotPairedAt(DeviceUid),
    #[error("device {0} is not roaming")]
    NotRoaming(DeviceUid),
    #[error("port {port} is configured {expected:?}; pairing mode {requested:?} does not match")]
    ModeMismatch {
        port: PortKey,
        expected: SecurityMode,
        requested: PairingMode,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigMessageKind {
    PairingClear = 0x01,
    PairingSealed = 0x02,
    TableUpdateClear = 0x03,
    TableUpdateSealed = 0x04,
}

impl ConfigMessageKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => ConfigMessageKind::PairingClear,
            0x02 => ConfigMessageKind::PairingSealed,
            0x03 => ConfigMessageKind::TableUpdateClear,
            0x04 => ConfigMessageKind::TableUpdateSealed,
            _ => return None,
        })
    }

    pub fn is_sealed(self) -> bool {
        matches!(
            self,
            ConfigMessageKind::PairingSealed | ConfigMessageKind::TableUpdateSealed
        )
    }
}

/// A message the master puts on the air for a track's configuration traffic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigMessage {
    pub track: TrackKey,
    pub kind: ConfigMessageKind,
    /// Pairing messages use a configuration channel; table updates the data channel.
    pub on_config_channel: bool,
    pub bytes: Vec<u8>,
}

/// Fields readable from a clear configuration message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedConfig {
    pub kind: ConfigMessageKind,
    pub port: PortKey,
    pub device_uid: DeviceUid,
    pub table_offset: u16,
    pub generation: u32,
    /// Channel sequence, present only in clear messages.
    pub sequence: Option<Vec<u8>>,
}

pub fn parse_config_message(bytes: &[u8]) -> Option<ParsedConfig> {
    if bytes.len() < CONFIG_HEADER_LEN {
        return None;
    }
    let kind = ConfigMessageKind::from_byte(bytes[0])?;
    let master = u32::from_be_bytes(bytes[1..5].try_into().ok()?);
    let port = PortKey::new(master, bytes[5], bytes[6]);
    let device_uid = DeviceUid(u64::from_be_bytes(bytes[7..15].try_into().ok()?));
    let table_offset = u16::from_be_bytes(bytes[15..17].try_into().ok()?);
    let generation = u32::from_be_bytes(bytes[17..21].try_into().ok()?);
    let sequence = (!kind.is_sealed()).then(|| bytes[CONFIG_HEADER_LEN..].to_vec());
    if let Some(seq) = &sequence {
        if seq.is_empty() || seq.iter().any(|&c| c == 0 || c > 80) {
            return None;
        }
    }
    Some(ParsedConfig {
        kind,
        port,
        device_uid,
        table_offset,
        generation,
        sequence,
    })
}

fn header(kind: ConfigMessageKind, port: PortKey, uid: DeviceUid, offset: u64, table: &HoppingTable) -> Vec<u8> {
    let mut h = Vec::with_capacity(CONFIG_HEADER_LEN + 80);
    h.push(kind as u8);
    h.extend_from_slice(&port.master_id.0.to_be_bytes());
    h.push(port.track_id.0);
    h.push(port.slot_id.0);
    h.extend_from_slice(&uid.0.to_be_bytes());
    h.extend_from_slice(&(offset as u16).to_be_bytes());
    h.extend_from_slice(&table.generation().to_be_bytes());
    h
}

/// Table distribution message: clear, or sealed under `link` when given.
pub fn table_message(
    port: PortKey,
    uid: DeviceUid,
    table: &HoppingTable,
    table_offset: u64,
    pairing: bool,
    link: Option<&mut SecureLink>,
    on_config_channel: bool,
) -> ConfigMessage {
    let (clear, sealed) = if pairing {
        (ConfigMessageKind::PairingClear, ConfigMessageKind::PairingSealed)
    } else {
        (ConfigMessageKind::TableUpdateClear, ConfigMessageKind::TableUpdateSealed)
    };
    let (kind, bytes) = match link {
        None => {
            let mut b = header(clear, port, uid, table_offset, table);
            b.extend_from_slice(&table.sequence_bytes());
            (clear, b)
        }
        Some(link) => {
            let mut b = header(sealed, port, uid, table_offset, table);
            let f = link
                .seal(&b, &table.sequence_bytes())
                .expect("fresh or active link");
            b.extend_from_slice(&f.counter.to_be_bytes());
            b.extend_from_slice(&f.ciphertext);
            b.extend_from_slice(&f.tag);
            (sealed, b)
        }
    };
    ConfigMessage {
        track: port.track(),
        kind,
        on_config_channel,
        bytes,
    }
}

/// Out-of-band secret delivery, invisible to the radio medium.
#[derive(Debug, Clone)]
pub struct OobChannel {
    available: bool,
    rng: StreamRng,
    delivered: Vec<[u8; SECRET_LEN]>,
}

impl OobChannel {
    pub fn new(rng: StreamRng) -> Self {
        OobChannel {
            available: true,
            rng,
            delivered: Vec::new(),
        }
    }

    pub fn set_available(&mut self, available: bool) {
        self.available = available;
    }

    pub fn is_available(&self) -> bool {
        self.available
    }

    pub fn deliver(&mut self) -> Result<[u8; SECRET_LEN], PairingError> {
        if !self.available {
            return Err(PairingError::OOBUnavailable);
        }
        let mut s = [0u8; SECRET_LEN];
        self.rng.fill_bytes(&mut s);
        self.delivered.push(s);
        Ok(s)
    }

    /// Every secret handed out so far, for secrecy checks.
    pub fn delivered(&self) -> &[[u8; SECRET_LEN]] {
        &self.delivered
    }
}

/// Both ends of a freshly keyed link.
#[derive(Debug, Clone)]
pub struct LinkPair {
    pub master: SecureLink,
    pub device: SecureLink,
}

impl LinkPair {
    pub fn establish(secret: &[u8], port: PortKey, uid: DeviceUid, tau: TagLength) -> Self {
        let master = establish_link(secret, port.master_id, uid, tau, Role::Master)
            .expect("secret has full length");
        // Devices do not lock themselves out; the lockout is a master-side policy.
        let device = establish_link(secret, port.master_id, uid, tau, Role::Device)
            .expect("secret has full length")
            .with_lockout_threshold(u8::MAX);
        LinkPair { master, device }
    }
}

/// Result of a successful pairing or roaming transition.
#[derive(Debug, Clone)]
pub struct PairingOutcome {
    pub port: PortKey,
    pub state: PortPairing,
    pub device_uid: DeviceUid,
    pub method: PairingMethod,
    pub mode: PairingMode,
    pub links: Option<LinkPair>,
    pub messages: Vec<ConfigMessage>,
    /// Port that stopped serving the device (the previous holder or the roaming home).
    pub released: Option<PortKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoamReturn {
    pub device_uid: DeviceUid,
    pub home: PortKey,
    pub released: PortKey,
}

#[derive(Debug, Clone)]
struct PortInfo {
    security: SecurityMode,
    table_offset: u64,
}

/// Per-track ServiceMode flags and per-port pairing states of one cell.
#[derive(Debug, Clone)]
pub struct PairingManager {
    service_mode: BTreeSet<TrackKey>,
    tracks: BTreeSet<TrackKey>,
    ports: BTreeMap<PortKey, PortInfo>,
    states: BTreeMap<PortKey, PortPairing>,
    allowlists: BTreeMap<(MasterId, DeviceUid), PortKey>,
}

impl PairingManager {
    pub fn new(cell: &Cell) -> Self {
        let mut ports = BTreeMap::new();
        let mut states = BTreeMap::new();
        let mut tracks = BTreeSet::new();
        for t in cell.tracks() {
            tracks.insert(t.key);
            for p in &t.ports {
                ports.insert(
                    p.key,
                    PortInfo {
                        security: p.security,
                        table_offset: t.table_offset,
                    },
                );
                let state = match (p.initially_paired, p.device_uid) {
                    (true, Some(device_uid)) => PortPairing::Paired { device_uid },
                    _ => PortPairing::Unpaired,
                };
                states.insert(p.key, state);
            }
        }
        let mut allowlists = BTreeMap::new();
        for m in &cell.config().masters {
            for r in &m.roaming_allowlist {
                allowlists.insert(
                    (MasterId(m.master_id), DeviceUid(r.device_uid)),
                    PortKey::new(m.master_id, r.track_id, r.slot_id),
                );
            }
        }
        PairingManager {
            service_mode: BTreeSet::new(),
            tracks,
            ports,
            states,
            allowlists,
        }
    }

    pub fn state(&self, port: PortKey) -> Option<PortPairing> {
        self.states.get(&port).copied()
    }

    pub fn states(&self) -> impl Iterator<Item = (PortKey, PortPairing)> + '_ {
        self.states.iter().map(|(k, v)| (*k, *v))
    }

    pub fn in_service_mode(&self, track: TrackKey) -> bool {
        self.service_mode.contains(&track)
    }

    /// Ports currently serving `device`. The single-pairing invariant keeps this at most one.
    pub fn active_ports(&self, device: DeviceUid) -> Vec<PortKey> {
        self.states
            .iter()
            .filter(|(_, s)| s.active_device() == Some(device))
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn enter_service_mode(&mut self, track: TrackKey) -> Result<(), PairingError> {
        self.check_track(track)?;
        self.service_mode.insert(track);
        for (k, s) in self.states.iter_mut() {
            if k.track() == track && *s == PortPairing::Unpaired {
                *s = PortPairing::Scanning;
            }
        }
        Ok(())
    }

    pub fn exit_service_mode(&mut self, track: TrackKey) -> Result<(), PairingError> {
        self.check_track(track)?;
        self.service_mode.remove(&track);
        for (k, s) in self.states.iter_mut() {
            if k.track() == track && *s == PortPairing::Scanning {
                *s = PortPairing::Unpaired;
            }
        }
        Ok(())
    }

    fn check_track(&self, track: TrackKey) -> Result<(), PairingError> {
        if self.tracks.contains(&track) {
            Ok(())
        } else {
            Err(PairingError::UnknownTrack(track))
        }
    }

    fn gate(&self, track: TrackKey) -> Result<(), PairingError> {
        self.check_track(track)?;
        if self.service_mode.contains(&track) {
            Ok(())
        } else {
            Err(PairingError::NotInServiceMode(track))
        }
    }

    pub fn pair_by_unique_id(
        &mut self,
        port: PortKey,
        device: DeviceUid,
        mode: PairingMode,
        table: &HoppingTable,
        oob: &mut OobChannel,
    ) -> Result<PairingOutcome, PairingError> {
        self.gate(port.track())?;
        let state = self.state(port).ok_or(PairingError::UnknownPort(port))?;
        if !state.is_free() {
            return Err(PairingError::PortOccupied(port));
        }
        if !self.active_ports(device).is_empty() {
            return Err(PairingError::DeviceAlreadyPaired(device));
        }
        self.complete(port, device, mode, PairingMethod::UniqueId, table, oob, None)
    }

    /// Button-triggered (re-)pairing on a configured port, typically to replace a device.
    pub fn pair_by_button(
        &mut self,
        port: PortKey,
        device: DeviceUid,
        mode: PairingMode,
        table: &HoppingTable,
        oob: &mut OobChannel,
    ) -> Result<PairingOutcome, PairingError> {
        self.gate(port.track())?;
        let state = self
            .state(port)
            .ok_or(PairingError::PortNotPreconfigured(port))?;
        let released = match state {
            PortPairing::Unpaired | PortPairing::Scanning => None,
            PortPairing::Paired { device_uid } if device_uid != device => Some(port),
            PortPairing::Paired { .. } => None,
            _ => return Err(PairingError::PortOccupied(port)),
        };
        if self.active_ports(device).iter().any(|p| *p != port) {
            return Err(PairingError::DeviceAlreadyPaired(device));
        }
        self.complete(port, device, mode, PairingMethod::Button, table, oob, released)
    }

    #[allow(clippy::too_many_arguments)]
    fn complete(
        &mut self,
        port: PortKey,
        device: DeviceUid,
        mode: PairingMode,
        method: PairingMethod,
        table: &HoppingTable,
        oob: &mut OobChannel,
        released: Option<PortKey>,
    ) -> Result<PairingOutcome, PairingError> {
        let info = &self.ports[&port];
        let tau = match (info.security, mode) {
            (SecurityMode::Legacy, PairingMode::Legacy) => None,
            (SecurityMode::Secured { tau }, PairingMode::SecuredOob) => Some(tau),
            (expected, requested) => {
                return Err(PairingError::ModeMismatch {
                    port,
                    expected,
                    requested,
                })
            }
        };
        let offset = info.table_offset;
        self.states
            .insert(port, PortPairing::PairingInProgress { method });
        let (links, message) = match tau {
            None => (
                None,
                table_message(port, device, table, offset, true, None, true),
            ),
            Some(tau) => {
                let secret = match oob.deliver() {
                    Ok(s) => s,
                    Err(e) => {
                        self.states.insert(port, PortPairing::Scanning);
                        return Err(e);
                    }
                };
                let mut links = LinkPair::establish(&secret, port, device, tau);
                let msg = table_message(port, device, table, offset, true, Some(&mut links.master), true);
                (Some(links), msg)
            }
        };
        let state = PortPairing::Paired { device_uid: device };
        self.states.insert(port, state);
        Ok(PairingOutcome {
            port,
            state,
            device_uid: device,
            method,
            mode,
            links,
            messages: vec![message],
            released,
        })
    }

    /// Temporarily move `device` from its home port at `from` to its allowlisted
    /// port at `to`. Both tracks must be in ServiceMode.
    pub fn roam(
        &mut self,
        device: DeviceUid,
        from: MasterId,
        to: MasterId,
        lease_cycles: u64,
        now: u64,
        table: &HoppingTable,
        oob: &mut OobChannel,
    ) -> Result<PairingOutcome, PairingError> {
        if self
            .states
            .values()
            .any(|s| matches!(s, PortPairing::Roamed { device_uid, .. } if *device_uid == device))
        {
            return Err(PairingError::LeaseActiveElsewhere(device));
        }
        let home = self
            .states
            .iter()
            .find(|(k, s)| {
                k.master_id == from && **s == PortPairing::Paired { device_uid: device }
            })
            .map(|(k, _)| *k)
            .ok_or(PairingError::NotPairedAt(device))?;
        let target = *self
            .allowlists
            .get(&(to, device))
            .ok_or(PairingError::NotAllowlisted { device, master: to })?;
        self.gate(home.track())?;
        self.gate(target.track())?;
        if !self.state(target).ok_or(PairingError::UnknownPort(target))?.is_free() {
            return Err(PairingError::PortOccupied(target));
        }
        let info = &self.ports[&target];
        let offset = info.table_offset;
        let (mode, links, message) = match info.security {
            SecurityMode::Legacy => (
                PairingMode::Legacy,
                None,
                table_message(target, device, table, offset, true, None, true),
            ),
            SecurityMode::Secured { tau } => {
                let secret = oob.deliver()?;
                let mut links = LinkPair::establish(&secret, target, device, tau);
                let msg = table_message(target, device, table, offset, true, Some(&mut links.master), true);
                (PairingMode::SecuredOob, Some(links), msg)
            }
        };
        let lease_until = now + lease_cycles;
        let state = PortPairing::Roamed {
            device_uid: device,
            home,
            lease_until,
        };
        self.states.insert(home, PortPairing::RoamedAway { device_uid: device, to: target });
        self.states.insert(target, state);
        Ok(PairingOutcome {
            port: target,
            state,
            device_uid: device,
            method: PairingMethod::Roaming,
            mode,
            links,
            messages: vec![message],
            released: Some(home),
        })
    }

    /// End a roaming lease early. Not gated by ServiceMode, like lease expiry.
    pub fn return_home(&mut self, device: DeviceUid) -> Result<RoamReturn, PairingError> {
        let (port, home) = self
            .states
            .iter()
            .find_map(|(k, s)| match s {
                PortPairing::Roamed { device_uid, home, .. } if *device_uid == device => {
                    Some((*k, *home))
                }
                _ => None,
            })
            .ok_or(PairingError::NotRoaming(device))?;
        let free = if self.service_mode.contains(&port.track()) {
            PortPairing::Scanning
        } else {
            PortPairing::Unpaired
        };
        self.states.insert(port, free);
        self.states.insert(home, PortPairing::Paired { device_uid: device });
        Ok(RoamReturn {
            device_uid: device,
            home,
            released: port,
        })
    }

    /// Return every device whose lease ran out at or before `now`.
    pub fn expire_leases(&mut self, now: u64) -> Vec<RoamReturn> {
        let due: Vec<DeviceUid> = self
            .states
            .values()
            .filter_map(|s| match s {
                PortPairing::Roamed { device_uid, lease_until, .. } if *lease_until <= now => {
                    Some(*device_uid)
                }
                _ => None,
            })
            .collect();
        due.into_iter()
            .map(|d| self.return_home(d).expect("device is roaming"))
            .collect()
    }

    pub fn port_security(&self, port: PortKey) -> Option<SecurityMode> {
        self.ports.get(&port).map(|p| p.security)
    }

    pub fn table_offset(&self, port: PortKey) -> Option<u64> {
        self.ports.get(&port).map(|p| p.table_offset)
    }
}

/// Port ID helper for scenario events.
pub fn port_key(master_id: u32, track_id: u8, slot_id: u8) -> PortKey {
    PortKey {
        master_id: MasterId(master_id),
        track_id: TrackId(track_id),
        slot_id: SlotId(slot_id),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{build_cell, CellConfig, MasterConfig, RoamingEntry, SlotConfig, SlotKind, TrackConfig};
    use crate::rng;

    fn slot(id: u8, uid: Option<u64>, paired: bool, secured: bool) -> SlotConfig {
        SlotConfig {
            slot_id: id,
            kind: SlotKind::DSlot,
            security: if secured {
                SecurityMode::Secured { tau: TagLength::T32 }
            } else {
                SecurityMode::Legacy
            },
            device_uid: uid,
            paired,
            safety: false,
        }
    }

    fn cell() -> Cell {
        let track = |id, slots| TrackConfig {
            track_id: id,
            hopping_seed: None,
            blocklist: Default::default(),
            min_hop_distance_mhz: 24,
            slots,
        };
        build_cell(CellConfig {
            masters: vec![
                MasterConfig {
                    master_id: 1,
                    tracks: vec![
                        track(0, vec![slot(0, Some(100), true, false), slot(1, None, false, false)]),
                        track(1, vec![slot(0, None, false, true), slot(1, Some(101), true, true)]),
                    ],
                    roaming_allowlist: vec![],
                },
                MasterConfig {
                    master_id: 2,
                    tracks: vec![track(0, vec![slot(0, None, false, false), slot(1, None, false, true)])],
                    roaming_allowlist: vec![
                        RoamingEntry { device_uid: 100, track_id: 0, slot_id: 0 },
                        RoamingEntry { device_uid: 101, track_id: 0, slot_id: 1 },
                    ],
                },
            ],
        })
        .unwrap()
    }

    fn setup() -> (Cell, PairingManager, OobChannel) {
        let c = cell();
        let m = PairingManager::new(&c);
        (c, m, OobChannel::new(rng::stream(1, "oob")))
    }

    fn contains(hay: &[u8], needle: &[u8]) -> bool {
        hay.windows(needle.len()).any(|w| w == needle)
    }

    #[test]
    fn pairing_requires_service_mode() {
        let (c, mut m, mut oob) = setup();
        let t = c.tracks()[0].table.clone();
        let p = port_key(1, 0, 1);
        assert_eq!(
            m.pair_by_unique_id(p, DeviceUid(7), PairingMode::Legacy, &t, &mut oob).unwrap_err(),
            PairingError::NotInServiceMode(p.track())
        );
        m.enter_service_mode(p.track()).unwrap();
        assert_eq!(m.state(p), Some(PortPairing::Scanning));
        let out = m.pair_by_unique_id(p, DeviceUid(7), PairingMode::Legacy, &t, &mut oob).unwrap();
        assert_eq!(out.state, PortPairing::Paired { device_uid: DeviceUid(7) });
    }

    #[test]
    fn service_mode_is_per_track() {
        let (c, mut m, mut oob) = setup();
        m.enter_service_mode(TrackKey::new(1, 0)).unwrap();
        let t = c.tracks()[1].table.clone();
        assert!(matches!(
            m.pair_by_unique_id(port_key(1, 1, 0), DeviceUid(9), PairingMode::SecuredOob, &t, &mut oob),
            Err(PairingError::NotInServiceMode(_))
        ));
    }

    #[test]
    fn enter_then_exit_restores_state() {
        let (_, mut m, _) = setup();
        let before: Vec<_> = m.states().collect();
        m.enter_service_mode(TrackKey::new(1, 0)).unwrap();
        m.exit_service_mode(TrackKey::new(1, 0)).unwrap();
        assert_eq!(before, m.states().collect::<Vec<_>>());
        assert!(!m.in_service_mode(TrackKey::new(1, 0)));
        assert_eq!(
            m.enter_service_mode(TrackKey::new(9, 0)),
            Err(PairingError::UnknownTrack(TrackKey::new(9, 0)))
        );
    }

    #[test]
    fn legacy_message_exposes_uid_and_table() {
        let (c, mut m, mut oob) = setup();
        let t = c.tracks()[0].table.clone();
        m.enter_service_mode(TrackKey::new(1, 0)).unwrap();
        let out = m
            .pair_by_unique_id(port_key(1, 0, 1), DeviceUid(0xDEAD_BEEF), PairingMode::Legacy, &t, &mut oob)
            .unwrap();
        let bytes = &out.messages[0].bytes;
        assert!(contains(bytes, &0xDEAD_BEEFu64.to_be_bytes()));
        assert!(contains(bytes, &t.sequence_bytes()));
        let parsed = parse_config_message(bytes).unwrap();
        assert_eq!(parsed.sequence.unwrap(), t.sequence_bytes());
        assert!(oob.delivered().is_empty());
    }

    #[test]
    fn secured_message_hides_table_and_secret() {
        let (c, mut m, mut oob) = setup();
        let t = c.tracks()[1].table.clone();
        m.enter_service_mode(TrackKey::new(1, 1)).unwrap();
        let out = m
            .pair_by_unique_id(port_key(1, 1, 0), DeviceUid(55), PairingMode::SecuredOob, &t, &mut oob)
            .unwrap();
        let bytes = &out.messages[0].bytes;
        assert!(!contains(bytes, &t.sequence_bytes()));
        assert!(!contains(bytes, &oob.delivered()[0]));
        assert!(parse_config_message(bytes).unwrap().sequence.is_none());
        assert!(out.links.is_some());
    }

    #[test]
    fn occupied_port_and_mode_checks() {
        let (c, mut m, mut oob) = setup();
        let t = c.tracks()[0].table.clone();
        m.enter_service_mode(TrackKey::new(1, 0)).unwrap();
        assert_eq!(
            m.pair_by_unique_id(port_key(1, 0, 0), DeviceUid(7), PairingMode::Legacy, &t, &mut oob)
                .unwrap_err(),
            PairingError::PortOccupied(port_key(1, 0, 0))
        );
        assert!(matches!(
            m.pair_by_unique_id(port_key(1, 0, 1), DeviceUid(7), PairingMode::SecuredOob, &t, &mut oob),
            Err(PairingError::ModeMismatch { .. })
        ));
        assert_eq!(
            m.pair_by_unique_id(port_key(1, 0, 1), DeviceUid(100), PairingMode::Legacy, &t, &mut oob)
                .unwrap_err(),
            PairingError::DeviceAlreadyPaired(DeviceUid(100))
        );
    }

    #[test]
    fn oob_unavailable() {
        let (c, mut m, mut oob) = setup();
        let t = c.tracks()[1].table.clone();
        m.enter_service_mode(TrackKey::new(1, 1)).unwrap();
        oob.set_available(false);
        assert_eq!(
            m.pair_by_unique_id(port_key(1, 1, 0), DeviceUid(55), PairingMode::SecuredOob, &t, &mut oob)
                .unwrap_err(),
            PairingError::OOBUnavailable
        );
        assert_eq!(m.state(port_key(1, 1, 0)), Some(PortPairing::Scanning));
    }

    #[test]
    fn button_pairing_replaces_device() {
        let (c, mut m, mut oob) = setup();
        let t = c.tracks()[0].table.clone();
        let p = port_key(1, 0, 0);
        assert!(matches!(
            m.pair_by_button(p, DeviceUid(200), PairingMode::Legacy, &t, &mut oob),
            Err(PairingError::NotInServiceMode(_))
        ));
        m.enter_service_mode(p.track()).unwrap();
        let out = m.pair_by_button(p, DeviceUid(200), PairingMode::Legacy, &t, &mut oob).unwrap();
        assert_eq!(out.state, PortPairing::Paired { device_uid: DeviceUid(200) });
        assert_eq!(out.released, Some(p));
        assert_eq!(
            m.pair_by_button(port_key(1, 0, 5), DeviceUid(201), PairingMode::Legacy, &t, &mut oob)
                .unwrap_err(),
            PairingError::PortNotPreconfigured(port_key(1, 0, 5))
        );
    }

    #[test]
    fn roaming_lease_and_return() {
        let (c, mut m, mut oob) = setup();
        let t = c.tracks()[2].table.clone();
        m.enter_service_mode(TrackKey::new(1, 0)).unwrap();
        assert!(matches!(
            m.roam(DeviceUid(100), MasterId(1), MasterId(2), 1000, 0, &t, &mut oob),
            Err(PairingError::NotInServiceMode(_))
        ));
        m.enter_service_mode(TrackKey::new(2, 0)).unwrap();
        let out = m
            .roam(DeviceUid(100), MasterId(1), MasterId(2), 1000, 50, &t, &mut oob)
            .unwrap();
        assert_eq!(out.port, port_key(2, 0, 0));
        assert_eq!(m.active_ports(DeviceUid(100)), vec![port_key(2, 0, 0)]);
        assert_eq!(
            m.roam(DeviceUid(100), MasterId(1), MasterId(2), 1000, 60, &t, &mut oob)
                .unwrap_err(),
            PairingError::LeaseActiveElsewhere(DeviceUid(100))
        );
        assert!(m.expire_leases(1049).is_empty());
        let back = m.expire_leases(1050);
        assert_eq!(back.len(), 1);
        assert_eq!(m.active_ports(DeviceUid(100)), vec![port_key(1, 0, 0)]);
    }

    #[test]
    fn roaming_not_allowlisted() {
        let (c, mut m, mut oob) = setup();
        let t = c.tracks()[2].table.clone();
        m.enter_service_mode(TrackKey::new(1, 1)).unwrap();
        m.enter_service_mode(TrackKey::new(2, 0)).unwrap();
        assert!(matches!(
            m.roam(DeviceUid(101), MasterId(1), MasterId(1), 10, 0, &t, &mut oob),
            Err(PairingError::NotAllowlisted { .. })
        ));
        let out = m.roam(DeviceUid(101), MasterId(1), MasterId(2), 10, 0, &t, &mut oob).unwrap();
        assert_eq!(out.mode, PairingMode::SecuredOob);
    }
}
