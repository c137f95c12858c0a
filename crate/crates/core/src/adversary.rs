//! Attack actors: flooding, jamming, replay, forgery with and without a
//! leaked key, and a compromised device.
//!
//! Every actor starts with the knowledge its scenario grants explicitly and
//! otherwise learns only what it can sniff from the air. An attack transmits
//! only while all of its prerequisites hold; each transition is traced.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::hopping::{ChannelIndex, HoppingTable};
use crate::medium::{Burst, BurstKind, RunOptions, SimError, WINDOW_POSITIONS};
use crate::pairing::{parse_config_message, ConfigMessageKind};
use crate::protocol::{
    encode_frame, legacy_checksum, ControlOctet, DeviceUid, Direction, Frame, FrameFormat,
    FrameSecurity, MasterId, PortKey, TrackKey, COUNTER_OCTETS,
};
use crate::rng::StreamRng;
use crate::secure::{seal_with_key, SecureLink, TagLength};

/// Captured frames kept per port for replay.
pub const MAX_CAPTURED: usize = 64;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Flooding,
    Jamming,
    Replay,
    Forgery,
    ForgeryLeakedKey,
    CompromisedDevice,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::Flooding,
        AttackKind::Jamming,
        AttackKind::Replay,
        AttackKind::Forgery,
        AttackKind::ForgeryLeakedKey,
        AttackKind::CompromisedDevice,
    ];

    pub fn prerequisites(self) -> &'static [Prerequisite] {
        use Prerequisite::*;
        match self {
            AttackKind::Flooding => &[Proximity, HoppingTable, IolwConfig, PairingMode],
            AttackKind::Jamming => &[Proximity, AllFrequencies],
            AttackKind::Replay => &[Proximity, HoppingTable, SniffedTraffic],
            AttackKind::Forgery => &[Proximity, HoppingTable, CounterValue],
            AttackKind::ForgeryLeakedKey => &[Proximity, HoppingTable, CounterValue, LeakedKey],
            AttackKind::CompromisedDevice => &[DeviceAccess],
        }
    }

    pub fn needs_target(self) -> bool {
        self != AttackKind::Jamming
    }

    pub fn label(self) -> &'static str {
        match self {
            AttackKind::Flooding => "flooding",
            AttackKind::Jamming => "jamming",
            AttackKind::Replay => "replay",
            AttackKind::Forgery => "forgery",
            AttackKind::ForgeryLeakedKey => "forgery_leaked_key",
            AttackKind::CompromisedDevice => "compromised_device",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prerequisite {
    Proximity,
    HoppingTable,
    IolwConfig,
    /// The target track is in ServiceMode.
    PairingMode,
    /// The jammer covers every channel.
    AllFrequencies,
    SniffedTraffic,
    CounterValue,
    LeakedKey,
    DeviceAccess,
}

/// Something an actor found out, traced when first learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "snake_case")]
pub enum Learned {
    HoppingTable { track: TrackKey, generation: u32 },
    IolwConfig { port: PortKey, device_uid: DeviceUid },
    CounterValue { port: PortKey },
    SniffedTraffic { port: PortKey },
    LeakedKey { port: PortKey },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PortRef {
    pub master_id: u32,
    pub track_id: u8,
    pub slot_id: u8,
}

impl From<PortRef> for PortKey {
    fn from(p: PortRef) -> Self {
        PortKey::new(p.master_id, p.track_id, p.slot_id)
    }
}

/// Knowledge granted up front rather than sniffed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeGrant {
    /// Snapshot of every track's table as of cycle 0.
    #[serde(default)]
    pub hopping_table: bool,
    #[serde(default)]
    pub iolw_config: bool,
    /// Continuous access to the target's current uplink counter.
    #[serde(default)]
    pub counter_value: bool,
    /// The target link's session key, read once when the attack window opens.
    #[serde(default)]
    pub leaked_key: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PhysicalAccess {
    #[serde(default = "default_true")]
    pub proximity: bool,
    #[serde(default)]
    pub device_access: bool,
}

impl Default for PhysicalAccess {
    fn default() -> Self {
        PhysicalAccess {
            proximity: true,
            device_access: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SniffScope {
    None,
    /// Configuration channels only.
    #[default]
    Config,
    /// Data channels of tracks whose table is known.
    Data,
    All,
}

impl SniffScope {
    fn config(self) -> bool {
        matches!(self, SniffScope::Config | SniffScope::All)
    }
    fn data(self) -> bool {
        matches!(self, SniffScope::Data | SniffScope::All)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AllChannels {
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum JamChannels {
    All(AllChannels),
    Subset(Vec<u8>),
}

impl Default for JamChannels {
    fn default() -> Self {
        JamChannels::All(AllChannels::All)
    }
}

impl JamChannels {
    pub fn channels(&self) -> Vec<ChannelIndex> {
        match self {
            JamChannels::All(_) => ChannelIndex::all().collect(),
            JamChannels::Subset(v) => {
                let set: BTreeSet<u8> = v.iter().copied().collect();
                set.into_iter()
                    .filter_map(|c| ChannelIndex::new(c).ok())
                    .collect()
            }
        }
    }

    pub fn covers_all(&self) -> bool {
        self.channels().len() == ChannelIndex::all().count()
    }
}

fn default_intensity() -> u32 {
    1
}

/// One attack of a scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Attacked port; every kind except jamming needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PortRef>,
    #[serde(default)]
    pub knowledge: KnowledgeGrant,
    #[serde(default)]
    pub physical: PhysicalAccess,
    pub start_cycle: u64,
    /// First cycle after the attack; runs to the horizon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_cycle: Option<u64>,
    /// Frames per sub-cycle.
    #[serde(default = "default_intensity")]
    pub intensity: u32,
    #[serde(default)]
    pub channels: JamChannels,
    /// A compromised device stops answering for this many cycles before the attack ends.
    #[serde(default)]
    pub withhold_cycles: u64,
    #[serde(default)]
    pub sniff: SniffScope,
}

impl AttackSpec {
    pub fn target_port(&self) -> Option<PortKey> {
        self.target.map(PortKey::from)
    }

    pub fn stop(&self, horizon: u64) -> u64 {
        self.stop_cycle.unwrap_or(horizon).min(horizon)
    }

    pub fn in_window(&self, cycle: u64, horizon: u64) -> bool {
        cycle >= self.start_cycle && cycle < self.stop(horizon)
    }
}

/// A track's hopping sequence as an actor knows it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnownTable {
    pub generation: u32,
    pub offset: u64,
    pub sequence: Vec<ChannelIndex>,
}

impl KnownTable {
    pub fn from_table(table: &HoppingTable, offset: u64) -> Self {
        KnownTable {
            generation: table.generation(),
            offset,
            sequence: table.sequence().to_vec(),
        }
    }

    pub fn channel(&self, sub_cycle_counter: u64) -> ChannelIndex {
        let n = self.sequence.len() as u64;
        self.sequence[((sub_cycle_counter + self.offset) % n) as usize]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Knowledge {
    pub tables: BTreeMap<TrackKey, KnownTable>,
    pub config: BTreeMap<PortKey, DeviceUid>,
    /// Latest uplink counter seen per port.
    pub counters: BTreeMap<PortKey, u32>,
    /// Captured uplink burst images per port, oldest first.
    pub captured: BTreeMap<PortKey, Vec<Vec<u8>>>,
    pub leaked_key: Option<[u8; 16]>,
}

impl Knowledge {
    fn learn_table(&mut self, track: TrackKey, t: KnownTable, out: &mut Vec<Learned>) {
        let changed = self
            .tables
            .get(&track)
            .map_or(true, |k| k.generation != t.generation || k.sequence != t.sequence);
        if changed {
            out.push(Learned::HoppingTable {
                track,
                generation: t.generation,
            });
            self.tables.insert(track, t);
        }
    }

    fn learn_config(&mut self, port: PortKey, uid: DeviceUid, out: &mut Vec<Learned>) {
        if self.config.insert(port, uid) != Some(uid) {
            out.push(Learned::IolwConfig {
                port,
                device_uid: uid,
            });
        }
    }

    fn learn_counter(&mut self, port: PortKey, counter: u32, out: &mut Vec<Learned>) {
        if self.counters.insert(port, counter).is_none() {
            out.push(Learned::CounterValue { port });
        }
    }

    fn capture(&mut self, port: PortKey, bytes: &[u8], out: &mut Vec<Learned>) {
        let v = self.captured.entry(port).or_default();
        if v.is_empty() {
            out.push(Learned::SniffedTraffic { port });
        }
        v.push(bytes.to_vec());
        if v.len() > MAX_CAPTURED {
            v.remove(0);
        }
    }
}

/// A burst as the sniffing actor receives it. `port` is the port whose
/// access address the burst carries, when that address belongs to one.
#[derive(Debug, Clone, Copy)]
pub struct Heard<'a> {
    pub burst: &'a Burst,
    pub port: Option<PortKey>,
    pub format: Option<FrameFormat>,
}

/// What sniffing yields: knowledge updates and legacy payloads read in the clear.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SniffResult {
    pub learned: Vec<Learned>,
    pub plaintext: Vec<PortKey>,
}

/// Passive capture over one sub-cycle's bursts.
pub fn sniff(
    knowledge: &mut Knowledge,
    scope: SniffScope,
    proximity: bool,
    sub_cycle: u64,
    heard: &[Heard<'_>],
) -> SniffResult {
    let mut out = SniffResult::default();
    if !proximity || scope == SniffScope::None {
        return out;
    }
    let listening: BTreeSet<ChannelIndex> = if scope.data() {
        knowledge.tables.values().map(|t| t.channel(sub_cycle)).collect()
    } else {
        BTreeSet::new()
    };
    for h in heard {
        let b = h.burst;
        if b.kind == BurstKind::Jam {
            continue;
        }
        let on_config = b.channel.is_config();
        if on_config && !scope.config() {
            continue;
        }
        if !on_config && !listening.contains(&b.channel) {
            continue;
        }
        if b.kind == BurstKind::Config {
            if let Some(msg) = parse_config_message(&b.bytes) {
                if let Some(seq) = msg.sequence {
                    let sequence: Vec<ChannelIndex> =
                        seq.iter().filter_map(|&c| ChannelIndex::new(c).ok()).collect();
                    knowledge.learn_table(
                        msg.port.track(),
                        KnownTable {
                            generation: msg.generation,
                            offset: msg.table_offset as u64,
                            sequence,
                        },
                        &mut out.learned,
                    );
                    if msg.kind == ConfigMessageKind::PairingClear {
                        knowledge.learn_config(msg.port, msg.device_uid, &mut out.learned);
                    }
                }
            }
            continue;
        }
        let (Some(port), Some(format)) = (h.port, h.format) else {
            continue;
        };
        match format.security {
            FrameSecurity::Legacy => {
                if !out.plaintext.contains(&port) {
                    out.plaintext.push(port);
                }
                if b.direction == Direction::Uplink {
                    knowledge.capture(port, &b.bytes, &mut out.learned);
                }
            }
            FrameSecurity::Secured(_) => {
                if b.direction == Direction::Uplink && b.bytes.len() > COUNTER_OCTETS {
                    let c = u32::from_be_bytes(b.bytes[1..5].try_into().expect("4 bytes"));
                    knowledge.learn_counter(port, c, &mut out.learned);
                    knowledge.capture(port, &b.bytes, &mut out.learned);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Idle,
    Blocked,
    Running,
    Stopped,
}

/// Facts about the world an actor can observe when checking prerequisites.
#[derive(Debug, Clone, Copy)]
pub struct WorldView {
    pub cycle: u64,
    pub horizon: u64,
    pub target_in_service_mode: bool,
}

/// Transitions of an actor's status, for the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatusChange {
    Started,
    Unmet(Vec<Prerequisite>),
    Stopped,
}

/// A frame an actor wants on the air in the current sub-cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedBurst {
    pub position: u8,
    pub channel: ChannelIndex,
    pub access_address: u32,
    pub direction: Direction,
    pub kind: BurstKind,
    pub bytes: Vec<u8>,
}

/// Facts the simulator hands an actor so it can address its frames.
#[derive(Debug, Clone, Copy)]
pub struct EmitContext {
    pub sub_cycle: u64,
    /// Configuration channel active in this sub-cycle.
    pub config_channel: ChannelIndex,
    pub target_format: Option<FrameFormat>,
    pub target_uid: Option<DeviceUid>,
}

#[derive(Debug, Clone)]
pub struct Adversary {
    pub index: usize,
    pub spec: AttackSpec,
    pub knowledge: Knowledge,
    status: Status,
    rng: StreamRng,
    own_counter: u32,
    replay_cursor: usize,
    exposed: BTreeSet<PortKey>,
}

impl Adversary {
    pub fn new(index: usize, spec: AttackSpec, rng: StreamRng) -> Self {
        Adversary {
            index,
            spec,
            knowledge: Knowledge::default(),
            status: Status::Idle,
            rng,
            own_counter: 0,
            replay_cursor: 0,
            exposed: BTreeSet::new(),
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn is_running(&self) -> bool {
        self.status == Status::Running
    }

    pub fn target(&self) -> Option<PortKey> {
        self.spec.target_port()
    }

    /// Apply the explicit table and configuration grants.
    pub fn grant_initial(
        &mut self,
        tables: &[(TrackKey, KnownTable)],
        config: &[(PortKey, DeviceUid)],
    ) -> Vec<Learned> {
        let mut out = Vec::new();
        if self.spec.knowledge.hopping_table {
            for (k, t) in tables {
                self.knowledge.learn_table(*k, t.clone(), &mut out);
            }
        }
        if self.spec.knowledge.iolw_config {
            for (p, u) in config {
                self.knowledge.learn_config(*p, *u, &mut out);
            }
        }
        out
    }

    /// Counter oracle for an explicit counter grant.
    pub fn grant_counter(&mut self, counter: u32) -> Vec<Learned> {
        let mut out = Vec::new();
        if let (true, Some(p)) = (self.spec.knowledge.counter_value, self.target()) {
            self.knowledge.learn_counter(p, counter, &mut out);
        }
        out
    }

    pub fn wants_key(&self, cycle: u64) -> bool {
        self.spec.knowledge.leaked_key
            && self.knowledge.leaked_key.is_none()
            && cycle >= self.spec.start_cycle
    }

    pub fn leak_key(&mut self, key: [u8; 16]) -> Vec<Learned> {
        self.knowledge.leaked_key = Some(key);
        self.target()
            .map(|port| vec![Learned::LeakedKey { port }])
            .unwrap_or_default()
    }

    pub fn sniff(&mut self, sub_cycle: u64, heard: &[Heard<'_>]) -> SniffResult {
        let mut r = sniff(
            &mut self.knowledge,
            self.spec.sniff,
            self.spec.physical.proximity,
            sub_cycle,
            heard,
        );
        // Passive listening feeds prerequisites; exposure counts only for the
        // target of a running attack.
        let target = self.target().filter(|_| self.is_running());
        r.plaintext.retain(|p| Some(*p) == target && self.exposed.insert(*p));
        r
    }

    /// Record a downlink plaintext read by a compromised device; true the first time.
    pub fn expose(&mut self, port: PortKey) -> bool {
        self.exposed.insert(port)
    }

    pub fn missing(&self, world: &WorldView) -> Vec<Prerequisite> {
        let target = self.target();
        let k = &self.knowledge;
        self.spec
            .kind
            .prerequisites()
            .iter()
            .copied()
            .filter(|p| {
                !match p {
                    Prerequisite::Proximity => self.spec.physical.proximity,
                    Prerequisite::DeviceAccess => self.spec.physical.device_access,
                    Prerequisite::AllFrequencies => self.spec.channels.covers_all(),
                    Prerequisite::PairingMode => world.target_in_service_mode,
                    Prerequisite::HoppingTable => {
                        target.is_some_and(|t| k.tables.contains_key(&t.track()))
                    }
                    Prerequisite::IolwConfig => {
                        target.is_some_and(|t| k.config.keys().any(|p| p.track() == t.track()))
                    }
                    Prerequisite::SniffedTraffic => {
                        target.is_some_and(|t| k.captured.get(&t).is_some_and(|v| !v.is_empty()))
                    }
                    Prerequisite::CounterValue => {
                        target.is_some_and(|t| k.counters.contains_key(&t))
                    }
                    Prerequisite::LeakedKey => k.leaked_key.is_some(),
                }
            })
            .collect()
    }

    /// Re-evaluate at a cycle boundary.
    pub fn update(&mut self, world: &WorldView) -> Option<StatusChange> {
        if self.status == Status::Stopped {
            return None;
        }
        if world.cycle >= self.spec.stop(world.horizon) && self.status != Status::Idle {
            self.status = Status::Stopped;
            return Some(StatusChange::Stopped);
        }
        if !self.spec.in_window(world.cycle, world.horizon) {
            return None;
        }
        let missing = self.missing(world);
        match (self.status, missing.is_empty()) {
            (Status::Running, true) => None,
            (Status::Blocked, false) => None,
            (_, true) => {
                self.status = Status::Running;
                Some(StatusChange::Started)
            }
            (_, false) => {
                self.status = Status::Blocked;
                Some(StatusChange::Unmet(missing))
            }
        }
    }

    /// Compromised-device actors go silent for the last `withhold_cycles` of the window.
    pub fn withholding(&self, cycle: u64, horizon: u64) -> bool {
        let stop = self.spec.stop(horizon);
        self.is_running() && cycle + self.spec.withhold_cycles >= stop && cycle < stop
    }

    /// Channels jammed for the whole current sub-cycle.
    pub fn jam_channels(&self) -> Vec<ChannelIndex> {
        if self.is_running() && self.spec.kind == AttackKind::Jamming {
            self.spec.channels.channels()
        } else {
            Vec::new()
        }
    }

    /// Open-window frames for this sub-cycle.
    pub fn emit(&mut self, ctx: &EmitContext) -> Vec<PlannedBurst> {
        if !self.is_running() {
            return Vec::new();
        }
        let Some(target) = self.target() else {
            return Vec::new();
        };
        let data_channel = self
            .knowledge
            .tables
            .get(&target.track())
            .map(|t| t.channel(ctx.sub_cycle));
        let n = self.spec.intensity.min(WINDOW_POSITIONS as u32 - 1) as u8;
        let mut out = Vec::new();
        match self.spec.kind {
            AttackKind::Flooding => {
                for i in 0..n {
                    out.push(PlannedBurst {
                        position: 1 + i,
                        channel: ctx.config_channel,
                        access_address: target.track().config_address(),
                        direction: Direction::Uplink,
                        kind: BurstKind::Config,
                        bytes: self.junk_config(),
                    });
                }
                if let (Some(ch), Some(format)) = (data_channel, ctx.target_format) {
                    for i in 0..n {
                        out.push(PlannedBurst {
                            position: 1 + i,
                            channel: ch,
                            access_address: target.access_address(),
                            direction: Direction::Uplink,
                            kind: BurstKind::Data,
                            bytes: self.junk_data(format),
                        });
                    }
                }
            }
            AttackKind::Replay => {
                let Some(ch) = data_channel else { return out };
                let Some(frames) = self.knowledge.captured.get(&target) else {
                    return out;
                };
                if frames.is_empty() {
                    return out;
                }
                for i in 0..n {
                    let bytes = frames[self.replay_cursor % frames.len()].clone();
                    self.replay_cursor += 1;
                    out.push(PlannedBurst {
                        position: 1 + i,
                        channel: ch,
                        access_address: target.access_address(),
                        direction: Direction::Uplink,
                        kind: BurstKind::Data,
                        bytes,
                    });
                }
            }
            AttackKind::Forgery | AttackKind::ForgeryLeakedKey => {
                let (Some(ch), Some(format)) = (data_channel, ctx.target_format) else {
                    return out;
                };
                let FrameSecurity::Secured(tau) = format.security else {
                    return out;
                };
                let capacity = format.payload_capacity().unwrap_or(0);
                for i in 0..n {
                    let bytes = if self.spec.kind == AttackKind::Forgery {
                        self.forge_blind(target, tau, capacity)
                    } else {
                        match self.forge_with_key(target, ctx.target_uid, tau, capacity) {
                            Some(b) => b,
                            None => continue,
                        }
                    };
                    out.push(PlannedBurst {
                        position: 1 + i,
                        channel: ch,
                        access_address: target.access_address(),
                        direction: Direction::Uplink,
                        kind: BurstKind::Data,
                        bytes,
                    });
                }
            }
            AttackKind::Jamming | AttackKind::CompromisedDevice => {}
        }
        out
    }

    fn next_counter(&mut self, target: PortKey) -> u32 {
        let known = self.knowledge.counters.get(&target).copied().unwrap_or(0);
        let c = known.max(self.own_counter).saturating_add(1);
        self.own_counter = c;
        c
    }

    fn junk_config(&mut self) -> Vec<u8> {
        let mut b = vec![0u8; 24];
        self.rng.fill_bytes(&mut b);
        // never a valid configuration message kind
        b[0] = 0xF0 | (b[0] & 0x0F);
        b
    }

    fn junk_data(&mut self, format: FrameFormat) -> Vec<u8> {
        let len = format.full_wire_len().unwrap_or(2);
        let mut b = vec![0u8; len];
        self.rng.fill_bytes(&mut b);
        b[0] &= 0xF8;
        if format.security == FrameSecurity::Legacy {
            // flood frames are noise, not forgeries: the check never matches
            let c = legacy_checksum(&b);
            b.push(!c);
        }
        b
    }

    fn forge_blind(&mut self, target: PortKey, tau: TagLength, capacity: usize) -> Vec<u8> {
        let counter = self.next_counter(target);
        let mut payload = vec![0u8; capacity];
        self.rng.fill_bytes(&mut payload);
        let mut tag = vec![0u8; tau.bytes()];
        self.rng.fill_bytes(&mut tag);
        let frame = Frame::secured(ControlOctet::new(Direction::Uplink, 0), counter, payload, tag);
        encode_frame(&frame).expect("fits the slot")
    }

    fn forge_with_key(
        &mut self,
        target: PortKey,
        uid: Option<DeviceUid>,
        tau: TagLength,
        capacity: usize,
    ) -> Option<Vec<u8>> {
        let key = self.knowledge.leaked_key?;
        let uid = uid?;
        let counter = self.next_counter(target);
        let control = ControlOctet::new(Direction::Uplink, 0);
        let header = [control.to_byte().expect("valid control")];
        let sealed = seal_with_key(
            &key,
            target.master_id,
            uid,
            Direction::Uplink,
            counter,
            &header,
            &falsified_payload(capacity),
            tau,
        );
        let frame = Frame::secured(control, counter, sealed.ciphertext, sealed.tag);
        Some(encode_frame(&frame).expect("fits the slot"))
    }
}

/// Process data an attacker substitutes for the real values.
pub fn falsified_payload(len: usize) -> Vec<u8> {
    vec![0xEE; len]
}

/// Outcome of forging against a standalone master link.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeryStats {
    pub episodes: u64,
    pub successes: u64,
    pub attempts: u64,
    pub lockouts: u64,
}

impl ForgeryStats {
    pub fn merge(mut self, other: ForgeryStats) -> Self {
        self.episodes += other.episodes;
        self.successes += other.successes;
        self.attempts += other.attempts;
        self.lockouts += other.lockouts;
        self
    }

    pub fn rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }
}

/// One forgery episode against a fresh copy of `template`: up to `attempts`
/// frames with counter one above the high-water mark, random tags unless a
/// key is known. The episode ends at the first acceptance or at lockout.
pub fn forge_episode<R: Rng + ?Sized>(
    template: &SecureLink,
    leaked_key: Option<&[u8; 16]>,
    attempts: u32,
    rng: &mut R,
) -> ForgeryStats {
    let mut link = template.clone();
    let tau = link.tau();
    let control = ControlOctet::new(Direction::Uplink, 0).to_byte().expect("valid");
    let header = [control];
    let capacity = FrameFormat::new(crate::protocol::SlotKind::DSlot, FrameSecurity::Secured(tau))
        .payload_capacity()
        .unwrap_or(0);
    let mut stats = ForgeryStats {
        episodes: 1,
        ..Default::default()
    };
    let mut payload = vec![0u8; capacity];
    let mut tag = vec![0u8; tau.bytes()];
    for _ in 0..attempts {
        let counter = link.rx_highwater() + 1;
        stats.attempts += 1;
        let result = match leaked_key {
            Some(key) => {
                let f = seal_with_key(
                    key,
                    link.master_id(),
                    link.device_uid(),
                    Direction::Uplink,
                    counter,
                    &header,
                    &falsified_payload(capacity),
                    tau,
                );
                link.open(counter, &header, &f.ciphertext, &f.tag)
            }
            None => {
                rng.fill_bytes(&mut payload);
                rng.fill_bytes(&mut tag);
                link.open(counter, &header, &payload, &tag)
            }
        };
        match result {
            Ok(_) => {
                stats.successes = 1;
                return stats;
            }
            Err(_) if link.state() == crate::secure::LinkState::FailState => {
                stats.lockouts = 1;
                return stats;
            }
            Err(_) => {}
        }
    }
    stats
}

/// Run `episodes` independent forgery episodes sequentially.
pub fn forge_frames<R: Rng + ?Sized>(
    template: &SecureLink,
    leaked_key: Option<&[u8; 16]>,
    attempts: u32,
    episodes: u64,
    rng: &mut R,
) -> ForgeryStats {
    (0..episodes).fold(ForgeryStats::default(), |acc, _| {
        acc.merge(forge_episode(template, leaked_key, attempts, rng))
    })
}

/// Master-side link used as the forgery target in standalone experiments.
pub fn forgery_target(tau: TagLength, lockout: u8) -> SecureLink {
    crate::secure::establish_link(
        &[0x5A; 16],
        MasterId(0x1000_0001),
        DeviceUid(0x00C0_FFEE),
        tau,
        crate::secure::Role::Master,
    )
    .expect("16-byte secret")
    .with_lockout_threshold(lockout)
}

/// Run a scenario restricted to its `attack`-th attack and classify the result.
pub fn run_attack(
    scenario: &crate::scenario::Scenario,
    attack: usize,
    options: &RunOptions,
) -> Result<crate::analysis::AttackOutcome, SimError> {
    let spec = scenario
        .attacks
        .get(attack)
        .ok_or_else(|| SimError::InvalidScenario(format!("no attack with index {attack}")))?;
    let mut only = scenario.clone();
    only.attacks = vec![spec.clone()];
    let trace = crate::medium::run_with(&only, options)?;
    let outcomes = crate::analysis::classify_trace(&trace)
        .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let mut outcome = outcomes
        .into_iter()
        .next()
        .expect("one attack in, one outcome out");
    outcome.attack = attack;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::Origin;
    use crate::rng;

    fn table() -> HoppingTable {
        crate::hopping::generate_table(7, &Default::default(), 24).unwrap()
    }

    fn spec(kind: AttackKind) -> AttackSpec {
        AttackSpec {
            kind,
            target: Some(PortRef {
                master_id: 7,
                track_id: 0,
                slot_id: 0,
            }),
            knowledge: KnowledgeGrant::default(),
            physical: PhysicalAccess::default(),
            start_cycle: 0,
            stop_cycle: None,
            intensity: 1,
            channels: JamChannels::default(),
            withhold_cycles: 0,
            sniff: SniffScope::Config,
        }
    }

    fn world(cycle: u64) -> WorldView {
        WorldView {
            cycle,
            horizon: 100,
            target_in_service_mode: false,
        }
    }

    fn config_burst(bytes: Vec<u8>) -> Burst {
        Burst {
            id: 0,
            sub_cycle: 0,
            position: 0,
            channel: crate::hopping::CONFIG_CHANNELS[0],
            access_address: 0,
            direction: Direction::Downlink,
            kind: BurstKind::Config,
            origin: Origin::Master {
                master_id: MasterId(7),
            },
            bytes,
        }
    }

    #[test]
    fn legacy_pairing_reveals_table() {
        let t = table();
        let port = PortKey::new(7, 0, 0);
        let msg = crate::pairing::table_message(port, DeviceUid(5), &t, 0, true, None, true);
        let b = config_burst(msg.bytes);
        let mut k = Knowledge::default();
        let r = sniff(&mut k, SniffScope::Config, true, 0, &[Heard { burst: &b, port: None, format: None }]);
        assert!(r.learned.contains(&Learned::HoppingTable { track: port.track(), generation: 0 }));
        assert_eq!(k.tables[&port.track()].sequence, t.sequence());
        assert_eq!(k.config[&port], DeviceUid(5));
    }

    #[test]
    fn sealed_pairing_reveals_no_table() {
        let t = table();
        let port = PortKey::new(7, 0, 0);
        let mut link = crate::pairing::LinkPair::establish(&[1; 16], port, DeviceUid(5), TagLength::T32).master;
        let msg = crate::pairing::table_message(port, DeviceUid(5), &t, 0, true, Some(&mut link), true);
        let b = config_burst(msg.bytes);
        let mut k = Knowledge::default();
        let r = sniff(&mut k, SniffScope::All, true, 0, &[Heard { burst: &b, port: None, format: None }]);
        assert!(r.learned.is_empty());
        assert!(k.tables.is_empty());
    }

    #[test]
    fn no_proximity_no_capture() {
        let t = table();
        let port = PortKey::new(7, 0, 0);
        let msg = crate::pairing::table_message(port, DeviceUid(5), &t, 0, true, None, true);
        let b = config_burst(msg.bytes);
        let mut k = Knowledge::default();
        let r = sniff(&mut k, SniffScope::All, false, 0, &[Heard { burst: &b, port: None, format: None }]);
        assert_eq!(r, SniffResult::default());
    }

    #[test]
    fn prerequisites_gate_start() {
        let mut a = Adversary::new(0, spec(AttackKind::Forgery), rng::stream(1, "a"));
        assert_eq!(
            a.update(&world(0)),
            Some(StatusChange::Unmet(vec![Prerequisite::HoppingTable, Prerequisite::CounterValue]))
        );
        assert_eq!(a.update(&world(1)), None);
        let t = table();
        a.spec.knowledge.hopping_table = true;
        a.spec.knowledge.counter_value = true;
        a.grant_initial(&[(TrackKey::new(7, 0), KnownTable::from_table(&t, 0))], &[]);
        a.grant_counter(10);
        assert_eq!(a.update(&world(2)), Some(StatusChange::Started));
        assert!(a.is_running());
    }

    #[test]
    fn subset_jamming_is_refused() {
        let mut s = spec(AttackKind::Jamming);
        s.channels = JamChannels::Subset(vec![3, 4, 5]);
        let mut a = Adversary::new(0, s, rng::stream(1, "a"));
        assert_eq!(
            a.update(&world(0)),
            Some(StatusChange::Unmet(vec![Prerequisite::AllFrequencies]))
        );
        assert!(a.jam_channels().is_empty());
    }

    #[test]
    fn stop_cycle_stops() {
        let mut s = spec(AttackKind::Jamming);
        s.stop_cycle = Some(5);
        let mut a = Adversary::new(0, s, rng::stream(1, "a"));
        assert_eq!(a.update(&world(0)), Some(StatusChange::Started));
        assert_eq!(a.jam_channels().len(), 80);
        assert_eq!(a.update(&world(5)), Some(StatusChange::Stopped));
        assert!(a.jam_channels().is_empty());
    }

    #[test]
    fn blind_forgery_at_tau_32_fails() {
        let target = forgery_target(TagLength::T32, 3);
        let mut r = rng::stream(2, "forge");
        let s = forge_frames(&target, None, 3, 1000, &mut r);
        assert_eq!(s.successes, 0);
        assert_eq!(s.lockouts, 1000);
        assert_eq!(s.attempts, 3000);
    }

    #[test]
    fn leaked_key_forgery_is_accepted() {
        let target = forgery_target(TagLength::T32, 3);
        let key = *target.key();
        let mut r = rng::stream(2, "forge");
        let s = forge_frames(&target, Some(&key), 3, 100, &mut r);
        assert_eq!(s.successes, 100);
        assert_eq!(s.attempts, 100);
    }

    #[test]
    fn jam_channel_json() {
        let all: JamChannels = serde_json::from_str("\"all\"").unwrap();
        assert!(all.covers_all());
        let sub: JamChannels = serde_json::from_str("[3, 4, 4]").unwrap();
        assert_eq!(sub.channels().len(), 2);
        assert!(!sub.covers_all());
    }
}
