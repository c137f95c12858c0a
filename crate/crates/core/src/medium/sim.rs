//! The simulation event loop.
//!
//! Per sub-cycle: open-window bursts (configuration traffic, attacker frames,
//! jamming) are resolved and processed by the masters first, then every slot
//! runs its downlink and, if the device decoded it, its uplink. Each master
//! processes at most `ports + 4` frames per track and sub-cycle; surplus frames
//! are displaced.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use super::trace::AttackInfo;
use super::{
    downlink_position, resolve_position, uplink_position, Burst, BurstKind, ChannelModel,
    DeliveryOutcome, Origin, RejectReason, SafetyWatchdog, SimSummary, SimTrace, TraceEvent,
    TraceLevel, WatchdogTransition,
};
use crate::adversary::{
    falsified_payload, Adversary, AttackKind, EmitContext, Heard, KnownTable, Learned,
    StatusChange, WorldView,
};
use crate::detection::{Alert, LinkEvent, MasterAnomaly, Sniffer, SnifferObservation};
use crate::hopping::{adaptive_switch, ChannelIndex, HoppingTable, CONFIG_CHANNELS};
use crate::pairing::{
    table_message, ConfigMessage, LinkPair, OobChannel, PairingManager, PairingOutcome,
    PortPairing, RoamReturn, DEFAULT_LEASE_CYCLES,
};
use crate::protocol::{
    decode_frame, encode_frame, legacy_checksum, Cell, ControlOctet, CycleSchedule, DeviceUid,
    Direction, Frame, FrameFormat, FrameSecurity, MasterId, PortKey, SlotId, TrackKey,
    MAX_SLOTS_PER_TRACK,
};
use crate::rng;
use crate::scenario::{EventAction, Scenario, ScenarioEvent};
use crate::secure::{LinkState, OpenError};

/// Extra frames per track and sub-cycle a master can process beyond one per port.
pub const MASTER_SPARE_CAPACITY: usize = 4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    /// Overrides the scenario trace level.
    pub level: Option<TraceLevel>,
    /// Sniffer and master anomaly check. Disabling them must not change any outcome.
    pub detection: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: None,
            level: None,
            detection: true,
        }
    }
}

impl RunOptions {
    pub fn seeded(seed: u64) -> Self {
        RunOptions {
            seed: Some(seed),
            ..Default::default()
        }
    }
}

pub fn run(scenario: &Scenario, seed: u64) -> Result<SimTrace, SimError> {
    run_with(scenario, &RunOptions::seeded(seed))
}

pub fn run_with(scenario: &Scenario, options: &RunOptions) -> Result<SimTrace, SimError> {
    Ok(Simulator::new(scenario, options)?.run())
}

#[derive(Debug, Clone, Copy)]
enum Listener {
    Config,
    Port(PortKey),
}

struct Received {
    track: usize,
    listener: Listener,
    bytes: Vec<u8>,
    origin: Origin,
}

struct HeardBurst {
    burst: Burst,
    port: Option<PortKey>,
    format: Option<FrameFormat>,
}

pub struct Simulator<'s> {
    scenario: &'s Scenario,
    cell: Cell,
    seed: u64,
    level: TraceLevel,
    detect: bool,
    spc: u64,
    horizon: u64,
    channel: ChannelModel,
    noise_base: ChaCha12Rng,
    adversary_noise_base: ChaCha12Rng,
    tables: Vec<HoppingTable>,
    pending_tables: Vec<Option<HoppingTable>>,
    pairing: PairingManager,
    oob: OobChannel,
    links: BTreeMap<PortKey, LinkPair>,
    fail_since: BTreeMap<PortKey, u64>,
    watchdog: SafetyWatchdog,
    sniffer: Option<Sniffer>,
    anomaly: MasterAnomaly,
    adversaries: Vec<Adversary>,
    config_queue: VecDeque<(usize, ConfigMessage)>,
    schedules: Vec<(CycleSchedule, Vec<SlotId>)>,
    address_index: BTreeMap<u32, PortKey>,
    events_at: BTreeMap<u64, Vec<&'s ScenarioEvent>>,
    events: Vec<TraceEvent>,
    summary: SimSummary,
    stats_index: BTreeMap<PortKey, usize>,
    next_burst_id: u64,
    lockout: u8,
    /// Recent genuine uplink images per port, to recognise relays.
    legit_uplinks: BTreeMap<PortKey, VecDeque<Vec<u8>>>,
}

/// Genuine uplink images remembered per port.
const RELAY_MEMORY: usize = 64;

impl<'s> Simulator<'s> {
    pub fn new(scenario: &'s Scenario, options: &RunOptions) -> Result<Self, SimError> {
        let cell = scenario
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        let seed = options.seed.or(scenario.seed).unwrap_or(0);
        let channel = ChannelModel::new(scenario.effective_bsc_p(&cell))?;
        let pairing = PairingManager::new(&cell);
        let mut oob = OobChannel::new(rng::stream(seed, "pairing.oob"));
        let lockout = scenario.detection.lockout_threshold;
        let mut links = BTreeMap::new();
        for p in cell.ports() {
            if let (true, Some(uid), crate::protocol::SecurityMode::Secured { tau }) =
                (p.initially_paired, p.device_uid, p.security)
            {
                let secret = oob.deliver().expect("commissioning channel available");
                let mut lp = LinkPair::establish(&secret, p.key, uid, tau);
                lp.master = lp.master.with_lockout_threshold(lockout);
                links.insert(p.key, lp);
            }
        }
        let mut watchdog = SafetyWatchdog::new(scenario.safety.watchdog_cycles);
        for (port, state) in pairing.states() {
            if state.active_device().is_some() {
                watchdog.arm(port);
            }
        }
        let detect = options.detection;
        let usable = cell
            .tracks()
            .first()
            .map_or(1, |t| t.table.len());
        let sniffer = (detect && scenario.detection.sniffer)
            .then(|| Sniffer::new(&scenario.detection, usable));
        let adversaries = scenario
            .attacks
            .iter()
            .enumerate()
            .map(|(i, a)| {
                Adversary::new(
                    i,
                    a.clone(),
                    rng::stream(rng::child_seed(seed, "adversary", i as u64), "adversary"),
                )
            })
            .collect();
        let mut events_at: BTreeMap<u64, Vec<&ScenarioEvent>> = BTreeMap::new();
        for e in &scenario.events {
            events_at.entry(e.at_cycle).or_default().push(e);
        }
        let address_index = cell.ports().map(|p| (p.key.access_address(), p.key)).collect();
        let mut summary = SimSummary::default();
        let mut stats_index = BTreeMap::new();
        for p in cell.ports() {
            stats_index.insert(p.key, summary.ports.len());
            summary.ports.push(super::PortStats::new(p.key, p.safety));
        }
        let tables = cell.tracks().iter().map(|t| t.table.clone()).collect();
        let pending_tables = vec![None; cell.tracks().len()];
        Ok(Simulator {
            scenario,
            spc: cell.timing().sub_cycles_per_cycle as u64,
            horizon: scenario.horizon_cycles,
            level: options.level.unwrap_or(scenario.outputs.trace_level),
            detect,
            seed,
            channel,
            noise_base: rng::stream(seed, "medium.noise"),
            adversary_noise_base: rng::stream(seed, "medium.noise.adversary"),
            tables,
            pending_tables,
            pairing,
            oob,
            links,
            fail_since: BTreeMap::new(),
            watchdog,
            sniffer,
            anomaly: MasterAnomaly::new(lockout),
            adversaries,
            config_queue: VecDeque::new(),
            schedules: Vec::new(),
            address_index,
            events_at,
            events: Vec::new(),
            summary,
            stats_index,
            next_burst_id: 0,
            lockout,
            legit_uplinks: BTreeMap::new(),
            cell,
        })
    }

    pub fn run(mut self) -> SimTrace {
        let attacks = self
            .scenario
            .attacks
            .iter()
            .map(|a| AttackInfo {
                kind: a.kind,
                target: a.target_port(),
                start_cycle: a.start_cycle,
                stop_cycle: a.stop(self.horizon),
            })
            .collect();
        self.emit(TraceEvent::RunStart {
            scenario: self.scenario.name.clone(),
            seed: self.seed,
            horizon_cycles: self.horizon,
            sub_cycles_per_cycle: self.spc as u8,
            watchdog_cycles: self.scenario.safety.watchdog_cycles,
            safety_ports: self.scenario.safety_ports(&self.cell),
            attacks,
        });
        self.grant_initial_knowledge();
        for cycle in 0..self.horizon {
            self.begin_cycle(cycle);
            for sub in 0..self.spc {
                self.sub_cycle(cycle, cycle * self.spc + sub, sub as u8);
            }
            self.end_cycle(cycle);
        }
        self.summary.cycles = self.horizon;
        self.emit(TraceEvent::RunEnd {
            cycles: self.horizon,
        });
        SimTrace {
            level: self.level,
            events: self.events,
            summary: self.summary,
        }
    }

    fn emit(&mut self, e: TraceEvent) {
        if let TraceEvent::Alert { .. } = e {
            self.summary.alerts += 1;
        }
        if self.level == TraceLevel::Full || e.is_security_relevant() {
            self.events.push(e);
        }
    }

    fn stats(&mut self, port: PortKey) -> &mut super::PortStats {
        let i = self.stats_index[&port];
        &mut self.summary.ports[i]
    }

    fn track_channel(&self, ti: usize, sc: u64) -> ChannelIndex {
        self.cell.tracks()[ti].channel_with(&self.tables[ti], sc)
    }

    fn track_index(&self, key: TrackKey) -> usize {
        self.cell.track_index(key).expect("validated track")
    }

    fn port_active(&self, port: PortKey) -> bool {
        let paired = self
            .pairing
            .state(port)
            .is_some_and(|s| s.active_device().is_some());
        let secured = self
            .cell
            .port(port)
            .is_some_and(|p| p.security.is_secured());
        paired
            && (!secured
                || self
                    .links
                    .get(&port)
                    .is_some_and(|l| l.master.state() == LinkState::Active))
    }

    fn grant_initial_knowledge(&mut self) {
        let tables: Vec<(TrackKey, KnownTable)> = self
            .cell
            .tracks()
            .iter()
            .map(|t| (t.key, KnownTable::from_table(&t.table, t.table_offset)))
            .collect();
        let config: Vec<(PortKey, DeviceUid)> = self
            .pairing
            .states()
            .filter_map(|(p, s)| s.active_device().map(|d| (p, d)))
            .collect();
        for i in 0..self.adversaries.len() {
            let learned = self.adversaries[i].grant_initial(&tables, &config);
            self.emit_learned(0, i, learned);
        }
    }

    fn emit_learned(&mut self, cycle: u64, attack: usize, learned: Vec<Learned>) {
        for l in learned {
            self.emit(TraceEvent::KnowledgeUpdate {
                cycle,
                attack,
                learned: l,
            });
        }
    }

    fn begin_cycle(&mut self, cycle: u64) {
        for ti in 0..self.tables.len() {
            if let Some(t) = self.pending_tables[ti].take() {
                self.tables[ti] = t;
            }
        }
        if let Some(evs) = self.events_at.get(&cycle).cloned() {
            for e in evs {
                self.apply_event(cycle, &e.action);
            }
        }
        for r in self.pairing.expire_leases(cycle) {
            self.on_return(cycle, r);
        }
        if let Some(after) = self.scenario.recovery.reconfigure_after_cycles {
            let due: Vec<PortKey> = self
                .fail_since
                .iter()
                .filter(|(_, &since)| cycle >= since + after)
                .map(|(p, _)| *p)
                .collect();
            for port in due {
                self.reconfigure(cycle, port);
            }
        }
        self.update_adversaries(cycle);

        let mut schedules = Vec::with_capacity(self.cell.tracks().len());
        for (ti, t) in self.cell.tracks().iter().enumerate() {
            let active: Vec<SlotId> = t
                .ports
                .iter()
                .filter(|p| self.port_active(p.key))
                .map(|p| p.key.slot_id)
                .collect();
            let sched = CycleSchedule::new(&self.cell, t.key, &self.tables[ti], cycle, active.clone())
                .expect("validated track");
            schedules.push((sched, active));
        }
        self.schedules = schedules;
    }

    fn update_adversaries(&mut self, cycle: u64) {
        for i in 0..self.adversaries.len() {
            let target = self.adversaries[i].target();
            if let Some(t) = target {
                if let Some(lp) = self.links.get(&t) {
                    let counter = lp.device.tx_counter();
                    let key = *lp.master.key();
                    let learned = self.adversaries[i].grant_counter(counter);
                    self.emit_learned(cycle, i, learned);
                    if self.adversaries[i].wants_key(cycle) {
                        let learned = self.adversaries[i].leak_key(key);
                        self.emit_learned(cycle, i, learned);
                    }
                }
            }
            let world = WorldView {
                cycle,
                horizon: self.horizon,
                target_in_service_mode: target
                    .is_some_and(|t| self.pairing.in_service_mode(t.track())),
            };
            match self.adversaries[i].update(&world) {
                Some(StatusChange::Started) => self.emit(TraceEvent::AttackStarted {
                    cycle,
                    attack: i,
                    kind: self.adversaries[i].spec.kind,
                }),
                Some(StatusChange::Unmet(missing)) => self.emit(TraceEvent::PrerequisiteUnmet {
                    cycle,
                    attack: i,
                    missing,
                }),
                Some(StatusChange::Stopped) => {
                    self.emit(TraceEvent::AttackStopped { cycle, attack: i })
                }
                None => {}
            }
        }
    }

    fn apply_event(&mut self, cycle: u64, action: &EventAction) {
        let name = action.name();
        let result: Result<(), String> = match *action {
            EventAction::EnterServiceMode { master_id, track_id } => {
                let track = TrackKey::new(master_id, track_id);
                self.pairing
                    .enter_service_mode(track)
                    .map(|_| {
                        self.emit(TraceEvent::ServiceMode {
                            cycle,
                            track,
                            active: true,
                        })
                    })
                    .map_err(|e| e.to_string())
            }
            EventAction::ExitServiceMode { master_id, track_id } => {
                let track = TrackKey::new(master_id, track_id);
                self.pairing
                    .exit_service_mode(track)
                    .map(|_| {
                        self.emit(TraceEvent::ServiceMode {
                            cycle,
                            track,
                            active: false,
                        })
                    })
                    .map_err(|e| e.to_string())
            }
            EventAction::PairByUniqueId {
                master_id,
                track_id,
                slot_id,
                device_uid,
                mode,
            }
            | EventAction::PairByButton {
                master_id,
                track_id,
                slot_id,
                device_uid,
                mode,
            } => {
                let port = PortKey::new(master_id, track_id, slot_id);
                let ti = self.track_index(port.track());
                let previous = self.pairing.state(port);
                let table = self.tables[ti].clone();
                let r = if matches!(action, EventAction::PairByButton { .. }) {
                    self.pairing
                        .pair_by_button(port, DeviceUid(device_uid), mode, &table, &mut self.oob)
                } else {
                    self.pairing.pair_by_unique_id(
                        port,
                        DeviceUid(device_uid),
                        mode,
                        &table,
                        &mut self.oob,
                    )
                };
                r.map(|out| {
                    if let (Some(released), Some(PortPairing::Paired { device_uid: old })) =
                        (out.released, previous)
                    {
                        self.emit(TraceEvent::Unpaired {
                            cycle,
                            port: released,
                            device_uid: old,
                        });
                    }
                    self.install(cycle, ti, out);
                })
                .map_err(|e| e.to_string())
            }
            EventAction::Roam {
                device_uid,
                from_master,
                to_master,
                lease_cycles,
            } => {
                let uid = DeviceUid(device_uid);
                let table = self
                    .cell
                    .roaming_port(MasterId(to_master), uid)
                    .and_then(|p| self.cell.track_index(p.track()))
                    .map(|ti| self.tables[ti].clone())
                    .unwrap_or_else(|| self.tables[0].clone());
                self.pairing
                    .roam(
                        uid,
                        MasterId(from_master),
                        MasterId(to_master),
                        lease_cycles.unwrap_or(DEFAULT_LEASE_CYCLES),
                        cycle,
                        &table,
                        &mut self.oob,
                    )
                    .map(|out| {
                        let home = out.released.expect("roaming releases the home port");
                        if let PortPairing::Roamed { lease_until, .. } = out.state {
                            self.emit(TraceEvent::Roamed {
                                cycle,
                                device_uid: uid,
                                from: home,
                                to: out.port,
                                lease_until,
                            });
                        }
                        if let Some(WatchdogTransition::Exited(p)) = self.watchdog.disarm(home) {
                            self.emit(TraceEvent::SafeStateExited { cycle, port: p });
                        }
                        let ti = self.track_index(out.port.track());
                        self.install(cycle, ti, out);
                    })
                    .map_err(|e| e.to_string())
            }
            EventAction::ReturnRoam { device_uid } => self
                .pairing
                .return_home(DeviceUid(device_uid))
                .map(|r| self.on_return(cycle, r))
                .map_err(|e| e.to_string()),
            EventAction::AdaptiveSwitch {
                master_id,
                track_id,
                ref blocklist,
            } => {
                let track = TrackKey::new(master_id, track_id);
                let ti = self.track_index(track);
                match adaptive_switch(&self.tables[ti], blocklist) {
                    Ok(new) => {
                        let sealed = self.distribute_table(ti, &new);
                        self.emit(TraceEvent::TableSwitch {
                            cycle,
                            track,
                            generation: new.generation(),
                            sealed,
                        });
                        self.pending_tables[ti] = Some(new);
                        Ok(())
                    }
                    Err(e) => Err(e.to_string()),
                }
            }
            EventAction::SetOobAvailable { available } => {
                self.oob.set_available(available);
                Ok(())
            }
        };
        if let Err(error) = result {
            self.emit(TraceEvent::PairingRejected {
                cycle,
                action: name.to_owned(),
                error,
            });
        }
    }

    /// Put a pairing result into effect.
    fn install(&mut self, cycle: u64, ti: usize, out: PairingOutcome) {
        let port = out.port;
        match out.links {
            Some(mut lp) => {
                lp.master = lp.master.with_lockout_threshold(self.lockout);
                self.links.insert(port, lp);
            }
            None => {
                self.links.remove(&port);
            }
        }
        for m in out.messages {
            self.config_queue.push_back((ti, m));
        }
        self.fail_since.remove(&port);
        self.anomaly.reset(port);
        if let Some(WatchdogTransition::Exited(p)) = self.watchdog.disarm(port) {
            self.emit(TraceEvent::SafeStateExited { cycle, port: p });
        }
        self.watchdog.arm(port);
        self.emit(TraceEvent::Paired {
            cycle,
            port,
            device_uid: out.device_uid,
            method: out.method,
            mode: out.mode,
        });
    }

    fn on_return(&mut self, cycle: u64, r: RoamReturn) {
        self.emit(TraceEvent::RoamReturned {
            cycle,
            device_uid: r.device_uid,
            home: r.home,
        });
        self.links.remove(&r.released);
        self.fail_since.remove(&r.released);
        if let Some(WatchdogTransition::Exited(p)) = self.watchdog.disarm(r.released) {
            self.emit(TraceEvent::SafeStateExited { cycle, port: p });
        }
        self.watchdog.arm(r.home);
    }

    /// Queue table-update messages; sealed when every paired port on the track is secured.
    fn distribute_table(&mut self, ti: usize, new: &HoppingTable) -> bool {
        let track = &self.cell.tracks()[ti];
        let offset = track.table_offset;
        let paired: Vec<(PortKey, DeviceUid)> = track
            .ports
            .iter()
            .filter_map(|p| {
                self.pairing
                    .state(p.key)
                    .and_then(|s| s.active_device())
                    .map(|d| (p.key, d))
            })
            .collect();
        let sealed = !paired.is_empty() && paired.iter().all(|(p, _)| self.links.contains_key(p));
        let mut msgs = Vec::new();
        if sealed {
            for (p, uid) in &paired {
                let lp = self.links.get_mut(p).expect("checked");
                if lp.master.state() == LinkState::Active {
                    msgs.push(table_message(*p, *uid, new, offset, false, Some(&mut lp.master), false));
                }
            }
        } else {
            let (p, uid) = paired
                .first()
                .copied()
                .unwrap_or((track.ports[0].key, DeviceUid(0)));
            msgs.push(table_message(p, uid, new, offset, false, None, false));
        }
        for m in msgs {
            self.config_queue.push_back((ti, m));
        }
        sealed
    }

    fn reconfigure(&mut self, cycle: u64, port: PortKey) {
        let Ok(secret) = self.oob.deliver() else {
            return;
        };
        let Some(lp) = self.links.get_mut(&port) else {
            self.fail_since.remove(&port);
            return;
        };
        if lp.master.reconfigure(&secret).is_err() {
            self.fail_since.remove(&port);
            return;
        }
        let uid = lp.master.device_uid();
        let tau = lp.master.tau();
        lp.device = LinkPair::establish(&secret, port, uid, tau).device;
        self.fail_since.remove(&port);
        self.anomaly.reset(port);
        self.emit(TraceEvent::LinkReconfigured { cycle, port });
    }

    fn new_burst(
        &mut self,
        sc: u64,
        position: u8,
        channel: ChannelIndex,
        access_address: u32,
        direction: Direction,
        kind: BurstKind,
        origin: Origin,
        bytes: Vec<u8>,
    ) -> Burst {
        let id = self.next_burst_id;
        self.next_burst_id += 1;
        match origin {
            Origin::Master { .. } | Origin::Device { .. } => self.summary.legit_bursts += 1,
            Origin::Adversary { .. } => self.summary.adversary_bursts += 1,
            Origin::Environment => self.summary.interference_bursts += 1,
        }
        Burst {
            id,
            sub_cycle: sc,
            position,
            channel,
            access_address,
            direction,
            kind,
            origin,
            bytes,
        }
    }

    /// Which master, if any, receives a window burst.
    fn window_listener(&self, b: &Burst, sc: u64, config_channel: ChannelIndex) -> Option<(usize, Listener)> {
        for (ti, t) in self.cell.tracks().iter().enumerate() {
            if self.pairing.in_service_mode(t.key) {
                if b.channel == config_channel && b.access_address == t.key.config_address() {
                    return Some((ti, Listener::Config));
                }
            } else if b.channel == self.track_channel(ti, sc) {
                if let Some(&port) = self.address_index.get(&b.access_address) {
                    if port.track() == t.key && self.pairing.state(port).is_some_and(|s| s.active_device().is_some()) {
                        return Some((ti, Listener::Port(port)));
                    }
                }
            }
        }
        None
    }

    fn sub_cycle(&mut self, cycle: u64, sc: u64, sub: u8) {
        let mut noise = self.noise_base.clone();
        noise.set_stream(sc);
        let mut adv_noise = self.adversary_noise_base.clone();
        adv_noise.set_stream(sc);
        let config_channel = CONFIG_CHANNELS[(sc % 2) as usize];

        // Jamming for the whole sub-cycle.
        let mut jam: BTreeMap<ChannelIndex, Origin> = BTreeMap::new();
        for w in &self.scenario.medium.jam_plan {
            if cycle >= w.start_cycle && cycle < w.stop_cycle {
                for c in w.channels.channels() {
                    jam.entry(c).or_insert(Origin::Environment);
                }
            }
        }
        for a in &self.adversaries {
            for c in a.jam_channels() {
                jam.insert(c, Origin::Adversary { attack: a.index });
            }
        }

        // Open window.
        let mut window: Vec<Burst> = Vec::new();
        if let Some((ti, msg)) = self.config_queue.pop_front() {
            let channel = if msg.on_config_channel {
                config_channel
            } else {
                self.track_channel(ti, sc)
            };
            let master_id = msg.track.master_id;
            let b = self.new_burst(
                sc,
                0,
                channel,
                msg.track.config_address(),
                Direction::Downlink,
                BurstKind::Config,
                Origin::Master { master_id },
                msg.bytes,
            );
            window.push(b);
        }
        for i in 0..self.adversaries.len() {
            if !self.adversaries[i].is_running() {
                continue;
            }
            let target = self.adversaries[i].target();
            let ctx = EmitContext {
                sub_cycle: sc,
                config_channel,
                target_format: target.and_then(|t| self.cell.port(t)).map(|p| p.frame_format()),
                target_uid: target
                    .and_then(|t| self.pairing.state(t))
                    .and_then(|s| s.active_device()),
            };
            for pb in self.adversaries[i].emit(&ctx) {
                let b = self.new_burst(
                    sc,
                    pb.position,
                    pb.channel,
                    pb.access_address,
                    pb.direction,
                    pb.kind,
                    Origin::Adversary { attack: i },
                    pb.bytes,
                );
                window.push(b);
            }
        }
        for (&c, &origin) in &jam {
            let b = self.new_burst(sc, 0, c, 0, Direction::Downlink, BurstKind::Jam, origin, Vec::new());
            window.push(b);
        }

        let mut heard: Vec<HeardBurst> = Vec::new();
        let mut received: Vec<Received> = Vec::new();
        let mut by_position: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, b) in window.iter().enumerate() {
            by_position.entry(b.position).or_default().push(i);
        }
        let jammed = |c: ChannelIndex| jam.contains_key(&c);
        let mut outcomes = vec![DeliveryOutcome::NoListener; window.len()];
        for idx in by_position.values() {
            let group: Vec<Burst> = idx.iter().map(|&i| window[i].clone()).collect();
            for (k, o) in resolve_position(&group, &jammed).into_iter().enumerate() {
                outcomes[idx[k]] = o;
            }
        }
        for (b, physical) in window.into_iter().zip(outcomes) {
            let mut outcome = physical;
            if physical.is_delivered() {
                let legit_config = b.kind == BurstKind::Config && b.origin.is_legitimate();
                if legit_config {
                    let mut copy = b.bytes.clone();
                    let flips = self.channel.apply(&mut copy, &mut noise);
                    outcome = DeliveryOutcome::Delivered { bit_flips: flips };
                } else {
                    match self.window_listener(&b, sc, config_channel) {
                        Some((ti, listener)) => {
                            let mut copy = b.bytes.clone();
                            let rng = if b.origin.is_adversary() { &mut adv_noise } else { &mut noise };
                            let flips = self.channel.apply(&mut copy, rng);
                            outcome = DeliveryOutcome::Delivered { bit_flips: flips };
                            received.push(Received {
                                track: ti,
                                listener,
                                bytes: copy,
                                origin: b.origin,
                            });
                        }
                        None => outcome = DeliveryOutcome::NoListener,
                    }
                }
            }
            self.record_burst(&b, outcome, &mut heard);
        }

        // Masters process window frames first.
        let mut remaining: Vec<usize> = self
            .cell
            .tracks()
            .iter()
            .map(|t| t.ports.len() + MASTER_SPARE_CAPACITY)
            .collect();
        let mut window_accepted: BTreeSet<PortKey> = BTreeSet::new();
        for r in received {
            if remaining[r.track] == 0 {
                let port = match r.listener {
                    Listener::Port(p) => Some(p),
                    Listener::Config => None,
                };
                self.displaced(cycle, sc, r.track, port, r.origin);
                continue;
            }
            remaining[r.track] -= 1;
            match r.listener {
                Listener::Config => self.emit(TraceEvent::FrameRejected {
                    cycle,
                    sub_cycle: sc,
                    port: None,
                    origin: r.origin,
                    reason: RejectReason::Malformed,
                }),
                Listener::Port(port) => {
                    if self.master_receive(cycle, sc, port, &r.bytes, r.origin) {
                        window_accepted.insert(port);
                    }
                }
            }
        }

        // Slots.
        let ntracks = self.cell.tracks().len();
        let mut grants_by_track: Vec<Vec<SlotId>> = Vec::with_capacity(ntracks);
        let mut scheduled: BTreeMap<ChannelIndex, u32> = BTreeMap::new();
        for ti in 0..ntracks {
            let grants = self.schedules[ti].0.grants(sub);
            let mut slots = Vec::with_capacity(grants.len());
            for g in grants {
                self.summary.grants += 1;
                *scheduled.entry(g.channel).or_default() += 2;
                self.emit(TraceEvent::Grant {
                    cycle,
                    sub_cycle: sc,
                    track: g.track,
                    slot: g.slot_id,
                    channel: g.channel,
                    attempt: g.attempt,
                });
                slots.push(g.slot_id);
            }
            grants_by_track.push(slots);
        }
        let mut success: BTreeMap<PortKey, bool> = BTreeMap::new();
        for slot in 0..MAX_SLOTS_PER_TRACK as u8 {
            let slot_id = SlotId(slot);
            let mut downlinks: Vec<(usize, PortKey, Burst)> = Vec::new();
            for ti in 0..ntracks {
                if !grants_by_track[ti].contains(&slot_id) {
                    continue;
                }
                let port = self.cell.tracks()[ti].key.port(slot_id);
                let channel = self.track_channel(ti, sc);
                let Some(bytes) = self.master_transmit(cycle, port, sub) else {
                    success.insert(port, false);
                    continue;
                };
                let b = self.new_burst(
                    sc,
                    downlink_position(slot),
                    channel,
                    port.access_address(),
                    Direction::Downlink,
                    BurstKind::Data,
                    Origin::Master {
                        master_id: port.master_id,
                    },
                    bytes,
                );
                downlinks.push((ti, port, b));
            }
            if downlinks.is_empty() {
                continue;
            }
            let group: Vec<Burst> = downlinks.iter().map(|(_, _, b)| b.clone()).collect();
            let outs = resolve_position(&group, &jammed);
            let mut uplinks: Vec<(usize, PortKey, Burst)> = Vec::new();
            for ((ti, port, b), o) in downlinks.into_iter().zip(outs) {
                let mut outcome = o;
                let mut decoded = false;
                if o.is_delivered() {
                    let mut copy = b.bytes.clone();
                    let flips = self.channel.apply(&mut copy, &mut noise);
                    outcome = DeliveryOutcome::Delivered { bit_flips: flips };
                    decoded = self.device_receive(cycle, port, &copy);
                }
                self.record_burst(&b, outcome, &mut heard);
                success.insert(port, false);
                if !decoded {
                    continue;
                }
                if let Some((bytes, origin)) = self.device_transmit(cycle, port, sub) {
                    let channel = self.track_channel(ti, sc);
                    let ub = self.new_burst(
                        sc,
                        uplink_position(slot),
                        channel,
                        port.access_address(),
                        Direction::Uplink,
                        BurstKind::Data,
                        origin,
                        bytes,
                    );
                    uplinks.push((ti, port, ub));
                }
            }
            if uplinks.is_empty() {
                continue;
            }
            let group: Vec<Burst> = uplinks.iter().map(|(_, _, b)| b.clone()).collect();
            let outs = resolve_position(&group, &jammed);
            for ((ti, port, b), o) in uplinks.into_iter().zip(outs) {
                let mut outcome = o;
                let mut copy = None;
                if o.is_delivered() {
                    let mut c = b.bytes.clone();
                    let rng = if b.origin.is_adversary() { &mut adv_noise } else { &mut noise };
                    let flips = self.channel.apply(&mut c, rng);
                    outcome = DeliveryOutcome::Delivered { bit_flips: flips };
                    copy = Some(c);
                }
                let origin = b.origin;
                self.record_burst(&b, outcome, &mut heard);
                if let Some(bytes) = copy {
                    if remaining[ti] == 0 {
                        self.displaced(cycle, sc, ti, Some(port), origin);
                    } else {
                        remaining[ti] -= 1;
                        if self.master_receive(cycle, sc, port, &bytes, origin) {
                            success.insert(port, true);
                        }
                    }
                }
            }
        }
        for ti in 0..ntracks {
            let key = self.cell.tracks()[ti].key;
            for &slot in &grants_by_track[ti] {
                let port = key.port(slot);
                let ok = success.get(&port).copied().unwrap_or(false)
                    || window_accepted.contains(&port);
                self.schedules[ti].0.record(slot, ok);
            }
        }

        if let Some(sniffer) = self.sniffer.as_mut() {
            let scheduled: Vec<(ChannelIndex, u32)> = scheduled.into_iter().collect();
            let alerts = sniffer.close_sub_cycle(sc, &scheduled);
            for alert in alerts {
                self.emit(TraceEvent::Alert {
                    cycle,
                    sub_cycle: sc,
                    alert,
                });
            }
        }

        if !self.adversaries.is_empty() {
            let views: Vec<Heard<'_>> = heard
                .iter()
                .map(|h| Heard {
                    burst: &h.burst,
                    port: h.port,
                    format: h.format,
                })
                .collect();
            let mut results = Vec::new();
            for a in self.adversaries.iter_mut() {
                let own: Vec<Heard<'_>> = views
                    .iter()
                    .filter(|h| h.burst.origin != Origin::Adversary { attack: a.index })
                    .copied()
                    .collect();
                results.push(a.sniff(sc, &own));
            }
            drop(views);
            for (i, r) in results.into_iter().enumerate() {
                self.emit_learned(cycle, i, r.learned);
                for port in r.plaintext {
                    self.emit(TraceEvent::PlaintextExposed {
                        cycle,
                        attack: i,
                        port,
                    });
                }
            }
        }
    }

    fn record_burst(&mut self, b: &Burst, outcome: DeliveryOutcome, heard: &mut Vec<HeardBurst>) {
        self.summary.record_outcome(outcome);
        if let Some(s) = self.sniffer.as_mut() {
            s.ingest(SnifferObservation {
                channel: b.channel,
                decodable: matches!(
                    outcome,
                    DeliveryOutcome::Delivered { .. } | DeliveryOutcome::NoListener
                ),
                framed: b.kind != BurstKind::Jam,
            });
        }
        let clean = matches!(
            outcome,
            DeliveryOutcome::Delivered { .. } | DeliveryOutcome::NoListener
        );
        if clean && b.kind != BurstKind::Jam && !self.adversaries.is_empty() {
            let port = (b.kind == BurstKind::Data)
                .then(|| self.address_index.get(&b.access_address).copied())
                .flatten();
            let format = port.and_then(|p| self.cell.port(p)).map(|p| p.frame_format());
            heard.push(HeardBurst {
                burst: b.clone(),
                port,
                format,
            });
        }
        if self.level == TraceLevel::Full {
            self.events.push(TraceEvent::Burst(b.clone()));
            self.events.push(TraceEvent::Delivery {
                burst_id: b.id,
                outcome,
            });
        }
    }

    fn displaced(&mut self, cycle: u64, sc: u64, ti: usize, port: Option<PortKey>, origin: Origin) {
        if let (Some(p), true) = (port, origin.is_legitimate()) {
            self.stats(p).displaced += 1;
        }
        let track = self.cell.tracks()[ti].key;
        self.emit(TraceEvent::FrameDisplaced {
            cycle,
            sub_cycle: sc,
            track,
            port,
            origin,
        });
    }

    fn format(&self, port: PortKey) -> FrameFormat {
        self.cell.port(port).expect("configured port").frame_format()
    }

    fn master_transmit(&mut self, cycle: u64, port: PortKey, attempt: u8) -> Option<Vec<u8>> {
        let format = self.format(port);
        let control = ControlOctet::new(Direction::Downlink, attempt);
        let capacity = format.payload_capacity().expect("validated format");
        let payload = process_payload(cycle, port, capacity);
        build_frame(format, control, payload, self.links.get_mut(&port).map(|l| &mut l.master))
    }

    fn device_transmit(&mut self, cycle: u64, port: PortKey, attempt: u8) -> Option<(Vec<u8>, Origin)> {
        let uid = self.pairing.state(port)?.active_device()?;
        let compromised = self.adversaries.iter().find(|a| {
            a.spec.kind == AttackKind::CompromisedDevice && a.is_running() && a.target() == Some(port)
        });
        let format = self.format(port);
        let capacity = format.payload_capacity().expect("validated format");
        let (payload, origin) = match compromised {
            Some(a) if a.withholding(cycle, self.horizon) => return None,
            Some(a) => (
                falsified_payload(capacity),
                Origin::Adversary { attack: a.index },
            ),
            None => (
                process_payload(cycle, port, capacity),
                Origin::Device { device_uid: uid },
            ),
        };
        let control = ControlOctet::new(Direction::Uplink, attempt);
        let bytes = build_frame(format, control, payload, self.links.get_mut(&port).map(|l| &mut l.device))?;
        if origin.is_legitimate() {
            let recent = self.legit_uplinks.entry(port).or_default();
            if recent.len() == RELAY_MEMORY {
                recent.pop_front();
            }
            recent.push_back(bytes.clone());
        }
        Some((bytes, origin))
    }

    fn device_receive(&mut self, cycle: u64, port: PortKey, bytes: &[u8]) -> bool {
        let format = self.format(port);
        let ok = match format.security {
            FrameSecurity::Legacy => legacy_decode(format, bytes, Direction::Downlink).is_some(),
            FrameSecurity::Secured(_) => match (decode_frame(format, bytes), self.links.get_mut(&port)) {
                (Ok(f), Some(lp)) if f.control.direction == Direction::Downlink => lp
                    .device
                    .open(
                        f.counter.expect("secured"),
                        &bytes[..1],
                        &f.payload,
                        f.tag.as_deref().expect("secured"),
                    )
                    .is_ok(),
                _ => false,
            },
        };
        if ok {
            let attack = self
                .adversaries
                .iter_mut()
                .find(|a| {
                    a.spec.kind == AttackKind::CompromisedDevice
                        && a.is_running()
                        && a.target() == Some(port)
                });
            if let Some(a) = attack {
                let index = a.index;
                if a.expose(port) {
                    self.emit(TraceEvent::PlaintextExposed {
                        cycle,
                        attack: index,
                        port,
                    });
                }
            }
        }
        ok
    }

    /// Master-side reception of an uplink frame for `port`. True if accepted.
    fn master_receive(&mut self, cycle: u64, sc: u64, port: PortKey, bytes: &[u8], origin: Origin) -> bool {
        let format = self.format(port);
        let reject = |s: &mut Self, reason: RejectReason| {
            s.emit(TraceEvent::FrameRejected {
                cycle,
                sub_cycle: sc,
                port: Some(port),
                origin,
                reason,
            });
            false
        };
        let counter = match format.security {
            FrameSecurity::Legacy => {
                if bytes.len() < 2 || legacy_checksum(&bytes[..bytes.len() - 1]) != bytes[bytes.len() - 1] {
                    return reject(self, RejectReason::Checksum);
                }
                if legacy_decode(format, bytes, Direction::Uplink).is_none() {
                    return reject(self, RejectReason::Malformed);
                }
                None
            }
            FrameSecurity::Secured(_) => {
                let f = match decode_frame(format, bytes) {
                    Ok(f) if f.control.direction == Direction::Uplink => f,
                    _ => return reject(self, RejectReason::Malformed),
                };
                let Some(lp) = self.links.get_mut(&port) else {
                    return reject(self, RejectReason::LinkInFailState);
                };
                let before = lp.master.state();
                let counter = f.counter.expect("secured");
                let result = lp.master.open(
                    counter,
                    &bytes[..1],
                    &f.payload,
                    f.tag.as_deref().expect("secured"),
                );
                let after = lp.master.state();
                let event = match result {
                    Ok(_) => Some(LinkEvent::Accepted),
                    Err(OpenError::AuthFailure) => Some(LinkEvent::AuthFailure),
                    Err(OpenError::ReplayRejected { .. }) => Some(LinkEvent::ReplayRejected),
                    Err(OpenError::LinkInFailState) => None,
                };
                match event {
                    Some(LinkEvent::AuthFailure) => self.stats(port).auth_failures += 1,
                    Some(LinkEvent::ReplayRejected) => self.stats(port).replays_rejected += 1,
                    _ => {}
                }
                let reason = match result {
                    Ok(_) => None,
                    Err(OpenError::AuthFailure) => Some(RejectReason::AuthFailure),
                    Err(OpenError::ReplayRejected { .. }) => Some(RejectReason::ReplayRejected),
                    Err(OpenError::LinkInFailState) => Some(RejectReason::LinkInFailState),
                };
                if let Some(reason) = reason {
                    reject(self, reason);
                }
                if before == LinkState::Active && after == LinkState::FailState {
                    self.enter_fail_state(cycle, port);
                }
                if let (Some(ev), true) = (event, self.detect && self.scenario.detection.master_anomaly) {
                    for alert in self.anomaly.check(port, ev) {
                        self.emit(TraceEvent::Alert {
                            cycle,
                            sub_cycle: sc,
                            alert,
                        });
                        if let Alert::FailStateCommand { port } = alert {
                            if let Some(lp) = self.links.get_mut(&port) {
                                if lp.master.state() == LinkState::Active {
                                    lp.master.force_fail_state();
                                    self.enter_fail_state(cycle, port);
                                }
                            }
                        }
                    }
                }
                if reason.is_some() {
                    return false;
                }
                Some(counter)
            }
        };
        self.stats(port).accepted_frames += 1;
        let relayed = origin.is_adversary()
            && self
                .legit_uplinks
                .get(&port)
                .is_some_and(|r| r.iter().any(|b| b.as_slice() == bytes));
        self.emit(TraceEvent::FrameAccepted {
            cycle,
            sub_cycle: sc,
            port,
            origin,
            counter,
            relayed,
        });
        if let Some(WatchdogTransition::Exited(p)) = self.watchdog.valid_exchange(port) {
            self.emit(TraceEvent::SafeStateExited { cycle, port: p });
        }
        true
    }

    fn enter_fail_state(&mut self, cycle: u64, port: PortKey) {
        self.fail_since.insert(port, cycle);
        self.emit(TraceEvent::LinkFailState { cycle, port });
    }

    fn end_cycle(&mut self, cycle: u64) {
        let schedules = std::mem::take(&mut self.schedules);
        for (sched, active) in &schedules {
            for &slot in active {
                let port = sched_port(sched, &self.cell, slot);
                let attempts = sched.attempts(slot) as u64;
                let st = self.stats(port);
                st.cycles_scheduled += 1;
                st.attempts += attempts;
            }
            for slot in sched.failed_slots() {
                let port = sched_port(sched, &self.cell, slot);
                self.stats(port).cycle_failures += 1;
                self.emit(TraceEvent::SlotFailed { cycle, port });
            }
        }
        for t in self.watchdog.end_cycle() {
            if let WatchdogTransition::Entered(port) = t {
                let safety = self.cell.port(port).is_some_and(|p| p.safety);
                self.stats(port).safe_state_entries += 1;
                self.emit(TraceEvent::SafeStateEntered {
                    cycle,
                    port,
                    safety,
                });
            }
        }
    }
}

fn sched_port(sched: &CycleSchedule, cell: &Cell, slot: SlotId) -> PortKey {
    let _ = cell;
    sched.track().port(slot)
}

/// Cyclic process data; the values only need to be deterministic.
fn process_payload(cycle: u64, port: PortKey, len: usize) -> Vec<u8> {
    (0..len)
        .map(|i| (cycle as u8).wrapping_add(i as u8) ^ port.slot_id.0)
        .collect()
}

/// On-air image: legacy frames carry a trailing check octet, secured frames are sealed.
fn build_frame(
    format: FrameFormat,
    control: ControlOctet,
    payload: Vec<u8>,
    link: Option<&mut crate::secure::SecureLink>,
) -> Option<Vec<u8>> {
    match format.security {
        FrameSecurity::Legacy => {
            let mut b = encode_frame(&Frame::legacy(format.kind, control, payload)).ok()?;
            b.push(legacy_checksum(&b));
            Some(b)
        }
        FrameSecurity::Secured(_) => {
            let link = link?;
            let header = [control.to_byte().ok()?];
            let f = link.seal(&header, &payload).ok()?;
            encode_frame(&Frame::secured(control, f.counter, f.ciphertext, f.tag)).ok()
        }
    }
}

fn legacy_decode(format: FrameFormat, bytes: &[u8], direction: Direction) -> Option<Frame> {
    let (&check, body) = bytes.split_last()?;
    if legacy_checksum(body) != check {
        return None;
    }
    decode_frame(format, body)
        .ok()
        .filter(|f| f.control.direction == direction)
}
