use std::collections::{BTreeMap, BTreeSet, HashSet};

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::Config;
use serde_json::json;

use iolwsim::adversary::AttackKind;
use iolwsim::analysis::{classify_trace, monte_carlo_forgery};
use iolwsim::detection::Alert;
use iolwsim::hopping::{generate_table, Blocklist, ChannelIndex};
use iolwsim::medium::{run, run_with, Origin, RejectReason, RunOptions, TraceEvent, TraceLevel};
use iolwsim::pairing::{OobChannel, PairingManager, PairingMode};
use iolwsim::protocol::{
    build_cell, decode_frame, encode_frame, legacy_checksum, CellConfig, ControlOctet, CycleSchedule,
    DeviceUid, Direction, Frame, FrameFormat, FrameSecurity, MasterId, PortKey, SlotId, SlotKind,
    TrackKey,
};
use iolwsim::rng;
use iolwsim::scenario::Scenario;
use iolwsim::secure::{advantage_bound, AdvantageParams, TagLength};

fn control() -> impl Strategy<Value = ControlOctet> {
    (any::<bool>(), 0u8..3, any::<bool>(), any::<bool>()).prop_map(|(up, retry, service, pairing)| ControlOctet {
        direction: if up { Direction::Uplink } else { Direction::Downlink },
        retry,
        service,
        pairing,
    })
}

fn frame() -> impl Strategy<Value = Frame> {
    let legacy = (prop_oneof![Just(SlotKind::SSlot), Just(SlotKind::DSlot)], control()).prop_flat_map(|(kind, c)| {
        let cap = FrameFormat::new(kind, FrameSecurity::Legacy).payload_capacity().unwrap();
        proptest::collection::vec(any::<u8>(), 0..=cap).prop_map(move |p| Frame::legacy(kind, c, p))
    });
    let secured = (prop_oneof![Just(8u16), Just(16), Just(24), Just(32), Just(64)], control(), any::<u32>())
        .prop_flat_map(|(bits, c, counter)| {
            let tau = TagLength::new(bits).unwrap();
            let cap = FrameFormat::new(SlotKind::DSlot, FrameSecurity::Secured(tau)).payload_capacity().unwrap();
            (
                proptest::collection::vec(any::<u8>(), 0..=cap),
                proptest::collection::vec(any::<u8>(), tau.bytes()),
            )
                .prop_map(move |(p, tag)| Frame::secured(c, counter, p, tag))
        });
    prop_oneof![legacy, secured]
}

fn blocklist() -> impl Strategy<Value = Blocklist> {
    proptest::collection::vec((1u8..=80, 0u8..12), 0..4).prop_map(|ranges| {
        let mut b = Blocklist::new();
        for (lo, len) in ranges {
            b.block_range(lo, lo.saturating_add(len).min(80)).unwrap();
        }
        b
    })
}

fn cell_config(slots: u8) -> CellConfig {
    let slots: Vec<_> = (0..slots)
        .map(|i| json!({"slot_id": i, "kind": "SSlot", "device_uid": 0x100 + i as u64}))
        .collect();
    serde_json::from_value(json!({"masters": [{"master_id": 3, "tracks": [{"track_id": 0, "slots": slots}]}]}))
        .unwrap()
}

proptest! {
    #![proptest_config(Config::with_cases(512))]

    #[test]
    fn frame_encode_decode_inverse(f in frame()) {
        let bytes = encode_frame(&f).unwrap();
        let back = decode_frame(f.format().unwrap(), &bytes).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn legacy_checksum_catches_single_flips(bytes in proptest::collection::vec(any::<u8>(), 1..16), bit in any::<prop::sample::Index>()) {
        let mut flipped = bytes.clone();
        let i = bit.index(bytes.len() * 8);
        flipped[i / 8] ^= 1 << (i % 8);
        prop_assert_ne!(legacy_checksum(&bytes), legacy_checksum(&flipped));
    }

    #[test]
    fn hopping_table_properties(seed in any::<u32>(), b in blocklist(), min_hop in prop_oneof![Just(0u32), Just(8), Just(24)]) {
        let usable: BTreeSet<ChannelIndex> = b.usable_channels().into_iter().collect();
        match generate_table(seed, &b, min_hop) {
            Ok(t) => {
                let got: BTreeSet<ChannelIndex> = t.sequence().iter().copied().collect();
                prop_assert_eq!(got.len(), t.len());
                prop_assert_eq!(&got, &usable);
                prop_assert!(t.sequence().iter().all(|c| !b.contains(*c)));
                prop_assert!(t.min_cyclic_hop_mhz() >= min_hop);
                prop_assert_eq!(generate_table(seed, &b, min_hop).unwrap(), t);
            }
            Err(e) => prop_assert!(e.is_too_few_channels(), "{e}"),
        }
    }

    #[test]
    fn schedule_grants_are_bounded(slots in 1u8..=8, outcomes in proptest::collection::vec(any::<bool>(), 36), cycle in 0u64..10_000) {
        let cell = build_cell(cell_config(slots)).unwrap();
        let key = TrackKey::new(3, 0);
        let table = cell.track(key).unwrap().table.clone();
        let active: Vec<SlotId> = (0..slots).map(SlotId).collect();
        let mut s = CycleSchedule::new(&cell, key, &table, cycle, active.clone()).unwrap();
        let mut per_slot: BTreeMap<SlotId, u8> = BTreeMap::new();
        let mut draws = outcomes.iter().cycle();
        for sub in 0..cell.timing().sub_cycles_per_cycle {
            let grants = s.grants(sub);
            let ids: HashSet<SlotId> = grants.iter().map(|g| g.slot_id).collect();
            prop_assert_eq!(ids.len(), grants.len());
            for g in grants {
                prop_assert_eq!(g.channel, s.channel(sub));
                *per_slot.entry(g.slot_id).or_default() += 1;
                s.record(g.slot_id, *draws.next().unwrap());
            }
        }
        prop_assert!(per_slot.values().all(|&n| (1..=3).contains(&n)));
        for slot in &active {
            prop_assert_eq!(s.attempts(*slot), per_slot[slot]);
        }
        let replay = cell.schedule_cycle(key, cycle).unwrap();
        prop_assert_eq!(replay, cell.schedule_cycle(key, cycle).unwrap());
    }
}

#[test]
fn distinct_masters_hop_differently() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let b = Blocklist::new();
    let mut differ = 0;
    let pairs = 1000;
    for _ in 0..pairs {
        let (a, c) = (any::<u32>(), any::<u32>()).new_tree(&mut runner).unwrap().current();
        if a == c {
            differ += 1;
            continue;
        }
        let ta = generate_table(a, &b, 24).unwrap();
        let tc = generate_table(c, &b, 24).unwrap();
        if ta.sequence()[..8] != tc.sequence()[..8] {
            differ += 1;
        }
    }
    assert!(differ * 100 >= pairs * 99, "{differ}/{pairs}");
}

fn roaming_cell() -> CellConfig {
    serde_json::from_value(json!({"masters": [
        {"master_id": 1, "tracks": [{"track_id": 0, "slots": [
            {"slot_id": 0, "kind": "DSlot", "device_uid": 1},
            {"slot_id": 1, "kind": "DSlot", "device_uid": 2},
            {"slot_id": 2, "kind": "DSlot", "paired": false}
        ]}]},
        {"master_id": 2, "tracks": [{"track_id": 0, "slots": [
            {"slot_id": 0, "kind": "DSlot"},
            {"slot_id": 1, "kind": "DSlot"}
        ]}], "roaming_allowlist": [
            {"device_uid": 1, "track_id": 0, "slot_id": 0},
            {"device_uid": 2, "track_id": 0, "slot_id": 1}
        ]}
    ]}))
    .unwrap()
}

#[derive(Debug, Clone)]
enum PairOp {
    Enter(u32),
    Exit(u32),
    PairId(u32, u8, u64),
    Button(u32, u8, u64),
    Roam(u64, u64),
    Return(u64),
    Tick(u64),
}

fn pair_op() -> impl Strategy<Value = PairOp> {
    prop_oneof![
        (1u32..=2).prop_map(PairOp::Enter),
        (1u32..=2).prop_map(PairOp::Exit),
        (1u32..=2, 0u8..3, 1u64..=4).prop_map(|(m, s, d)| PairOp::PairId(m, s, d)),
        (1u32..=2, 0u8..3, 1u64..=4).prop_map(|(m, s, d)| PairOp::Button(m, s, d)),
        (1u64..=3, 1u64..50).prop_map(|(d, l)| PairOp::Roam(d, l)),
        (1u64..=3).prop_map(PairOp::Return),
        (1u64..30).prop_map(PairOp::Tick),
    ]
}

proptest! {
    #![proptest_config(Config::with_cases(256))]

    #[test]
    fn pairing_keeps_single_active_port_and_needs_service_mode(ops in proptest::collection::vec(pair_op(), 1..40)) {
        let cell = build_cell(roaming_cell()).unwrap();
        let table = cell.tracks()[0].table.clone();
        let mut m = PairingManager::new(&cell);
        let mut oob = OobChannel::new(rng::stream(1, "oob"));
        let mut now = 0u64;
        for op in ops {
            let track = |master| TrackKey::new(master, 0);
            match op {
                PairOp::Enter(master) => m.enter_service_mode(track(master)).unwrap(),
                PairOp::Exit(master) => m.exit_service_mode(track(master)).unwrap(),
                PairOp::PairId(master, slot, d) | PairOp::Button(master, slot, d) => {
                    let gated = m.in_service_mode(track(master));
                    let port = PortKey::new(master, 0, slot);
                    let r = if matches!(op, PairOp::PairId(..)) {
                        m.pair_by_unique_id(port, DeviceUid(d), PairingMode::SecuredOob, &table, &mut oob)
                    } else {
                        m.pair_by_button(port, DeviceUid(d), PairingMode::SecuredOob, &table, &mut oob)
                    };
                    if r.is_ok() {
                        prop_assert!(gated);
                    }
                }
                PairOp::Roam(d, lease) => {
                    let gated = m.in_service_mode(track(1)) && m.in_service_mode(track(2));
                    let r = m.roam(DeviceUid(d), MasterId(1), MasterId(2), lease, now, &table, &mut oob);
                    if r.is_ok() {
                        prop_assert!(gated);
                    }
                }
                PairOp::Return(d) => {
                    let _ = m.return_home(DeviceUid(d));
                }
                PairOp::Tick(dt) => {
                    now += dt;
                    for r in m.expire_leases(now) {
                        prop_assert_eq!(m.active_ports(r.device_uid), vec![r.home]);
                    }
                }
            }
            for d in 1..=4 {
                prop_assert!(m.active_ports(DeviceUid(d)).len() <= 1);
            }
        }
    }
}

fn two_port_cell() -> serde_json::Value {
    json!({"masters": [{"master_id": 1, "tracks": [{"track_id": 0, "slots": [
        {"slot_id": 0, "kind": "DSlot", "device_uid": 256, "safety": true,
         "security": {"mode": "secured", "tau": 32}},
        {"slot_id": 1, "kind": "DSlot", "device_uid": 257}
    ]}]}]})
}

#[derive(Debug, Clone)]
struct AttackDraw {
    kind: AttackKind,
    knowledge: [bool; 4],
    proximity: bool,
    device_access: bool,
    all_channels: bool,
    start: u64,
    len: u64,
    service_mode: bool,
    seed: u64,
}

fn attack_draw() -> impl Strategy<Value = AttackDraw> {
    (
        prop::sample::select(AttackKind::ALL.to_vec()),
        any::<[bool; 4]>(),
        prop::bool::weighted(0.8),
        any::<bool>(),
        prop::bool::weighted(0.8),
        5u64..30,
        5u64..40,
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(kind, knowledge, proximity, device_access, all_channels, start, len, service_mode, seed)| {
            AttackDraw { kind, knowledge, proximity, device_access, all_channels, start, len, service_mode, seed }
        })
}

fn attack_scenario(d: &AttackDraw) -> Scenario {
    let channels = if d.all_channels { json!("all") } else { json!([5, 6, 7]) };
    let events = if d.service_mode {
        json!([{"at_cycle": 2, "action": "enter_service_mode", "args": {"master_id": 1, "track_id": 0}}])
    } else {
        json!([])
    };
    let v = json!({
        "name": "random_attack",
        "horizon_cycles": d.start + d.len + 10,
        "cell": two_port_cell(),
        "events": events,
        "attacks": [{
            "kind": d.kind,
            "target": {"master_id": 1, "track_id": 0, "slot_id": 0},
            "knowledge": {"hopping_table": d.knowledge[0], "iolw_config": d.knowledge[1],
                          "counter_value": d.knowledge[2], "leaked_key": d.knowledge[3]},
            "physical": {"proximity": d.proximity, "device_access": d.device_access},
            "start_cycle": d.start,
            "stop_cycle": d.start + d.len,
            "channels": channels,
            "sniff": "all"
        }]
    });
    Scenario::from_json(&v.to_string()).unwrap()
}

proptest! {
    #![proptest_config(Config::with_cases(48))]

    /// Adversary frames only appear while every prerequisite holds.
    #[test]
    fn attacks_act_only_with_prerequisites(d in attack_draw()) {
        let s = attack_scenario(&d);
        let t = run_with(&s, &RunOptions { seed: Some(d.seed), level: Some(TraceLevel::Full), detection: true }).unwrap();
        let mut running = false;
        let mut ever = false;
        for e in &t.events {
            match e {
                TraceEvent::AttackStarted { .. } => { running = true; ever = true; }
                TraceEvent::PrerequisiteUnmet { missing, .. } => {
                    prop_assert!(!missing.is_empty());
                    running = false;
                }
                TraceEvent::AttackStopped { .. } => running = false,
                TraceEvent::Burst(b) if b.origin == (Origin::Adversary { attack: 0 }) => prop_assert!(running),
                TraceEvent::FrameAccepted { origin: Origin::Adversary { .. }, .. }
                | TraceEvent::PlaintextExposed { .. } => prop_assert!(running),
                _ => {}
            }
        }
        let outcome = &classify_trace(&t).unwrap()[0];
        if outcome.succeeded {
            prop_assert!(ever);
        }
        if !d.proximity && d.kind != AttackKind::CompromisedDevice {
            prop_assert!(!ever);
        }
    }

    #[test]
    fn long_enough_jamming_always_raises_an_alert(start in 5u64..60, len in 3u64..12, seed in any::<u64>()) {
        let v = json!({
            "name": "jam",
            "horizon_cycles": start + len + 10,
            "cell": two_port_cell(),
            "attacks": [{"kind": "jamming", "start_cycle": start, "stop_cycle": start + len, "channels": "all"}]
        });
        let t = run(&Scenario::from_json(&v.to_string()).unwrap(), seed).unwrap();
        let hit = t.events.iter().any(|e| matches!(e,
            TraceEvent::Alert { cycle, alert: Alert::Jamming { .. }, .. } if *cycle >= start && *cycle <= start + len));
        prop_assert!(hit);
    }
}

/// Three consecutive tag failures lock a port; nothing is accepted until it is re-keyed.
#[test]
fn lockout_and_fail_state_alerts_follow_three_auth_failures() {
    let s = Scenario::from_json(
        &std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/table1_forgery.json")).unwrap(),
    )
    .unwrap();
    for seed in 0..8 {
        let t = run_with(&s, &RunOptions { seed: Some(seed), level: Some(TraceLevel::Full), detection: true }).unwrap();
        let mut streak: BTreeMap<PortKey, u32> = BTreeMap::new();
        let mut locked: BTreeSet<PortKey> = BTreeSet::new();
        let mut lockouts = 0;
        for e in &t.events {
            match e {
                TraceEvent::FrameRejected { port: Some(p), reason: RejectReason::AuthFailure, .. } => {
                    assert!(!locked.contains(p));
                    *streak.entry(*p).or_default() += 1;
                    assert!(streak[p] <= 3, "seed {seed}");
                }
                TraceEvent::FrameAccepted { port, .. } => {
                    assert!(!locked.contains(port), "accepted while locked, seed {seed}");
                    streak.insert(*port, 0);
                }
                TraceEvent::LinkFailState { port, .. } => {
                    assert_eq!(streak.get(port), Some(&3), "seed {seed}");
                    locked.insert(*port);
                    lockouts += 1;
                }
                TraceEvent::Alert { alert: Alert::FailStateCommand { port }, .. } => {
                    assert!(locked.contains(port), "seed {seed}");
                    assert_eq!(streak.get(port), Some(&3), "seed {seed}");
                }
                TraceEvent::LinkReconfigured { port, .. } => {
                    locked.remove(port);
                    streak.insert(*port, 0);
                }
                _ => {}
            }
        }
        assert!(lockouts > 0, "seed {seed}");
    }
}

/// Measured forgery rates never exceed the advantage bound by more than 3 sigma.
#[test]
fn forgery_rate_respects_the_bound() {
    for (tau, q) in [(8u16, 1u32), (8, 3), (16, 3), (16, 1)] {
        let r = monte_carlo_forgery(tau, q, 200_000, 99).unwrap();
        let bound = advantage_bound(&AdvantageParams { tau: tau as u32, q_dec: q as u64, ..Default::default() }).unwrap();
        let n = r.samples as f64;
        let sigma = (bound * (1.0 - bound) / n).sqrt();
        assert!(r.empirical <= bound + 3.0 * sigma, "tau {tau} q {q}: {} > {bound}", r.empirical);
    }
}

#[test]
fn reports_are_reproducible() {
    let a = serde_json::to_vec(&monte_carlo_forgery(8, 3, 50_000, 5).unwrap()).unwrap();
    let b = serde_json::to_vec(&monte_carlo_forgery(8, 3, 50_000, 5).unwrap()).unwrap();
    assert_eq!(a, b);
}
