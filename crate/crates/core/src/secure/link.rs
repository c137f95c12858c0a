//! Per-port secure link: session key, counters and the lockout policy.
//!
//! Nonce layout (13 bytes):
//!
//! ```text
//! 0..4   master_id, big endian
//! 4..8   low 32 bits of device_uid, big endian
//! 8      direction: 0x00 downlink, 0x01 uplink
//! 9..13  frame counter, big endian
//! ```
//!
//! The direction byte keeps the two ends of one link from ever sharing a nonce.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ccm::{AesCcm, FRAME_NONCE_LEN, KEY_LEN};
use super::kdf::{derive_session_key, MIN_SECRET_LEN};
use super::TagLength;
use crate::protocol::{DeviceUid, Direction, MasterId};

/// Consecutive authentication failures that put a link into FailState:
/// the initial trial plus two repetitions.
pub const DEFAULT_LOCKOUT_THRESHOLD: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Master,
    Device,
}

impl Role {
    pub fn tx_direction(self) -> Direction {
        match self {
            Role::Master => Direction::Downlink,
            Role::Device => Direction::Uplink,
        }
    }

    pub fn peer(self) -> Role {
        match self {
            Role::Master => Role::Device,
            Role::Device => Role::Master,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkState {
    Active,
    FailState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedFrame {
    pub counter: u32,
    pub ciphertext: Vec<u8>,
    pub tag: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("shared secret of {len} bytes is shorter than 16")]
    WeakSecret { len: usize },
    #[error("link is in FailState")]
    LinkInFailState,
    #[error("frame counter exhausted")]
    CounterExhausted,
    #[error("link is not in FailState")]
    NotInFailState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum OpenError {
    #[error("authentication failure")]
    AuthFailure,
    #[error("replayed counter {counter} (high-water mark {highwater})")]
    ReplayRejected { counter: u32, highwater: u32 },
    #[error("link is in FailState")]
    LinkInFailState,
}

pub fn frame_nonce(
    master: MasterId,
    device: DeviceUid,
    direction: Direction,
    counter: u32,
) -> [u8; FRAME_NONCE_LEN] {
    let mut n = [0u8; FRAME_NONCE_LEN];
    n[0..4].copy_from_slice(&master.0.to_be_bytes());
    n[4..8].copy_from_slice(&(device.0 as u32).to_be_bytes());
    n[8] = match direction {
        Direction::Downlink => 0x00,
        Direction::Uplink => 0x01,
    };
    n[9..13].copy_from_slice(&counter.to_be_bytes());
    n
}

/// Seal with an explicit key and counter, bypassing link state. This is what a
/// holder of a leaked key can do.
#[allow(clippy::too_many_arguments)]
pub fn seal_with_key(
    key: &[u8; KEY_LEN],
    master: MasterId,
    device: DeviceUid,
    direction: Direction,
    counter: u32,
    header: &[u8],
    payload: &[u8],
    tau: TagLength,
) -> SealedFrame {
    let nonce = frame_nonce(master, device, direction, counter);
    let (ciphertext, tag) = AesCcm::new(key)
        .seal(&nonce, header, payload, tau.bytes())
        .expect("tag length within 1..=16");
    SealedFrame {
        counter,
        ciphertext,
        tag,
    }
}

/// One end of a device-master link.
#[derive(Debug, Clone)]
pub struct SecureLink {
    key: [u8; KEY_LEN],
    ccm: AesCcm,
    tau: TagLength,
    role: Role,
    master_id: MasterId,
    device_uid: DeviceUid,
    tx_counter: u32,
    rx_highwater: u32,
    consecutive_auth_failures: u8,
    lockout_threshold: u8,
    state: LinkState,
}

/// Derive the session key and return a fresh, Active link end.
pub fn establish_link(
    shared_secret: &[u8],
    master_id: MasterId,
    device_uid: DeviceUid,
    tau: TagLength,
    role: Role,
) -> Result<SecureLink, LinkError> {
    if shared_secret.len() < MIN_SECRET_LEN {
        return Err(LinkError::WeakSecret {
            len: shared_secret.len(),
        });
    }
    let key = derive_session_key(shared_secret, master_id, device_uid);
    Ok(SecureLink {
        key,
        ccm: AesCcm::new(&key),
        tau,
        role,
        master_id,
        device_uid,
        tx_counter: 0,
        rx_highwater: 0,
        consecutive_auth_failures: 0,
        lockout_threshold: DEFAULT_LOCKOUT_THRESHOLD,
        state: LinkState::Active,
    })
}

impl SecureLink {
    pub fn with_lockout_threshold(mut self, threshold: u8) -> Self {
        self.lockout_threshold = threshold.max(1);
        self
    }

    pub fn key(&self) -> &[u8; KEY_LEN] {
        &self.key
    }

    pub fn tau(&self) -> TagLength {
        self.tau
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn master_id(&self) -> MasterId {
        self.master_id
    }

    pub fn device_uid(&self) -> DeviceUid {
        self.device_uid
    }

    pub fn state(&self) -> LinkState {
        self.state
    }

    pub fn tx_counter(&self) -> u32 {
        self.tx_counter
    }

    pub fn rx_highwater(&self) -> u32 {
        self.rx_highwater
    }

    pub fn consecutive_auth_failures(&self) -> u8 {
        self.consecutive_auth_failures
    }

    /// Encrypt `payload` under the next counter value. The first frame carries counter 1.
    pub fn seal(&mut self, header: &[u8], payload: &[u8]) -> Result<SealedFrame, LinkError> {
        if self.state == LinkState::FailState {
            return Err(LinkError::LinkInFailState);
        }
        let counter = self
            .tx_counter
            .checked_add(1)
            .ok_or(LinkError::CounterExhausted)?;
        self.tx_counter = counter;
        let nonce = frame_nonce(
            self.master_id,
            self.device_uid,
            self.role.tx_direction(),
            counter,
        );
        let (ciphertext, tag) = self
            .ccm
            .seal(&nonce, header, payload, self.tau.bytes())
            .expect("tag length within 1..=16");
        Ok(SealedFrame {
            counter,
            ciphertext,
            tag,
        })
    }

    /// Verify and decrypt a frame sent by the peer.
    pub fn open(
        &mut self,
        counter: u32,
        header: &[u8],
        ciphertext: &[u8],
        tag: &[u8],
    ) -> Result<Vec<u8>, OpenError> {
        if self.state == LinkState::FailState {
            return Err(OpenError::LinkInFailState);
        }
        let nonce = frame_nonce(
            self.master_id,
            self.device_uid,
            self.role.peer().tx_direction(),
            counter,
        );
        let verified = if tag.len() == self.tau.bytes() {
            self.ccm.open(&nonce, header, ciphertext, tag).ok()
        } else {
            None
        };
        match verified {
            None => {
                self.consecutive_auth_failures = self.consecutive_auth_failures.saturating_add(1);
                if self.consecutive_auth_failures >= self.lockout_threshold {
                    self.state = LinkState::FailState;
                }
                Err(OpenError::AuthFailure)
            }
            Some(_) if counter <= self.rx_highwater => Err(OpenError::ReplayRejected {
                counter,
                highwater: self.rx_highwater,
            }),
            Some(payload) => {
                self.rx_highwater = counter;
                self.consecutive_auth_failures = 0;
                Ok(payload)
            }
        }
    }

    /// Lock the link on external command, as the master's anomaly check does.
    pub fn force_fail_state(&mut self) {
        self.state = LinkState::FailState;
    }

    /// Leave FailState with a key derived from a freshly paired secret.
    pub fn reconfigure(&mut self, new_secret: &[u8]) -> Result<(), LinkError> {
        if self.state != LinkState::FailState {
            return Err(LinkError::NotInFailState);
        }
        let fresh = establish_link(new_secret, self.master_id, self.device_uid, self.tau, self.role)?
            .with_lockout_threshold(self.lockout_threshold);
        *self = fresh;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SECRET: [u8; 16] = [0x42; 16];

    fn pair(tau: TagLength) -> (SecureLink, SecureLink) {
        let m = establish_link(&SECRET, MasterId(0x10), DeviceUid(0xABCD), tau, Role::Master).unwrap();
        let d = establish_link(&SECRET, MasterId(0x10), DeviceUid(0xABCD), tau, Role::Device).unwrap();
        (m, d)
    }

    #[test]
    fn weak_secret() {
        assert_eq!(
            establish_link(&[0; 8], MasterId(1), DeviceUid(1), TagLength::T32, Role::Master)
                .unwrap_err(),
            LinkError::WeakSecret { len: 8 }
        );
    }

    #[test]
    fn seal_then_open() {
        let (mut m, mut d) = pair(TagLength::T32);
        let f = d.seal(&[0x80], b"sensor").unwrap();
        assert_eq!(f.counter, 1);
        assert_eq!(f.tag.len(), 4);
        assert_eq!(m.open(f.counter, &[0x80], &f.ciphertext, &f.tag).unwrap(), b"sensor");
        assert_eq!(m.rx_highwater(), 1);
    }

    #[test]
    fn identical_payloads_give_distinct_ciphertexts() {
        let (_, mut d) = pair(TagLength::T32);
        let a = d.seal(&[0x80], b"same").unwrap();
        let b = d.seal(&[0x80], b"same").unwrap();
        assert_ne!(a.ciphertext, b.ciphertext);
        assert_ne!(a.counter, b.counter);
    }

    #[test]
    fn directions_do_not_cross() {
        let (mut m, _) = pair(TagLength::T32);
        let f = m.seal(&[0x00], b"down").unwrap();
        // The master must not accept its own downlink reflected back.
        assert_eq!(
            m.open(f.counter, &[0x00], &f.ciphertext, &f.tag),
            Err(OpenError::AuthFailure)
        );
    }

    #[test]
    fn replay_rejected() {
        let (mut m, mut d) = pair(TagLength::T32);
        let f = d.seal(&[0x80], b"x").unwrap();
        m.open(f.counter, &[0x80], &f.ciphertext, &f.tag).unwrap();
        assert_eq!(
            m.open(f.counter, &[0x80], &f.ciphertext, &f.tag),
            Err(OpenError::ReplayRejected { counter: 1, highwater: 1 })
        );
        assert_eq!(m.state(), LinkState::Active);
    }

    #[test]
    fn header_is_authenticated() {
        let (mut m, mut d) = pair(TagLength::T32);
        let f = d.seal(&[0x80], b"x").unwrap();
        assert_eq!(
            m.open(f.counter, &[0xA0], &f.ciphertext, &f.tag),
            Err(OpenError::AuthFailure)
        );
    }

    #[test]
    fn lockout_after_three_consecutive_failures() {
        let (mut m, mut d) = pair(TagLength::T32);
        let good = d.seal(&[0x80], b"ok").unwrap();
        for i in 1..=3 {
            assert_eq!(m.open(9, &[0x80], b"zz", &[0, 0, 0, 0]), Err(OpenError::AuthFailure));
            let expected = if i < 3 { LinkState::Active } else { LinkState::FailState };
            assert_eq!(m.state(), expected);
        }
        assert_eq!(
            m.open(good.counter, &[0x80], &good.ciphertext, &good.tag),
            Err(OpenError::LinkInFailState)
        );
        assert_eq!(m.seal(&[0], b"").unwrap_err(), LinkError::LinkInFailState);
    }

    #[test]
    fn success_resets_failure_count() {
        let (mut m, mut d) = pair(TagLength::T32);
        for _ in 0..10 {
            m.open(9, &[0x80], b"zz", &[0, 0, 0, 0]).unwrap_err();
            m.open(9, &[0x80], b"zz", &[0, 0, 0, 0]).unwrap_err();
            let f = d.seal(&[0x80], b"ok").unwrap();
            m.open(f.counter, &[0x80], &f.ciphertext, &f.tag).unwrap();
            assert_eq!(m.consecutive_auth_failures(), 0);
        }
        assert_eq!(m.state(), LinkState::Active);
    }

    #[test]
    fn flipped_ciphertext_bit() {
        let (mut m, mut d) = pair(TagLength::T64);
        let mut f = d.seal(&[0x80], b"ab").unwrap();
        f.ciphertext[0] ^= 1;
        assert_eq!(
            m.open(f.counter, &[0x80], &f.ciphertext, &f.tag),
            Err(OpenError::AuthFailure)
        );
    }

    #[test]
    fn counter_exhaustion() {
        let (_, mut d) = pair(TagLength::T32);
        d.tx_counter = u32::MAX - 1;
        assert_eq!(d.seal(&[0], b"").unwrap().counter, u32::MAX);
        assert_eq!(d.seal(&[0], b"").unwrap_err(), LinkError::CounterExhausted);
    }

    #[test]
    fn reconfigure_requires_fail_state_and_changes_key() {
        let (mut m, mut d) = pair(TagLength::T32);
        assert_eq!(m.reconfigure(&[7; 16]), Err(LinkError::NotInFailState));
        let old = d.seal(&[0x80], b"old").unwrap();
        m.force_fail_state();
        m.reconfigure(&[7; 16]).unwrap();
        assert_eq!(m.state(), LinkState::Active);
        assert_eq!(m.rx_highwater(), 0);
        assert_eq!(
            m.open(old.counter, &[0x80], &old.ciphertext, &old.tag),
            Err(OpenError::AuthFailure)
        );
    }

    #[test]
    fn leaked_key_seal_is_accepted() {
        let (mut m, d) = pair(TagLength::T32);
        let f = seal_with_key(
            d.key(),
            MasterId(0x10),
            DeviceUid(0xABCD),
            Direction::Uplink,
            5,
            &[0x80],
            b"forged",
            TagLength::T32,
        );
        assert_eq!(m.open(5, &[0x80], &f.ciphertext, &f.tag).unwrap(), b"forged");
    }

    #[derive(Debug, Clone)]
    enum Op {
        Fresh,
        Replay(usize),
        Garbage,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            3 => Just(Op::Fresh),
            2 => any::<usize>().prop_map(Op::Replay),
            1 => Just(Op::Garbage),
        ]
    }

    proptest! {
        #[test]
        fn roundtrip(payload in proptest::collection::vec(any::<u8>(), 0..10), header in any::<u8>()) {
            let (mut m, mut d) = pair(TagLength::T32);
            let f = d.seal(&[header], &payload).unwrap();
            prop_assert_eq!(m.open(f.counter, &[header], &f.ciphertext, &f.tag).unwrap(), payload);
        }

        #[test]
        fn counter_safety_and_lockout(ops in proptest::collection::vec(op(), 1..60)) {
            let (mut m, mut d) = pair(TagLength::T32);
            let mut sent: Vec<SealedFrame> = Vec::new();
            let mut max_accepted = 0u32;
            let mut consecutive = 0u32;
            for o in ops {
                let before = m.state();
                let frame = match o {
                    Op::Fresh => {
                        let f = d.seal(&[0x80], b"pv").unwrap();
                        sent.push(f.clone());
                        f
                    }
                    Op::Replay(i) if !sent.is_empty() => sent[i % sent.len()].clone(),
                    _ => SealedFrame { counter: max_accepted + 1, ciphertext: b"pv".to_vec(), tag: vec![0xEE; 4] },
                };
                match m.open(frame.counter, &[0x80], &frame.ciphertext, &frame.tag) {
                    Ok(_) => {
                        prop_assert_eq!(before, LinkState::Active);
                        prop_assert!(frame.counter > max_accepted);
                        max_accepted = frame.counter;
                        consecutive = 0;
                    }
                    Err(OpenError::AuthFailure) => {
                        consecutive += 1;
                        prop_assert!(consecutive <= 3);
                        prop_assert_eq!(m.state() == LinkState::FailState, consecutive == 3);
                    }
                    Err(OpenError::ReplayRejected { .. }) => {}
                    Err(OpenError::LinkInFailState) => prop_assert_eq!(before, LinkState::FailState),
                }
                prop_assert_eq!(m.rx_highwater(), max_accepted);
            }
        }
    }
}
