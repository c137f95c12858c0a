//! Discrete-event radio medium.
//!
//! Each sub-cycle is split into micro-positions. The first [`WINDOW_POSITIONS`]
//! form an open window used by configuration traffic and by anything not bound
//! to a slot; slot `s` then owns position `WINDOW_POSITIONS + 2s` for its
//! downlink and the following position for its uplink. Two bursts collide when
//! they share (sub-cycle, position, channel).

mod safety;
mod sim;
mod trace;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::hopping::ChannelIndex;
use crate::protocol::{DeviceUid, Direction, MasterId};

pub use safety::{SafetyWatchdog, WatchdogTransition};
pub use sim::{run, run_with, RunOptions, SimError, Simulator};
pub use trace::{
    Alert, AttackInfo, PortStats, RejectReason, SimSummary, SimTrace, TraceEvent, TraceLevel,
};

pub const WINDOW_POSITIONS: u8 = 16;

pub fn downlink_position(slot: u8) -> u8 {
    WINDOW_POSITIONS + 2 * slot
}

pub fn uplink_position(slot: u8) -> u8 {
    WINDOW_POSITIONS + 2 * slot + 1
}

/// Who put a burst on the air. Ground truth for classification; receivers never see it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "actor", rename_all = "snake_case")]
pub enum Origin {
    Master { master_id: MasterId },
    Device { device_uid: DeviceUid },
    Adversary { attack: usize },
    /// Interference from the medium's jam plan.
    Environment,
}

impl Origin {
    pub fn is_adversary(&self) -> bool {
        matches!(self, Origin::Adversary { .. })
    }

    pub fn is_legitimate(&self) -> bool {
        matches!(self, Origin::Master { .. } | Origin::Device { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BurstKind {
    Data,
    Config,
    /// Carrier energy without a frame.
    Jam,
}

/// One on-air transmission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Burst {
    pub id: u64,
    pub sub_cycle: u64,
    pub position: u8,
    pub channel: ChannelIndex,
    pub access_address: u32,
    pub direction: Direction,
    pub kind: BurstKind,
    pub origin: Origin,
    #[serde(with = "hex::serde")]
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DeliveryOutcome {
    Delivered { bit_flips: u32 },
    Collided,
    Jammed,
    NoListener,
}

impl DeliveryOutcome {
    pub fn is_delivered(&self) -> bool {
        matches!(self, DeliveryOutcome::Delivered { .. })
    }
}

/// Binary symmetric channel.
#[derive(Debug, Clone, Copy)]
pub struct ChannelModel {
    bsc_p: f64,
    skip: Option<Geometric>,
}

impl ChannelModel {
    pub fn new(bsc_p: f64) -> Result<Self, SimError> {
        if !(0.0..=0.5).contains(&bsc_p) || bsc_p.is_nan() {
            return Err(SimError::InvalidScenario(format!(
                "bsc_p must lie in [0, 0.5], got {bsc_p}"
            )));
        }
        let skip = if bsc_p > 0.0 && bsc_p < 0.5 {
            Some(Geometric::new(bsc_p).expect("p in (0, 0.5)"))
        } else {
            None
        };
        Ok(ChannelModel { bsc_p, skip })
    }

    pub fn bsc_p(&self) -> f64 {
        self.bsc_p
    }

    /// Flip each bit independently with probability `bsc_p`; returns the flip count.
    pub fn apply<R: Rng + ?Sized>(&self, bytes: &mut [u8], rng: &mut R) -> u32 {
        let bits = bytes.len() as u64 * 8;
        if self.bsc_p == 0.0 || bits == 0 {
            return 0;
        }
        if self.bsc_p >= 0.5 {
            let mut flips = 0;
            for b in bytes.iter_mut() {
                let mask: u8 = rng.gen();
                *b ^= mask;
                flips += mask.count_ones();
            }
            return flips;
        }
        let skip = self.skip.expect("set for 0 < p < 0.5");
        let mut flips = 0;
        let mut pos = skip.sample(rng);
        while pos < bits {
            bytes[(pos / 8) as usize] ^= 0x80 >> (pos % 8);
            flips += 1;
            pos += 1 + skip.sample(rng);
        }
        flips
    }
}

/// Bit-flip probability under which an exchange of `bits` bits is hit by at least
/// one error with probability `q`.
pub fn bsc_p_for_trial_failure(q: f64, bits: u32) -> f64 {
    if bits == 0 {
        return 0.0;
    }
    1.0 - (1.0 - q).powf(1.0 / bits as f64)
}

/// Physical outcome of the bursts sharing one micro-position: jamming first, then
/// collisions. Delivered bursts still need a listener; the caller decides.
pub fn resolve_position(
    bursts: &[Burst],
    jammed: &dyn Fn(ChannelIndex) -> bool,
) -> Vec<DeliveryOutcome> {
    let mut per_channel: BTreeMap<ChannelIndex, usize> = BTreeMap::new();
    for b in bursts.iter().filter(|b| b.kind != BurstKind::Jam) {
        *per_channel.entry(b.channel).or_default() += 1;
    }
    bursts
        .iter()
        .map(|b| {
            if b.kind == BurstKind::Jam || jammed(b.channel) {
                DeliveryOutcome::Jammed
            } else if per_channel[&b.channel] > 1 {
                DeliveryOutcome::Collided
            } else {
                DeliveryOutcome::Delivered { bit_flips: 0 }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn burst(id: u64, ch: u8) -> Burst {
        Burst {
            id,
            sub_cycle: 0,
            position: 16,
            channel: ChannelIndex::new(ch).unwrap(),
            access_address: 1,
            direction: Direction::Downlink,
            kind: BurstKind::Data,
            origin: Origin::Master { master_id: MasterId(1) },
            bytes: vec![0; 2],
        }
    }

    #[test]
    fn collision_and_jamming() {
        let bursts = vec![burst(0, 10), burst(1, 10), burst(2, 11)];
        let out = resolve_position(&bursts, &|_| false);
        assert_eq!(
            out,
            vec![
                DeliveryOutcome::Collided,
                DeliveryOutcome::Collided,
                DeliveryOutcome::Delivered { bit_flips: 0 }
            ]
        );
        let out = resolve_position(&bursts, &|c| c.get() == 11);
        assert_eq!(out[2], DeliveryOutcome::Jammed);
    }

    #[test]
    fn bsc_rate_matches_p() {
        let ch = ChannelModel::new(0.01).unwrap();
        let mut rng = rng::stream(3, "t");
        let mut flips = 0u64;
        let n = 20_000u64;
        for _ in 0..n {
            let mut b = [0u8; 16];
            let f = ch.apply(&mut b, &mut rng);
            assert_eq!(f, b.iter().map(|x| x.count_ones()).sum::<u32>());
            flips += f as u64;
        }
        let bits = (n * 128) as f64;
        let mean = flips as f64 / bits;
        let sd = (0.01 * 0.99 / bits).sqrt();
        assert!((mean - 0.01).abs() < 4.0 * sd, "{mean}");
    }

    #[test]
    fn bsc_extremes() {
        let mut rng = rng::stream(3, "t");
        let mut b = [0u8; 8];
        assert_eq!(ChannelModel::new(0.0).unwrap().apply(&mut b, &mut rng), 0);
        let half = ChannelModel::new(0.5).unwrap();
        let flips: u32 = (0..1000).map(|_| half.apply(&mut [0u8; 8], &mut rng)).sum();
        assert!((flips as f64 / 64_000.0 - 0.5).abs() < 0.02);
        assert!(ChannelModel::new(0.6).is_err());
    }

    #[test]
    fn trial_failure_conversion() {
        let p = bsc_p_for_trial_failure(0.1, 48);
        assert!((1.0 - (1.0 - p).powi(48) - 0.1).abs() < 1e-12);
    }
}
