use serde::{Deserialize, Serialize};

use super::cell::{Cell, ScheduleError};
use super::ids::{SlotId, TrackKey};
use crate::hopping::{ChannelIndex, HoppingTable};

/// One exchange opportunity: the master's downlink to the slot followed by the
/// device's uplink, both on `channel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransmissionGrant {
    pub cycle_index: u64,
    pub sub_cycle_index: u8,
    pub track: TrackKey,
    pub slot_id: SlotId,
    pub channel: ChannelIndex,
    /// 0 for the initial trial, 1 and 2 for repetitions.
    pub attempt: u8,
}

#[derive(Debug, Clone)]
struct SlotProgress {
    slot: SlotId,
    attempts: u8,
    succeeded: bool,
}

/// Retry bookkeeping for one track and one cycle.
///
/// Sub-cycle 0 grants every active slot; later sub-cycles grant only the slots
/// whose previous attempt was recorded as failed, up to three transmissions.
#[derive(Debug, Clone)]
pub struct CycleSchedule {
    track: TrackKey,
    cycle: u64,
    channels: Vec<ChannelIndex>,
    max_transmissions: u8,
    slots: Vec<SlotProgress>,
}

impl CycleSchedule {
    pub fn track(&self) -> TrackKey {
        self.track
    }

    pub fn new(
        cell: &Cell,
        track: TrackKey,
        table: &HoppingTable,
        cycle: u64,
        active: impl IntoIterator<Item = SlotId>,
    ) -> Result<Self, ScheduleError> {
        let t = cell.track(track)?;
        let timing = cell.timing();
        let per_cycle = timing.sub_cycles_per_cycle as u64;
        let channels = (0..per_cycle)
            .map(|sub| t.channel_with(table, cycle * per_cycle + sub))
            .collect();
        let mut slots: Vec<SlotProgress> = active
            .into_iter()
            .map(|slot| SlotProgress {
                slot,
                attempts: 0,
                succeeded: false,
            })
            .collect();
        slots.sort_by_key(|s| s.slot);
        slots.dedup_by_key(|s| s.slot);
        Ok(CycleSchedule {
            track,
            cycle,
            channels,
            max_transmissions: timing.max_transmissions_per_cycle(),
            slots,
        })
    }

    pub fn channel(&self, sub: u8) -> ChannelIndex {
        self.channels[sub as usize]
    }

    /// Grants for `sub`. Sub-cycles past the third never carry grants.
    pub fn grants(&self, sub: u8) -> Vec<TransmissionGrant> {
        if sub >= self.max_transmissions || sub as usize >= self.channels.len() {
            return Vec::new();
        }
        self.slots
            .iter()
            .filter(|s| !s.succeeded && s.attempts == sub)
            .map(|s| TransmissionGrant {
                cycle_index: self.cycle,
                sub_cycle_index: sub,
                track: self.track,
                slot_id: s.slot,
                channel: self.channels[sub as usize],
                attempt: sub,
            })
            .collect()
    }

    /// Record the result of the slot's attempt in the current sub-cycle.
    pub fn record(&mut self, slot: SlotId, success: bool) {
        if let Some(s) = self.slots.iter_mut().find(|s| s.slot == slot) {
            if s.succeeded || s.attempts >= self.max_transmissions {
                return;
            }
            s.attempts += 1;
            s.succeeded = success;
        }
    }

    /// Slots that used all attempts without success.
    pub fn failed_slots(&self) -> Vec<SlotId> {
        self.slots
            .iter()
            .filter(|s| !s.succeeded)
            .map(|s| s.slot)
            .collect()
    }

    pub fn attempts(&self, slot: SlotId) -> u8 {
        self.slots
            .iter()
            .find(|s| s.slot == slot)
            .map_or(0, |s| s.attempts)
    }
}
