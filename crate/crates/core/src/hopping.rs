//! Frequency hopping tables.
//!
//! A table is a seeded permutation of the usable 1 MHz channels with a minimum
//! carrier distance between consecutive entries, including the wrap from the
//! last entry back to the first. The generator is a seeded shuffle followed by
//! a Warnsdorff-style greedy ordering; failed orderings restart with a new
//! sub-seed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Base carrier frequency in MHz.
pub const BASE_FREQUENCY_MHZ: u32 = 2400;
/// Number of 1 MHz channels in the band.
pub const CHANNEL_COUNT: u8 = 80;
/// Channels carrying configuration traffic during ServiceMode.
pub const CONFIG_CHANNELS: [ChannelIndex; 2] = [ChannelIndex(1), ChannelIndex(80)];
/// Guard channels next to the configuration channels.
pub const GUARD_CHANNELS: [ChannelIndex; 2] = [ChannelIndex(2), ChannelIndex(78)];
/// First and last channel usable for cyclic data.
pub const FIRST_DATA_CHANNEL: u8 = 3;
pub const LAST_DATA_CHANNEL: u8 = 77;
/// A table needs at least this many channels.
pub const MIN_USABLE_CHANNELS: usize = 8;
pub const DEFAULT_MIN_HOP_DISTANCE_MHZ: u32 = 24;
const MAX_RESTARTS: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HoppingError {
    #[error("channel index {0} outside 1..=80")]
    ChannelOutOfRange(i64),
    #[error("only {usable} usable channels remain, at least {MIN_USABLE_CHANNELS} required")]
    TooFewChannels { usable: usize },
    #[error("no ordering of {usable} channels satisfies a {min_hop_distance_mhz} MHz hop distance")]
    HopDistanceUnsatisfiable {
        usable: usize,
        min_hop_distance_mhz: u32,
    },
    #[error("invalid blocklist entry {0:?}")]
    BadBlocklistEntry(String),
}

impl HoppingError {
    /// Both failure modes of table generation mean "not enough channels to work with".
    pub fn is_too_few_channels(&self) -> bool {
        matches!(
            self,
            HoppingError::TooFewChannels { .. } | HoppingError::HopDistanceUnsatisfiable { .. }
        )
    }
}

/// A 1 MHz channel number `n`, carrier at 2400 + n MHz.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(try_from = "u8", into = "u8")]
pub struct ChannelIndex(u8);

impl ChannelIndex {
    pub fn new(n: u8) -> Result<Self, HoppingError> {
        if (1..=CHANNEL_COUNT).contains(&n) {
            Ok(ChannelIndex(n))
        } else {
            Err(HoppingError::ChannelOutOfRange(n as i64))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn is_config(self) -> bool {
        CONFIG_CHANNELS.contains(&self)
    }

    pub fn is_guard(self) -> bool {
        GUARD_CHANNELS.contains(&self)
    }

    /// Every channel of the band, 1..=80.
    pub fn all() -> impl Iterator<Item = ChannelIndex> {
        (1..=CHANNEL_COUNT).map(ChannelIndex)
    }
}

impl TryFrom<u8> for ChannelIndex {
    type Error = HoppingError;
    fn try_from(n: u8) -> Result<Self, Self::Error> {
        ChannelIndex::new(n)
    }
}

impl From<ChannelIndex> for u8 {
    fn from(c: ChannelIndex) -> u8 {
        c.0
    }
}

impl fmt::Display for ChannelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

/// Carrier frequency of channel `n` in MHz.
pub fn carrier_frequency(n: i64) -> Result<u32, HoppingError> {
    if (1..=CHANNEL_COUNT as i64).contains(&n) {
        Ok(BASE_FREQUENCY_MHZ + n as u32)
    } else {
        Err(HoppingError::ChannelOutOfRange(n))
    }
}

impl ChannelIndex {
    pub fn carrier_mhz(self) -> u32 {
        BASE_FREQUENCY_MHZ + self.0 as u32
    }
}

/// One element of a blocklist in its JSON form: a channel or an inclusive range "a-b".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum BlocklistEntry {
    Channel(u8),
    Range(String),
}

/// Set of blocked channels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BlocklistEntry>", into = "Vec<BlocklistEntry>")]
pub struct Blocklist {
    blocked: BTreeSet<ChannelIndex>,
}

impl JsonSchema for Blocklist {
    fn schema_name() -> String {
        "Blocklist".to_owned()
    }

    fn json_schema(gen: &mut schemars::gen::SchemaGenerator) -> schemars::schema::Schema {
        <Vec<BlocklistEntry>>::json_schema(gen)
    }
}

impl Blocklist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_channels<I: IntoIterator<Item = ChannelIndex>>(it: I) -> Self {
        Blocklist {
            blocked: it.into_iter().collect(),
        }
    }

    /// Blocks the inclusive range `lo..=hi`.
    pub fn range(lo: u8, hi: u8) -> Result<Self, HoppingError> {
        let mut b = Blocklist::new();
        b.block_range(lo, hi)?;
        Ok(b)
    }

    pub fn block(&mut self, c: ChannelIndex) {
        self.blocked.insert(c);
    }

    pub fn block_range(&mut self, lo: u8, hi: u8) -> Result<(), HoppingError> {
        if lo > hi {
            return Err(HoppingError::BadBlocklistEntry(format!("{lo}-{hi}")));
        }
        for n in lo..=hi {
            self.blocked.insert(ChannelIndex::new(n)?);
        }
        Ok(())
    }

    pub fn contains(&self, c: ChannelIndex) -> bool {
        self.blocked.contains(&c)
    }

    pub fn iter(&self) -> impl Iterator<Item = ChannelIndex> + '_ {
        self.blocked.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.blocked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty()
    }

    /// Data channels left after removing configuration, guard, f79 and blocked channels.
    pub fn usable_channels(&self) -> Vec<ChannelIndex> {
        (FIRST_DATA_CHANNEL..=LAST_DATA_CHANNEL)
            .map(ChannelIndex)
            .filter(|c| !self.blocked.contains(c))
            .collect()
    }
}

impl FromStr for Blocklist {
    type Err = HoppingError;

    /// Parses a JSON array such as `[5, "3-25"]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let entries: Vec<BlocklistEntry> = serde_json::from_str(s)
            .map_err(|e| HoppingError::BadBlocklistEntry(e.to_string()))?;
        Blocklist::try_from(entries)
    }
}

impl TryFrom<Vec<BlocklistEntry>> for Blocklist {
    type Error = HoppingError;

    fn try_from(entries: Vec<BlocklistEntry>) -> Result<Self, Self::Error> {
        let mut b = Blocklist::new();
        for e in entries {
            match e {
                BlocklistEntry::Channel(n) => b.block(ChannelIndex::new(n)?),
                BlocklistEntry::Range(s) => {
                    let (lo, hi) = s
                        .split_once('-')
                        .ok_or_else(|| HoppingError::BadBlocklistEntry(s.clone()))?;
                    let lo: u8 = lo
                        .trim()
                        .parse()
                        .map_err(|_| HoppingError::BadBlocklistEntry(s.clone()))?;
                    let hi: u8 = hi
                        .trim()
                        .parse()
                        .map_err(|_| HoppingError::BadBlocklistEntry(s.clone()))?;
                    b.block_range(lo, hi)?;
                }
            }
        }
        Ok(b)
    }
}

impl From<Blocklist> for Vec<BlocklistEntry> {
    fn from(b: Blocklist) -> Self {
        // Contiguous runs are written back as ranges.
        let mut out = Vec::new();
        let mut iter = b.blocked.iter().map(|c| c.0).peekable();
        while let Some(start) = iter.next() {
            let mut end = start;
            while iter.peek() == Some(&(end + 1)) {
                end = iter.next().expect("peeked");
            }
            if end == start {
                out.push(BlocklistEntry::Channel(start));
            } else {
                out.push(BlocklistEntry::Range(format!("{start}-{end}")));
            }
        }
        out
    }
}

/// Per-track channel sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoppingTable {
    sequence: Vec<ChannelIndex>,
    seed: u32,
    min_hop_distance_mhz: u32,
    generation: u32,
    blocklist: Blocklist,
}

impl HoppingTable {
    pub fn sequence(&self) -> &[ChannelIndex] {
        &self.sequence
    }

    pub fn seed(&self) -> u32 {
        self.seed
    }

    pub fn min_hop_distance_mhz(&self) -> u32 {
        self.min_hop_distance_mhz
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn blocklist(&self) -> &Blocklist {
        &self.blocklist
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Channel for the given sub-cycle counter; the sequence repeats cyclically.
    pub fn next_channel(&self, sub_cycle_counter: u64) -> ChannelIndex {
        let idx = (sub_cycle_counter % self.sequence.len() as u64) as usize;
        self.sequence[idx]
    }

    /// Plaintext wire form used when the table is distributed: generation (4 bytes BE)
    /// followed by one byte per channel.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.sequence.len());
        out.extend_from_slice(&self.generation.to_be_bytes());
        out.extend(self.sequence.iter().map(|c| c.0));
        out
    }

    /// Just the channel bytes, the part an eavesdropper needs to follow the hops.
    pub fn sequence_bytes(&self) -> Vec<u8> {
        self.sequence.iter().map(|c| c.0).collect()
    }

    /// Smallest carrier distance between cyclically consecutive entries.
    pub fn min_cyclic_hop_mhz(&self) -> u32 {
        let n = self.sequence.len();
        (0..n)
            .map(|i| hop(self.sequence[i], self.sequence[(i + 1) % n]))
            .min()
            .unwrap_or(0)
    }
}

fn hop(a: ChannelIndex, b: ChannelIndex) -> u32 {
    (a.0 as i32 - b.0 as i32).unsigned_abs()
}

/// Build the table for `seed` (normally the master ID) at generation 0.
pub fn generate_table(
    seed: u32,
    blocklist: &Blocklist,
    min_hop_distance_mhz: u32,
) -> Result<HoppingTable, HoppingError> {
    generate_generation(seed, blocklist, min_hop_distance_mhz, 0)
}

/// Build the table for a given generation; the shuffle seed is `seed ^ generation`.
pub fn generate_generation(
    seed: u32,
    blocklist: &Blocklist,
    min_hop_distance_mhz: u32,
    generation: u32,
) -> Result<HoppingTable, HoppingError> {
    let usable = blocklist.usable_channels();
    if usable.len() < MIN_USABLE_CHANNELS {
        return Err(HoppingError::TooFewChannels {
            usable: usable.len(),
        });
    }
    let effective_seed = seed ^ generation;
    for restart in 0..MAX_RESTARTS {
        let mut rng = table_rng(effective_seed, restart);
        let mut shuffled = usable.clone();
        shuffled.shuffle(&mut rng);
        if let Some(sequence) = order_with_min_hop(&shuffled, min_hop_distance_mhz) {
            return Ok(HoppingTable {
                sequence,
                seed,
                min_hop_distance_mhz,
                generation,
                blocklist: blocklist.clone(),
            });
        }
    }
    Err(HoppingError::HopDistanceUnsatisfiable {
        usable: usable.len(),
        min_hop_distance_mhz,
    })
}

/// New table for an adaptive hopping-table change: generation + 1, same seed.
pub fn adaptive_switch(
    current: &HoppingTable,
    new_blocklist: &Blocklist,
) -> Result<HoppingTable, HoppingError> {
    generate_generation(
        current.seed,
        new_blocklist,
        current.min_hop_distance_mhz,
        current.generation + 1,
    )
}

fn table_rng(seed: u32, restart: u32) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..4].copy_from_slice(&seed.to_be_bytes());
    key[4..8].copy_from_slice(&restart.to_be_bytes());
    key[8..16].copy_from_slice(b"HOPTABLE");
    ChaCha12Rng::from_seed(key)
}

/// Greedy ordering: start from the first shuffled channel, always move to the
/// admissible channel with the fewest admissible successors left (ties broken by
/// shuffled order). Returns `None` if stuck or if the wrap-around hop is too short.
fn order_with_min_hop(shuffled: &[ChannelIndex], min_hop: u32) -> Option<Vec<ChannelIndex>> {
    let n = shuffled.len();
    let ok = |a: ChannelIndex, b: ChannelIndex| hop(a, b) >= min_hop;
    let mut used = vec![false; n];
    let mut out = Vec::with_capacity(n);
    let first = 0usize;
    used[first] = true;
    out.push(shuffled[first]);
    let mut cur = shuffled[first];
    for step in 1..n {
        let remaining_after = n - step - 1;
        let mut best: Option<(usize, usize)> = None;
        for (i, &cand) in shuffled.iter().enumerate() {
            if used[i] || !ok(cur, cand) {
                continue;
            }
            // The final entry must also reach back to the first.
            if remaining_after == 0 && !ok(cand, shuffled[first]) {
                continue;
            }
            let degree = shuffled
                .iter()
                .enumerate()
                .filter(|&(j, &other)| j != i && !used[j] && ok(cand, other))
                .count();
            // A dead end is only acceptable for the very last pick.
            if degree == 0 && remaining_after > 0 {
                continue;
            }
            if best.is_none_or(|(_, d)| degree < d) {
                best = Some((i, degree));
            }
        }
        let (i, _) = best?;
        used[i] = true;
        cur = shuffled[i];
        out.push(cur);
    }
    if n > 1 && !ok(*out.last()?, out[0]) {
        return None;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carrier_frequencies() {
        assert_eq!(carrier_frequency(3), Ok(2403));
        assert_eq!(carrier_frequency(78), Ok(2478));
        assert_eq!(carrier_frequency(0), Err(HoppingError::ChannelOutOfRange(0)));
        assert_eq!(carrier_frequency(81), Err(HoppingError::ChannelOutOfRange(81)));
    }

    #[test]
    fn default_usable_set_is_3_to_77() {
        // Enumerate from the channel rules directly: drop config (1, 80), guard (2, 78)
        // and 79, which the default table omits.
        let expected: Vec<u8> = (1..=80u8)
            .filter(|n| ![1, 2, 78, 79, 80].contains(n))
            .collect();
        assert_eq!(expected.len(), 75);
        let t = generate_table(0x1234, &Blocklist::new(), 24).unwrap();
        let mut got: Vec<u8> = t.sequence().iter().map(|c| c.get()).collect();
        got.sort_unstable();
        assert_eq!(got, expected);
        assert!(t.min_cyclic_hop_mhz() >= 24);
    }

    #[test]
    fn wlan_channel_one_blocklist() {
        let bl: Blocklist = "[\"3-25\"]".parse().unwrap();
        let t = generate_table(77, &bl, 24).unwrap();
        assert!(t.sequence().iter().all(|c| c.get() > 25));
        assert_eq!(t.len(), 52);
        assert!(t.min_cyclic_hop_mhz() >= 24);
    }

    #[test]
    fn too_few_channels() {
        let bl = Blocklist::range(3, 72).unwrap();
        assert_eq!(
            generate_table(1, &bl, 1),
            Err(HoppingError::TooFewChannels { usable: 5 })
        );
        // Eight channels packed into 7 MHz cannot be 24 MHz apart.
        let bl = Blocklist::range(3, 69).unwrap();
        let err = generate_table(1, &bl, 24).unwrap_err();
        assert!(err.is_too_few_channels());
    }

    #[test]
    fn next_channel_wraps() {
        let t = generate_table(5, &Blocklist::new(), 24).unwrap();
        assert_eq!(t.next_channel(0), t.sequence()[0]);
        assert_eq!(t.next_channel(t.len() as u64), t.sequence()[0]);
        assert_eq!(t.next_channel(t.len() as u64 + 3), t.sequence()[3]);
    }

    #[test]
    fn switch_keeps_channel_set_and_bumps_generation() {
        let t = generate_table(9, &Blocklist::new(), 24).unwrap();
        let s = adaptive_switch(&t, &Blocklist::new()).unwrap();
        assert_eq!(s.generation(), 1);
        let mut a = t.sequence_bytes();
        let mut b = s.sequence_bytes();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_ne!(t.sequence(), s.sequence());
    }

    #[test]
    fn blocklist_json_roundtrip_compacts_ranges() {
        let bl: Blocklist = "[5, \"10-12\", 40]".parse().unwrap();
        let json = serde_json::to_string(&bl).unwrap();
        assert_eq!(json, "[5,\"10-12\",40]");
        assert!("[\"12-10\"]".parse::<Blocklist>().is_err());
        assert!("[0]".parse::<Blocklist>().is_err());
    }
}
