//! Deterministic simulator and analysis toolkit for security-enhanced IO-Link Wireless cells.

pub mod adversary;
pub mod analysis;
pub mod detection;
pub mod hopping;
pub mod medium;
pub mod pairing;
pub mod protocol;
pub mod rng;
pub mod scenario;
pub mod secure;
