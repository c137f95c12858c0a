//! Plaintext bit-error probability after a single ciphertext bit flip.
//!
//! A counter-mode keystream maps one flipped ciphertext bit to one flipped
//! plaintext bit, so a binary symmetric channel stays binary symmetric. Raw
//! block decryption spreads the flip over the whole block.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::stats::{binomial_interval, normal_interval, CONFIDENCE};
use super::{AnalysisError, ExperimentReport};
use crate::rng;
use crate::secure::ccm::{BLOCK_LEN, FRAME_NONCE_LEN};
use crate::secure::AesCcm;

/// Allowed deviation of the diffusing-mode mean from one half.
pub const DIFFUSING_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum BepMode {
    BitPreserving,
    BlockDiffusing,
}

pub fn bep_experiment(mode: BepMode, blocks: u64, seed: u64) -> Result<ExperimentReport, AnalysisError> {
    bep_experiment_with(mode, blocks, 1, seed)
}

/// `flips` ciphertext bits per block; zero is the no-error control.
pub fn bep_experiment_with(
    mode: BepMode,
    blocks: u64,
    flips: u32,
    seed: u64,
) -> Result<ExperimentReport, AnalysisError> {
    if blocks == 0 {
        return Err(AnalysisError::InvalidParams("blocks must be positive".into()));
    }
    if flips > 1 {
        return Err(AnalysisError::InvalidParams("at most one flipped bit per block".into()));
    }
    let mut r = rng::stream(seed, "bep");
    let mut key = [0u8; 16];
    r.fill_bytes(&mut key);
    let cipher = AesCcm::new(&key);
    let bits = (BLOCK_LEN * 8) as u64;
    let (mut total, mut min, mut max) = (0u64, u32::MAX, 0u32);
    for _ in 0..blocks {
        let mut plain = [0u8; BLOCK_LEN];
        r.fill_bytes(&mut plain);
        let received = match mode {
            BepMode::BitPreserving => {
                let mut nonce = [0u8; FRAME_NONCE_LEN];
                r.fill_bytes(&mut nonce);
                let mut ct = cipher.ctr_apply(&nonce, &plain).expect("valid nonce");
                if flips == 1 {
                    let bit = r.gen_range(0..bits as usize);
                    ct[bit / 8] ^= 1 << (bit % 8);
                }
                cipher.ctr_apply(&nonce, &ct).expect("valid nonce")
            }
            BepMode::BlockDiffusing => {
                let mut block = plain;
                cipher.encrypt_block(&mut block);
                if flips == 1 {
                    let bit = r.gen_range(0..bits as usize);
                    block[bit / 8] ^= 1 << (bit % 8);
                }
                cipher.decrypt_block(&mut block);
                block.to_vec()
            }
        };
        let d: u32 = plain.iter().zip(&received).map(|(a, b)| (a ^ b).count_ones()).sum();
        total += d as u64;
        min = min.min(d);
        max = max.max(d);
    }
    let samples = blocks * bits;
    let empirical = total as f64 / samples as f64;
    let (theoretical, passed, tolerance) = match (mode, flips) {
        (_, 0) => (0.0, total == 0, "exact".to_string()),
        (BepMode::BitPreserving, _) => (
            1.0 / bits as f64,
            min == 1 && max == 1,
            "exactly one flipped bit per block".to_string(),
        ),
        (BepMode::BlockDiffusing, _) => (
            0.5,
            (empirical - 0.5).abs() <= DIFFUSING_TOLERANCE,
            format!("+/- {DIFFUSING_TOLERANCE}"),
        ),
    };
    let ci = if total < 10 {
        binomial_interval(total, samples)
    } else {
        normal_interval(total, samples, CONFIDENCE)
    };
    let mut parameters = BTreeMap::new();
    parameters.insert("mode".into(), json!(mode));
    parameters.insert("blocks".into(), json!(blocks));
    parameters.insert("flips_per_block".into(), json!(flips));
    parameters.insert("min_plaintext_flips".into(), json!(min));
    parameters.insert("max_plaintext_flips".into(), json!(max));
    Ok(ExperimentReport {
        experiment: "bep".into(),
        parameters,
        theoretical,
        empirical,
        samples,
        ci,
        seed,
        tolerance,
        passed,
        notes: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_has_no_errors() {
        for mode in [BepMode::BitPreserving, BepMode::BlockDiffusing] {
            let r = bep_experiment_with(mode, 100, 0, 1).unwrap();
            assert_eq!(r.empirical, 0.0);
            assert!(r.passed);
        }
    }

    #[test]
    fn preserving_flips_exactly_one_bit() {
        let r = bep_experiment(BepMode::BitPreserving, 2000, 3).unwrap();
        assert_eq!(r.parameters["min_plaintext_flips"], json!(1));
        assert_eq!(r.parameters["max_plaintext_flips"], json!(1));
    }

    #[test]
    fn zero_blocks_rejected() {
        assert!(bep_experiment(BepMode::BlockDiffusing, 0, 0).is_err());
    }
}
