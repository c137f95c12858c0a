//! Closed-form forgery advantage and the FIPS 140-2 style thresholds.
//!
//! Adv = q_dec * 2^-τ + σ² * 2^-n

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::CYCLES_PER_MINUTE;

/// A random attempt must succeed with probability below one in a million.
pub const PER_ATTEMPT_THRESHOLD: f64 = 1e-6;
/// Within one minute, below one in a hundred thousand.
pub const PER_MINUTE_THRESHOLD: f64 = 1e-5;
/// Largest block size accepted, keeping 2^-n representable as a subnormal f64.
pub const MAX_BLOCK_BITS: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct AdvantageParams {
    /// Tag length in bits.
    pub tau: u32,
    /// Number of encrypted or decrypted blocks.
    pub sigma: u64,
    /// Cipher block size in bits.
    pub n: u32,
    /// Allowed decryption queries.
    pub q_dec: u64,
}

impl Default for AdvantageParams {
    fn default() -> Self {
        AdvantageParams {
            tau: 32,
            sigma: 1,
            n: 128,
            q_dec: 3,
        }
    }
}

impl AdvantageParams {
    pub fn new(tau: u32, sigma: u64, n: u32, q_dec: u64) -> Self {
        AdvantageParams { tau, sigma, n, q_dec }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdvantageError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

fn validate(p: &AdvantageParams) -> Result<(), AdvantageError> {
    let bad = |m: &str| Err(AdvantageError::InvalidParams(m.into()));
    if p.tau == 0 || p.sigma == 0 || p.n == 0 || p.q_dec == 0 {
        return bad("all parameters must be strictly positive");
    }
    if p.tau > p.n {
        return bad("tag length exceeds the block size");
    }
    if p.n > MAX_BLOCK_BITS {
        return bad("block size above 1024 bits");
    }
    Ok(())
}

fn bound_unchecked(p: &AdvantageParams) -> f64 {
    let sigma = p.sigma as f64;
    p.q_dec as f64 * (-(p.tau as f64)).exp2() + sigma * sigma * (-(p.n as f64)).exp2()
}

/// Upper bound on the forgery advantage. Each term is an integer times an exact
/// power of two, so neither underflows for n <= 1024; when the σ term is below
/// the precision of the q term it is absorbed, which changes nothing at 16 digits.
pub fn advantage_bound(p: &AdvantageParams) -> Result<f64, AdvantageError> {
    validate(p)?;
    Ok(bound_unchecked(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FipsVerdict {
    pub bound: f64,
    pub per_attempt_ok: bool,
    /// One-minute success probability under the lockout policy: the attack is cut
    /// off after the q_dec queries of one window.
    pub per_minute_locked: f64,
    /// One-minute figure without lockout: q_dec queries in every cycle.
    pub per_minute_unlocked: f64,
    pub per_minute_ok: bool,
}

pub fn fips_check(p: &AdvantageParams) -> Result<FipsVerdict, AdvantageError> {
    let bound = advantage_bound(p)?;
    let unlocked = bound_unchecked(&AdvantageParams {
        q_dec: p.q_dec.saturating_mul(CYCLES_PER_MINUTE),
        ..*p
    })
    .min(1.0);
    Ok(FipsVerdict {
        bound,
        per_attempt_ok: bound < PER_ATTEMPT_THRESHOLD,
        per_minute_locked: bound,
        per_minute_unlocked: unlocked,
        per_minute_ok: bound < PER_MINUTE_THRESHOLD,
    })
}

/// A worked value as printed in the reference analysis, next to the recomputed bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValue {
    pub label: &'static str,
    pub params: AdvantageParams,
    pub printed: f64,
    /// The printed value does not follow from the formula.
    pub flagged: bool,
}

/// The five worked parameterizations.
pub const REFERENCE_VALUES: [ReferenceValue; 5] = [
    ReferenceValue {
        label: "tau=32 q=3",
        params: AdvantageParams { tau: 32, sigma: 1, n: 128, q_dec: 3 },
        printed: 7e-10,
        flagged: false,
    },
    ReferenceValue {
        label: "tau=64 q=3",
        params: AdvantageParams { tau: 64, sigma: 1, n: 128, q_dec: 3 },
        printed: 1.6e-19,
        flagged: false,
    },
    ReferenceValue {
        label: "tau=16 q=3",
        params: AdvantageParams { tau: 16, sigma: 1, n: 128, q_dec: 3 },
        printed: 4.6e-5,
        flagged: false,
    },
    ReferenceValue {
        label: "tau=32 q=10",
        params: AdvantageParams { tau: 32, sigma: 1, n: 128, q_dec: 10 },
        printed: 7e-9,
        flagged: true,
    },
    ReferenceValue {
        label: "tau=32 sigma=10",
        params: AdvantageParams { tau: 32, sigma: 10, n: 128, q_dec: 3 },
        printed: 7e-10,
        flagged: false,
    },
];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn worked_values() {
        let b = |tau, sigma, q| advantage_bound(&AdvantageParams::new(tau, sigma, 128, q)).unwrap();
        // Oracle: the dominant term written out by hand.
        assert!(rel(b(32, 1, 3), 3.0 / 4_294_967_296.0) < 1e-12);
        assert!(rel(b(32, 1, 3), 6.98e-10) < 1e-3);
        assert!(rel(b(64, 1, 3), 1.63e-19) < 1e-2);
        assert!(rel(b(16, 1, 3), 4.58e-5) < 1e-3);
        assert!(rel(b(32, 1, 10), 2.33e-9) < 1e-2);
        assert!(rel(b(32, 10, 3), 6.98e-10) < 1e-3);
    }

    #[test]
    fn printed_values_within_five_percent_except_flagged() {
        for r in REFERENCE_VALUES {
            let v = advantage_bound(&r.params).unwrap();
            assert_eq!(rel(v, r.printed) > 0.05, r.flagged, "{}", r.label);
        }
    }

    #[test]
    fn no_underflow_at_tau_64() {
        let p = AdvantageParams::new(64, 1, 128, 3);
        let v = advantage_bound(&p).unwrap();
        assert!(v > 0.0);
        assert!(rel(v, 3.0 * 2f64.powi(-64)) < 1e-15);
        let sigma_only = advantage_bound(&AdvantageParams::new(128, 1, 128, 1)).unwrap();
        assert_eq!(sigma_only, 2.0 * 2f64.powi(-128));
    }

    #[test]
    fn invalid() {
        for p in [
            AdvantageParams::new(0, 1, 128, 3),
            AdvantageParams::new(32, 0, 128, 3),
            AdvantageParams::new(32, 1, 128, 0),
            AdvantageParams::new(130, 1, 128, 3),
            AdvantageParams::new(32, 1, 2048, 3),
        ] {
            assert!(advantage_bound(&p).is_err());
            assert!(fips_check(&p).is_err());
        }
    }

    #[test]
    fn fips_verdicts() {
        let v32 = fips_check(&AdvantageParams::default()).unwrap();
        assert!(v32.per_attempt_ok && v32.per_minute_ok);
        let v24 = fips_check(&AdvantageParams::new(24, 1, 128, 3)).unwrap();
        assert!(v24.per_attempt_ok);
        assert!(rel(v24.bound, 1.79e-7) < 1e-2);
        let v16 = fips_check(&AdvantageParams::new(16, 1, 128, 3)).unwrap();
        assert!(!v16.per_minute_ok);
        assert!((v32.per_minute_unlocked - 36_000.0 * 2f64.powi(-32)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone(tau in 1u32..100, sigma in 1u64..1_000_000, q in 1u64..1_000_000) {
            let p = AdvantageParams::new(tau, sigma, 128, q);
            let v = advantage_bound(&p).unwrap();
            let longer_tag = advantage_bound(&AdvantageParams { tau: tau + 1, ..p }).unwrap();
            let more_queries = advantage_bound(&AdvantageParams { q_dec: q + 1, ..p }).unwrap();
            prop_assert!(longer_tag < v);
            prop_assert!(more_queries > v);
            // The σ term is tiny next to q·2^-τ; compare it at a tag length where it is visible.
            let s = AdvantageParams { tau: 128, ..p };
            let more_blocks = advantage_bound(&AdvantageParams { sigma: sigma + 1, ..s }).unwrap();
            prop_assert!(more_blocks > advantage_bound(&s).unwrap());
        }
    }
}
