//! Monte Carlo forgery against a real master-side link.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::json;

use super::stats::{binomial_interval, binomial_sigma};
use super::{AnalysisError, ExperimentReport};
use crate::adversary::{forge_frames, forgery_target, ForgeryStats};
use crate::rng;
use crate::secure::{advantage_bound, AdvantageParams, TagLength, DEFAULT_LOCKOUT_THRESHOLD};

/// Episodes are split into this many independently seeded chunks. The split does
/// not depend on the worker count, so results are identical on any machine.
pub const FORGERY_CHUNKS: u64 = 64;

/// Exact success probability of a lockout-truncated random-tag episode:
/// 1 - (1 - 2^-τ)^min(q, lockout).
pub fn forgery_theory(tau: u16, q_dec: u32, lockout: u8) -> f64 {
    let k = q_dec.min(lockout as u32) as f64;
    -(k * (-(-(tau as f64)).exp2()).ln_1p()).exp_m1()
}

pub fn monte_carlo_forgery(
    tau: u16,
    q_dec: u32,
    episodes: u64,
    seed: u64,
) -> Result<ExperimentReport, AnalysisError> {
    let tag = TagLength::new(tau).map_err(|e| AnalysisError::InvalidParams(e.to_string()))?;
    if q_dec == 0 {
        return Err(AnalysisError::InvalidParams("q_dec must be positive".into()));
    }
    if episodes == 0 {
        return Err(AnalysisError::InvalidParams("episodes must be positive".into()));
    }
    let lockout = DEFAULT_LOCKOUT_THRESHOLD;
    let template = forgery_target(tag, lockout);
    let chunks = FORGERY_CHUNKS.min(episodes);
    let stats = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let n = episodes / chunks + u64::from(i < episodes % chunks);
            let mut r = rng::stream(rng::child_seed(seed, "forgery", i), "forgery");
            forge_frames(&template, None, q_dec, n, &mut r)
        })
        .reduce(ForgeryStats::default, ForgeryStats::merge);

    let theory = forgery_theory(tau, q_dec, lockout);
    let bound = advantage_bound(&AdvantageParams::new(tau as u32, 1, 128, q_dec as u64))
        .map_err(|e| AnalysisError::InvalidParams(e.to_string()))?;
    let empirical = stats.rate();
    let sigma = binomial_sigma(theory, episodes);
    let passed = (empirical - theory).abs() <= 3.0 * sigma;
    let mut notes = Vec::new();
    if stats.successes == 0 {
        notes.push("no successes; the interval upper limit bounds the rate".into());
    }
    if empirical > bound + 3.0 * sigma {
        notes.push(format!("empirical rate exceeds the bound {bound:.3e} by more than 3 sigma"));
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("tau".into(), json!(tau));
    parameters.insert("q_dec".into(), json!(q_dec));
    parameters.insert("lockout".into(), json!(lockout));
    parameters.insert("bound".into(), json!(bound));
    parameters.insert("successes".into(), json!(stats.successes));
    parameters.insert("lockouts".into(), json!(stats.lockouts));
    Ok(ExperimentReport {
        experiment: "monte_carlo_forgery".into(),
        parameters,
        theoretical: theory,
        empirical,
        samples: episodes,
        ci: binomial_interval(stats.successes, episodes),
        seed,
        tolerance: "3 binomial sigma".into(),
        passed,
        notes,
    })
}
