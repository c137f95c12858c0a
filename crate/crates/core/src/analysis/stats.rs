//! Binomial confidence intervals.

use statrs::distribution::{Beta, ContinuousCDF, Normal};

/// Confidence level used for every reported interval.
pub const CONFIDENCE: f64 = 0.99;

/// Below this many successes the exact interval is used.
pub const EXACT_BELOW: u64 = 10;

fn z(confidence: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + confidence / 2.0)
}

/// Standard deviation of a binomial proportion estimate.
pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Normal-approximation (Wald) interval, clamped to [0, 1].
pub fn normal_interval(successes: u64, n: u64, confidence: f64) -> (f64, f64) {
    let p = successes as f64 / n as f64;
    let h = z(confidence) * binomial_sigma(p, n);
    ((p - h).max(0.0), (p + h).min(1.0))
}

/// Exact Clopper-Pearson interval.
pub fn clopper_pearson(successes: u64, n: u64, confidence: f64) -> (f64, f64) {
    let alpha = 1.0 - confidence;
    let k = successes as f64;
    let n_f = n as f64;
    let lower = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n_f - k + 1.0)
            .expect("positive shape")
            .inverse_cdf(alpha / 2.0)
    };
    let upper = if successes == n {
        1.0
    } else {
        Beta::new(k + 1.0, n_f - k)
            .expect("positive shape")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (lower, upper)
}

/// 99% interval: exact for fewer than ten successes, normal otherwise.
pub fn binomial_interval(successes: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    if successes < EXACT_BELOW {
        clopper_pearson(successes, n, CONFIDENCE)
    } else {
        normal_interval(successes, n, CONFIDENCE)
    }
}
