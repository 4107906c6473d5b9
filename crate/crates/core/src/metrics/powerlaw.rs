//! Discrete power-law fitting with a KS-minimizing lower cutoff.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::zeta::hurwitz_zeta;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("too few samples: need at least {need} at or above x_min, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("degenerate samples: every tail value equals {0}")]
    Degenerate(u64),
    #[error("power-law samples must be positive integers, found 0")]
    ZeroSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Exact maximum of the discrete likelihood `Π x^-α / ζ(α, x_min)`.
    #[default]
    Discrete,
    /// Closed form `1 + n / Σ ln(x / (x_min - 0.5))`.
    ContinuityApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XMin {
    Fixed(u64),
    Scan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub x_min: XMin,
    pub estimator: Estimator,
    /// Smallest admissible tail.
    pub min_tail: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            x_min: XMin::Scan,
            estimator: Estimator::Discrete,
            min_tail: 10,
        }
    }
}

impl FitOptions {
    pub fn fixed(x_min: u64) -> Self {
        FitOptions {
            x_min: XMin::Fixed(x_min),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub x_min: u64,
    pub ks_distance: f64,
    pub n_tail: usize,
    pub estimator: Estimator,
}

const ALPHA_LO: f64 = 1.0 + 1e-9;
const ALPHA_HI: f64 = 40.0;

pub fn fit_power_law(samples: &[u64], opts: FitOptions) -> Result<PowerLawFit, FitError> {
    if samples.contains(&0) {
        return Err(FitError::ZeroSample);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    match opts.x_min {
        XMin::Fixed(x_min) => fit_tail(&sorted, x_min.max(1), opts),
        XMin::Scan => scan(&sorted, opts),
    }
}

fn scan(sorted: &[u64], opts: FitOptions) -> Result<PowerLawFit, FitError> {
    let mut candidates: Vec<u64> = sorted.to_vec();
    candidates.dedup();
    let mut best: Option<PowerLawFit> = None;
    let mut first_err = None;
    for x_min in candidates {
        match fit_tail(sorted, x_min, opts) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.ks_distance < b.ks_distance) {
                    best = Some(fit);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| {
        first_err.unwrap_or(FitError::TooFewSamples {
            need: opts.min_tail,
            got: 0,
        })
    })
}

fn fit_tail(sorted: &[u64], x_min: u64, opts: FitOptions) -> Result<PowerLawFit, FitError> {
    let start = sorted.partition_point(|&x| x < x_min);
    let tail = &sorted[start..];
    if tail.len() < opts.min_tail.max(1) {
        return Err(FitError::TooFewSamples {
            need: opts.min_tail.max(1),
            got: tail.len(),
        });
    }
    if tail[0] == tail[tail.len() - 1] {
        return Err(FitError::Degenerate(tail[0]));
    }
    let n = tail.len() as f64;
    let alpha = match opts.estimator {
        Estimator::ContinuityApprox => {
            let shift = x_min as f64 - 0.5;
            1.0 + n / tail.iter().map(|&x| (x as f64 / shift).ln()).sum::<f64>()
        }
        Estimator::Discrete => {
            let mean_log = tail.iter().map(|&x| (x as f64).ln()).sum::<f64>() / n;
            discrete_mle(mean_log, x_min as f64)
        }
    };
    Ok(PowerLawFit {
        alpha,
        x_min,
        ks_distance: ks_distance(tail, alpha, x_min),
        n_tail: tail.len(),
        estimator: opts.estimator,
    })
}

/// Maximizes `-ln ζ(α, x_min) - α · mean_log`, which is concave in α.
fn discrete_mle(mean_log: f64, x_min: f64) -> f64 {
    let nll = |a: f64| hurwitz_zeta(a, x_min).ln() + a * mean_log;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (ALPHA_LO, ALPHA_HI);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (nll(c), nll(d));
    while hi - lo > 1e-10 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = nll(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = nll(d);
        }
    }
    (lo + hi) / 2.0
}

/// Largest gap between the empirical tail CDF and the fitted discrete CDF
/// `1 - ζ(α, x+1) / ζ(α, x_min)`. The empirical CDF is flat between
/// observed values, so both ends of every flat run are checked.
fn ks_distance(tail: &[u64], alpha: f64, x_min: u64) -> f64 {
    let n = tail.len() as f64;
    let norm = hurwitz_zeta(alpha, x_min as f64);
    let cdf = |x: u64| 1.0 - hurwitz_zeta(alpha, x as f64 + 1.0) / norm;
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i < tail.len() {
        let x = tail[i];
        let mut j = i;
        while j < tail.len() && tail[j] == x {
            j += 1;
        }
        let emp_before = i as f64 / n;
        let emp = j as f64 / n;
        // Flat run before x, from the previous value + 1 up to x - 1.
        let prev_end = if i == 0 { x_min } else { tail[i - 1] + 1 };
        if x > prev_end {
            worst = worst.max((cdf(x - 1) - emp_before).abs());
        }
        worst = worst.max((cdf(x) - emp).abs());
        i = j;
    }
    worst
}
