//! Monte Carlo model of the estimator's statistical error.
//!
//! Each simulated measurement draws one-way delays for n small and n large
//! probes, where every delay is a fixed floor plus a size-class offset plus
//! an exponential noise term. The window's bandwidth estimate divides the
//! payload-size difference by the difference of mean delays, and the error
//! table summarizes how far those estimates scatter around the configured
//! true bandwidth as the window size n grows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    DelayRecord, Direction, ErrorMetric, ErrorTable, ModelError, SimConfig, TableKind, TableRow,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("every one of the {trials} trials at n={n} had a non-positive delay difference")]
    AllTrialsSkipped { n: u32, trials: u64 },
    #[error("expected a {expected} table, got {actual}")]
    WrongTableKind { expected: TableKind, actual: TableKind },
    #[error("{what} must be positive and finite, got {value}")]
    NonPositiveArgument { what: &'static str, value: f64 },
    #[error("delta_w of {delta_w} bits is not a whole positive number of bytes")]
    FractionalByteDeltaW { delta_w: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which of the two probe sizes a delay is drawn for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeClass {
    Small,
    Large,
}

/// Multiplicative correction factors for transferring an error table
/// measured under one noise regime to another: one factor for the change
/// in delay-noise rate, one for the change in payload-size difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionFactors {
    pub k_lambda: f64,
    pub k_delta_d: f64,
}

impl CorrectionFactors {
    pub fn new(k_lambda: f64, k_delta_d: f64) -> Result<Self, SimError> {
        for (what, value) in [("k_lambda", k_lambda), ("k_delta_d", k_delta_d)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::NonPositiveArgument { what, value });
            }
        }
        Ok(Self { k_lambda, k_delta_d })
    }

    pub fn identity() -> Self {
        Self { k_lambda: 1.0, k_delta_d: 1.0 }
    }

    /// The factor the table is divided by.
    pub fn combined(&self) -> f64 {
        self.k_lambda * self.k_delta_d
    }
}

/// One n-row of a simulation: the error metric plus trial accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub n: u32,
    pub eta_percent: f64,
    /// Trials that produced a positive delay difference.
    pub kept: u64,
    /// Trials discarded because the mean delay difference was not positive.
    pub skipped: u64,
    /// Kept trials excluded from the metric by the symmetric quantile trim.
    pub trimmed: u64,
}

/// A full simulation run: per-n rows plus the configuration that produced
/// them, so results stay self-describing on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub rows: Vec<SimRow>,
}

impl SimResult {
    pub fn eta_table(&self) -> Result<ErrorTable, ModelError> {
        ErrorTable::new(
            self.rows.iter().map(|r| TableRow { n: r.n, value: r.eta_percent }).collect(),
            TableKind::RelativeErrorPercent,
            None,
        )
    }

    pub fn total_skipped(&self) -> u64 {
        self.rows.iter().map(|r| r.skipped).sum()
    }
}

/// Draw one one-way delay: floor + size-class serialization offset +
/// exponential noise, optionally rounded to the nearest clock quantum.
///
/// Quantization is phase-sensitive: when the delay floor sits near the
/// middle of a quantum cell, rounding the small and large classes to
/// opposite cell edges injects an error of up to one quantum into the
/// delay difference, which is what caps measurable bandwidth on coarse
/// clocks.
pub fn gen_delay(rng: &mut ChaCha8Rng, config: &SimConfig, class: SizeClass) -> f64 {
    let offset = match class {
        SizeClass::Small => 0.0,
        SizeClass::Large => config.true_delta_d,
    };
    let noise = Exp::new(config.lambda_rate)
        .expect("validated lambda_rate is positive")
        .sample(rng);
    let delay = config.d_min + offset + noise;
    if config.clock_quantum > 0.0 {
        (delay / config.clock_quantum).round() * config.clock_quantum
    } else {
        delay
    }
}

/// Linear-interpolation quantile of an ascending-sorted slice (the
/// convention where the k-th of m points sits at rank (k-1)/(m-1)).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// RNG stream id for trial `trial` of the `n_index`-th table row. Every
/// trial gets its own counter stream of one seeded cipher, so results do
/// not depend on how trials are batched across threads.
fn trial_stream(n_index: usize, trial: u64) -> u64 {
    ((n_index as u64) << 32) | trial
}

/// Simulate the estimate-to-truth ratios for one n: each trial draws n
/// small and n large delays and returns `true_delta_d / (mean_large -
/// mean_small)`, or None when that denominator is not positive.
fn simulate_ratios(
    config: &SimConfig,
    n_index: usize,
    n: u32,
    trial_range: std::ops::Range<u64>,
) -> (Vec<f64>, u64) {
    let mut ratios = Vec::with_capacity((trial_range.end - trial_range.start) as usize);
    let mut skipped = 0u64;
    for trial in trial_range {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(trial_stream(n_index, trial));
        let mut sum_small = 0.0f64;
        let mut sum_large = 0.0f64;
        for _ in 0..n {
            sum_small += gen_delay(&mut rng, config, SizeClass::Small);
        }
        for _ in 0..n {
            sum_large += gen_delay(&mut rng, config, SizeClass::Large);
        }
        let mean_delta = (sum_large - sum_small) / n as f64;
        if mean_delta > 0.0 {
            ratios.push(config.true_delta_d / mean_delta);
        } else {
            skipped += 1;
        }
    }
    (ratios, skipped)
}

/// Run the Monte Carlo error-table simulation.
///
/// For each window size in `config.n_values`, `config.trials` independent
/// windows are simulated and the per-window estimate-to-truth ratios are
/// reduced to a relative error percentage. Trials whose delay difference
/// is not positive carry no bandwidth information and are counted as
/// skipped. Because the heaviest noise regimes put appreciable ratio mass
/// next to that divide-by-zero boundary, the raw ratio distribution has
/// tails heavy enough that its RMS does not converge as trials grow; the
/// metric therefore applies a symmetric `config.trim_fraction` quantile
/// trim to the kept ratios before reducing them, which pins the metric to
/// the distribution bulk while preserving its scaling in n and in the
/// noise rate.
///
/// `jobs` worker threads split the trial range into contiguous chunks;
/// results are reduced in fixed order and every trial has its own RNG
/// stream, so the output is bit-identical for any thread count.
pub fn simulate_eta_table(config: &SimConfig, jobs: usize) -> Result<SimResult, SimError> {
    config.validate()?;
    let jobs = jobs.max(1).min(config.trials.max(1) as usize);
    let mut rows = Vec::with_capacity(config.n_values.len());
    for (n_index, &n) in config.n_values.iter().enumerate() {
        let (mut ratios, skipped) = if jobs == 1 {
            simulate_ratios(config, n_index, n, 0..config.trials)
        } else {
            let chunk = config.trials.div_ceil(jobs as u64);
            let chunks: Vec<std::ops::Range<u64>> = (0..jobs as u64)
                .map(|j| (j * chunk).min(config.trials)..((j + 1) * chunk).min(config.trials))
                .filter(|r| !r.is_empty())
                .collect();
            let parts: Vec<(Vec<f64>, u64)> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .into_iter()
                    .map(|range| scope.spawn(move || simulate_ratios(config, n_index, n, range)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            let mut ratios = Vec::with_capacity(config.trials as usize);
            let mut skipped = 0u64;
            for (part_ratios, part_skipped) in parts {
                ratios.extend(part_ratios);
                skipped += part_skipped;
            }
            (ratios, skipped)
        };
        if ratios.is_empty() {
            return Err(SimError::AllTrialsSkipped { n, trials: config.trials });
        }
        ratios.sort_by(f64::total_cmp);
        let kept = ratios.len() as u64;
        let (metric_slice, trimmed) = trim_sorted(&ratios, config.trim_fraction);
        let eta_percent = 100.0 * reduce(metric_slice, config.error_metric);
        rows.push(SimRow { n, eta_percent, kept, skipped, trimmed });
    }
    Ok(SimResult { config: config.clone(), rows })
}

/// Cut a sorted ratio slice to the central quantile band
/// `[trim, 1 - trim]`. Falls back to the full slice if the band would be
/// empty (only possible for tiny samples).
fn trim_sorted(sorted: &[f64], trim: f64) -> (&[f64], u64) {
    if trim <= 0.0 || sorted.len() < 2 {
        return (sorted, 0);
    }
    let lo = quantile_sorted(sorted, trim);
    let hi = quantile_sorted(sorted, 1.0 - trim);
    let start = sorted.partition_point(|&x| x < lo);
    let end = sorted.partition_point(|&x| x <= hi);
    if start >= end {
        return (sorted, 0);
    }
    (&sorted[start..end], (sorted.len() - (end - start)) as u64)
}

fn reduce(ratios: &[f64], metric: ErrorMetric) -> f64 {
    let m = ratios.len() as f64;
    match metric {
        ErrorMetric::Rms => {
            (ratios.iter().map(|r| (r - 1.0) * (r - 1.0)).sum::<f64>() / m).sqrt()
        }
        ErrorMetric::MeanAbs => ratios.iter().map(|r| (r - 1.0).abs()).sum::<f64>() / m,
    }
}

/// Divide every entry of a relative-error table by the combined
/// correction factor.
pub fn apply_correction(
    table: &ErrorTable,
    factors: &CorrectionFactors,
) -> Result<ErrorTable, SimError> {
    if table.kind != TableKind::RelativeErrorPercent {
        return Err(SimError::WrongTableKind {
            expected: TableKind::RelativeErrorPercent,
            actual: table.kind,
        });
    }
    let combined = factors.combined();
    if !(combined.is_finite() && combined > 0.0) {
        return Err(SimError::NonPositiveArgument { what: "combined factor", value: combined });
    }
    let rows = table
        .rows
        .iter()
        .map(|r| TableRow { n: r.n, value: r.value / combined })
        .collect();
    Ok(ErrorTable::new(rows, table.kind, table.mean_bandwidth_bps)?)
}

/// Outcome of a calibration query against a corrected error table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub corrected: ErrorTable,
    /// Smallest window size meeting the target, if the table reaches it.
    pub required_n: Option<u32>,
    /// True when the answer came from log-log interpolation between two
    /// tabulated rows rather than a tabulated n itself.
    pub interpolated: bool,
}

/// Apply corrections and find the smallest n whose corrected error meets
/// `target_percent`.
///
/// With `interpolate` off the answer is the smallest tabulated n at or
/// under the target. With it on, and when the target falls strictly
/// between two tabulated rows, the answer interpolates between them
/// assuming the error is a power law in n (straight line in log-log),
/// rounded up to the next integer.
pub fn required_n_for_error(
    table: &ErrorTable,
    factors: &CorrectionFactors,
    target_percent: f64,
    interpolate: bool,
) -> Result<CalibrationOutcome, SimError> {
    if !(target_percent.is_finite() && target_percent > 0.0) {
        return Err(SimError::NonPositiveArgument {
            what: "target_percent",
            value: target_percent,
        });
    }
    let corrected = apply_correction(table, factors)?;
    let hit = corrected.rows.iter().position(|r| r.value <= target_percent);
    let (required_n, interpolated) = match hit {
        None => (None, false),
        Some(0) => (Some(corrected.rows[0].n), false),
        Some(j) if !interpolate => (Some(corrected.rows[j].n), false),
        Some(j) => {
            let above = &corrected.rows[j - 1];
            let below = &corrected.rows[j];
            if above.value <= 0.0 || below.value <= 0.0 {
                (Some(below.n), false)
            } else {
                let t = (target_percent.ln() - above.value.ln())
                    / (below.value.ln() - above.value.ln());
                let ln_n = (above.n as f64).ln() + t * ((below.n as f64).ln() - (above.n as f64).ln());
                (Some(ln_n.exp().ceil() as u32), true)
            }
        }
    };
    Ok(CalibrationOutcome { corrected, required_n, interpolated })
}

/// One grid point of a parameter sweep.
#[derive(Debug)]
pub struct SweepPoint {
    pub config: SimConfig,
    pub outcome: Result<SimResult, SimError>,
}

/// Derive an independent seed for a sweep grid point from the base seed.
/// Mixing (a 64-bit finalizer over base and index) keeps neighbouring grid
/// points statistically unrelated.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add((index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run the simulation over the cartesian product of noise rates and delay
/// offsets, in row-major order with `lambdas` as the outer axis. Each grid
/// point gets its own derived seed; a failing point is reported in place
/// without aborting the rest of the sweep.
pub fn sweep(
    base: &SimConfig,
    lambdas: &[f64],
    delta_ds: &[f64],
    jobs: usize,
) -> Vec<SweepPoint> {
    let mut points = Vec::with_capacity(lambdas.len() * delta_ds.len());
    for (i, &lambda_rate) in lambdas.iter().enumerate() {
        for (k, &true_delta_d) in delta_ds.iter().enumerate() {
            let index = (i * delta_ds.len() + k) as u64;
            let config = SimConfig {
                lambda_rate,
                true_delta_d,
                rng_seed: derive_seed(base.rng_seed, index),
                ..base.clone()
            };
            let outcome = simulate_eta_table(&config, jobs);
            points.push(SweepPoint { config, outcome });
        }
    }
    points
}

/// Generate a synthetic measurement dataset under the simulation's delay
/// model: `pairs` alternating small/large probes sent `cadence` seconds
/// apart starting at `t0`. Returns the small and large record streams,
/// both sorted by send time and sharing sequence ids pairwise.
pub fn generate_pair_dataset(
    config: &SimConfig,
    pairs: u64,
    direction: &Direction,
    t0: f64,
    cadence: f64,
) -> Result<(Vec<DelayRecord>, Vec<DelayRecord>), SimError> {
    config.validate()?;
    if !(cadence.is_finite() && cadence > 0.0) {
        return Err(SimError::NonPositiveArgument { what: "cadence", value: cadence });
    }
    let delta_bytes = config.delta_w / 8.0;
    if delta_bytes.fract() != 0.0 || delta_bytes < 1.0 || delta_bytes > u32::MAX as f64 {
        return Err(SimError::FractionalByteDeltaW { delta_w: config.delta_w });
    }
    let small_size = 100u32;
    let large_size = small_size + delta_bytes as u32;
    let mut smalls = Vec::with_capacity(pairs as usize);
    let mut larges = Vec::with_capacity(pairs as usize);
    for k in 0..pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream((1u64 << 48) | k);
        let small_delay = gen_delay(&mut rng, config, SizeClass::Small);
        let large_delay = gen_delay(&mut rng, config, SizeClass::Large);
        smalls.push(DelayRecord {
            seq_id: k,
            direction: direction.clone(),
            packet_size: small_size,
            send_time: t0 + (2 * k) as f64 * cadence,
            delay: small_delay,
        });
        larges.push(DelayRecord {
            seq_id: k,
            direction: direction.clone(),
            packet_size: large_size,
            send_time: t0 + (2 * k + 1) as f64 * cadence,
            delay: large_delay,
        });
    }
    Ok((smalls, larges))
}
