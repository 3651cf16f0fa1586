//! Pair small/large probe records, compute windowed bandwidth estimates,
//! and derive the statistics built on them: SD-vs-n tables, the 2-sigma
//! minimum measurement count, direction asymmetry, and the clock-resolution
//! bandwidth ceiling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    BandwidthEstimate, DelayRecord, ErrorTable, ModelError, PacketPairSample, TableKind, TableRow,
};

/// Default factor by which the geometric-mean SD ratio of two directions
/// must deviate from 1 before the asymmetry flag fires.
pub const DEFAULT_ASYMMETRY_THRESHOLD: f64 = 1.5;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("streams come from different directions: {a} vs {b}")]
    DirectionMismatch { a: String, b: String },
    #[error("records must be sorted by send_time (violation at index {index})")]
    UnsortedInput { index: usize },
    #[error("no pairs to estimate from")]
    EmptyInput,
    #[error("pairs disagree on delta_w: {first} vs {other} bits")]
    InconsistentDeltaW { first: u64, other: u64 },
    #[error("window size n must be at least 1")]
    ZeroWindow,
    #[error("window stride must be at least 1")]
    ZeroStride,
    #[error("need at least {requested} pairs, only {available} available")]
    InsufficientData { requested: u32, available: usize },
    #[error("every window at n={n} had a non-positive mean delay difference")]
    AllWindowsSkipped { n: u32 },
    #[error("expected a {expected} table, got {actual}")]
    WrongTableKind { expected: TableKind, actual: TableKind },
    #[error("tables tabulate different n grids")]
    GridMismatch,
    #[error("{what} must be positive and finite, got {value}")]
    NonPositiveArgument { what: &'static str, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How small and large records are matched into pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PairingPolicy {
    /// Pair the k-th small record with the k-th large record. The right
    /// choice when both streams count probes with a shared sequence
    /// discipline (the common case for alternating probes).
    ByAdjacentSequence,
    /// Greedily pair each small record with the nearest-in-time unused
    /// large record no further than `max_gap` seconds away.
    ByNearestSendTime { max_gap: f64 },
}

/// Averaging window: `n` pairs per estimate, windows `stride` apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub n: u32,
    pub stride: u32,
}

impl WindowSpec {
    /// Disjoint windows (stride = n), the default for SD tables: overlapping
    /// windows correlate estimates and understate the SD.
    pub fn disjoint(n: u32) -> Self {
        Self { n, stride: n }
    }

    pub fn new(n: u32, stride: u32) -> Self {
        Self { n, stride }
    }

    fn validate(&self) -> Result<(), EstimatorError> {
        if self.n == 0 {
            return Err(EstimatorError::ZeroWindow);
        }
        if self.stride == 0 {
            return Err(EstimatorError::ZeroStride);
        }
        Ok(())
    }
}

/// Result of pairing two record streams.
#[derive(Debug, Clone, Default)]
pub struct Pairing {
    pub pairs: Vec<PacketPairSample>,
    pub unpaired_small: u64,
    pub unpaired_large: u64,
}

impl Pairing {
    /// Conservation check: every consumed record is in a pair or counted
    /// unpaired.
    pub fn records_consumed(&self) -> u64 {
        self.pairs.len() as u64 * 2 + self.unpaired_small + self.unpaired_large
    }
}

fn ensure_sorted(records: &[DelayRecord]) -> Result<(), EstimatorError> {
    for (index, w) in records.windows(2).enumerate() {
        if w[1].send_time < w[0].send_time {
            return Err(EstimatorError::UnsortedInput { index: index + 1 });
        }
    }
    Ok(())
}

/// Match a small-packet stream against a large-packet stream.
///
/// Both streams must share a direction and be sorted by send time. Each
/// record is used in at most one pair; leftovers are counted, and
/// `pairs * 2 + unpaired == records consumed` always holds.
pub fn pair_samples(
    small_stream: &[DelayRecord],
    large_stream: &[DelayRecord],
    policy: PairingPolicy,
) -> Result<Pairing, EstimatorError> {
    if let (Some(s), Some(l)) = (small_stream.first(), large_stream.first()) {
        if s.direction != l.direction {
            return Err(EstimatorError::DirectionMismatch {
                a: s.direction.to_string(),
                b: l.direction.to_string(),
            });
        }
    }
    ensure_sorted(small_stream)?;
    ensure_sorted(large_stream)?;

    match policy {
        PairingPolicy::ByAdjacentSequence => {
            let k = small_stream.len().min(large_stream.len());
            let mut pairs = Vec::with_capacity(k);
            for i in 0..k {
                pairs.push(PacketPairSample::new(
                    small_stream[i].clone(),
                    large_stream[i].clone(),
                )?);
            }
            Ok(Pairing {
                pairs,
                unpaired_small: (small_stream.len() - k) as u64,
                unpaired_large: (large_stream.len() - k) as u64,
            })
        }
        PairingPolicy::ByNearestSendTime { max_gap } => {
            if !(max_gap.is_finite() && max_gap > 0.0) {
                return Err(EstimatorError::NonPositiveArgument {
                    what: "max_gap",
                    value: max_gap,
                });
            }
            pair_by_nearest_time(small_stream, large_stream, max_gap)
        }
    }
}

fn pair_by_nearest_time(
    smalls: &[DelayRecord],
    larges: &[DelayRecord],
    max_gap: f64,
) -> Result<Pairing, EstimatorError> {
    let mut used = vec![false; larges.len()];
    let mut first_unused = 0usize;
    let mut pairs = Vec::new();
    let mut unpaired_small = 0u64;

    for s in smalls {
        while first_unused < larges.len() && used[first_unused] {
            first_unused += 1;
        }
        // Scan unused larges inside the admissible time band around s.
        let mut best: Option<(usize, f64)> = None;
        let mut j = first_unused;
        while j < larges.len() && larges[j].send_time <= s.send_time + max_gap {
            if !used[j] {
                let dist = (larges[j].send_time - s.send_time).abs();
                if dist <= max_gap && best.is_none_or(|(_, d)| dist < d) {
                    best = Some((j, dist));
                }
            }
            j += 1;
        }
        match best {
            Some((j, _)) => {
                used[j] = true;
                pairs.push(PacketPairSample::new(s.clone(), larges[j].clone())?);
            }
            None => unpaired_small += 1,
        }
    }
    let unpaired_large = used.iter().filter(|&&u| !u).count() as u64;
    Ok(Pairing { pairs, unpaired_small, unpaired_large })
}

/// A window that produced no estimate because its mean delay difference was
/// not positive. Noise can swamp the size-induced delay gap in small
/// windows; such windows are reported, not clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedWindow {
    pub window_start: f64,
    pub n: u32,
    pub mean_delta_d: f64,
}

/// One window's outcome: an estimate or a skip marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WindowOutcome {
    Estimate(BandwidthEstimate),
    Skipped(SkippedWindow),
}

/// Compute windowed bandwidth estimates `delta_w / mean(delta_d)`.
///
/// All pairs must share `delta_w` and direction. Windows whose mean delay
/// difference is non-positive become [`WindowOutcome::Skipped`] markers.
pub fn estimate_bandwidth(
    pairs: &[PacketPairSample],
    window: WindowSpec,
) -> Result<Vec<WindowOutcome>, EstimatorError> {
    window.validate()?;
    let first = pairs.first().ok_or(EstimatorError::EmptyInput)?;
    for p in pairs {
        if p.delta_w != first.delta_w {
            return Err(EstimatorError::InconsistentDeltaW {
                first: first.delta_w,
                other: p.delta_w,
            });
        }
        if p.small.direction != first.small.direction {
            return Err(EstimatorError::DirectionMismatch {
                a: first.small.direction.to_string(),
                b: p.small.direction.to_string(),
            });
        }
    }
    let n = window.n as usize;
    let stride = window.stride as usize;
    let mut out = Vec::new();
    let mut start = 0usize;
    while start + n <= pairs.len() {
        let slice = &pairs[start..start + n];
        let mean_delta_d = slice.iter().map(|p| p.delta_d).sum::<f64>() / n as f64;
        let window_start = slice[0].small.send_time;
        if mean_delta_d > 0.0 {
            out.push(WindowOutcome::Estimate(BandwidthEstimate {
                value_bps: first.delta_w as f64 / mean_delta_d,
                window_n: window.n,
                mean_delta_d,
                direction: first.small.direction.clone(),
                window_start,
            }));
        } else {
            out.push(WindowOutcome::Skipped(SkippedWindow {
                window_start,
                n: window.n,
                mean_delta_d,
            }));
        }
        start += stride;
    }
    Ok(out)
}

/// SD of windowed estimates for each window size n, plus the mean estimate.
///
/// For each n the pair list is cut into disjoint windows of n pairs;
/// windows with a non-positive mean delay difference are excluded. The
/// table holds the population standard deviation of the kept estimates in
/// Mbps, and `mean_bandwidth_bps` is the mean of the estimates at the
/// largest n.
pub fn sd_vs_n(pairs: &[PacketPairSample], n_values: &[u32]) -> Result<ErrorTable, EstimatorError> {
    let max_n = *n_values.iter().max().ok_or(EstimatorError::EmptyInput)?;
    if pairs.len() < max_n as usize {
        return Err(EstimatorError::InsufficientData {
            requested: max_n,
            available: pairs.len(),
        });
    }
    let mut rows = Vec::with_capacity(n_values.len());
    let mut mean_at_largest = None;
    for &n in n_values {
        let outcomes = estimate_bandwidth(pairs, WindowSpec::disjoint(n))?;
        let mbps: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| match o {
                WindowOutcome::Estimate(e) => Some(e.value_bps / 1e6),
                WindowOutcome::Skipped(_) => None,
            })
            .collect();
        if mbps.is_empty() {
            return Err(EstimatorError::AllWindowsSkipped { n });
        }
        let mean = mbps.iter().sum::<f64>() / mbps.len() as f64;
        let var = mbps.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / mbps.len() as f64;
        rows.push(TableRow { n, value: var.sqrt() });
        if n == max_n {
            mean_at_largest = Some(mean * 1e6);
        }
    }
    Ok(ErrorTable::new(rows, TableKind::SdMbps, mean_at_largest)?)
}

/// Smallest tabulated n at which the mean bandwidth is at least twice the
/// SD of the windowed estimate, i.e. the estimate resolves the bandwidth
/// from zero at the 2-sigma level. `None` when even the largest n fails.
pub fn required_n_2sigma(
    table: &ErrorTable,
    mean_bandwidth_bps: f64,
) -> Result<Option<u32>, EstimatorError> {
    if table.kind != TableKind::SdMbps {
        return Err(EstimatorError::WrongTableKind {
            expected: TableKind::SdMbps,
            actual: table.kind,
        });
    }
    let mean_mbps = mean_bandwidth_bps / 1e6;
    Ok(table.rows.iter().find(|row| mean_mbps >= 2.0 * row.value).map(|row| row.n))
}

/// Per-n SD ratio of two directions plus the asymmetry verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryReport {
    /// `(n, sd_a / sd_b)` per tabulated n; `0/0` counts as 1.
    pub ratio_per_n: Vec<(u32, f64)>,
    pub geometric_mean_ratio: f64,
    pub threshold: f64,
    /// True when the geometric-mean ratio deviates from 1 by more than
    /// `threshold` in either direction.
    pub flagged: bool,
}

/// Compare two SD tables over the same n grid.
///
/// Flags asymmetry when the geometric-mean ratio deviates from 1 by more
/// than `threshold` (default [`DEFAULT_ASYMMETRY_THRESHOLD`]).
pub fn compare_directions(
    a: &ErrorTable,
    b: &ErrorTable,
    threshold: f64,
) -> Result<AsymmetryReport, EstimatorError> {
    if a.kind != b.kind {
        return Err(EstimatorError::WrongTableKind { expected: a.kind, actual: b.kind });
    }
    if a.n_grid() != b.n_grid() {
        return Err(EstimatorError::GridMismatch);
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(EstimatorError::NonPositiveArgument { what: "threshold", value: threshold });
    }
    let mut ratio_per_n = Vec::with_capacity(a.rows.len());
    let mut log_sum = 0.0f64;
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        let ratio = if ra.value == 0.0 && rb.value == 0.0 { 1.0 } else { ra.value / rb.value };
        log_sum += ratio.ln();
        ratio_per_n.push((ra.n, ratio));
    }
    let geometric_mean_ratio = (log_sum / ratio_per_n.len() as f64).exp();
    let flagged = !(geometric_mean_ratio <= threshold && geometric_mean_ratio >= 1.0 / threshold);
    Ok(AsymmetryReport { ratio_per_n, geometric_mean_ratio, threshold, flagged })
}

/// Largest bandwidth measurable at relative error `target_relative_error`
/// when the delay difference is quantized at `clock_precision` seconds:
/// `eta * delta_w / clock_precision` bits per second.
///
/// A 1 ms clock with a 25% error budget on an 8000-bit payload difference
/// caps measurements at 2 Mbps; a 2 microsecond clock at 10% reaches
/// 400 Mbps.
pub fn max_measurable_bandwidth(
    clock_precision: f64,
    target_relative_error: f64,
    delta_w_bits: f64,
) -> Result<f64, EstimatorError> {
    for (what, value) in [
        ("clock_precision", clock_precision),
        ("target_relative_error", target_relative_error),
        ("delta_w_bits", delta_w_bits),
    ] {
        if !(value.is_finite() && value > 0.0) {
            return Err(EstimatorError::NonPositiveArgument { what, value });
        }
    }
    Ok(target_relative_error * delta_w_bits / clock_precision)
}
