//! Shared domain types and validation used by every other module.
//!
//! All delays and timestamps are stored in seconds as `f64`; bandwidth is
//! stored in bits per second. Packet sizes are bytes; `delta_w` values are
//! bits (8 x the byte difference).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default RNG seed used wherever a seed is not given explicitly.
pub const DEFAULT_SEED: u64 = 42;

/// Default symmetric quantile trim applied by the simulator's error metric.
///
/// The windowed estimate `delta_w / mean(delta_d)` has a denominator whose
/// density is positive at zero, so the untrimmed second moment of the
/// estimate is infinite and an untrimmed RMS error grows without bound in
/// the trial count instead of converging. Trimming the top and bottom 6% of
/// kept estimates yields a convergent statistic whose values track the
/// reference error tables; see `simulator::simulate_eta_table`.
pub const DEFAULT_TRIM_FRACTION: f64 = 0.06;

/// Default window-count grid for SD-vs-n tables built from measured data.
pub const SD_N_GRID: [u32; 12] = [5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 200];

/// Default window-count grid for simulated error tables.
pub const SIM_N_GRID: [u32; 7] = [5, 10, 20, 30, 50, 100, 200];

/// Validation and construction errors for the domain types.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("record rejected: {0}")]
    Rejected(RejectReason),
    #[error("pair requires small.packet_size < large.packet_size (got {small} and {large})")]
    PairSizeOrder { small: u32, large: u32 },
    #[error("pair requires both records in the same direction ({a} vs {b})")]
    PairDirectionMismatch { a: Direction, b: Direction },
    #[error("table rows must have strictly increasing n (row {index} has n={n})")]
    NonIncreasingN { index: usize, n: u32 },
    #[error("table values must be non-negative (row {index} has {value})")]
    NegativeTableValue { index: usize, value: f64 },
    #[error("invalid simulation config: {}", issues.join("; "))]
    InvalidConfig { issues: Vec<String> },
}

/// Why a record candidate was excluded from analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NonPositiveDelay,
    ZeroSize,
    MalformedDirection,
    NonFiniteValue,
    NegativeSendTime,
}

impl RejectReason {
    /// Stable snake_case name used as a counter key in ingest reports.
    pub fn key(self) -> &'static str {
        match self {
            RejectReason::NonPositiveDelay => "non_positive_delay",
            RejectReason::ZeroSize => "zero_size",
            RejectReason::MalformedDirection => "malformed_direction",
            RejectReason::NonFiniteValue => "non_finite_value",
            RejectReason::NegativeSendTime => "negative_send_time",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// A measurement direction as a labeled pair of endpoint names.
///
/// Directions are free-form so the toolkit works on any endpoint pair; the
/// reverse direction of a link is obtained with [`Direction::reversed`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Direction {
    pub from: String,
    pub to: String,
}

impl Direction {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self { from: from.into(), to: to.into() }
    }

    /// Parse a `from->to` label (also accepts a unicode arrow).
    pub fn parse_label(label: &str) -> Option<Self> {
        let (from, to) = label.split_once("->").or_else(|| label.split_once('\u{2192}'))?;
        let (from, to) = (from.trim(), to.trim());
        if from.is_empty() || to.is_empty() {
            return None;
        }
        Some(Self::new(from, to))
    }

    pub fn reversed(&self) -> Self {
        Self { from: self.to.clone(), to: self.from.clone() }
    }

    fn is_well_formed(&self) -> bool {
        !self.from.trim().is_empty() && !self.to.trim().is_empty()
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// An unvalidated record as parsed from one input line, before direction
/// attachment and invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordCandidate {
    pub seq_id: u64,
    pub packet_size: u32,
    pub send_time: f64,
    pub delay: f64,
}

/// One probe packet's validated one-way delay observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRecord {
    pub seq_id: u64,
    pub direction: Direction,
    /// Packet size in bytes.
    pub packet_size: u32,
    /// Send timestamp, seconds since epoch (microsecond resolution).
    pub send_time: f64,
    /// One-way delay in seconds, strictly positive.
    pub delay: f64,
}

/// Check a candidate's invariants and attach its direction.
///
/// Rejections carry a reason code so ingest can count them per reason; a
/// rejected record is excluded from pairing but still accounted for.
pub fn validate_record(
    raw: &RecordCandidate,
    direction: &Direction,
) -> Result<DelayRecord, RejectReason> {
    if !direction.is_well_formed() {
        return Err(RejectReason::MalformedDirection);
    }
    if !raw.send_time.is_finite() || !raw.delay.is_finite() {
        return Err(RejectReason::NonFiniteValue);
    }
    if raw.packet_size == 0 {
        return Err(RejectReason::ZeroSize);
    }
    if raw.delay <= 0.0 {
        return Err(RejectReason::NonPositiveDelay);
    }
    if raw.send_time < 0.0 {
        return Err(RejectReason::NegativeSendTime);
    }
    Ok(DelayRecord {
        seq_id: raw.seq_id,
        direction: direction.clone(),
        packet_size: raw.packet_size,
        send_time: raw.send_time,
        delay: raw.delay,
    })
}

/// A matched (small, large) record pair with its delay difference.
///
/// `delta_d` may be negative or zero: queueing noise can invert a single
/// pair's delay ordering, and discarding such pairs early would bias the
/// windowed statistics. Non-positive values are filtered at estimation
/// time, per window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketPairSample {
    pub small: DelayRecord,
    pub large: DelayRecord,
    /// Payload difference in bits, exactly `8 * (large size - small size)`.
    pub delta_w: u64,
    /// Delay difference `large.delay - small.delay` in seconds.
    pub delta_d: f64,
}

impl PacketPairSample {
    /// Build a pair; fails unless `small` is strictly smaller than `large`
    /// and both records share a direction.
    pub fn new(small: DelayRecord, large: DelayRecord) -> Result<Self, ModelError> {
        if small.packet_size >= large.packet_size {
            return Err(ModelError::PairSizeOrder {
                small: small.packet_size,
                large: large.packet_size,
            });
        }
        if small.direction != large.direction {
            return Err(ModelError::PairDirectionMismatch {
                a: small.direction.clone(),
                b: large.direction.clone(),
            });
        }
        let delta_w = 8 * u64::from(large.packet_size - small.packet_size);
        let delta_d = large.delay - small.delay;
        Ok(Self { small, large, delta_w, delta_d })
    }
}

/// One windowed bandwidth estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthEstimate {
    /// Estimated available bandwidth in bits per second.
    pub value_bps: f64,
    /// Number of pairs averaged in the window.
    pub window_n: u32,
    /// Mean delay difference over the window, seconds (> 0).
    pub mean_delta_d: f64,
    pub direction: Direction,
    /// Send time of the window's first small-packet record (plot x-axis).
    pub window_start: f64,
}

/// Whether a table holds SD-of-estimate values or relative-error values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    SdMbps,
    RelativeErrorPercent,
}

impl std::fmt::Display for TableKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TableKind::SdMbps => f.write_str("sd_mbps"),
            TableKind::RelativeErrorPercent => f.write_str("relative_error_percent"),
        }
    }
}

/// One row of an error table: window size `n` and the statistic's value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub n: u32,
    pub value: f64,
}

/// Error statistic indexed by measurement count n.
///
/// Holds either SD of windowed estimates in Mbps or relative error in
/// percent, per [`TableKind`]. Rows are strictly increasing in n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub rows: Vec<TableRow>,
    pub kind: TableKind,
    /// Mean of all windowed estimates at the largest n, bits per second.
    pub mean_bandwidth_bps: Option<f64>,
}

impl ErrorTable {
    /// Build a table, enforcing strictly increasing n and non-negative
    /// values.
    pub fn new(
        rows: Vec<TableRow>,
        kind: TableKind,
        mean_bandwidth_bps: Option<f64>,
    ) -> Result<Self, ModelError> {
        let mut prev: Option<u32> = None;
        for (index, row) in rows.iter().enumerate() {
            if row.n == 0 || prev.is_some_and(|p| row.n <= p) {
                return Err(ModelError::NonIncreasingN { index, n: row.n });
            }
            if row.value.is_nan() || row.value < 0.0 {
                return Err(ModelError::NegativeTableValue { index, value: row.value });
            }
            prev = Some(row.n);
        }
        Ok(Self { rows, kind, mean_bandwidth_bps })
    }

    /// Convenience constructor from `(n, value)` tuples.
    pub fn from_pairs(
        pairs: &[(u32, f64)],
        kind: TableKind,
        mean_bandwidth_bps: Option<f64>,
    ) -> Result<Self, ModelError> {
        let rows = pairs.iter().map(|&(n, value)| TableRow { n, value }).collect();
        Self::new(rows, kind, mean_bandwidth_bps)
    }

    pub fn n_grid(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.n).collect()
    }
}

/// Which deviation statistic the simulator reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    /// Root-mean-square relative deviation from the true bandwidth
    /// (the default; reproduces the reference error tables).
    Rms,
    /// Mean absolute relative deviation (sensitivity analysis only; its
    /// magnitudes run roughly 0.7-0.9x of the RMS tables).
    MeanAbs,
}

impl ErrorMetric {
    pub fn key(self) -> &'static str {
        match self {
            ErrorMetric::Rms => "rms",
            ErrorMetric::MeanAbs => "mean_abs",
        }
    }
}

/// Monte Carlo parameters for the delay-noise simulator.
///
/// The delay model is `D = d_min + offset(size) + X` with
/// `X ~ Exponential(lambda_rate)`; the large size class carries a
/// deterministic extra offset of `true_delta_d` seconds so the expected
/// delay difference equals `true_delta_d`. A positive `clock_quantum`
/// rounds every generated delay to the nearest quantum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Exponential rate of the variable delay component, events/second.
    pub lambda_rate: f64,
    /// Fixed delay floor in seconds (propagation plus minimal processing).
    pub d_min: f64,
    /// Ground-truth delay difference between size classes, seconds.
    pub true_delta_d: f64,
    /// Payload difference in bits.
    pub delta_w: f64,
    /// Monte Carlo trials per table row.
    pub trials: u64,
    /// Window sizes (measurement counts) to tabulate.
    pub n_values: Vec<u32>,
    pub rng_seed: u64,
    /// Timestamp resolution in seconds; 0 means a perfect clock.
    pub clock_quantum: f64,
    /// Deviation statistic; see [`ErrorMetric`].
    pub error_metric: ErrorMetric,
    /// Symmetric quantile trim applied to kept estimates before the metric;
    /// 0 disables trimming (the untrimmed RMS does not converge, see
    /// [`DEFAULT_TRIM_FRACTION`]).
    pub trim_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            lambda_rate: 1000.0,
            d_min: 0.0,
            true_delta_d: 8e-4,
            delta_w: 8000.0,
            trials: 100_000,
            n_values: SIM_N_GRID.to_vec(),
            rng_seed: DEFAULT_SEED,
            clock_quantum: 0.0,
            error_metric: ErrorMetric::Rms,
            trim_fraction: DEFAULT_TRIM_FRACTION,
        }
    }
}

impl SimConfig {
    /// Check every field, reporting all problems at once.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut issues = Vec::new();
        if !(self.lambda_rate.is_finite() && self.lambda_rate > 0.0) {
            issues.push(format!("lambda_rate must be positive and finite, got {}", self.lambda_rate));
        }
        if !(self.d_min.is_finite() && self.d_min >= 0.0) {
            issues.push(format!("d_min must be non-negative and finite, got {}", self.d_min));
        }
        if !(self.true_delta_d.is_finite() && self.true_delta_d > 0.0) {
            issues.push(format!("true_delta_d must be positive and finite, got {}", self.true_delta_d));
        }
        if !(self.delta_w.is_finite() && self.delta_w > 0.0) {
            issues.push(format!("delta_w must be positive and finite, got {}", self.delta_w));
        }
        if self.trials == 0 {
            issues.push("trials must be at least 1".to_string());
        }
        if self.trials > u64::from(u32::MAX) {
            issues.push(format!("trials must fit in 32 bits, got {}", self.trials));
        }
        if self.n_values.is_empty() {
            issues.push("n_values must be non-empty".to_string());
        }
        if self.n_values.contains(&0) {
            issues.push("every n value must be at least 1".to_string());
        }
        if !(self.clock_quantum.is_finite() && self.clock_quantum >= 0.0) {
            issues.push(format!("clock_quantum must be non-negative and finite, got {}", self.clock_quantum));
        }
        if !(0.0..0.5).contains(&self.trim_fraction) {
            issues.push(format!("trim_fraction must be in [0, 0.5), got {}", self.trim_fraction));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig { issues })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn candidate(size: u32, delay: f64, seq: u64) -> RecordCandidate {
        RecordCandidate { seq_id: seq, packet_size: size, send_time: 100.0, delay }
    }

    fn dir() -> Direction {
        Direction::new("tt01", "tt146")
    }

    #[test]
    fn valid_record_accepted() {
        let rec = validate_record(&candidate(100, 0.010, 1), &dir()).unwrap();
        assert_eq!(rec.packet_size, 100);
        assert_eq!(rec.seq_id, 1);
        assert_eq!(rec.direction, dir());
    }

    #[test]
    fn negative_delay_rejected() {
        let err = validate_record(&candidate(100, -0.001, 2), &dir()).unwrap_err();
        assert_eq!(err, RejectReason::NonPositiveDelay);
    }

    #[test]
    fn zero_delay_rejected() {
        let err = validate_record(&candidate(100, 0.0, 2), &dir()).unwrap_err();
        assert_eq!(err, RejectReason::NonPositiveDelay);
    }

    #[test]
    fn zero_size_rejected() {
        let err = validate_record(&candidate(0, 0.010, 3), &dir()).unwrap_err();
        assert_eq!(err, RejectReason::ZeroSize);
    }

    #[test]
    fn empty_direction_label_rejected() {
        let err = validate_record(&candidate(100, 0.010, 3), &Direction::new("", "b")).unwrap_err();
        assert_eq!(err, RejectReason::MalformedDirection);
    }

    #[test]
    fn non_finite_fields_rejected() {
        let mut c = candidate(100, f64::INFINITY, 4);
        assert_eq!(validate_record(&c, &dir()).unwrap_err(), RejectReason::NonFiniteValue);
        c = candidate(100, 0.01, 4);
        c.send_time = f64::NAN;
        assert_eq!(validate_record(&c, &dir()).unwrap_err(), RejectReason::NonFiniteValue);
    }

    #[test]
    fn direction_label_round_trip() {
        let d = Direction::parse_label("tt01->tt146").unwrap();
        assert_eq!(d, dir());
        assert_eq!(d.to_string(), "tt01->tt146");
        assert_eq!(d.reversed(), Direction::new("tt146", "tt01"));
        assert_eq!(Direction::parse_label("a\u{2192}b"), Some(Direction::new("a", "b")));
        assert_eq!(Direction::parse_label("nolabel"), None);
    }

    fn rec(size: u32, delay: f64) -> DelayRecord {
        validate_record(&candidate(size, delay, 7), &dir()).unwrap()
    }

    #[test]
    fn canonical_probe_pair_is_8000_bits() {
        let pair = PacketPairSample::new(rec(100, 0.010), rec(1100, 0.0103)).unwrap();
        assert_eq!(pair.delta_w, 8000);
        assert!((pair.delta_d - 0.0003).abs() < 1e-12);
    }

    #[test]
    fn equal_sizes_cannot_pair() {
        let err = PacketPairSample::new(rec(100, 0.010), rec(100, 0.011)).unwrap_err();
        assert!(matches!(err, ModelError::PairSizeOrder { .. }));
    }

    #[test]
    fn cross_direction_pair_fails() {
        let mut large = rec(1100, 0.011);
        large.direction = dir().reversed();
        let err = PacketPairSample::new(rec(100, 0.010), large).unwrap_err();
        assert!(matches!(err, ModelError::PairDirectionMismatch { .. }));
    }

    #[test]
    fn negative_delta_d_is_representable() {
        let pair = PacketPairSample::new(rec(100, 0.020), rec(1100, 0.010)).unwrap();
        assert!(pair.delta_d < 0.0);
    }

    #[test]
    fn table_rejects_non_increasing_n() {
        let err = ErrorTable::from_pairs(&[(5, 1.0), (5, 2.0)], TableKind::SdMbps, None);
        assert!(matches!(err, Err(ModelError::NonIncreasingN { index: 1, .. })));
        let err = ErrorTable::from_pairs(&[(10, 1.0), (5, 2.0)], TableKind::SdMbps, None);
        assert!(err.is_err());
    }

    #[test]
    fn table_rejects_negative_values() {
        let err = ErrorTable::from_pairs(&[(5, -1.0)], TableKind::SdMbps, None);
        assert!(matches!(err, Err(ModelError::NegativeTableValue { .. })));
    }

    #[test]
    fn default_config_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn config_validation_reports_all_issues_at_once() {
        let cfg = SimConfig {
            lambda_rate: -1.0,
            trials: 0,
            trim_fraction: 0.9,
            ..SimConfig::default()
        };
        match cfg.validate().unwrap_err() {
            ModelError::InvalidConfig { issues } => {
                assert_eq!(issues.len(), 3, "issues: {issues:?}");
            }
            other => panic!("unexpected error: {other}"),
        }
    }
}
