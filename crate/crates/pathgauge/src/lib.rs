//! Estimate end-to-end available bandwidth from paired one-way-delay
//! measurements of two packet sizes.
//!
//! The core relation: send probe packets of two sizes along the same path,
//! measure their one-way delays, and estimate the available bandwidth as
//!
//! ```text
//! B = delta_w / delta_d
//! ```
//!
//! where `delta_w` is the payload difference in bits and `delta_d` the
//! difference of the (averaged) one-way delays in seconds. Because a single
//! delay difference is dominated by queueing noise, estimates are averaged
//! over windows of `n` probe pairs, and the toolkit quantifies how the
//! estimate's spread shrinks as `n` grows.
//!
//! Modules:
//! - [`model`]: shared domain types (records, pairs, estimates, tables,
//!   simulation config) and validation.
//! - [`ingest`]: parsing of delay-record files and a newline-delimited TCP
//!   collector client, for one direction or two concurrently.
//! - [`estimator`]: pairing, windowed bandwidth estimates, SD-vs-n tables,
//!   the 2-sigma minimum measurement count, direction asymmetry comparison,
//!   and the clock-resolution bandwidth ceiling.
//! - [`simulator`]: Monte Carlo engine with exponentially distributed delay
//!   noise that reproduces error-vs-n tables, applies rate/delay correction
//!   factors, and solves for the measurement count needed for a target
//!   error.
//! - [`report`]: CSV and JSON emission and parsing for all of the above.

pub mod estimator;
pub mod ingest;
pub mod model;
pub mod report;
pub mod simulator;

pub use model::{
    BandwidthEstimate, DelayRecord, Direction, ErrorMetric, ErrorTable, PacketPairSample,
    SimConfig, TableKind,
};
