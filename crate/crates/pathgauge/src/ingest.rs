//! Parse delay-record files and stream records from a plain-text TCP
//! collector endpoint, producing validated [`DelayRecord`] streams for one
//! direction or two directions concurrently.
//!
//! # Record file format
//!
//! UTF-8 text, one record per line, whitespace-delimited fields in fixed
//! order:
//!
//! ```text
//! seq_id packet_size_bytes send_time_s delay_s
//! ```
//!
//! `seq_id` is a non-negative integer, `packet_size_bytes` a positive
//! integer, and the two times are decimal seconds. Lines whose first
//! non-blank character is `#` are comments; blank lines are skipped.
//! Malformed lines are counted and reported without aborting the read.
//!
//! # TCP sources
//!
//! The client connects to `host:port` (default port [`DEFAULT_PORT`]),
//! optionally sends a single request line, then reads newline-delimited
//! records until the peer closes, an idle timeout expires, or a line budget
//! is exhausted. The protocol is plain text, so any line-oriented collector
//! (or a human with telnet) can serve it.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_record, DelayRecord, Direction, RecordCandidate};

/// Default TCP port of a delay-record collector endpoint.
pub const DEFAULT_PORT: u16 = 9142;

/// Default idle timeout for TCP reads, matching the probing cadence: if no
/// line arrives for this long, the stream is considered drained.
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30);

/// Errors raised by record ingestion.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source {source_name}: {cause}")]
    Io { source_name: String, cause: std::io::Error },
    #[error("cannot resolve {host}:{port}")]
    Resolve { host: String, port: u16 },
}

/// A single malformed input line.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("line {line_no}, column {column}: {what}")]
pub struct ParseIssue {
    /// 1-based line number.
    pub line_no: u64,
    /// 1-based byte column of the offending field.
    pub column: usize,
    pub what: String,
}

/// Where records come from: a file on disk or a TCP collector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceKind {
    File(PathBuf),
    Tcp { host: String, port: u16 },
}

/// One record source plus the direction its records describe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSource {
    pub kind: SourceKind,
    pub direction: Direction,
}

impl RecordSource {
    pub fn file(path: impl Into<PathBuf>, direction: Direction) -> Self {
        Self { kind: SourceKind::File(path.into()), direction }
    }

    /// TCP source; `port` of `None` uses [`DEFAULT_PORT`].
    pub fn tcp(host: impl Into<String>, port: Option<u16>, direction: Direction) -> Self {
        Self {
            kind: SourceKind::Tcp { host: host.into(), port: port.unwrap_or(DEFAULT_PORT) },
            direction,
        }
    }

    /// Human-readable name used in diagnostics.
    pub fn name(&self) -> String {
        match &self.kind {
            SourceKind::File(p) => p.display().to_string(),
            SourceKind::Tcp { host, port } => format!("tcp://{host}:{port}"),
        }
    }
}

/// Options governing a single source read.
#[derive(Debug, Clone)]
pub struct ReadOptions {
    /// TCP only: give up when no line arrives for this long.
    pub idle_timeout: Duration,
    /// TCP only: line sent (newline-terminated) right after connecting.
    pub request_line: Option<String>,
    /// Stop after this many input lines (both transports).
    pub max_lines: Option<u64>,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self { idle_timeout: DEFAULT_IDLE_TIMEOUT, request_line: None, max_lines: None }
    }
}

/// Per-source accounting: every input line ends up in exactly one bucket.
///
/// Conservation invariant:
/// `lines == accepted + rejected_total() + parse_errors + skipped`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Total input lines seen.
    pub lines: u64,
    /// Records that passed validation and deduplication.
    pub accepted: u64,
    /// Rejected record count per reason (validation failures and
    /// duplicates).
    pub rejected: BTreeMap<String, u64>,
    /// Duplicate `(packet_size, seq_id)` records dropped (first kept);
    /// mirrors the `duplicate_seq` entry of `rejected`.
    pub duplicate_seq: u64,
    /// Accepted records whose send_time regressed within their
    /// `(packet_size)` stream; they are kept and sorted later.
    pub out_of_order: u64,
    /// Lines that did not parse as records.
    pub parse_errors: u64,
    /// Comment and blank lines.
    pub skipped: u64,
    /// First few parse failures, for diagnostics.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sample_errors: Vec<ParseIssue>,
}

impl IngestReport {
    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }

    /// True when every line is accounted for exactly once.
    pub fn is_conserved(&self) -> bool {
        self.lines == self.accepted + self.rejected_total() + self.parse_errors + self.skipped
    }

    fn bump_reject(&mut self, key: &str) {
        *self.rejected.entry(key.to_string()).or_insert(0) += 1;
    }

    /// Merge another report into this one (used for combined two-direction
    /// reporting).
    pub fn merge(&mut self, other: &IngestReport) {
        self.lines += other.lines;
        self.accepted += other.accepted;
        for (k, v) in &other.rejected {
            *self.rejected.entry(k.clone()).or_insert(0) += v;
        }
        self.duplicate_seq += other.duplicate_seq;
        self.out_of_order += other.out_of_order;
        self.parse_errors += other.parse_errors;
        self.skipped += other.skipped;
        for issue in &other.sample_errors {
            if self.sample_errors.len() >= MAX_SAMPLE_ERRORS {
                break;
            }
            self.sample_errors.push(issue.clone());
        }
    }
}

const MAX_SAMPLE_ERRORS: usize = 5;

/// Outcome of one parsed line.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedLine {
    Record(RecordCandidate),
    Comment,
    Blank,
}

/// Split a line into whitespace-delimited tokens with 1-based byte columns.
fn tokenize(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

/// Parse one line of the canonical record grammar.
///
/// Returns a candidate for [`validate_record`], a comment/blank marker, or
/// a parse error naming the 1-based column of the offending field. Never
/// panics, whatever the input bytes.
pub fn parse_record_line(line: &str, line_no: u64) -> Result<ParsedLine, ParseIssue> {
    let trimmed = line.trim_start();
    if trimmed.is_empty() {
        return Ok(ParsedLine::Blank);
    }
    if trimmed.starts_with('#') {
        return Ok(ParsedLine::Comment);
    }
    let tokens = tokenize(line);
    if tokens.len() != 4 {
        let (column, what) = if tokens.len() > 4 {
            (tokens[4].0, format!("expected 4 fields, found {}", tokens.len()))
        } else {
            (line.len() + 1, format!("expected 4 fields, found {}", tokens.len()))
        };
        return Err(ParseIssue { line_no, column, what });
    }
    let field = |idx: usize, name: &str| -> (usize, &str, String) {
        (tokens[idx].0, tokens[idx].1, name.to_string())
    };
    let (col, tok, name) = field(0, "seq_id");
    let seq_id: u64 = tok.parse().map_err(|_| ParseIssue {
        line_no,
        column: col,
        what: format!("{name}: not a non-negative integer: {tok:?}"),
    })?;
    let (col, tok, name) = field(1, "packet_size_bytes");
    let packet_size: u32 = tok.parse().map_err(|_| ParseIssue {
        line_no,
        column: col,
        what: format!("{name}: not a positive integer: {tok:?}"),
    })?;
    let (col, tok, name) = field(2, "send_time_s");
    let send_time: f64 = tok.parse().map_err(|_| ParseIssue {
        line_no,
        column: col,
        what: format!("{name}: not a number: {tok:?}"),
    })?;
    let (col, tok, name) = field(3, "delay_s");
    let delay: f64 = tok.parse().map_err(|_| ParseIssue {
        line_no,
        column: col,
        what: format!("{name}: not a number: {tok:?}"),
    })?;
    Ok(ParsedLine::Record(RecordCandidate { seq_id, packet_size, send_time, delay }))
}

/// Serialize a record to the canonical grammar.
///
/// Send times are written at microsecond resolution; delays use the
/// shortest representation that parses back to the identical `f64`, so a
/// serialize/parse round trip preserves the delay exactly and the send
/// time to within 1 microsecond.
pub fn serialize_record(rec: &DelayRecord) -> String {
    format!("{} {} {:.6} {}", rec.seq_id, rec.packet_size, rec.send_time, rec.delay)
}

/// Result of reading one source: whatever records arrived, the accounting,
/// and the transport error if the source failed.
///
/// Partial results are preserved: a TCP stream that dies mid-transfer still
/// yields the records received before the failure, alongside the error.
#[derive(Debug)]
pub struct SourceResult {
    pub records: Vec<DelayRecord>,
    pub report: IngestReport,
    pub error: Option<IngestError>,
}

impl SourceResult {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Consume lines from any buffered reader, validating and deduplicating.
fn ingest_lines<R: BufRead>(
    reader: R,
    direction: &Direction,
    opts: &ReadOptions,
    source_name: &str,
) -> SourceResult {
    let mut report = IngestReport::default();
    let mut records = Vec::new();
    let mut seen: HashSet<(u32, u64)> = HashSet::new();
    let mut latest_send: BTreeMap<u32, f64> = BTreeMap::new();
    let mut error = None;

    for (idx, line_res) in reader.lines().enumerate() {
        if opts.max_lines.is_some_and(|m| report.lines >= m) {
            break;
        }
        let line = match line_res {
            Ok(l) => l,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                // Idle timeout: the stream is drained, not broken.
                break;
            }
            Err(e) => {
                error = Some(IngestError::Io { source_name: source_name.to_string(), cause: e });
                break;
            }
        };
        report.lines += 1;
        let line_no = idx as u64 + 1;
        match parse_record_line(&line, line_no) {
            Ok(ParsedLine::Blank) | Ok(ParsedLine::Comment) => report.skipped += 1,
            Err(issue) => {
                report.parse_errors += 1;
                if report.sample_errors.len() < MAX_SAMPLE_ERRORS {
                    report.sample_errors.push(issue);
                }
            }
            Ok(ParsedLine::Record(candidate)) => match validate_record(&candidate, direction) {
                Err(reason) => report.bump_reject(reason.key()),
                Ok(record) => {
                    if !seen.insert((record.packet_size, record.seq_id)) {
                        report.duplicate_seq += 1;
                        report.bump_reject("duplicate_seq");
                        continue;
                    }
                    let latest = latest_send.entry(record.packet_size).or_insert(f64::NEG_INFINITY);
                    if record.send_time < *latest {
                        report.out_of_order += 1;
                    } else {
                        *latest = record.send_time;
                    }
                    records.push(record);
                    report.accepted += 1;
                }
            },
        }
    }
    SourceResult { records, report, error }
}

/// Read and validate every record a source yields, in arrival order.
///
/// Never panics on transport failure: an unreachable source produces an
/// empty record list plus the error, and a mid-stream failure preserves the
/// records already received.
pub fn read_source(src: &RecordSource, opts: &ReadOptions) -> SourceResult {
    let name = src.name();
    match &src.kind {
        SourceKind::File(path) => match std::fs::File::open(path) {
            Ok(f) => ingest_lines(BufReader::new(f), &src.direction, opts, &name),
            Err(e) => SourceResult {
                records: Vec::new(),
                report: IngestReport::default(),
                error: Some(IngestError::Io { source_name: name, cause: e }),
            },
        },
        SourceKind::Tcp { host, port } => match open_tcp(host, *port, opts) {
            Ok(stream) => ingest_lines(BufReader::new(stream), &src.direction, opts, &name),
            Err(e) => SourceResult {
                records: Vec::new(),
                report: IngestReport::default(),
                error: Some(e),
            },
        },
    }
}

fn open_tcp(host: &str, port: u16, opts: &ReadOptions) -> Result<TcpStream, IngestError> {
    let name = format!("tcp://{host}:{port}");
    let addrs: Vec<_> = (host, port)
        .to_socket_addrs()
        .map_err(|e| IngestError::Io { source_name: name.clone(), cause: e })?
        .collect();
    let addr = addrs
        .first()
        .ok_or_else(|| IngestError::Resolve { host: host.to_string(), port })?;
    let stream = TcpStream::connect_timeout(addr, opts.idle_timeout)
        .map_err(|e| IngestError::Io { source_name: name.clone(), cause: e })?;
    stream
        .set_read_timeout(Some(opts.idle_timeout))
        .map_err(|e| IngestError::Io { source_name: name.clone(), cause: e })?;
    if let Some(req) = &opts.request_line {
        let mut s = &stream;
        s.write_all(req.as_bytes())
            .and_then(|_| s.write_all(b"\n"))
            .map_err(|e| IngestError::Io { source_name: name, cause: e })?;
    }
    Ok(stream)
}

/// Read two sources concurrently, one per direction.
///
/// Neither source blocks the other and one failing source does not abort
/// its peer; the combined report merges both sides' accounting.
pub fn collect_bidirectional(
    a: &RecordSource,
    b: &RecordSource,
    opts: &ReadOptions,
) -> (SourceResult, SourceResult, IngestReport) {
    let (ra, rb) = std::thread::scope(|scope| {
        let ha = scope.spawn(|| read_source(a, opts));
        let hb = scope.spawn(|| read_source(b, opts));
        (
            ha.join().expect("source reader thread panicked"),
            hb.join().expect("source reader thread panicked"),
        )
    });
    let mut combined = ra.report.clone();
    combined.merge(&rb.report);
    (ra, rb, combined)
}

/// Write records to a file in the canonical grammar, one per line, with a
/// leading comment naming the direction.
pub fn write_records(
    path: &Path,
    direction: &Direction,
    records: &[DelayRecord],
) -> std::io::Result<()> {
    let mut out = String::with_capacity(records.len() * 48 + 64);
    out.push_str(&format!("# direction: {direction}\n"));
    for rec in records {
        out.push_str(&serialize_record(rec));
        out.push('\n');
    }
    std::fs::write(path, out)
}
