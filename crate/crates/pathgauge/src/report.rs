//! Output formatting: human-readable bandwidth strings, the CSV table
//! schemas, and JSON reports.
//!
//! Machine formats carry full `f64` precision (Rust's shortest
//! round-trippable decimal form); human-facing strings round to three
//! significant digits. Every CSV may begin with `#`-prefixed comment
//! lines, which all parsers here skip; a `# manifest: <id>` comment ties a
//! file to the run manifest that produced it.

use std::io::{self, BufRead, BufReader, Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::estimator::WindowOutcome;
use crate::model::{ErrorTable, ModelError, TableKind, TableRow};
use crate::simulator::SimResult;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("unrecognized table header {found:?} (expected an n,sd_mbps or n,eta_percent table)")]
    BadHeader { found: String },
    #[error("missing table header")]
    MissingHeader,
    #[error("line {line_no}: {what}")]
    BadRow { line_no: usize, what: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Format bits per second as Mbps with three significant digits, the
/// rounding used in human-facing summaries: 27397260 bps reads "27.4" and
/// 27777778 bps reads "27.8".
pub fn format_mbps_3sig(value_bps: f64) -> String {
    let mbps = value_bps / 1e6;
    if !mbps.is_finite() || mbps == 0.0 {
        return format!("{mbps:.2}");
    }
    let exp = mbps.abs().log10().floor() as i32;
    let factor = 10f64.powi(exp - 2);
    let rounded = (mbps / factor).round() * factor;
    let exp = rounded.abs().log10().floor() as i32;
    let decimals = (2 - exp).max(0) as usize;
    format!("{rounded:.decimals$}")
}

fn write_manifest_comment<W: Write>(w: &mut W, manifest_id: Option<&str>) -> io::Result<()> {
    if let Some(id) = manifest_id {
        writeln!(w, "# manifest: {id}")?;
    }
    Ok(())
}

/// Write a simulation result as `n,eta_percent,skipped` CSV.
pub fn write_eta_csv<W: Write>(
    w: &mut W,
    result: &SimResult,
    manifest_id: Option<&str>,
) -> io::Result<()> {
    write_manifest_comment(w, manifest_id)?;
    writeln!(w, "n,eta_percent,skipped")?;
    for row in &result.rows {
        writeln!(w, "{},{},{}", row.n, row.eta_percent, row.skipped)?;
    }
    Ok(())
}

/// Write an SD table as `n,sd_mbps` CSV. The mean bandwidth, when the
/// table carries one, travels in a comment so the file stays one schema.
pub fn write_sd_csv<W: Write>(
    w: &mut W,
    table: &ErrorTable,
    manifest_id: Option<&str>,
) -> io::Result<()> {
    write_manifest_comment(w, manifest_id)?;
    if let Some(mean) = table.mean_bandwidth_bps {
        writeln!(w, "# mean_bandwidth_bps: {mean}")?;
    }
    writeln!(w, "n,sd_mbps")?;
    for row in &table.rows {
        writeln!(w, "{},{}", row.n, row.value)?;
    }
    Ok(())
}

/// Write windowed estimates as `window_start,n,mbps` CSV. Skipped windows
/// carry no estimate and are omitted; their count lands in a comment.
pub fn write_estimates_csv<W: Write>(
    w: &mut W,
    outcomes: &[WindowOutcome],
    manifest_id: Option<&str>,
) -> io::Result<()> {
    write_manifest_comment(w, manifest_id)?;
    let skipped = outcomes.iter().filter(|o| matches!(o, WindowOutcome::Skipped(_))).count();
    if skipped > 0 {
        writeln!(w, "# skipped_windows: {skipped}")?;
    }
    writeln!(w, "window_start,n,mbps")?;
    for outcome in outcomes {
        if let WindowOutcome::Estimate(e) = outcome {
            writeln!(w, "{},{},{}", e.window_start, e.window_n, e.value_bps / 1e6)?;
        }
    }
    Ok(())
}

/// Parse a table CSV written by [`write_eta_csv`] or [`write_sd_csv`]
/// (or hand-written in either schema). The header names decide the table
/// kind; `#` comments are skipped, though a `# manifest:` id and a
/// `# mean_bandwidth_bps:` value are captured when present. Extra columns
/// beyond `n,value` (such as the skipped count) are ignored.
pub fn parse_table_csv<R: Read>(r: R) -> Result<(ErrorTable, Option<String>), ReportError> {
    let reader = BufReader::new(r);
    let mut manifest_id = None;
    let mut mean_bandwidth_bps = None;
    let mut kind: Option<TableKind> = None;
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(id) = comment.strip_prefix("manifest:") {
                manifest_id = Some(id.trim().to_string());
            } else if let Some(mean) = comment.strip_prefix("mean_bandwidth_bps:") {
                mean_bandwidth_bps =
                    Some(mean.trim().parse::<f64>().map_err(|e| ReportError::BadRow {
                        line_no,
                        what: format!("bad mean bandwidth: {e}"),
                    })?);
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        match kind {
            None => {
                kind = Some(match (fields.first().copied(), fields.get(1).copied()) {
                    (Some("n"), Some("sd_mbps")) => TableKind::SdMbps,
                    (Some("n"), Some("eta_percent")) => TableKind::RelativeErrorPercent,
                    _ => return Err(ReportError::BadHeader { found: trimmed.to_string() }),
                });
            }
            Some(_) => {
                if fields.len() < 2 {
                    return Err(ReportError::BadRow {
                        line_no,
                        what: format!("expected at least 2 columns, got {}", fields.len()),
                    });
                }
                let n = fields[0].parse::<u32>().map_err(|e| ReportError::BadRow {
                    line_no,
                    what: format!("bad n {:?}: {e}", fields[0]),
                })?;
                let value = fields[1].parse::<f64>().map_err(|e| ReportError::BadRow {
                    line_no,
                    what: format!("bad value {:?}: {e}", fields[1]),
                })?;
                rows.push(TableRow { n, value });
            }
        }
    }
    let kind = kind.ok_or(ReportError::MissingHeader)?;
    let table = ErrorTable::new(rows, kind, mean_bandwidth_bps)?;
    Ok((table, manifest_id))
}

/// JSON report of a simulation run: the configuration echo makes the file
/// reproducible on its own.
#[derive(Debug, Serialize)]
pub struct SimJsonReport<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_id: Option<&'a str>,
    pub config: &'a crate::model::SimConfig,
    pub rows: &'a [crate::simulator::SimRow],
    pub total_skipped: u64,
}

/// Write a simulation result as pretty-printed JSON.
pub fn write_sim_json<W: Write>(
    w: &mut W,
    result: &SimResult,
    manifest_id: Option<&str>,
) -> Result<(), ReportError> {
    let report = SimJsonReport {
        manifest_id,
        config: &result.config,
        rows: &result.rows,
        total_skipped: result.total_skipped(),
    };
    serde_json::to_writer_pretty(&mut *w, &report).map_err(io::Error::other)?;
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SimConfig, TableKind};
    use crate::simulator::{simulate_eta_table, SimRow};

    #[test]
    fn three_sig_digit_formatting_matches_reference_values() {
        assert_eq!(format_mbps_3sig(8000.0 / 0.000292 ), "27.4");
        assert_eq!(format_mbps_3sig(8000.0 / 0.000288), "27.8");
        assert_eq!(format_mbps_3sig(2e6), "2.00");
        assert_eq!(format_mbps_3sig(400e6), "400");
        assert_eq!(format_mbps_3sig(0.0), "0.00");
        assert_eq!(format_mbps_3sig(99_999.0), "0.100");
        assert_eq!(format_mbps_3sig(999.9e6), "1000");
        assert_eq!(format_mbps_3sig(1234e6), "1230");
        assert_eq!(format_mbps_3sig(27.35e6), "27.4");
    }

    fn sample_result() -> SimResult {
        SimResult {
            config: SimConfig { trials: 10, n_values: vec![5, 10], ..SimConfig::default() },
            rows: vec![
                SimRow { n: 5, eta_percent: 82.61234567891234, kept: 10, skipped: 0, trimmed: 2 },
                SimRow { n: 10, eta_percent: 61.1, kept: 9, skipped: 1, trimmed: 0 },
            ],
        }
    }

    #[test]
    fn eta_csv_round_trips_at_full_precision() {
        let mut buf = Vec::new();
        write_eta_csv(&mut buf, &sample_result(), Some("abc123")).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# manifest: abc123\nn,eta_percent,skipped\n"));
        let (table, id) = parse_table_csv(&buf[..]).unwrap();
        assert_eq!(id.as_deref(), Some("abc123"));
        assert_eq!(table.kind, TableKind::RelativeErrorPercent);
        assert_eq!(table.rows[0].value, 82.61234567891234);
        assert_eq!(table.rows[1].n, 10);
    }

    #[test]
    fn sd_csv_round_trips_with_mean_comment() {
        let table = ErrorTable::from_pairs(
            &[(5, 49.3), (10, 34.7)],
            TableKind::SdMbps,
            Some(27.4e6),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_sd_csv(&mut buf, &table, None).unwrap();
        let (parsed, id) = parse_table_csv(&buf[..]).unwrap();
        assert_eq!(id, None);
        assert_eq!(parsed, table);
    }

    #[test]
    fn estimates_csv_lists_only_real_estimates() {
        let pairs: Vec<_> = [2e-4, 6e-4, 3e-4, -9e-4]
            .iter()
            .enumerate()
            .map(|(i, &dd)| {
                crate::model::PacketPairSample::new(
                    crate::model::DelayRecord {
                        seq_id: i as u64,
                        direction: crate::model::Direction::new("a", "b"),
                        packet_size: 100,
                        send_time: i as f64,
                        delay: 0.01,
                    },
                    crate::model::DelayRecord {
                        seq_id: i as u64,
                        direction: crate::model::Direction::new("a", "b"),
                        packet_size: 1100,
                        send_time: i as f64 + 0.5,
                        delay: 0.01 + dd,
                    },
                )
                .unwrap()
            })
            .collect();
        let outcomes =
            crate::estimator::estimate_bandwidth(&pairs, crate::estimator::WindowSpec::disjoint(2))
                .unwrap();
        let mut buf = Vec::new();
        write_estimates_csv(&mut buf, &outcomes, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# skipped_windows: 1"));
        assert_eq!(lines.next(), Some("window_start,n,mbps"));
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(&fields[..2], ["0", "2"]);
        let mbps: f64 = fields[2].parse().unwrap();
        assert!((mbps - 20.0).abs() < 1e-9, "mbps {mbps}");
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn parser_rejects_unknown_headers_and_reports_bad_rows() {
        assert!(matches!(
            parse_table_csv(&b"a,b\n1,2\n"[..]),
            Err(ReportError::BadHeader { .. })
        ));
        assert!(matches!(parse_table_csv(&b""[..]), Err(ReportError::MissingHeader)));
        match parse_table_csv(&b"# hi\nn,sd_mbps\n5,49.3\nten,1.0\n"[..]) {
            Err(ReportError::BadRow { line_no: 4, .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn parser_ignores_extra_columns_and_blank_lines() {
        let (table, _) =
            parse_table_csv(&b"\nn,eta_percent,skipped\n5,82.6,17\n\n10,61.1,3\n"[..]).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].value, 82.6);
    }

    #[test]
    fn sim_json_echoes_the_configuration() {
        let config = SimConfig { trials: 50, n_values: vec![5], ..SimConfig::default() };
        let result = simulate_eta_table(&config, 1).unwrap();
        let mut buf = Vec::new();
        write_sim_json(&mut buf, &result, Some("deadbeef")).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["manifest_id"], "deadbeef");
        assert_eq!(v["config"]["lambda_rate"], 1000.0);
        assert_eq!(v["config"]["trials"], 50);
        assert_eq!(v["rows"].as_array().unwrap().len(), 1);
        assert_eq!(
            v["rows"][0]["kept"].as_u64().unwrap() + v["rows"][0]["skipped"].as_u64().unwrap(),
            50
        );
    }
}
