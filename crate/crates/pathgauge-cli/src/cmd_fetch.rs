//! `pathgauge fetch`: read delay records from files or TCP collectors and
//! write them as canonical record files, one per direction.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use pathgauge::ingest::{
    collect_bidirectional, read_source, serialize_record, IngestReport, ReadOptions, RecordSource,
    SourceKind, SourceResult, DEFAULT_PORT,
};

use crate::manifest::{digest_file, RunManifest};
use crate::{check_direction_count, direction_file_stem, parse_direction_spec, CliError, FetchArgs};

/// Parse `FROM->TO=file:PATH` or `FROM->TO=tcp:HOST[:PORT]`.
fn parse_source(spec: &str) -> Result<RecordSource, CliError> {
    let (direction, rest) = parse_direction_spec(spec, "source")?;
    if let Some(path) = rest.strip_prefix("file:") {
        if path.is_empty() {
            return Err(CliError::Usage(format!("source spec {spec:?} has an empty file path")));
        }
        Ok(RecordSource::file(path, direction))
    } else if let Some(endpoint) = rest.strip_prefix("tcp:") {
        let (host, port) = match endpoint.rsplit_once(':') {
            Some((host, port)) => {
                let port = port.parse::<u16>().map_err(|e| {
                    CliError::Usage(format!("source spec {spec:?} has a bad port: {e}"))
                })?;
                (host, Some(port))
            }
            None => (endpoint, None),
        };
        if host.is_empty() {
            return Err(CliError::Usage(format!("source spec {spec:?} has an empty host")));
        }
        Ok(RecordSource::tcp(host, port, direction))
    } else {
        Err(CliError::Usage(format!(
            "source spec {spec:?} must use file: or tcp: (default TCP port is {DEFAULT_PORT})"
        )))
    }
}

fn render_report(report: &IngestReport) -> String {
    let mut parts = vec![
        format!("{} lines", report.lines),
        format!("{} accepted", report.accepted),
    ];
    for (reason, count) in &report.rejected {
        parts.push(format!("{count} rejected ({reason})"));
    }
    if report.parse_errors > 0 {
        parts.push(format!("{} parse errors", report.parse_errors));
    }
    if report.skipped > 0 {
        parts.push(format!("{} skipped", report.skipped));
    }
    if report.out_of_order > 0 {
        parts.push(format!("{} out of order (kept)", report.out_of_order));
    }
    parts.join(", ")
}

pub fn run(args: &FetchArgs) -> Result<(), CliError> {
    let sources: Vec<RecordSource> =
        args.sources.iter().map(|s| parse_source(s)).collect::<Result<_, _>>()?;
    let directions: Vec<_> = sources.iter().map(|s| s.direction.clone()).collect();
    check_direction_count(&directions, "source")?;
    if !(args.idle_timeout_secs.is_finite() && args.idle_timeout_secs > 0.0) {
        return Err(CliError::Usage(format!(
            "--idle-timeout-secs must be positive, got {}",
            args.idle_timeout_secs
        )));
    }
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let opts = ReadOptions {
        idle_timeout: Duration::from_secs_f64(args.idle_timeout_secs),
        request_line: args.request_line.clone(),
        max_lines: args.max_lines,
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|e| {
        CliError::Data(format!("cannot create --out-dir {}: {e}", args.out_dir.display()))
    })?;

    let results: Vec<SourceResult> = if sources.len() == 2 && args.jobs >= 2 {
        let (a, b, _) = collect_bidirectional(&sources[0], &sources[1], &opts);
        vec![a, b]
    } else {
        sources.iter().map(|s| read_source(s, &opts)).collect()
    };

    let mut input_digests = BTreeMap::new();
    for source in &sources {
        if let SourceKind::File(path) = &source.kind {
            if let Ok(digest) = digest_file(path) {
                input_digests.insert(source.name(), digest);
            }
        }
    }
    let config_echo = serde_json::json!({
        "sources": sources
            .iter()
            .map(|s| serde_json::json!({ "name": s.name(), "direction": s.direction.to_string() }))
            .collect::<Vec<_>>(),
        "idle_timeout_secs": args.idle_timeout_secs,
        "request_line": args.request_line,
        "max_lines": args.max_lines,
    });
    let mut manifest = RunManifest::new("fetch", config_echo, input_digests);

    let mut failures: Vec<String> = Vec::new();
    let mut summaries = Vec::new();
    for (source, result) in sources.iter().zip(&results) {
        let name = source.name();
        let mut output_path: Option<PathBuf> = None;
        // Keep whatever arrived, even from a source that later failed.
        if !result.records.is_empty() {
            let stem = direction_file_stem(&source.direction);
            let path = args.out_dir.join(format!("{stem}.records"));
            let mut body = format!(
                "# manifest: {}\n# direction: {}\n",
                manifest.id, source.direction
            );
            for record in &result.records {
                body.push_str(&serialize_record(record));
                body.push('\n');
            }
            std::fs::write(&path, body).map_err(|e| {
                CliError::Data(format!("cannot write {}: {e}", path.display()))
            })?;
            output_path = Some(path);
        }
        eprintln!(
            "{name} [{}]: {}{}",
            source.direction,
            render_report(&result.report),
            match &output_path {
                Some(p) => format!(" -> {}", p.display()),
                None => String::new(),
            }
        );
        for issue in &result.report.sample_errors {
            eprintln!("  line {} col {}: {}", issue.line_no, issue.column, issue.what);
        }
        if let Some(error) = &result.error {
            failures.push(format!("{name}: {error}"));
        } else if result.report.accepted == 0 {
            failures.push(format!("{name}: no records accepted"));
        }
        summaries.push(serde_json::json!({
            "source": name,
            "direction": source.direction.to_string(),
            "output": output_path.as_ref().map(|p| p.display().to_string()),
            "report": result.report,
            "error": result.error.as_ref().map(|e| e.to_string()),
        }));
    }

    manifest
        .write_sidecar(&args.out_dir.join("fetch"))
        .map_err(|e| CliError::Data(format!("cannot write manifest sidecar: {e}")))?;
    let machine = serde_json::json!({
        "manifest_id": manifest.id,
        "sources": summaries,
    });
    println!("{}", serde_json::to_string_pretty(&machine).expect("report serializes"));

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{} of {} source(s) failed: {}",
            failures.len(),
            results.len(),
            failures.join("; ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pathgauge::model::Direction;

    #[test]
    fn source_specs_cover_files_and_tcp() {
        let src = parse_source("tt01->tt146=file:data/fwd.txt").unwrap();
        assert_eq!(src.kind, SourceKind::File("data/fwd.txt".into()));
        assert_eq!(src.direction, Direction::new("tt01", "tt146"));

        let src = parse_source("a->b=tcp:collector:7000").unwrap();
        assert_eq!(src.kind, SourceKind::Tcp { host: "collector".into(), port: 7000 });
    }

    #[test]
    fn omitted_tcp_port_defaults_to_9142() {
        let src = parse_source("a->b=tcp:collector").unwrap();
        assert_eq!(src.kind, SourceKind::Tcp { host: "collector".into(), port: DEFAULT_PORT });
        assert_eq!(DEFAULT_PORT, 9142);
    }

    #[test]
    fn bad_source_specs_are_usage_errors() {
        for spec in [
            "nodirection=file:x",
            "a->b=ftp:server",
            "a->b=file:",
            "a->b=tcp:",
            "a->b=tcp:host:notaport",
        ] {
            assert!(
                matches!(parse_source(spec), Err(CliError::Usage(_))),
                "spec {spec:?} should be a usage error"
            );
        }
    }

    #[test]
    fn report_rendering_mentions_every_bucket() {
        let mut report = IngestReport { lines: 10, accepted: 6, ..Default::default() };
        report.rejected.insert("non_positive_delay".into(), 2);
        report.parse_errors = 1;
        report.skipped = 1;
        report.out_of_order = 3;
        let text = render_report(&report);
        assert!(text.contains("10 lines"));
        assert!(text.contains("6 accepted"));
        assert!(text.contains("2 rejected (non_positive_delay)"));
        assert!(text.contains("1 parse errors"));
        assert!(text.contains("1 skipped"));
        assert!(text.contains("3 out of order"));
    }
}
