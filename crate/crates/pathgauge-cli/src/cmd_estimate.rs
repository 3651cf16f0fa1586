//! `pathgauge estimate`: turn record files into windowed bandwidth
//! estimates, an SD-vs-n table, the 2-sigma minimum measurement count,
//! and, with two directions, the asymmetry report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use pathgauge::estimator::{
    compare_directions, estimate_bandwidth, pair_samples, required_n_2sigma, sd_vs_n,
    PairingPolicy, WindowSpec, WindowOutcome,
};
use pathgauge::ingest::{read_source, ReadOptions, RecordSource};
use pathgauge::model::{DelayRecord, Direction, ErrorTable, SD_N_GRID};
use pathgauge::report::{format_mbps_3sig, write_estimates_csv, write_sd_csv};

use crate::manifest::{digest_file, RunManifest};
use crate::{
    check_direction_count, direction_file_stem, parse_direction_spec, resolve_n_grid, CliError,
    EstimateArgs, PairingArg,
};

struct DirectionOutcome {
    direction: Direction,
    accepted: u64,
    pairs: u64,
    unpaired_small: u64,
    unpaired_large: u64,
    skipped_windows: u64,
    table: ErrorTable,
    mean_bandwidth_bps: f64,
    required_n: Option<u32>,
    sd_csv: PathBuf,
    estimates_csv: PathBuf,
}

/// Load one record file and reduce it to pairs, estimates, and tables.
fn process_direction(
    direction: &Direction,
    path: &Path,
    grid: &[u32],
    policy: PairingPolicy,
    out_dir: &Path,
    manifest_id: &str,
) -> Result<DirectionOutcome, CliError> {
    let source = RecordSource::file(path, direction.clone());
    let result = read_source(&source, &ReadOptions::default());
    if let Some(error) = result.error {
        return Err(CliError::Data(format!("{}: {error}", path.display())));
    }
    if result.report.parse_errors > 0 || result.report.rejected_total() > 0 {
        eprintln!(
            "warning: {}: {} parse errors, {} rejected records (of {} lines)",
            path.display(),
            result.report.parse_errors,
            result.report.rejected_total(),
            result.report.lines
        );
        for issue in &result.report.sample_errors {
            eprintln!("  line {} col {}: {}", issue.line_no, issue.column, issue.what);
        }
    }
    if result.records.is_empty() {
        return Err(CliError::Data(format!("{}: no usable records", path.display())));
    }

    let sizes: BTreeSet<u32> = result.records.iter().map(|r| r.packet_size).collect();
    if sizes.len() != 2 {
        return Err(CliError::Data(format!(
            "{}: records use {} distinct packet sizes ({:?}), need exactly 2",
            path.display(),
            sizes.len(),
            sizes
        )));
    }
    let small_size = *sizes.first().expect("two sizes");
    let mut smalls: Vec<DelayRecord> = Vec::new();
    let mut larges: Vec<DelayRecord> = Vec::new();
    for record in result.records {
        if record.packet_size == small_size {
            smalls.push(record);
        } else {
            larges.push(record);
        }
    }
    smalls.sort_by(|a, b| a.send_time.total_cmp(&b.send_time));
    larges.sort_by(|a, b| a.send_time.total_cmp(&b.send_time));

    let pairing = pair_samples(&smalls, &larges, policy)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let max_n = *grid.last().expect("grid checked non-empty") as usize;
    if pairing.pairs.len() < max_n {
        let feasible: Vec<String> = grid
            .iter()
            .filter(|&&n| (n as usize) <= pairing.pairs.len())
            .map(|n| n.to_string())
            .collect();
        let suggestion = if feasible.is_empty() {
            format!(
                "no tabulated n is feasible (smallest requested is {})",
                grid.first().expect("non-empty")
            )
        } else {
            format!("feasible n grid: --n-grid {}", feasible.join(","))
        };
        return Err(CliError::Data(format!(
            "{}: insufficient data: n={} needs {max_n} pairs, have {}; {suggestion}",
            path.display(),
            max_n,
            pairing.pairs.len()
        )));
    }

    let table = sd_vs_n(&pairing.pairs, grid)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mean_bandwidth_bps =
        table.mean_bandwidth_bps.expect("sd_vs_n fills the mean at the largest n");
    let required_n =
        required_n_2sigma(&table, mean_bandwidth_bps).expect("table kind is SD by construction");
    let outcomes = estimate_bandwidth(&pairing.pairs, WindowSpec::disjoint(max_n as u32))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let skipped_windows =
        outcomes.iter().filter(|o| matches!(o, WindowOutcome::Skipped(_))).count() as u64;

    let stem = direction_file_stem(direction);
    let sd_csv = out_dir.join(format!("{stem}-sd.csv"));
    let estimates_csv = out_dir.join(format!("{stem}-estimates.csv"));
    let mut w = BufWriter::new(File::create(&sd_csv).map_err(|e| {
        CliError::Data(format!("cannot write {}: {e}", sd_csv.display()))
    })?);
    write_sd_csv(&mut w, &table, Some(manifest_id))
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", sd_csv.display())))?;
    let mut w = BufWriter::new(File::create(&estimates_csv).map_err(|e| {
        CliError::Data(format!("cannot write {}: {e}", estimates_csv.display()))
    })?);
    write_estimates_csv(&mut w, &outcomes, Some(manifest_id))
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", estimates_csv.display())))?;

    Ok(DirectionOutcome {
        direction: direction.clone(),
        accepted: result.report.accepted,
        pairs: pairing.pairs.len() as u64,
        unpaired_small: pairing.unpaired_small,
        unpaired_large: pairing.unpaired_large,
        skipped_windows,
        table,
        mean_bandwidth_bps,
        required_n,
        sd_csv,
        estimates_csv,
    })
}

pub fn run(args: &EstimateArgs) -> Result<(), CliError> {
    let mut inputs: Vec<(Direction, PathBuf)> = Vec::new();
    for spec in &args.records {
        let (direction, path) = parse_direction_spec(spec, "records")?;
        if path.is_empty() {
            return Err(CliError::Usage(format!("records spec {spec:?} has an empty path")));
        }
        inputs.push((direction, PathBuf::from(path)));
    }
    let directions: Vec<_> = inputs.iter().map(|(d, _)| d.clone()).collect();
    check_direction_count(&directions, "records")?;
    let grid = resolve_n_grid(args.n_grid.as_deref(), &SD_N_GRID)?;
    let policy = match args.pairing {
        PairingArg::Adjacent => PairingPolicy::ByAdjacentSequence,
        PairingArg::Nearest => {
            if !(args.max_gap.is_finite() && args.max_gap > 0.0) {
                return Err(CliError::Usage(format!(
                    "--max-gap must be positive, got {}",
                    args.max_gap
                )));
            }
            PairingPolicy::ByNearestSendTime { max_gap: args.max_gap }
        }
    };
    if !(args.asymmetry_threshold.is_finite() && args.asymmetry_threshold > 0.0) {
        return Err(CliError::Usage(format!(
            "--asymmetry-threshold must be positive, got {}",
            args.asymmetry_threshold
        )));
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|e| {
        CliError::Data(format!("cannot create --out-dir {}: {e}", args.out_dir.display()))
    })?;

    let mut input_digests = BTreeMap::new();
    for (direction, path) in &inputs {
        let digest = digest_file(path).map_err(|e| {
            CliError::Data(format!("cannot read {}: {e}", path.display()))
        })?;
        input_digests.insert(direction.to_string(), digest);
    }
    let config_echo = serde_json::json!({
        "records": inputs
            .iter()
            .map(|(d, p)| serde_json::json!({
                "direction": d.to_string(),
                "path": p.display().to_string(),
            }))
            .collect::<Vec<_>>(),
        "n_grid": grid,
        "pairing": policy,
        "asymmetry_threshold": args.asymmetry_threshold,
    });
    let mut manifest = RunManifest::new("estimate", config_echo, input_digests);

    let mut outcomes = Vec::new();
    for (direction, path) in &inputs {
        let outcome =
            process_direction(direction, path, &grid, policy, &args.out_dir, &manifest.id)?;
        eprintln!(
            "{}: {} records -> {} pairs ({} unpaired), mean {} Mbps at n={}, 2-sigma minimum n: {}",
            outcome.direction,
            outcome.accepted,
            outcome.pairs,
            outcome.unpaired_small + outcome.unpaired_large,
            format_mbps_3sig(outcome.mean_bandwidth_bps),
            grid.last().expect("non-empty"),
            match outcome.required_n {
                Some(n) => n.to_string(),
                None => "not reached within the tabulated n".to_string(),
            }
        );
        outcomes.push(outcome);
    }

    let asymmetry = if outcomes.len() == 2 {
        let report =
            compare_directions(&outcomes[0].table, &outcomes[1].table, args.asymmetry_threshold)
                .expect("tables share kind and grid by construction");
        eprintln!(
            "asymmetry {} vs {}: geometric-mean SD ratio {:.2}{}",
            outcomes[0].direction,
            outcomes[1].direction,
            report.geometric_mean_ratio,
            if report.flagged { " (FLAGGED: directions differ)" } else { "" }
        );
        Some(report)
    } else {
        None
    };

    manifest
        .write_sidecar(&args.out_dir.join("estimate"))
        .map_err(|e| CliError::Data(format!("cannot write manifest sidecar: {e}")))?;
    let machine = serde_json::json!({
        "manifest_id": manifest.id,
        "directions": outcomes
            .iter()
            .map(|o| serde_json::json!({
                "direction": o.direction.to_string(),
                "records_accepted": o.accepted,
                "pairs": o.pairs,
                "unpaired_small": o.unpaired_small,
                "unpaired_large": o.unpaired_large,
                "skipped_windows": o.skipped_windows,
                "mean_bandwidth_bps": o.mean_bandwidth_bps,
                "mean_bandwidth_mbps": format_mbps_3sig(o.mean_bandwidth_bps),
                "required_n_2sigma": o.required_n,
                "sd_csv": o.sd_csv.display().to_string(),
                "estimates_csv": o.estimates_csv.display().to_string(),
            }))
            .collect::<Vec<_>>(),
        "asymmetry": asymmetry,
    });
    println!("{}", serde_json::to_string_pretty(&machine).expect("report serializes"));
    Ok(())
}
