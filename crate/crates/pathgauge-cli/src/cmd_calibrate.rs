//! `pathgauge calibrate`: rescale an error table between noise regimes
//! and answer how many measurements meet a target relative error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;

use pathgauge::report::parse_table_csv;
use pathgauge::simulator::{required_n_for_error, CorrectionFactors, SimError};

use crate::manifest::{sha256_hex, RunManifest};
use crate::{CalibrateArgs, CliError};

pub fn run(args: &CalibrateArgs) -> Result<(), CliError> {
    if !(args.target.is_finite() && args.target > 0.0) {
        return Err(CliError::Usage(format!(
            "--target must be a positive percentage, got {}",
            args.target
        )));
    }
    let factors = match args.k_combined {
        Some(combined) => CorrectionFactors::new(combined, 1.0),
        None => CorrectionFactors::new(args.k_lambda, args.k_delta_d),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let bytes = fs::read(&args.table)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", args.table.display())))?;
    let (table, source_manifest) = parse_table_csv(&bytes[..])
        .map_err(|e| CliError::Data(format!("{}: {e}", args.table.display())))?;
    let outcome = required_n_for_error(&table, &factors, args.target, args.interpolate)
        .map_err(|e| match e {
            SimError::NonPositiveArgument { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(format!("{}: {other}", args.table.display())),
        })?;

    let mut input_digests = BTreeMap::new();
    input_digests.insert(args.table.display().to_string(), sha256_hex(&bytes));
    let config_echo = serde_json::json!({
        "table": args.table.display().to_string(),
        "table_manifest_id": source_manifest,
        "k_lambda": factors.k_lambda,
        "k_delta_d": factors.k_delta_d,
        "combined_factor": factors.combined(),
        "target_percent": args.target,
        "interpolate": args.interpolate,
    });
    let mut manifest = RunManifest::new("calibrate", config_echo, input_digests);

    eprintln!(
        "corrected table ({} rows, combined factor {}):",
        outcome.corrected.rows.len(),
        factors.combined()
    );
    for row in &outcome.corrected.rows {
        eprintln!("  n={:<4} eta={:>7.2}%", row.n, row.value);
    }
    match outcome.required_n {
        Some(n) => eprintln!(
            "target {}% met at n = {n}{}",
            args.target,
            if outcome.interpolated { " (log-log interpolation)" } else { "" }
        ),
        None => {
            let last = outcome.corrected.rows.last().expect("table is non-empty");
            eprintln!(
                "target {}% not reached: smallest corrected error is {:.3}% at n={}",
                args.target, last.value, last.n
            );
        }
    }

    if let Some(stem) = &args.out {
        if let Some(parent) = stem.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| {
                    CliError::Data(format!("cannot create {}: {e}", parent.display()))
                })?;
            }
        }
        let csv_path = stem.with_extension("csv");
        let mut body = Vec::new();
        writeln!(body, "# manifest: {}", manifest.id).expect("vec write");
        writeln!(body, "n,eta_percent").expect("vec write");
        for row in &outcome.corrected.rows {
            writeln!(body, "{},{}", row.n, row.value).expect("vec write");
        }
        fs::write(&csv_path, body)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", csv_path.display())))?;
        manifest
            .write_sidecar(stem)
            .map_err(|e| CliError::Data(format!("cannot write manifest sidecar: {e}")))?;
        eprintln!("wrote {}", csv_path.display());
    }

    let machine = serde_json::json!({
        "manifest_id": manifest.id,
        "source_manifest_id": source_manifest,
        "combined_factor": factors.combined(),
        "target_percent": args.target,
        "interpolated": outcome.interpolated,
        "required_n": outcome.required_n,
        "corrected_rows": outcome.corrected.rows,
    });
    println!("{}", serde_json::to_string_pretty(&machine).expect("report serializes"));

    match outcome.required_n {
        Some(_) => Ok(()),
        None => Err(CliError::TargetNotReached(format!(
            "target {}% is below the smallest corrected tabulated error",
            args.target
        ))),
    }
}
