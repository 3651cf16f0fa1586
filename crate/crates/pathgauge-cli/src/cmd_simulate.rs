//! `pathgauge simulate`: run the Monte Carlo error-table simulation (or a
//! parameter sweep) and emit CSV + JSON + manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use pathgauge::model::{ErrorMetric, SimConfig};
use pathgauge::report::{write_eta_csv, write_sim_json};
use pathgauge::simulator::{simulate_eta_table, sweep, SimError, SimResult, SimRow};

use crate::manifest::RunManifest;
use crate::{resolve_n_grid, CliError, MetricArg, PresetArg, SimulateArgs};

/// Resolve preset and flag overrides into a concrete configuration plus
/// the output correction the preset implies.
fn resolve_config(args: &SimulateArgs) -> Result<(SimConfig, Option<f64>), CliError> {
    let mut config = SimConfig::default();
    let mut correction = None;
    if let Some(preset) = args.preset {
        config.lambda_rate = 1000.0;
        config.d_min = 0.0;
        config.true_delta_d = 8e-4;
        config.delta_w = 8000.0;
        config.n_values = vec![5, 10, 20, 30, 50, 100, 200];
        if preset == PresetArg::Ipv6Table4 {
            correction = Some(1.53);
        }
    }
    if let Some(v) = args.lambda {
        config.lambda_rate = v;
    }
    if let Some(v) = args.d_min {
        config.d_min = v;
    }
    if let Some(v) = args.delta_d {
        config.true_delta_d = v;
    }
    if let Some(v) = args.delta_w {
        config.delta_w = v;
    }
    if let Some(v) = args.trials {
        config.trials = v;
    }
    if args.n_grid.is_some() {
        config.n_values = resolve_n_grid(args.n_grid.as_deref(), &[])?;
    }
    if let Some(v) = args.quantum {
        config.clock_quantum = v;
    }
    if let Some(m) = args.metric {
        config.error_metric = match m {
            MetricArg::Rms => ErrorMetric::Rms,
            MetricArg::MeanAbs => ErrorMetric::MeanAbs,
        };
    }
    if let Some(v) = args.trim {
        config.trim_fraction = v;
    }
    config.rng_seed = args.seed;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((config, correction))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                CliError::Data(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    Ok(())
}

fn map_sim_error(e: SimError) -> CliError {
    match e {
        SimError::Model(m) => CliError::Usage(m.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

/// Divide the output rows by the preset correction, leaving the trial
/// accounting untouched.
fn correct_rows(result: &SimResult, correction: f64) -> Vec<SimRow> {
    result
        .rows
        .iter()
        .map(|r| SimRow { eta_percent: r.eta_percent / correction, ..r.clone() })
        .collect()
}

fn run_sweep(
    args: &SimulateArgs,
    base: &SimConfig,
    correction: Option<f64>,
) -> Result<(), CliError> {
    let lambdas = args.sweep_lambda.clone().unwrap_or_else(|| vec![base.lambda_rate]);
    let delta_ds = args.sweep_delta_d.clone().unwrap_or_else(|| vec![base.true_delta_d]);
    let points = sweep(base, &lambdas, &delta_ds, args.jobs);

    let config_echo = serde_json::json!({
        "base": base,
        "sweep_lambda": lambdas,
        "sweep_delta_d": delta_ds,
        "preset": args.preset.map(PresetArg::name),
        "correction_combined": correction,
    });
    let mut manifest = RunManifest::new("simulate-sweep", config_echo, BTreeMap::new());

    let mut rendered = Vec::with_capacity(points.len());
    let mut ok = 0usize;
    for point in &points {
        match &point.outcome {
            Ok(result) => {
                ok += 1;
                let rows = match correction {
                    Some(c) => correct_rows(result, c),
                    None => result.rows.clone(),
                };
                eprintln!(
                    "lambda={} delta_d={} seed={}: {}",
                    point.config.lambda_rate,
                    point.config.true_delta_d,
                    point.config.rng_seed,
                    rows.iter()
                        .map(|r| format!("n={} eta={:.1}%", r.n, r.eta_percent))
                        .collect::<Vec<_>>()
                        .join(" ")
                );
                rendered.push(serde_json::json!({
                    "lambda_rate": point.config.lambda_rate,
                    "true_delta_d": point.config.true_delta_d,
                    "rng_seed": point.config.rng_seed,
                    "rows": rows,
                }));
            }
            Err(e) => {
                eprintln!(
                    "lambda={} delta_d={}: failed: {e}",
                    point.config.lambda_rate, point.config.true_delta_d
                );
                rendered.push(serde_json::json!({
                    "lambda_rate": point.config.lambda_rate,
                    "true_delta_d": point.config.true_delta_d,
                    "rng_seed": point.config.rng_seed,
                    "error": e.to_string(),
                }));
            }
        }
    }

    let stem: PathBuf = args.out.with_file_name(format!(
        "{}-sweep",
        args.out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    ensure_parent(&stem)?;
    let json_path = stem.with_extension("json");
    let body = serde_json::json!({
        "manifest_id": manifest.id,
        "base_config": base,
        "correction_combined": correction,
        "points": rendered,
    });
    std::fs::write(&json_path, format!("{:#}\n", body))
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", json_path.display())))?;
    manifest
        .write_sidecar(&stem)
        .map_err(|e| CliError::Data(format!("cannot write manifest sidecar: {e}")))?;
    eprintln!("sweep: {ok} of {} point(s) succeeded -> {}", points.len(), json_path.display());
    if ok == 0 {
        return Err(CliError::Usage("every sweep point failed validation".into()));
    }
    Ok(())
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let (config, correction) = resolve_config(args)?;

    if args.sweep_lambda.is_some() || args.sweep_delta_d.is_some() {
        return run_sweep(args, &config, correction);
    }

    let result = simulate_eta_table(&config, args.jobs).map_err(map_sim_error)?;
    let output = SimResult {
        config: config.clone(),
        rows: match correction {
            Some(c) => correct_rows(&result, c),
            None => result.rows.clone(),
        },
    };

    let config_echo = serde_json::json!({
        "config": config,
        "preset": args.preset.map(PresetArg::name),
        "correction_combined": correction,
    });
    let mut manifest = RunManifest::new("simulate", config_echo, BTreeMap::new());

    ensure_parent(&args.out)?;
    let csv_path = args.out.with_extension("csv");
    let mut w = BufWriter::new(File::create(&csv_path).map_err(|e| {
        CliError::Data(format!("cannot write {}: {e}", csv_path.display()))
    })?);
    write_eta_csv(&mut w, &output, Some(&manifest.id))
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", csv_path.display())))?;
    let json_path = args.out.with_extension("json");
    let mut w = BufWriter::new(File::create(&json_path).map_err(|e| {
        CliError::Data(format!("cannot write {}: {e}", json_path.display()))
    })?);
    write_sim_json(&mut w, &output, Some(&manifest.id))
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", json_path.display())))?;
    manifest
        .write_sidecar(&args.out)
        .map_err(|e| CliError::Data(format!("cannot write manifest sidecar: {e}")))?;

    eprintln!(
        "simulate{}: lambda={}/s delta_d={}s delta_w={} bits trials={} seed={}{}",
        args.preset.map(|p| format!(" --preset {}", p.name())).unwrap_or_default(),
        config.lambda_rate,
        config.true_delta_d,
        config.delta_w,
        config.trials,
        config.rng_seed,
        correction.map(|c| format!(" correction={c}")).unwrap_or_default()
    );
    for row in &output.rows {
        eprintln!(
            "  n={:<4} eta={:>7.2}%  (kept {}, skipped {}, trimmed {})",
            row.n, row.eta_percent, row.kept, row.skipped, row.trimmed
        );
    }
    eprintln!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}
