//! `pathgauge report`: render a deterministic digest of a run directory,
//! tying every report file back to the manifest that produced it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::manifest::RunManifest;
use crate::{CliError, ReportArgs};

/// Pull the `# manifest: <id>` comment out of a CSV head, if present.
fn csv_manifest_id(path: &Path) -> Option<String> {
    let content = fs::read_to_string(path).ok()?;
    for line in content.lines().take_while(|l| l.starts_with('#')) {
        if let Some(id) = line.strip_prefix("# manifest:") {
            return Some(id.trim().to_string());
        }
    }
    None
}

fn csv_data_rows(path: &Path) -> usize {
    let Ok(content) = fs::read_to_string(path) else { return 0 };
    content
        .lines()
        .filter(|l| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .count()
        .saturating_sub(1) // header
}

fn json_manifest_id(path: &Path) -> Option<String> {
    let bytes = fs::read(path).ok()?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).ok()?;
    value.get("manifest_id")?.as_str().map(str::to_string)
}

pub fn run(args: &ReportArgs) -> Result<(), CliError> {
    let entries = fs::read_dir(&args.dir)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", args.dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();

    let mut manifests: Vec<RunManifest> = Vec::new();
    for path in &files {
        if path.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".manifest.json")) {
            let bytes = fs::read(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            let parsed: RunManifest = serde_json::from_slice(&bytes).map_err(|e| {
                CliError::Data(format!("{} is not a manifest sidecar: {e}", path.display()))
            })?;
            manifests.push(parsed);
        }
    }
    if manifests.is_empty() {
        return Err(CliError::Data(format!(
            "no manifest sidecars (*.manifest.json) in {}",
            args.dir.display()
        )));
    }
    manifests.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.command.cmp(&b.command)));

    // Map report files (CSV and non-sidecar JSON) to the manifest they name.
    let mut by_manifest: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut orphans: Vec<String> = Vec::new();
    let known: Vec<&str> = manifests.iter().map(|m| m.id.as_str()).collect();
    for path in &files {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.ends_with(".manifest.json") {
            continue;
        }
        let referenced = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => csv_manifest_id(path)
                .map(|id| (id, format!("{name} ({} data rows)", csv_data_rows(path)))),
            Some("json") => json_manifest_id(path).map(|id| (id, name.clone())),
            _ => None,
        };
        if let Some((id, label)) = referenced {
            if known.contains(&id.as_str()) {
                by_manifest.entry(id).or_default().push(label);
            } else {
                orphans.push(format!("{name} names unknown manifest {id}"));
            }
        }
    }

    println!("run directory: {}", args.dir.display());
    for manifest in &manifests {
        println!(
            "manifest {} ({}, tool {})",
            manifest.id, manifest.command, manifest.tool_version
        );
        println!(
            "  config: {}",
            serde_json::to_string(&manifest.config_echo).expect("echo serializes")
        );
        if manifest.input_digests.is_empty() {
            println!("  inputs: (none)");
        } else {
            for (name, digest) in &manifest.input_digests {
                println!("  input {name}: sha256 {digest}");
            }
        }
        match by_manifest.get(&manifest.id) {
            Some(labels) => {
                for label in labels {
                    println!("  file: {label}");
                }
            }
            None => println!("  file: (no report files in this directory)"),
        }
    }
    if orphans.is_empty() {
        println!("orphans: (none)");
    } else {
        for orphan in &orphans {
            println!("orphan: {orphan}");
        }
    }
    Ok(())
}
