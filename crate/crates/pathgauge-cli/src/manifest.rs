//! Run manifests: every machine-readable output names the run that
//! produced it.
//!
//! The manifest id is a SHA-256 over the reproducibility-relevant state:
//! subcommand name, fully resolved configuration, input content digests,
//! and tool version. Wall-clock timestamps and execution details such as
//! thread counts are excluded on purpose, so re-running the same command
//! over the same inputs yields the same id and byte-identical report
//! files; timestamps live only in the manifest sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest a file's content, for `input_digests`.
pub fn digest_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 (hex) over command, config echo, input digests, and tool
    /// version; timestamps excluded.
    pub id: String,
    pub command: String,
    /// Fully resolved parameters the run executed with.
    pub config_echo: serde_json::Value,
    /// Content digest per named input (files only; network sources carry
    /// their address in the config echo instead).
    pub input_digests: BTreeMap<String, String>,
    pub tool_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

/// The serialization the id is computed over. serde_json maps iterate in
/// sorted key order, so this form is canonical.
#[derive(Serialize)]
struct IdMaterial<'a> {
    command: &'a str,
    config_echo: &'a serde_json::Value,
    input_digests: &'a BTreeMap<String, String>,
    tool_version: &'a str,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_echo: serde_json::Value,
        input_digests: BTreeMap<String, String>,
    ) -> Self {
        let tool_version = env!("CARGO_PKG_VERSION").to_string();
        let material = IdMaterial {
            command,
            config_echo: &config_echo,
            input_digests: &input_digests,
            tool_version: &tool_version,
        };
        let id = sha256_hex(
            serde_json::to_string(&material).expect("manifest material serializes").as_bytes(),
        );
        let started = unix_ms();
        Self {
            id,
            command: command.to_string(),
            config_echo,
            input_digests,
            tool_version,
            started_unix_ms: started,
            finished_unix_ms: started,
        }
    }

    /// Write the sidecar `<stem>.manifest.json`, stamping the finish time.
    pub fn write_sidecar(&mut self, stem: &Path) -> std::io::Result<PathBuf> {
        self.finished_unix_ms = unix_ms();
        let path = stem.with_extension("manifest.json");
        let mut body = serde_json::to_string_pretty(self).expect("manifest serializes");
        body.push('\n');
        fs::write(&path, body)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_ignores_timestamps_but_tracks_config() {
        let config = serde_json::json!({ "trials": 100, "lambda_rate": 1000.0 });
        let a = RunManifest::new("simulate", config.clone(), BTreeMap::new());
        std::thread::sleep(std::time::Duration::from_millis(2));
        let b = RunManifest::new("simulate", config, BTreeMap::new());
        assert_eq!(a.id, b.id);
        let c = RunManifest::new(
            "simulate",
            serde_json::json!({ "trials": 101, "lambda_rate": 1000.0 }),
            BTreeMap::new(),
        );
        assert_ne!(a.id, c.id);
    }

    #[test]
    fn id_tracks_inputs_and_command() {
        let config = serde_json::json!({});
        let mut digests = BTreeMap::new();
        digests.insert("fwd".to_string(), sha256_hex(b"abc"));
        let a = RunManifest::new("estimate", config.clone(), digests.clone());
        let b = RunManifest::new("calibrate", config.clone(), digests.clone());
        assert_ne!(a.id, b.id);
        digests.insert("rev".to_string(), sha256_hex(b"def"));
        let c = RunManifest::new("estimate", config, digests);
        assert_ne!(a.id, c.id);
    }

    #[test]
    fn sidecar_round_trips() {
        let dir = std::env::temp_dir().join(format!("pathgauge-manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let stem = dir.join("eta");
        let mut m = RunManifest::new("simulate", serde_json::json!({"x": 1}), BTreeMap::new());
        let path = m.write_sidecar(&stem).unwrap();
        assert!(path.ends_with("eta.manifest.json"));
        let parsed: RunManifest =
            serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!(parsed.id, m.id);
        assert!(parsed.finished_unix_ms >= parsed.started_unix_ms);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
