//! Config-file loading, dotted-path overrides, run identity, and manifests.
//!
//! The config document is TOML mirroring [`ExperimentConfig`] field for
//! field. Command-line overrides address fields with dotted paths
//! (`al.budget=10`); values are parsed as TOML fragments so numbers, bools,
//! and arrays work, with a plain-string fallback for bare paths.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::ExperimentConfig;
use crate::error::{Error, Result};

/// Read and parse a TOML config document.
pub fn load_document(path: &Path) -> Result<toml::Value> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    text.parse::<toml::Value>()
        .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
}

/// Apply one `dotted.path=value` override onto the parsed document.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::config(
            "override",
            format!("`{assignment}` is not of the form key.path=value"),
        )
    })?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::config("override", format!("bad path `{path}`")));
    }
    // Parse the value as a TOML fragment; fall back to a literal string
    // (lets bare paths like dataset.path=data/x.csv work unquoted).
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("v").expect("fragment key"),
        _ => toml::Value::String(raw.to_string()),
    };

    let mut node = doc;
    for seg in &segments[..segments.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::config("override", format!("`{path}` crosses a non-table value"))
        })?;
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::value::Table::new()));
    }
    let table = node.as_table_mut().ok_or_else(|| {
        Error::config("override", format!("`{path}` crosses a non-table value"))
    })?;
    table.insert(segments[segments.len() - 1].to_string(), parsed);
    Ok(())
}

/// Deserialize the (possibly overridden) document into a typed config.
pub fn into_config(doc: toml::Value) -> Result<ExperimentConfig> {
    doc.try_into()
        .map_err(|e| Error::config("config", e.to_string()))
}

/// Load a config file and apply dotted-path overrides in order.
pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut doc = load_document(path)?;
    for assignment in overrides {
        apply_override(&mut doc, assignment)?;
    }
    into_config(doc)
}

/// Canonical config serialization used for hashing: compact JSON with fields
/// in declaration order, which is stable for a given crate version.
pub fn canonical_config(cfg: &ExperimentConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

/// Content hash of the configuration plus the crate version; stable across
/// reruns of the same config with the same binary.
pub fn run_id(cfg: &ExperimentConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical_config(cfg).as_bytes());
    hasher.update([0]);
    hasher.update(env!("CARGO_PKG_VERSION").as_bytes());
    let digest = hasher.finalize();
    let mut id = String::with_capacity(16);
    for byte in &digest[..8] {
        id.push_str(&format!("{byte:02x}"));
    }
    id
}

/// Run manifest: written with status `running` before work starts and
/// finalized afterwards. Timestamps live here and only here, so result files
/// stay byte-identical across reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub status: String,
    pub created_unix: u64,
    pub finished_unix: Option<u64>,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn begin(run_id: &str, command: &str, config: &ExperimentConfig) -> RunManifest {
        RunManifest {
            run_id: run_id.to_string(),
            command: command.to_string(),
            status: "running".to_string(),
            created_unix: now_unix(),
            finished_unix: None,
            config: config.clone(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self, status: &str, outputs: Vec<String>) {
        self.status = status.to_string();
        self.finished_unix = Some(now_unix());
        self.outputs = outputs;
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::DatasetSpec;
    use std::io::Write;

    fn minimal_toml() -> &'static str {
        r#"
[dataset]
kind = "synthetic"
n_per_class = 30
classes = 2
dims = 3
separation = 2.0
seed = 5
"#
    }

    #[test]
    fn loads_minimal_config_with_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(minimal_toml().as_bytes()).unwrap();
        let cfg = load_with_overrides(f.path(), &[]).unwrap();
        assert_eq!(cfg.al.rounds, 10);
        assert_eq!(cfg.al.budget, 10);
        assert_eq!(cfg.al.n_init, 300);
        assert_eq!(cfg.al.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.unbounded.pool_fraction, 0.5);
        match cfg.dataset {
            DatasetSpec::Synthetic { classes, .. } => assert_eq!(classes, 2),
            _ => panic!("wrong dataset kind"),
        }
    }

    #[test]
    fn dotted_overrides_reach_nested_fields() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(minimal_toml().as_bytes()).unwrap();
        let cfg = load_with_overrides(
            f.path(),
            &[
                "al.budget=25".to_string(),
                "al.strategies=[\"random\",\"salutary\"]".to_string(),
                "train.lambda=0.01".to_string(),
                "output.dir=some/dir".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.al.budget, 25);
        assert_eq!(cfg.al.strategies.len(), 2);
        assert_eq!(cfg.train.lambda, 0.01);
        assert_eq!(cfg.output.dir, PathBuf::from("some/dir"));
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        let mut doc = minimal_toml().parse::<toml::Value>().unwrap();
        assert!(apply_override(&mut doc, "no-equals-sign").is_err());
        assert!(apply_override(&mut doc, ".x=1").is_err());
        // Unknown field surfaces at deserialization.
        apply_override(&mut doc, "al.nonsense=1").unwrap();
        assert!(matches!(into_config(doc), Err(Error::Config { .. })));
    }

    #[test]
    fn run_id_is_stable_and_config_sensitive() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(minimal_toml().as_bytes()).unwrap();
        let a = load_with_overrides(f.path(), &[]).unwrap();
        let b = load_with_overrides(f.path(), &[]).unwrap();
        assert_eq!(run_id(&a), run_id(&b));
        let c = load_with_overrides(f.path(), &["al.budget=99".to_string()]).unwrap();
        assert_ne!(run_id(&a), run_id(&c));
        assert_eq!(run_id(&a).len(), 16);
    }
}
