//! Run manifests: every command records its effective configuration, input
//! hashes, and planned outputs next to its primary output before doing any
//! work, so results stay attributable after the fact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub created_at: u64,
    /// Input path -> SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Full effective configuration, flags included.
    pub effective: serde_json::Value,
}

/// Writes `<anchor>.manifest.json` and returns its path.
pub fn write_manifest(
    anchor: &Path,
    command: &str,
    effective: serde_json::Value,
    inputs: &[&Path],
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let mut input_hashes = BTreeMap::new();
    for path in inputs {
        let digest = rlvrdetect::corpus::file_sha256(path)
            .with_context(|| format!("hashing input {}", path.display()))?;
        input_hashes.insert(path.display().to_string(), digest);
    }
    let manifest = RunManifest {
        schema: 1,
        tool: "rlvrdetect",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        created_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        inputs: input_hashes,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        effective,
    };
    let name = anchor
        .file_name()
        .and_then(|n| n.to_str())
        .map(|n| format!("{n}.manifest.json"))
        .unwrap_or_else(|| "run.manifest.json".to_string());
    let path = anchor.with_file_name(name);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    let body = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lands_next_to_output_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("prompts.jsonl");
        std::fs::write(&input, "{}\n").unwrap();
        let out = dir.path().join("scores.jsonl");
        let path = write_manifest(
            &out,
            "score",
            serde_json::json!({ "k": 10 }),
            &[&input],
            std::slice::from_ref(&out),
        )
        .unwrap();
        assert_eq!(path, dir.path().join("scores.jsonl.manifest.json"));
        let value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(value["command"], "score");
        assert_eq!(value["effective"]["k"], 10);
        let hash = value["inputs"][input.display().to_string()].as_str().unwrap();
        assert_eq!(hash.len(), 64);
        assert_eq!(value["outputs"][0], out.display().to_string());
    }
}
