//! Run manifests: a small JSON record of what a command consumed.
//!
//! A manifest carries the SHA-256 of the effective configuration and of
//! every input file, plus the component versions — and deliberately no
//! timestamps, so rerunning a command over unchanged inputs rewrites the
//! manifest byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use panelnet::error::{Error, Result};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    versions: BTreeMap<String, String>,
}

pub fn hash_bytes(data: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let data = fs::read(path)
        .map_err(|e| Error::Validation(format!("missing input: {} ({e})", path.display())))?;
    Ok(hash_bytes(&data))
}

/// Writes `manifest_<command>.json` into the output directory.
pub fn write_manifest(
    command: &str,
    config: &RunConfig,
    inputs: &[(&str, &Path)],
    out_dir: &Path,
) -> Result<()> {
    // The JSON encoding of the config follows struct field order, so it is a
    // stable canonical form to hash.
    let config_json = serde_json::to_string(config)
        .map_err(|e| Error::Validation(format!("cannot encode config: {e}")))?;
    let mut input_hashes = BTreeMap::new();
    for (name, path) in inputs {
        input_hashes.insert((*name).to_string(), hash_file(path)?);
    }
    let mut versions = BTreeMap::new();
    // Both crates share the workspace version.
    versions.insert("panelnet".to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions.insert("panelnet-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
    let manifest = Manifest {
        command: command.to_string(),
        config_hash: hash_bytes(config_json.as_bytes()),
        inputs: input_hashes,
        versions,
    };
    let path = out_dir.join(format!("manifest_{command}.json"));
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Validation(format!("cannot encode manifest: {e}")))?;
    fs::write(&path, text + "\n")?;
    Ok(())
}
