use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: String,
    seed: Option<u64>,
    versions: BTreeMap<&'static str, String>,
    /// SHA-256 of every file written under the output directory.
    outputs: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect(dir: &Path, rel: &str, out: &mut BTreeMap<String, String>) -> CliResult<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name().to_string_lossy().into_owned();
        let key = if rel.is_empty() { name.clone() } else { format!("{rel}/{name}") };
        let path = e.path();
        if path.is_dir() {
            collect(&path, &key, out)?;
        } else if key != MANIFEST {
            out.insert(key, sha256_file(&path)?);
        }
    }
    Ok(())
}

/// Writes `manifest.json` describing the run. It carries no timestamps, so
/// repeated runs with the same inputs produce the same manifest.
pub fn write_manifest(dir: &Path, command: &str, config: &RunConfig) -> CliResult<()> {
    let mut outputs = BTreeMap::new();
    collect(dir, "", &mut outputs)?;
    let versions = BTreeMap::from([
        ("msgnet", env!("CARGO_PKG_VERSION").to_string()),
        ("checkpoint_format", msgnet::checkpoint::VERSION.to_string()),
    ]);
    let m = Manifest {
        command,
        config_sha256: hex::encode(Sha256::digest(serde_json::to_vec(config)?)),
        seed: config.seed,
        versions,
        outputs,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| CliError::io(&path, e))
}
