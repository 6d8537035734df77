//! `run_manifest.json`: one entry per subcommand, merged into any existing
//! manifest in the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub args: Vec<String>,
    pub seed: u64,
    pub config: RunConfig,
    /// Path to sha256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
    paths.iter().map(|p| Ok((p.display().to_string(), sha256_file(p)?))).collect()
}

impl RunRecord {
    pub fn new(args: Vec<String>, config: &RunConfig, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<Self, CliError> {
        Ok(Self { args, seed: config.seed, config: config.clone(), inputs: digests(inputs)?, outputs: digests(outputs)? })
    }
}

/// Insert `record` under `command` and rewrite the manifest.
pub fn record(dir: &Path, command: &str, record: RunRecord) -> Result<PathBuf, CliError> {
    let path = dir.join(MANIFEST_NAME);
    let mut all: BTreeMap<String, RunRecord> = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
        Err(e) => return Err(CliError::io(&path, e)),
    };
    all.insert(command.to_string(), record);
    let mut text = serde_json::to_string_pretty(&all).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
pub fn load(dir: &Path) -> Result<BTreeMap<String, RunRecord>, CliError> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_merge_by_command() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.bin");
        std::fs::write(&f, b"abc").unwrap();
        let c = RunConfig::default();
        record(dir.path(), "synth", RunRecord::new(vec![], &c, &[], &[f.clone()]).unwrap()).unwrap();
        record(dir.path(), "make-pretext", RunRecord::new(vec![], &c, &[f.clone()], &[]).unwrap()).unwrap();
        let m = load(dir.path()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(
            m["synth"].outputs[&f.display().to_string()],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
