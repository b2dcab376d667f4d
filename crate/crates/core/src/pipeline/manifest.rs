use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Dataset name, for labeled-dataset outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Path relative to the output directory.
    pub path: String,
    /// Records in the file (pairs for datasets).
    pub count: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub outputs: Vec<OutputRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counters: BTreeMap<String, u64>,
}

/// Line count and digest of an input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub lines: usize,
    pub sha256: String,
}

/// Deterministic run summary. Wall-clock times live in a separate
/// timings file so that reruns produce identical manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, InputRecord>,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Output record for a dataset name, from whichever stage wrote it.
    pub fn dataset(&self, name: &str) -> Option<&OutputRecord> {
        self.stages
            .iter()
            .flat_map(|s| &s.outputs)
            .find(|o| o.dataset.as_deref() == Some(name))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest and line count of a file, streamed.
pub fn digest_file(path: impl AsRef<Path>) -> Result<(String, usize)> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut lines = 0;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        lines += buf[..n].iter().filter(|&&b| b == b'\n').count();
    }
    Ok((hex::encode(hasher.finalize()), lines))
}

/// Checks the stage inclusions recorded by a finished run against the
/// datasets on disk. Returns one message per violation.
pub fn check_manifest(out_dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let out_dir = out_dir.as_ref();
    let manifest = Manifest::load(out_dir.join(MANIFEST_FILE))?;
    let mut violations = Vec::new();
    if manifest.status != RunStatus::Ok {
        violations.push(format!(
            "run failed at stage {}",
            manifest.failed_stage.as_deref().unwrap_or("?")
        ));
        return Ok(violations);
    }
    let mut sets = BTreeMap::new();
    for stage in &manifest.stages {
        for out in &stage.outputs {
            let path = out_dir.join(&out.path);
            let (digest, _) = digest_file(&path)?;
            if digest != out.sha256 {
                violations.push(format!("{} does not match its recorded digest", out.path));
            }
            if let Some(name) = &out.dataset {
                let ds = LabeledDataset::read(&path, name.clone())?;
                if ds.len() != out.count {
                    violations.push(format!(
                        "{name} has {} pairs, manifest says {}",
                        ds.len(),
                        out.count
                    ));
                }
                sets.insert(name.clone(), ds);
            }
        }
    }
    let get = |name: &str| sets.get(name);
    let mut subset = |a: &str, b: &str| match (get(a), get(b)) {
        (Some(x), Some(y)) if x.is_subset_of(y) => {}
        (Some(_), Some(_)) => violations.push(format!("{a} is not a subset of {b}")),
        _ => violations.push(format!("{a} or {b} missing from manifest")),
    };
    subset(super::WEB_FILTERED, super::WEB);
    subset(super::NOISE, super::WEB);
    subset(super::TEXTCLF_FILTERED, super::TEXTCLF);
    match (get(super::WEB_FILTERED), get(super::NOISE)) {
        (Some(a), Some(b)) if !a.is_disjoint_from(b) => violations.push(format!(
            "{} and {} overlap",
            super::WEB_FILTERED,
            super::NOISE
        )),
        _ => {}
    }
    if let (Some(a), Some(b), Some(vt)) = (
        get(super::WEB_FILTERED),
        get(super::TEXTCLF_FILTERED),
        get(super::ASSEMBLED),
    ) {
        let expected: std::collections::BTreeSet<_> =
            a.pairs().union(&b.pairs()).copied().collect();
        if vt.pairs() != expected {
            violations.push(format!(
                "{} is not the union of {} and {}",
                super::ASSEMBLED,
                super::WEB_FILTERED,
                super::TEXTCLF_FILTERED
            ));
        }
    } else {
        violations.push(format!("{} inputs missing from manifest", super::ASSEMBLED));
    }
    Ok(violations)
}
