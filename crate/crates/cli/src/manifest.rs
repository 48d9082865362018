//! Per-stage run manifests and the wall-clock timing log.
//!
//! Manifests hold only deterministic content: the experiment config hash,
//! seeds, versions and output checksums. Timings go to a separate
//! `timings.json` in the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use specmap_core::RunConfig;

pub const MANIFEST: &str = "run_manifest.json";
pub const TIMINGS: &str = "timings.json";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of everything that affects results; input and output locations are
/// left out so relocated runs compare equal.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let v = json!({
        "zooms": cfg.zooms,
        "sigma_m": cfg.sigma_m,
        "model": cfg.model,
        "eval": cfg.eval,
        "explain": cfg.explain,
        "synth": cfg.synth,
    });
    Ok(sha256_hex(&serde_json::to_vec(&v)?))
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

/// Manifest directory of a stage: the synthetic generator writes next to its
/// inputs, every other stage into its output subdirectory.
pub fn manifest_dir(stage: &str, cfg: &RunConfig) -> PathBuf {
    if stage == "synth" {
        cfg.input_dir.clone()
    } else {
        cfg.stage_dir(stage)
    }
}

/// Output files are listed relative to the run root (the input directory for
/// the generator, the output directory otherwise) so relocated runs match.
pub fn write_manifest(stage: &str, cfg: &RunConfig, outputs: &[PathBuf]) -> Result<()> {
    let dir = manifest_dir(stage, cfg);
    let root = if stage == "synth" { &cfg.input_dir } else { &cfg.output_dir };
    let mut files = Vec::new();
    for p in outputs {
        let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        let rel = p.strip_prefix(root).with_context(|| format!("{} is outside {}", p.display(), root.display()))?;
        let file = rel.to_string_lossy().replace('\\', "/");
        files.push(OutputEntry { file, sha256: sha256_hex(&bytes) });
    }
    let m = json!({
        "stage": stage,
        "config_sha256": config_hash(cfg)?,
        "model_seed": cfg.model.seed,
        "synth_seed": cfg.synth.seed,
        "versions": { "specmap": env!("CARGO_PKG_VERSION") },
        "outputs": files,
    });
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Adds or replaces one stage's wall-clock seconds in `timings.json`.
pub fn record_timing(output_dir: &Path, stage: &str, secs: f64) -> Result<()> {
    let path = output_dir.join(TIMINGS);
    let mut t: BTreeMap<String, f64> = match std::fs::read_to_string(&path) {
        Ok(s) => serde_json::from_str(&s).unwrap_or_default(),
        Err(_) => BTreeMap::new(),
    };
    t.insert(stage.to_string(), secs);
    std::fs::create_dir_all(output_dir).with_context(|| format!("creating {}", output_dir.display()))?;
    std::fs::write(&path, serde_json::to_string_pretty(&t)? + "\n").with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_locations_but_not_settings() {
        let a = RunConfig::default();
        let b = RunConfig { output_dir: "elsewhere".into(), ..RunConfig::default() };
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        let mut c = RunConfig::default();
        c.model.seed += 1;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
    }

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
