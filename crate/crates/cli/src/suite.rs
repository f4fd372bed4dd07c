//! Scenario suite directories: one JSON file per scenario plus a manifest.

use crate::error::{CliError, CliResult};
use conplan::scene::{
    derive_seed, generate_member, load_scenario, member_kind, save_scenario, Scenario, SuiteConfig, SuiteKind,
};
use conplan::par::Exec;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.json";

/// How member seeds are derived; stored verbatim in every manifest.
pub const SEED_DERIVATION: &str = "seed_i = splitmix64_mix(suite_seed + (i + 1) * 0x9E3779B97F4A7C15) \
     (wrapping u64 arithmetic), where splitmix64_mix(z) = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; \
     z ^= z >> 27; z *= 0x94D049BB133111EB; z ^ (z >> 31)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub id: String,
    pub kind: SuiteKind,
    pub seed: u64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub suite: SuiteKind,
    pub count: usize,
    pub seed: u64,
    pub seed_derivation: String,
    pub scenarios: Vec<ManifestEntry>,
}

/// Generates the suite into `dir` and returns its manifest.
pub fn write_suite(dir: &Path, kind: SuiteKind, count: usize, seed: u64, cfg: &SuiteConfig, exec: Exec) -> CliResult<Manifest> {
    let scenarios: Vec<Scenario> = exec
        .map_range(count, |i| generate_member(kind, i, seed, cfg))
        .into_iter()
        .collect::<conplan::Result<_>>()?;
    let mut entries = Vec::with_capacity(count);
    for (i, sc) in scenarios.iter().enumerate() {
        let file = format!("{}.json", sc.id);
        save_scenario(sc, dir.join(&file))?;
        entries.push(ManifestEntry {
            index: i,
            id: sc.id.clone(),
            kind: member_kind(kind, i),
            seed: derive_seed(seed, i),
            file,
        });
    }
    let manifest = Manifest {
        suite: kind,
        count,
        seed,
        seed_derivation: SEED_DERIVATION.to_string(),
        scenarios: entries,
    };
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(conplan::Error::from)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| conplan::Error::io(&path, e))?;
    Ok(manifest)
}

/// Scenario files of a suite: the manifest order when a manifest exists,
/// otherwise every `*.json` file sorted by name.
pub fn suite_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Validation(format!("suite directory {} does not exist", dir.display())));
    }
    let manifest = dir.join(MANIFEST);
    if manifest.exists() {
        let text = std::fs::read_to_string(&manifest).map_err(|e| conplan::Error::io(&manifest, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", manifest.display())))?;
        return Ok(m.scenarios.iter().map(|e| dir.join(&e.file)).collect());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| conplan::Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_suite(dir: &Path, exec: Exec) -> CliResult<Vec<Scenario>> {
    let files = suite_files(dir)?;
    Ok(exec
        .map(&files, |p| load_scenario(p))
        .into_iter()
        .collect::<conplan::Result<_>>()?)
}
