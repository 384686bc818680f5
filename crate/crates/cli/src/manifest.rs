//! Run manifests. Every artifact carries the SHA-256 of the manifest that
//! produced it: JSON files in a `manifest_hash` field, text files in a
//! leading `manifest_hash=<hex>` comment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const HASH_KEY: &str = "manifest_hash";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    /// Resolved configuration of the stages this command ran.
    pub config: serde_json::Value,
    /// SHA-256 of each input, keyed by role.
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
        }
    }

    pub fn input_file(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        let bytes = fs::read(path).with_context(|| format!("cli: cannot read {}", path.display()))?;
        self.inputs.insert(role.to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    /// Hash over the relative names and contents of every file under `dir`.
    pub fn input_dir(&mut self, role: &str, dir: &Path) -> anyhow::Result<()> {
        let mut files = Vec::new();
        collect_files(dir, &mut files)?;
        files.sort();
        let mut hasher = Sha256::new();
        for f in &files {
            let rel = f.strip_prefix(dir).unwrap_or(f).to_string_lossy().replace('\\', "/");
            let bytes = fs::read(f).with_context(|| format!("cli: cannot read {}", f.display()))?;
            hasher.update((rel.len() as u64).to_le_bytes());
            hasher.update(rel.as_bytes());
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
        self.inputs.insert(role.to_string(), hex::encode(hasher.finalize()));
        Ok(())
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Writes `manifest.json` and returns the hash.
    pub fn write(&self, out: &Path) -> anyhow::Result<String> {
        let hash = self.hash();
        #[derive(Serialize)]
        struct Stamped<'a> {
            manifest_hash: &'a str,
            manifest: &'a Manifest,
        }
        write_json(&out.join("manifest.json"), &Stamped { manifest_hash: &hash, manifest: self })?;
        Ok(hash)
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("cli: cannot list {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

pub fn preamble(hash: &str) -> Vec<String> {
    vec![format!("{HASH_KEY}={hash}")]
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("cli: serializing output")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cli: cannot write {}", path.display()))
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cli: cannot create {}", dir.display()))
}

/// Manifest hash embedded in an artifact, if any.
pub fn embedded_hash(path: &Path) -> anyhow::Result<Option<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cli: cannot read {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("report: {} is not JSON", path.display()))?;
        return Ok(value.get(HASH_KEY).and_then(|h| h.as_str()).map(str::to_string));
    }
    let marker = format!("{HASH_KEY}=");
    for line in text.lines().take(4) {
        if let Some(at) = line.find(&marker) {
            let rest = &line[at + marker.len()..];
            let hash: String = rest.chars().take_while(char::is_ascii_hexdigit).collect();
            if hash.len() == 64 {
                return Ok(Some(hash));
            }
        }
    }
    Ok(None)
}

/// The single hash shared by every artifact in `paths`.
pub fn common_hash(paths: &[PathBuf]) -> anyhow::Result<String> {
    let mut seen: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for path in paths {
        match embedded_hash(path)? {
            Some(h) => seen.entry(h).or_default().push(path.display().to_string()),
            None => bail!("report: {} carries no manifest hash", path.display()),
        }
    }
    match seen.len() {
        0 => bail!("report: no artifacts given"),
        1 => Ok(seen.into_keys().next().expect("one entry")),
        _ => {
            let groups: Vec<String> = seen.iter().map(|(h, files)| format!("{}… in {}", &h[..12], files.join(", "))).collect();
            bail!("report: refusing artifacts from different manifests: {}", groups.join("; "))
        }
    }
}
