use crate::config::ExperimentConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    config_file: String,
    code_version: &'static str,
    runtime_seconds: f64,
    threads: usize,
    artifacts: &'a [ArtifactEntry],
    notes: &'a [String],
}

/// Output directory for one command run. Every file name embeds the config hash.
pub struct ArtifactSet {
    dir: PathBuf,
    command: String,
    hash: String,
    started: Instant,
    entries: Vec<ArtifactEntry>,
    notes: Vec<String>,
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

impl ArtifactSet {
    pub fn create(config: &ExperimentConfig, command: &str) -> io::Result<Self> {
        fs::create_dir_all(&config.out)?;
        let set = ArtifactSet {
            dir: config.out.clone(),
            command: command.to_string(),
            hash: config.hash(),
            started: Instant::now(),
            entries: Vec::new(),
            notes: Vec::new(),
        };
        let name = format!("config-{}.json", set.hash);
        write_atomic(&set.dir.join(&name), config.canonical_json().as_bytes())?;
        Ok(set)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// `<command>-<stem>-<hash>.<ext>`.
    pub fn name(&self, stem: &str, ext: &str) -> String {
        format!("{}-{}-{}.{}", self.command, stem, self.hash, ext)
    }

    pub fn write(&mut self, stem: &str, ext: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        let file = self.name(stem, ext);
        let path = self.dir.join(&file);
        write_atomic(&path, bytes)?;
        self.entries.push(ArtifactEntry { file, sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() });
        Ok(path)
    }

    pub fn write_json(&mut self, stem: &str, value: &impl Serialize) -> io::Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
        bytes.push(b'\n');
        self.write(stem, "json", &bytes)
    }

    pub fn write_csv(&mut self, stem: &str, fill: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> io::Result<PathBuf> {
        let mut bytes = Vec::new();
        fill(&mut bytes)?;
        self.write(stem, "csv", &bytes)
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn artifacts(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    /// Writes `manifest-<command>-<hash>.json`; the only artifact carrying a runtime.
    pub fn finish(&self) -> io::Result<PathBuf> {
        let manifest = Manifest {
            command: &self.command,
            config_hash: self.hash.clone(),
            config_file: format!("config-{}.json", self.hash),
            code_version: env!("CARGO_PKG_VERSION"),
            runtime_seconds: self.started.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
            artifacts: &self.entries,
            notes: &self.notes,
        };
        let path = self.dir.join(format!("manifest-{}-{}.json", self.command, self.hash));
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(io::Error::other)?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_atomic(&path, b"x\n").unwrap();
        write_atomic(&path, b"y\n").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"y\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn names_embed_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig { out: dir.path().to_path_buf(), ..Default::default() };
        let mut set = ArtifactSet::create(&config, "demo").unwrap();
        let p = set.write("table", "csv", b"a,b\n").unwrap();
        assert!(p.file_name().unwrap().to_str().unwrap().contains(&config.hash()));
        let m = set.finish().unwrap();
        let text = fs::read_to_string(m).unwrap();
        assert!(text.contains("\"config_hash\"") && text.contains("runtime_seconds"));
    }
}
