//! Run manifests: a JSON sidecar written next to every command output,
//! recording the exact invocation, input checksums, seed, and output
//! checksums. Re-running the recorded argv must reproduce every output
//! up to timing columns, which are excluded from the stable checksum.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// A file path with content checksums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileStamp {
    pub path: String,
    /// SHA-256 of the raw bytes.
    pub sha256: String,
    /// SHA-256 with timing CSV columns removed; equals `sha256` for files
    /// that carry no timing columns.
    pub stable_sha256: String,
}

impl FileStamp {
    pub fn for_path(path: &Path) -> Result<Self> {
        Ok(FileStamp {
            path: path.display().to_string(),
            sha256: sha256_hex(path)?,
            stable_sha256: stable_sha256_hex(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    /// Subcommand name.
    pub command: String,
    /// Full argument vector after the program name; re-running it must
    /// reproduce the outputs.
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub dataset: Option<FileStamp>,
    pub index: Option<FileStamp>,
    pub outputs: Vec<FileStamp>,
    pub started_unix_seconds: u64,
    pub duration_seconds: f64,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        RunManifest {
            version: MANIFEST_VERSION,
            command: command.to_string(),
            argv,
            seed: None,
            dataset: None,
            index: None,
            outputs: Vec::new(),
            started_unix_seconds: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            duration_seconds: 0.0,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Writes atomically: a temp file in the same directory, then a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid("manifest", e.to_string()))?;
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(format!(".tmp{}", std::process::id()));
        let tmp_path = path.with_file_name(name);
        let mut tmp = std::fs::File::create(&tmp_path).map_err(|e| Error::io(&tmp_path, e))?;
        tmp.write_all(json.as_bytes())
            .and_then(|_| tmp.write_all(b"\n"))
            .and_then(|_| tmp.sync_all())
            .map_err(|e| Error::io(&tmp_path, e))?;
        drop(tmp);
        std::fs::rename(&tmp_path, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
            offset: 0,
        })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                version: manifest.version,
            });
        }
        Ok(manifest)
    }
}

/// Sidecar path: `<output>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let got = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if got == 0 {
            break;
        }
        hasher.update(&buf[..got]);
    }
    Ok(hex(&hasher.finalize()))
}

/// Checksum that ignores timing: for .csv files, columns whose header name
/// ends in `_seconds`, `_ns`, or `_from_timing` are dropped before hashing.
/// Other files (and non-UTF-8 content) hash as raw bytes.
pub fn stable_sha256_hex(path: &Path) -> Result<String> {
    if path.extension().and_then(|e| e.to_str()) != Some("csv") {
        return sha256_hex(path);
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let Ok(text) = std::str::from_utf8(&bytes) else {
        return sha256_hex(path);
    };
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return sha256_hex(path);
    };
    let keep: Vec<bool> = header
        .split(',')
        .map(|name| {
            let name = name.trim();
            !(name.ends_with("_seconds") || name.ends_with("_ns") || name.ends_with("_from_timing"))
        })
        .collect();
    if keep.iter().all(|&k| k) {
        return sha256_hex(path);
    }
    let mut hasher = Sha256::new();
    for line in std::iter::once(header).chain(lines) {
        let kept: Vec<&str> = line
            .split(',')
            .enumerate()
            .filter(|(i, _)| keep.get(*i).copied().unwrap_or(true))
            .map(|(_, field)| field)
            .collect();
        hasher.update(kept.join(",").as_bytes());
        hasher.update(b"\n");
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, content: &str) -> PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn stable_hash_ignores_timing_columns() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(&dir, "a.csv", "id,count,step_seconds\n0,10,0.015\n1,3,0.021\n");
        let b = write(&dir, "b.csv", "id,count,step_seconds\n0,10,0.999\n1,3,0.001\n");
        let c = write(&dir, "c.csv", "id,count,step_seconds\n0,11,0.015\n1,3,0.021\n");
        assert_ne!(sha256_hex(&a).unwrap(), sha256_hex(&b).unwrap());
        assert_eq!(stable_sha256_hex(&a).unwrap(), stable_sha256_hex(&b).unwrap());
        assert_ne!(stable_sha256_hex(&a).unwrap(), stable_sha256_hex(&c).unwrap());

        let ns = write(&dir, "d.csv", "iteration,grad_wall_time_ns\n1,123\n");
        let ns2 = write(&dir, "e.csv", "iteration,grad_wall_time_ns\n1,456\n");
        assert_eq!(stable_sha256_hex(&ns).unwrap(), stable_sha256_hex(&ns2).unwrap());
    }

    #[test]
    fn stable_hash_equals_raw_without_timing() {
        let dir = tempfile::tempdir().unwrap();
        let plain = write(&dir, "plain.csv", "id,count\n0,10\n");
        assert_eq!(sha256_hex(&plain).unwrap(), stable_sha256_hex(&plain).unwrap());
        let binary = write(&dir, "data.ldds", "not a csv");
        assert_eq!(sha256_hex(&binary).unwrap(), stable_sha256_hex(&binary).unwrap());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = write(&dir, "result.csv", "id,count\n0,1\n");
        let mut manifest = RunManifest::new(
            "sample",
            vec!["sample".into(), "--trials".into(), "10".into()],
        );
        manifest.seed = Some(42);
        manifest.outputs.push(FileStamp::for_path(&out).unwrap());
        manifest.duration_seconds = 0.25;

        let path = manifest_path(&out);
        assert_eq!(path, dir.path().join("result.csv.manifest.json"));
        manifest.save(&path).unwrap();
        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(manifest, loaded);
    }

    #[test]
    fn load_rejects_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let bad = write(&dir, "bad.manifest.json", "{not json");
        assert!(matches!(RunManifest::load(&bad), Err(Error::MalformedFile { .. })));
        let wrong_version = write(
            &dir,
            "v9.manifest.json",
            r#"{"version":9,"command":"x","argv":[],"seed":null,"dataset":null,"index":null,"outputs":[],"started_unix_seconds":0,"duration_seconds":0.0,"tool_version":"0"}"#,
        );
        assert!(matches!(
            RunManifest::load(&wrong_version),
            Err(Error::UnsupportedVersion { .. })
        ));
    }
}
