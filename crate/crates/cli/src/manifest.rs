//! Output directory bookkeeping: every written file is hashed into a
//! manifest alongside the effective configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub struct Artifacts {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    exit_code: i32,
    config: &'a str,
    config_sha256: String,
    artifacts: &'a BTreeMap<String, String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(CliError::Io)?;
        Ok(Self { dir: dir.to_path_buf(), hashes: BTreeMap::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), contents).map_err(CliError::Io)?;
        self.hashes.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    /// Writes `config.toml` and `manifest.json`.
    pub fn finish(mut self, command: &str, config_toml: &str, exit_code: i32) -> Result<(), CliError> {
        self.write("config.toml", config_toml)?;
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            exit_code,
            config: config_toml,
            config_sha256: sha256_hex(config_toml.as_bytes()),
            artifacts: &self.hashes,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Numerical(e.to_string()))? + "\n";
        std::fs::write(self.dir.join("manifest.json"), text).map_err(CliError::Io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_lists_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::new(dir.path()).unwrap();
        a.write("x.csv", "a,b\n").unwrap();
        a.finish("solve", "[grid]\n", 0).unwrap();
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["artifacts"]["x.csv"], sha256_hex(b"a,b\n"));
        assert!(m["artifacts"]["config.toml"].is_string());
        assert_eq!(m["exit_code"], 0);
    }
}
