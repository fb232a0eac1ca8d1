//! Run manifests: enough provenance to re-run a command.
//!
//! Each run writes `run.manifest` into the directory holding its outputs.
//! The file lists the tool version, a timestamp (the one line that differs
//! between otherwise identical runs), the subcommand, every resolved
//! configuration value, and one `input = <digest> <path>` line per input
//! file, where the digest is 64-bit FNV-1a over the file bytes.

use slicevol_core::{Error, Result};
use std::fmt::Display;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

pub struct Manifest {
    lines: Vec<String>,
    inputs: Vec<String>,
}

impl Manifest {
    pub fn new(subcommand: &str) -> Manifest {
        Manifest {
            lines: vec![
                format!("tool = slicevol {}", env!("CARGO_PKG_VERSION")),
                format!("subcommand = {subcommand}"),
            ],
            inputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    /// Digests the file now, so the manifest records what was actually read.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs
            .push(format!("input = {:016x} {}", fnv1a64(&bytes), path.display()));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut text = String::new();
        text.push_str(&self.lines[0]);
        text.push('\n');
        text.push_str(&format!("timestamp-unix = {unix}\n"));
        for line in &self.lines[1..] {
            text.push_str(line);
            text.push('\n');
        }
        for line in &self.inputs {
            text.push_str(line);
            text.push('\n');
        }
        let path = dir.join("run.manifest");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Manifest directory for a command whose `--out` is a file: its parent.
pub fn out_parent(out: &Path) -> &Path {
    match out.parent() {
        Some(p) if p.as_os_str().is_empty() => Path::new("."),
        Some(p) => p,
        None => Path::new("."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_matches_reference_vectors() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn manifest_lists_config_then_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("x.bin");
        std::fs::write(&input, b"foobar").unwrap();
        let mut m = Manifest::new("demo");
        m.set("seed", 7);
        m.input(&input).unwrap();
        m.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("run.manifest")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("tool = slicevol "));
        assert!(lines[1].starts_with("timestamp-unix = "));
        assert_eq!(lines[2], "subcommand = demo");
        assert_eq!(lines[3], "seed = 7");
        assert!(lines[4].starts_with("input = 85944171f73967e8 "));
    }
}
