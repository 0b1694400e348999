//! Byte-deterministic artifact emission and a content-addressed run cache.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;

/// One numeric field, 17 significant digits, '.' decimal separator.
pub fn format_field(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders records as RFC-4180-style CSV with a header row and LF endings.
/// The output is byte-identical for identical inputs.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let fields: Vec<String> = row.iter().map(|&v| format_field(v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn emit_csv(header: &[&str], rows: &[Vec<f64>], path: &Path) -> Result<()> {
    fs::write(path, csv_string(header, rows))?;
    Ok(())
}

/// Artifact cache keyed by a hash of the canonical run configuration.
///
/// The configuration itself is stored next to the artifact and compared on
/// lookup, so a hash collision degrades to a miss instead of a wrong answer.
pub struct ResultCache {
    dir: Option<PathBuf>,
}

impl ResultCache {
    pub fn new(dir: Option<PathBuf>) -> ResultCache {
        ResultCache { dir }
    }

    pub fn enabled(&self) -> bool {
        self.dir.is_some()
    }

    fn key(config: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(env!("CARGO_PKG_VERSION").as_bytes());
        hasher.update(b"\0");
        hasher.update(config.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Returns the cached artifact and exit code for this configuration.
    pub fn lookup(&self, config: &str) -> Option<(Vec<u8>, i32)> {
        let dir = self.dir.as_ref()?;
        let key = Self::key(config);
        let stored = fs::read_to_string(dir.join(format!("{key}.cfg"))).ok()?;
        let (code_line, stored_config) = stored.split_once('\n')?;
        if stored_config != config {
            return None;
        }
        let code: i32 = code_line.parse().ok()?;
        let artifact = fs::read(dir.join(format!("{key}.dat"))).ok()?;
        Some((artifact, code))
    }

    pub fn store(&self, config: &str, artifact: &[u8], code: i32) -> Result<()> {
        let Some(dir) = self.dir.as_ref() else {
            return Ok(());
        };
        fs::create_dir_all(dir)?;
        let key = Self::key(config);
        fs::write(dir.join(format!("{key}.dat")), artifact)?;
        fs::write(dir.join(format!("{key}.cfg")), format!("{code}\n{config}"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_deterministic_with_header_only_case() {
        let empty = csv_string(&["xi", "re", "im", "abs"], &[]);
        assert_eq!(empty, "xi,re,im,abs\n");
        let rows = vec![vec![0.0, 1.0, 0.0, 1.0]];
        let a = csv_string(&["xi", "re", "im", "abs"], &rows);
        let b = csv_string(&["xi", "re", "im", "abs"], &rows);
        assert_eq!(a, b);
        assert!(a.ends_with('\n') && !a.contains('\r'));
        assert_eq!(a.lines().count(), 2);
    }

    #[test]
    fn cache_round_trip_and_config_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResultCache::new(Some(dir.path().to_path_buf()));
        assert!(cache.lookup("cfg-a").is_none());
        cache.store("cfg-a", b"artifact", 2).unwrap();
        let (bytes, code) = cache.lookup("cfg-a").unwrap();
        assert_eq!((bytes.as_slice(), code), (b"artifact".as_slice(), 2));
        assert!(cache.lookup("cfg-b").is_none());
        // Disabled cache is inert.
        let off = ResultCache::new(None);
        off.store("cfg-a", b"x", 0).unwrap();
        assert!(off.lookup("cfg-a").is_none());
    }
}
