//! Artifact writing. Every file lands through a sibling temp file and a
//! rename, so an aborted run never leaves a truncated artifact under
//! the final name.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Write `bytes` to `path` atomically, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .with_context(|| format!("cannot create directory '{}'", dir.display()))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    if let Err(e) = fs::write(&tmp, bytes) {
        let _ = fs::remove_file(&tmp);
        return Err(e).with_context(|| format!("cannot write '{}'", tmp.display()));
    }
    fs::rename(&tmp, path)
        .with_context(|| format!("cannot move results into '{}'", path.display()))
}

/// Render a header and rows as CSV bytes.
pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).context("csv header")?;
    for row in rows {
        w.write_record(row).context("csv row")?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))
}

/// Shortest decimal form that parses back to exactly this value, so
/// rewritten files stay byte-identical and nothing is lost to rounding.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_creates_parents_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/out.csv");
        write_atomic(&path, b"x,y\n1,2\n").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"x,y\n1,2\n");
        assert!(!path.with_extension("csv.tmp").exists());
    }

    #[test]
    fn floats_round_trip_through_fmt() {
        for v in [0.0005, 1.0 / 58.8, 0.75, 1.2384e-3, f64::MIN_POSITIVE] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn csv_bytes_quotes_only_when_needed() {
        let bytes = csv_bytes(
            &["a".into(), "events".into()],
            &[vec!["1".into(), "fbs;drop:2".into()]],
        )
        .unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "a,events\n1,fbs;drop:2\n");
    }
}
