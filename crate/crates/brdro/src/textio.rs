//! Small text-serialization helpers shared by every file format in the
//! crate: 17-significant-digit float formatting (lossless f64 round-trip)
//! and atomic file writes (write to a sibling temp file, then rename).

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

/// Format a float with 17 significant digits, enough to reproduce the exact
/// bit pattern on parse. Output is deterministic, so repeated runs with the
/// same seeds yield byte-identical files.
#[must_use]
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parse a float, naming the surrounding context on failure.
pub fn parse_f64(s: &str, context: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Input(format!("{context}: cannot parse {s:?} as a float")))
}

pub fn parse_usize(s: &str, context: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::Input(format!("{context}: cannot parse {s:?} as an integer")))
}

/// Write `content` to `path` atomically: the bytes land in `<path>.tmp`
/// first and are renamed over the target, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let display = path.display().to_string();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = Path::new(&tmp);
    fs::write(tmp_path, content).map_err(|e| Error::io(tmp_path.display().to_string(), e))?;
    fs::rename(tmp_path, path).map_err(|e| Error::io(display, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}
