//! Snapshot and replica-catalog files.
//!
//! A snapshot file starts with `taken-at <rfc3339>` and continues with the
//! resource ads. A catalog file holds one `lfn se1,se2,...` line per logical
//! file; blank lines and `#` comments are skipped.

use std::fs;
use std::io;
use std::path::Path;

use wms_core::broker::{InfoSnapshot, ReplicaCatalog, SnapshotError};
use wms_core::jdl::{parse_ads, SyntaxError};
use wms_core::Span;

use crate::clock::parse_rfc3339;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: missing `taken-at <rfc3339>` header")]
    MissingHeader { path: String },
    #[error("{path}: {error}")]
    Parse { path: String, error: SyntaxError },
    #[error("{path}: {error}")]
    Invalid { path: String, error: SnapshotError },
    #[error("{path}:{line}: {reason}")]
    Catalog { path: String, line: usize, reason: String },
}

fn read(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })
}

pub fn parse_snapshot(text: &str, ttl: Span, path: &str) -> Result<InfoSnapshot, LoadError> {
    let missing = || LoadError::MissingHeader { path: path.to_string() };
    let text = text.trim_start();
    let (header, rest) = text.split_once('\n').unwrap_or((text, ""));
    let stamp = header.trim_end().strip_prefix("taken-at ").ok_or_else(missing)?;
    let taken_at = parse_rfc3339(stamp.trim()).ok_or_else(missing)?;
    let ads = parse_ads(rest).map_err(|error| LoadError::Parse { path: path.to_string(), error })?;
    InfoSnapshot::new(ads, taken_at, ttl).map_err(|error| LoadError::Invalid { path: path.to_string(), error })
}

pub fn load_snapshot(path: &Path, ttl: Span) -> Result<InfoSnapshot, LoadError> {
    parse_snapshot(&read(path)?, ttl, &path.display().to_string())
}

pub fn parse_catalog(text: &str, path: &str) -> Result<ReplicaCatalog, LoadError> {
    let mut catalog = ReplicaCatalog::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| LoadError::Catalog { path: path.to_string(), line: i + 1, reason: reason.to_string() };
        let (lfn, ses) = line.split_once(char::is_whitespace).ok_or_else(|| bad("expected `lfn se1,se2,...`"))?;
        let ses: Vec<String> = ses.trim().split(',').map(|s| s.trim().to_string()).collect();
        if ses.iter().any(String::is_empty) {
            return Err(bad("empty storage element name"));
        }
        if catalog.lookup(lfn).is_some() {
            return Err(bad("logical file listed twice"));
        }
        catalog.insert(lfn, ses);
    }
    Ok(catalog)
}

pub fn load_catalog(path: &Path) -> Result<ReplicaCatalog, LoadError> {
    parse_catalog(&read(path)?, &path.display().to_string())
}
