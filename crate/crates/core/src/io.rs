//! JSON Lines helpers and content hashing for build provenance.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::embed::fnv1a64;
use crate::error::{Error, Result};

/// Parses one JSON value per non-blank line.
pub fn parse_jsonl<T: DeserializeOwned>(input: &str, source: &str) -> Result<Vec<T>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    parse_jsonl(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

/// 16-hex-digit FNV-1a digest.
pub fn content_hash(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}
