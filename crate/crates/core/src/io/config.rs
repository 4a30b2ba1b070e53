//! `key = value` configuration files mirroring command-line flags.

use std::path::Path;

use crate::error::{Error, Result};

/// Parses `key = value` (or `key value`) lines; `#` starts a comment.
/// Keys are returned with underscores turned into dashes.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => match line.split_once(char::is_whitespace) {
                Some((k, v)) => (k.trim(), v.trim()),
                None => (line, ""),
            },
        };
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Parse {
                line: n as u64 + 1,
                message: format!("invalid key in {raw:?}"),
            });
        }
        entries.push((key.trim_start_matches("--").replace('_', "-"), value.to_owned()));
    }
    Ok(entries)
}

pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    parse_config(&std::fs::read_to_string(path)?)
}
