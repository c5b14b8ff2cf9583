//! `key=value` run configuration files.
//!
//! Keys are the long flag names of the subcommand, with `_` accepted in place
//! of `-`. Blank lines and lines starting with `#` are ignored. The settings
//! are spliced into the argument list ahead of the user's own flags, so flags
//! given on the command line win.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::Path;

/// Reads `path` into `(key, value)` pairs with normalised keys.
pub fn read(path: &Path) -> Result<Vec<(String, String)>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key=value`", i + 1))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        if !seen.insert(key.clone()) {
            return Err(format!("line {}: `{key}` is set twice", i + 1));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

/// Rejects keys that are not flags of the subcommand.
pub fn check_keys(pairs: &[(String, String)], known: &BTreeSet<String>) -> Result<(), String> {
    for (key, _) in pairs {
        if !known.contains(key) {
            return Err(format!("unknown config key `{key}`"));
        }
    }
    Ok(())
}

/// Position of the subcommand name in `argv`, skipping `--config` and its value.
pub fn subcommand_index(argv: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let arg = argv[i].to_string_lossy();
        if arg == "--config" {
            i += 2;
        } else if arg.starts_with("--config=") {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

/// `argv` with `--key=value` inserted right after the subcommand name.
pub fn splice(argv: &[OsString], at: usize, pairs: &[(String, String)]) -> Vec<OsString> {
    let mut out: Vec<OsString> = argv[..=at].to_vec();
    out.extend(pairs.iter().map(|(k, v)| OsString::from(format!("--{k}={v}"))));
    out.extend_from_slice(&argv[at + 1..]);
    out
}
