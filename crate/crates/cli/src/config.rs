//! Optional `key=value` defaults file.
//!
//! Keys are long flag names (`alpha`, `b`, `t-a`; underscores are accepted).
//! A key is appended to the argument list as `--key=value` unless the flag is
//! already given on the command line; `true` adds a bare switch and `false`
//! drops the key.

use std::ffi::OsString;

use crate::error::{CliError, CliResult};

pub fn parse_config(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn flag_present(args: &[OsString], key: &str) -> bool {
    let bare = format!("--{key}");
    let eq = format!("--{key}=");
    args.iter()
        .filter_map(|a| a.to_str())
        .any(|a| a == bare || a.starts_with(&eq))
}

/// Removes `--config PATH` from `args` and appends the file's defaults.
pub fn expand_args(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => {
                path = Some(it.next().ok_or_else(|| CliError::Usage("--config needs a path".into()))?);
            }
            Some(s) if s.starts_with("--config=") => path = Some(OsString::from(&s["--config=".len()..])),
            _ => rest.push(a),
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.to_string_lossy())))?;
    for (key, value) in parse_config(&text)? {
        if flag_present(&rest, &key) {
            continue;
        }
        match value.as_str() {
            "true" => rest.push(format!("--{key}").into()),
            "false" => {}
            _ => rest.push(format!("--{key}={value}").into()),
        }
    }
    Ok(rest)
}
