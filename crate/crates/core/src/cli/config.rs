//! `--config FILE` support: `key = value` lines whose keys are long flag
//! names. Flags given on the command line win over the file.

use std::ffi::OsString;
use std::path::Path;

use crate::error::Error;

pub(super) enum ConfigError {
    Usage(String),
    Data(Error),
}

/// Flags that take no value; a config entry enables them with `true`.
const SWITCHES: &[&str] = &["rearranged", "suite"];

/// Removes `--config FILE` from `argv` and appends flags for every entry of
/// the file not already present.
pub(super) fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            match it.next() {
                Some(p) => path = Some(p),
                None => return Err(ConfigError::Usage("--config needs a file".into())),
            }
        } else if let Some(p) = arg.to_str().and_then(|s| s.strip_prefix("--config=")) {
            path = Some(p.into());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Data(Error::io(path, e)))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Usage(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            )));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let flag = format!("--{key}");
        let present = rest.iter().any(|a| {
            a.to_str()
                .is_some_and(|s| s == flag || s.starts_with(&format!("{flag}=")))
        });
        if present {
            continue;
        }
        if SWITCHES.contains(&key.as_str()) {
            match value {
                "true" => rest.push(flag.into()),
                "false" => {}
                _ => {
                    return Err(ConfigError::Usage(format!(
                        "{}:{}: {key} takes true or false",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        } else {
            rest.push(format!("{flag}={value}").into());
        }
    }
    Ok(rest)
}
