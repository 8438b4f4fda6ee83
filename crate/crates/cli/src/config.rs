//! Flat TOML config files. Each key names a long flag of the subcommand
//! (`n_source` and `n-source` both mean `--n-source`), and flags given on
//! the command line win over the file.

use std::ffi::OsString;
use std::path::Path;

use crate::CliError;

/// Converts the config file into `--key=value` arguments.
pub fn config_args(path: &Path) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

pub fn parse_config(text: &str) -> Result<Vec<OsString>, String> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let mut out = Vec::with_capacity(table.len());
    for (key, value) in table {
        if key == "config" {
            return Err("`config` cannot be set from a config file".into());
        }
        let value = scalar(&key, &value)?;
        out.push(OsString::from(format!("--{}={value}", key.replace('_', "-"))));
    }
    Ok(out)
}

fn scalar(key: &str, value: &toml::Value) -> Result<String, String> {
    use toml::Value;
    Ok(match value {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Boolean(b) => b.to_string(),
        Value::Array(items) => items
            .iter()
            .map(|v| match v {
                Value::Array(_) | Value::Table(_) => Err(format!("`{key}` must be a flat list")),
                v => scalar(key, v),
            })
            .collect::<Result<Vec<_>, _>>()?
            .join(","),
        Value::Datetime(d) => d.to_string(),
        Value::Table(_) => return Err(format!("`{key}` is a table; the config must be flat")),
    })
}

/// Splices the config file named by `--config` in front of the other
/// flags of the subcommand.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            let value = iter
                .next()
                .ok_or_else(|| CliError::Usage("--config needs a path".into()))?;
            path = Some(value);
        } else if let Some(v) = text.strip_prefix("--config=") {
            path = Some(OsString::from(v));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    // program name and subcommand stay in front
    let head = rest.len().min(2);
    let mut out: Vec<OsString> = rest[..head].to_vec();
    out.extend(config_args(Path::new(&path))?);
    out.extend_from_slice(&rest[head..]);
    Ok(out)
}
