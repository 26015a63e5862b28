use serde_json::Value;

use crate::CliError;

/// Splits `--dotted.key=value` arguments from the ones clap should see.
/// Any `--name=value` whose name is not in `known` is an override.
pub fn partition(args: Vec<String>, known: &[&str]) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for arg in args {
        match arg.strip_prefix("--").and_then(|a| a.split_once('=')) {
            Some((key, value)) if !known.contains(&key) => overrides.push((key.to_string(), value.to_string())),
            _ => rest.push(arg),
        }
    }
    (rest, overrides)
}

/// Parses an override value as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `path` (dot separated) in `root`; the path must already exist so a
/// typo cannot silently add an ignored field.
pub fn apply(root: &mut Value, path: &str, raw: &str) -> Result<(), CliError> {
    let mut node = root;
    for part in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| CliError::Config(format!("unknown config key `{path}`")))?;
    }
    *node = parse_value(raw);
    Ok(())
}
