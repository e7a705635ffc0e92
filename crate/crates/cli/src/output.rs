use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Usage(format!("{}: cannot serialize: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Parses a JSON document, naming the offending field and position on
/// failure.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let inner = e.inner();
        let field = e.path().to_string();
        let at = if field.is_empty() || field == "." { String::new() } else { format!(" at `{field}`") };
        CliError::Usage(format!("{}: invalid document{at}: {inner}", path.display()))
    })?;
    de.end().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(value)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    parse_json(path, &read_text(path)?)
}

/// CSV cell: same format as `trace.csv`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}
