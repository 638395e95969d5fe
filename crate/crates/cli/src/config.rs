//! Flat key-value configuration files merged under command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

/// Reads a flat TOML table. Dashes in keys are accepted as underscores.
pub fn load_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
    let mut out = toml::Table::new();
    for (k, v) in table {
        if v.is_table() {
            return Err(CliError::Usage(format!(
                "config key {k:?} is a section; only flat keys are supported"
            )));
        }
        out.insert(k.replace('-', "_"), v);
    }
    Ok(out)
}

/// Overlays the flags that were given on top of the file values and
/// deserializes the result, so flags win and missing keys take defaults.
pub fn resolve<F: Serialize, R: DeserializeOwned>(
    file: Option<&Path>,
    flags: &F,
) -> Result<R, CliError> {
    let mut table = match file {
        Some(p) => load_table(p)?,
        None => toml::Table::new(),
    };
    let given = toml::Table::try_from(flags).map_err(|e| CliError::Usage(e.to_string()))?;
    table.extend(given);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(e.message().to_owned()))
}

/// The fully resolved settings, written next to every output.
pub fn write_resolved<R: Serialize>(path: &Path, resolved: &R) -> Result<(), CliError> {
    let text = toml::to_string(resolved).map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
