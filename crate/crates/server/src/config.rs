//! TOML config file: one table per subcommand, keys named like the long
//! flags. Values in the file take precedence over flags.
//!
//! ```toml
//! [train]
//! epochs = 50
//! hidden = "64"
//!
//! [serve]
//! addr = "0.0.0.0:8765"
//! d-near = 0.25
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::cli::CliError;

pub fn load_config(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Replaces fields of `args` with the values in `table`.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(args: T, table: Option<&toml::Value>) -> Result<T, CliError> {
    let Some(table) = table else {
        return Ok(args);
    };
    let table = table
        .as_table()
        .ok_or_else(|| CliError::Usage("config: subcommand entry must be a table".into()))?;
    let mut value = serde_json::to_value(&args).expect("arguments serialize");
    let fields = value.as_object_mut().expect("arguments are a struct");
    for (key, v) in table {
        let name = key.replace('-', "_");
        if !fields.contains_key(&name) {
            return Err(CliError::Usage(format!("config: unknown key {key:?}")));
        }
        let v = serde_json::to_value(v).map_err(|e| CliError::Usage(format!("config key {key:?}: {e}")))?;
        fields.insert(name, v);
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))
}
