//! Layered JSON configuration: built-in defaults, then a config file, then
//! command-line flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Flag values collected as a sparse JSON object.
#[derive(Default)]
pub struct Overrides(Value);

impl Overrides {
    pub fn new() -> Self {
        Overrides(Value::Object(Map::new()))
    }

    /// Sets a dotted path such as `"learner.lr"` when `value` is present.
    pub fn set<T: Serialize>(&mut self, path: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            let v = serde_json::to_value(v).expect("flag values serialize");
            let mut node = &mut self.0;
            let mut keys = path.split('.').peekable();
            while let Some(k) = keys.next() {
                let obj = node.as_object_mut().expect("override nodes are objects");
                if keys.peek().is_none() {
                    obj.insert(k.to_string(), v);
                    break;
                }
                node = obj.entry(k).or_insert_with(|| Value::Object(Map::new()));
            }
        }
        self
    }
}

pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn resolve<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>, flags: Overrides) -> Result<T, CliError> {
    let mut value = serde_json::to_value(T::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let file_value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        if !file_value.is_object() {
            return Err(CliError::Usage(format!("config {} must be a JSON object", path.display())));
        }
        merge(&mut value, file_value);
    }
    merge(&mut value, flags.0);
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

/// Writes `config.json` into `dir`.
pub fn echo<T: Serialize>(dir: &Path, config: &T) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(config).expect("config serializes");
    fs::write(dir.join("config.json"), text + "\n")?;
    Ok(())
}
