use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Read a JSON config. A run manifest is accepted too: its `params` block
/// is used, provided it was written by the same subcommand.
pub fn load(path: &Path, subcommand: &str) -> Result<Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    match v.get("subcommand").and_then(Value::as_str) {
        Some(s) if s != subcommand => Err(CliError::Usage(format!(
            "manifest {} was written by `{s}`, not `{subcommand}`",
            path.display()
        ))),
        Some(_) => v
            .get("params")
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("manifest {} has no params", path.display()))),
        None => Ok(v),
    }
}

/// Flags as a JSON object, with unset flags dropped.
pub fn flags_object(flags: &impl Serialize) -> Map<String, Value> {
    match serde_json::to_value(flags) {
        Ok(Value::Object(m)) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Overlay `top` onto `base` key by key.
pub fn overlay(base: &mut Map<String, Value>, top: Map<String, Value>) {
    for (k, v) in top {
        base.insert(k, v);
    }
}

/// Resolve parameters: config first, then flags on top.
pub fn resolve<T: DeserializeOwned>(config: Option<Value>, flags: &impl Serialize) -> Result<T, CliError> {
    let mut base = match config {
        None => Map::new(),
        Some(Value::Object(m)) => m,
        Some(_) => return Err(CliError::Usage("config must be a JSON object".into())),
    };
    overlay(&mut base, flags_object(flags));
    from_object(base)
}

pub fn from_object<T: DeserializeOwned>(m: Map<String, Value>) -> Result<T, CliError> {
    serde_json::from_value(Value::Object(m)).map_err(|e| {
        CliError::Usage(format!("parameters: {e}; set it with a flag or in the --config file"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Serialize)]
    struct Flags {
        a: Option<f64>,
        b: Option<f64>,
    }

    #[derive(Deserialize, Debug, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Params {
        a: f64,
        #[serde(default)]
        b: f64,
    }

    #[test]
    fn flags_win_over_config() {
        let p: Params = resolve(Some(json!({ "a": 1.0, "b": 2.0 })), &Flags { a: None, b: Some(3.0) }).unwrap();
        assert_eq!(p, Params { a: 1.0, b: 3.0 });
    }

    #[test]
    fn missing_and_unknown_fields_are_usage_errors() {
        let e = resolve::<Params>(None, &Flags { a: None, b: None }).unwrap_err();
        assert!(matches!(e, CliError::Usage(m) if m.contains("missing field `a`")));
        let e = resolve::<Params>(Some(json!({ "a": 1.0, "c": 0 })), &Flags { a: None, b: None }).unwrap_err();
        assert!(matches!(e, CliError::Usage(_)));
        assert!(resolve::<Params>(Some(json!([1])), &Flags { a: None, b: None }).is_err());
    }

    #[test]
    fn manifests_are_unwrapped() {
        let d = std::env::temp_dir().join(format!("shearlab-config-{}", std::process::id()));
        std::fs::write(&d, json!({ "subcommand": "spectrum", "params": { "a": 4.0 } }).to_string()).unwrap();
        assert_eq!(load(&d, "spectrum").unwrap(), json!({ "a": 4.0 }));
        assert!(matches!(load(&d, "profile"), Err(CliError::Usage(_))));
        std::fs::remove_file(&d).unwrap();
    }
}
