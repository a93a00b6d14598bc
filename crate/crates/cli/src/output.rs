use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where a subcommand writes its files: `<prefix>.csv` for a single table,
/// `<prefix>.<part>.csv` otherwise, and always `<prefix>.manifest.json`.
#[derive(Debug, Clone)]
pub struct Sink {
    prefix: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(prefix: PathBuf) -> Result<Self, CliError> {
        if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        Ok(Self { prefix, written: Vec::new() })
    }

    pub fn path(&self, part: Option<&str>, ext: &str) -> PathBuf {
        let mut s = self.prefix.clone().into_os_string();
        if let Some(p) = part {
            s.push(".");
            s.push(p);
        }
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    }

    /// Write a CSV table preceded by a `#` metadata block.
    pub fn csv<K: AsRef<str>, R: Serialize>(
        &mut self,
        part: Option<&str>,
        meta: &[(K, String)],
        header: &[&str],
        rows: impl IntoIterator<Item = R>,
    ) -> Result<PathBuf, CliError> {
        let path = self.path(part, "csv");
        let mut f = BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?);
        let io = |e: std::io::Error| CliError::io(&path, e);
        writeln!(f, "# shearlab {VERSION}").map_err(io)?;
        for (k, v) in meta {
            writeln!(f, "# {} = {v}", k.as_ref()).map_err(io)?;
        }
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
        let cw = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        w.write_record(header).map_err(cw)?;
        for r in rows {
            w.serialize(r).map_err(cw)?;
        }
        w.flush().map_err(io)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn json(&mut self, part: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let path = self.path(Some(part), "json");
        write_json(&path, value)?;
        self.written.push(path.clone());
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    writeln!(f).map_err(|e| CliError::io(path, e))
}

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub subcommand: &'a str,
    pub params: Value,
    pub config: Option<&'a Path>,
    pub outputs: &'a [PathBuf],
    pub tolerances: Value,
    pub seeds: Value,
    pub version: &'a str,
    pub threads: usize,
    pub wall_clock_s: f64,
}

/// Format parameters as `#` metadata pairs in key order, skipping unset ones.
pub fn meta_of(v: &impl Serialize) -> Vec<(String, String)> {
    match serde_json::to_value(v) {
        Ok(Value::Object(m)) => m.iter().filter(|(_, v)| !v.is_null()).map(|(k, v)| (k.clone(), compact(v))).collect(),
        _ => Vec::new(),
    }
}

fn compact(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn no_seeds() -> Value {
    json!({})
}
