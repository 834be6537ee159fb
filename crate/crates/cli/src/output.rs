//! File I/O with provenance: every CSV starts with a `#` comment line and
//! every JSON document carries a `metadata` object, both naming the stage,
//! config hash and seed.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::config::PipelineConfig;
use crate::error::PipelineError;

pub const TOOL: &str = "buildloss";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub stage: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(stage: &'static str, config: &PipelineConfig) -> Self {
        Self {
            stage,
            config_hash: config.hash(),
            seed: config.seed,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "# {TOOL} stage={} config_hash={} seed={}\n",
            self.stage, self.config_hash, self.seed
        )
    }

    pub fn json(&self) -> Value {
        json!({
            "tool": TOOL,
            "version": env!("CARGO_PKG_VERSION"),
            "stage": self.stage,
            "config_hash": self.config_hash,
            "seed": self.seed,
        })
    }

    pub fn json_map(&self) -> Map<String, Value> {
        match self.json() {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub fn require_file(path: &Path, what: &str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::Config(format!(
            "{what} `{}` does not exist (run the producing stage or set its path)",
            path.display()
        )))
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub fn write_csv(path: &Path, prov: &Provenance, body: &str) -> Result<(), PipelineError> {
    write_text(path, &format!("{}{body}", prov.csv_line()))
}

/// Pretty JSON with `metadata` followed by the given members.
pub fn write_json(path: &Path, prov: &Provenance, body: Value) -> Result<(), PipelineError> {
    let mut doc = Map::new();
    doc.insert("metadata".into(), prov.json());
    match body {
        Value::Object(m) => doc.extend(m),
        other => {
            doc.insert("data".into(), other);
        }
    }
    let text = serde_json::to_string_pretty(&Value::Object(doc)).expect("json serializes");
    write_text(path, &(text + "\n"))
}

/// Serializes rows with a header into CSV text.
pub fn csv_text<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Parses CSV text (`#` comment lines skipped) into header-keyed rows.
pub fn read_csv_rows(
    path: &Path,
    required: &[&str],
) -> Result<Vec<(usize, Vec<String>)>, PipelineError> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let data = |m: String| PipelineError::Data(format!("{}: {m}", path.display()));
    let headers = reader.headers().map_err(|e| data(e.to_string()))?.clone();
    let idx: Vec<usize> = required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| data(format!("missing column `{name}`")))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| data(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((
            line,
            idx.iter()
                .map(|&i| rec.get(i).unwrap_or("").to_string())
                .collect(),
        ));
    }
    Ok(out)
}

pub fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    column: &str,
    v: &str,
) -> Result<T, PipelineError> {
    v.parse::<T>()
        .map_err(|_| PipelineError::Data(format!("{}:{line}: bad {column} `{v}`", path.display())))
}
