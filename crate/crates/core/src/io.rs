//! JSON file ingestion and output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ExpertAnnotation, Explanation, Instance};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses a JSON file. Validation failures raised by `try_from` conversions
/// are surfaced as validation errors rather than parse errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read(path)?;
    parse_json(path, &text)
}

pub(crate) fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|source| {
        if source.is_data() {
            let msg = source.to_string();
            // serde reports our try_from errors as custom data errors
            if let Some(stripped) = strip_known_prefix(&msg) {
                return if stripped.starts_with("dimension mismatch") {
                    Error::DimensionMismatch(stripped.to_string())
                } else {
                    Error::Validation(format!("{}: {stripped}", path.display()))
                };
            }
        }
        Error::Parse {
            path: path.to_path_buf(),
            source,
        }
    })
}

fn strip_known_prefix(msg: &str) -> Option<&str> {
    ["validation error: ", "dimension mismatch: ", "unsupported format_version"]
        .iter()
        .find_map(|p| msg.find(p).map(|i| &msg[i..]))
        .map(|s| s.strip_prefix("validation error: ").unwrap_or(s))
}

/// Pretty JSON with a trailing newline; byte-stable for equal values.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, to_json_string(value)).map_err(|e| Error::io(path, e))
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    read_json(path)
}

/// Loads one annotation object or an array of them.
pub fn load_annotations(path: &Path) -> Result<Vec<ExpertAnnotation>> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<serde_json::Value>),
        One(serde_json::Value),
    }
    let text = read(path)?;
    let raw: OneOrMany = parse_json(path, &text)?;
    let values = match raw {
        OneOrMany::Many(v) => v,
        OneOrMany::One(v) => vec![v],
    };
    values
        .into_iter()
        .map(|v| parse_json(path, &v.to_string()))
        .collect()
}

pub fn load_explanation(path: &Path) -> Result<Explanation> {
    read_json(path)
}

pub fn save_explanation(path: &Path, explanation: &Explanation) -> Result<()> {
    write_json(path, explanation)
}

/// JSON files under `path` (or `path` itself), sorted, skipping run manifests.
pub fn json_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if p.is_file() && name.ends_with(".json") && !name.ends_with(".manifest.json") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
