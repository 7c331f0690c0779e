use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One dataset line as it appears on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    #[serde(default)]
    pub label: Option<String>,
    pub text: String,
    #[serde(default)]
    pub comments: Vec<String>,
    #[serde(default)]
    pub image: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalRecord {
    pub id: String,
    pub label: usize,
    pub post_text: String,
    pub comments: Vec<String>,
    pub image_ref: Option<String>,
}

/// Label strings in class-index order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    labels: Vec<String>,
}

impl LabelSchema {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Config(format!(
                "a label schema needs at least two classes, got {labels:?}"
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::Config(format!("label {dup:?} listed twice")));
        }
        Ok(LabelSchema { labels })
    }

    /// Built-in vocabularies: `fakeddit2`, `fakeddit3`, `mfnd`.
    pub fn builtin(name: &str) -> Option<Self> {
        let labels: &[&str] = match name {
            "fakeddit2" => &["real", "fake"],
            "fakeddit3" => &["real", "fake with true text", "fake with false text"],
            "mfnd" => &["real", "fake", "uncertain"],
            _ => return None,
        };
        Some(LabelSchema {
            labels: labels.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Schema file: one label per line; blank lines and `#` comments skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        )
    }

    /// A built-in name, otherwise a schema file path.
    pub fn resolve(spec: &str, base_dir: Option<&Path>) -> Result<Self> {
        if let Some(s) = Self::builtin(spec) {
            return Ok(s);
        }
        let path = Path::new(spec);
        match base_dir {
            Some(dir) if path.is_relative() => Self::from_file(&dir.join(path)),
            _ => Self::from_file(path),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel {
                label: label.to_string(),
                expected: self.labels.clone(),
            })
    }

    pub fn name_of(&self, class: usize) -> &str {
        &self.labels[class]
    }
}

/// Parses one JSON dataset line.
pub fn parse_record_line(line: &str) -> std::result::Result<RawRecord, serde_json::Error> {
    serde_json::from_str(line)
}

/// Reads a JSON-lines dataset without interpreting labels. Returns each
/// record with its 1-based line number.
pub fn parse_raw_dataset(path: &Path) -> Result<Vec<(usize, RawRecord)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw = parse_record_line(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !ids.insert(raw.id.clone()) {
            return Err(Error::DuplicateId(raw.id));
        }
        records.push((i + 1, raw));
    }
    Ok(records)
}

/// Reads a JSON-lines dataset, mapping labels through `schema`.
pub fn parse_dataset(path: &Path, schema: &LabelSchema) -> Result<Vec<MultimodalRecord>> {
    parse_raw_dataset(path)?
        .into_iter()
        .map(|(line, raw)| {
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            };
            let label = raw
                .label
                .as_deref()
                .ok_or_else(|| parse_err("missing label".into()))?;
            let label = schema.index_of(label).map_err(|e| parse_err(e.to_string()))?;
            Ok(raw.into_record(label))
        })
        .collect()
}

impl RawRecord {
    pub fn into_record(self, label: usize) -> MultimodalRecord {
        MultimodalRecord {
            id: self.id,
            label,
            post_text: self.text,
            comments: self.comments,
            image_ref: self.image,
        }
    }
}
