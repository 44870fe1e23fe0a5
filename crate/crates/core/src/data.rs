//! Model configuration and dataset files.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BaseModel, Model};

/// One labeled input. Serialized as a JSONL line
/// `{"id": str, "x": [numbers], "label": int}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub id: String,
    pub x: Vec<f64>,
    pub label: usize,
}

/// Reads and validates a model configuration file.
pub fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read model file {}: {e}", path.display())))?;
    let model: Model = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("malformed model file {}: {e}", path.display())))?;
    model.validate()?;
    Ok(model)
}

/// Reads a JSONL dataset and checks it against the model: constant
/// dimension, labels within range, unique ids. Blank lines are skipped.
pub fn load_dataset(path: &Path, model: &dyn BaseModel) -> Result<Vec<DataPoint>> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::Data {
        path: display.clone(),
        line: 0,
        message: format!("cannot read dataset: {e}"),
    })?;
    parse_dataset(&text, &display, model)
}

pub fn parse_dataset(text: &str, source: &str, model: &dyn BaseModel) -> Result<Vec<DataPoint>> {
    let err = |line: usize, message: String| Error::Data {
        path: source.to_string(),
        line,
        message,
    };
    let mut points = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let p: DataPoint =
            serde_json::from_str(line).map_err(|e| err(lineno, format!("malformed record: {e}")))?;
        if p.x.len() != model.dimension() {
            return Err(err(
                lineno,
                format!("x has dimension {}, model expects {}", p.x.len(), model.dimension()),
            ));
        }
        if p.x.iter().any(|v| !v.is_finite()) {
            return Err(err(lineno, "x contains a non-finite value".into()));
        }
        if p.label >= model.num_classes() {
            return Err(err(
                lineno,
                format!("label {} out of range for {} classes", p.label, model.num_classes()),
            ));
        }
        if !ids.insert(p.id.clone()) {
            return Err(err(lineno, format!("duplicate id {:?}", p.id)));
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(err(0, "dataset is empty".into()));
    }
    Ok(points)
}

/// Serializes points as JSONL.
pub fn dataset_to_jsonl(points: &[DataPoint]) -> Result<String> {
    let mut out = String::new();
    for p in points {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}
