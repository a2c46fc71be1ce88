//! JSON files for models, parameters, data sets and results.
//!
//! Reals are written in shortest round-trip form, so loading a saved file
//! reproduces every value bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::loss::{LossKind, Reduction};
use crate::model::{Layer, Model};
use crate::risk::EmpiricalRisk;
use crate::tensor::{ParamList, Tensor};

/// Architecture and loss of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub layers: Vec<Layer>,
    pub loss: LossKind,
    pub reduction: Reduction,
}

impl ModelFile {
    pub fn model(&self) -> Result<Model> {
        Model::new(self.layers.clone())
    }

    pub fn risk(&self, data: Dataset) -> Result<EmpiricalRisk> {
        EmpiricalRisk::new(self.model()?, self.loss, self.reduction, data)
    }
}

fn parse_err(path: &str, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        field: field.into(),
        message: message.into(),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: p.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        parse_err(
            &p,
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })
}

/// Writes pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json_string(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| Error::contract(format!("serialization failed: {e}")))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn field<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| parse_err(path, key, "missing field"))
}

pub fn model_from_value(v: &Value, path: &str) -> Result<ModelFile> {
    let layers = field(v, "layers", path)?
        .as_array()
        .ok_or_else(|| parse_err(path, "layers", "expected an array"))?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Layer::deserialize(l)
                .map_err(|e| parse_err(path, format!("layers[{i}]"), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = LossKind::deserialize(field(v, "loss", path)?)
        .map_err(|e| parse_err(path, "loss", e.to_string()))?;
    let reduction = Reduction::deserialize(field(v, "reduction", path)?)
        .map_err(|e| parse_err(path, "reduction", e.to_string()))?;
    let file = ModelFile {
        layers,
        loss,
        reduction,
    };
    file.model()
        .map_err(|e| parse_err(path, "layers", e.to_string()))?;
    Ok(file)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    model_from_value(&read_json(path)?, &path.display().to_string())
}

fn number(v: &Value, path: &str, at: &str) -> Result<f64> {
    let x = v
        .as_f64()
        .ok_or_else(|| parse_err(path, at, "expected a number"))?;
    if !x.is_finite() {
        return Err(parse_err(path, at, "non-finite number"));
    }
    Ok(x)
}

/// Reads a nested rectangular array into a tensor.
fn nested(v: &Value, path: &str, at: &str) -> Result<Tensor> {
    fn walk(
        v: &Value,
        depth: usize,
        shape: &mut Vec<usize>,
        data: &mut Vec<f64>,
        path: &str,
        at: &str,
    ) -> Result<()> {
        match v {
            Value::Array(items) => {
                if depth == shape.len() {
                    if !data.is_empty() {
                        return Err(parse_err(path, at, "ragged array"));
                    }
                    shape.push(items.len());
                } else if shape[depth] != items.len() {
                    return Err(parse_err(path, at, "ragged array"));
                }
                for (i, item) in items.iter().enumerate() {
                    walk(item, depth + 1, shape, data, path, &format!("{at}[{i}]"))?;
                }
                Ok(())
            }
            _ => {
                if depth != shape.len() {
                    return Err(parse_err(path, at, "ragged array"));
                }
                data.push(number(v, path, at)?);
                Ok(())
            }
        }
    }
    let mut shape = Vec::new();
    let mut data = Vec::new();
    walk(v, 0, &mut shape, &mut data, path, at)?;
    Tensor::new(shape, data).map_err(|e| parse_err(path, at, e.to_string()))
}

fn tensor_value(t: &Tensor) -> Value {
    fn build(shape: &[usize], data: &[f64]) -> Value {
        match shape {
            [] => json!(data[0]),
            [n] => json!(data[..*n]),
            [n, rest @ ..] => {
                let stride: usize = rest.iter().product();
                Value::Array(
                    (0..*n)
                        .map(|i| build(rest, &data[i * stride..(i + 1) * stride]))
                        .collect(),
                )
            }
        }
    }
    build(t.shape(), t.data())
}

pub fn params_to_value(params: &[Tensor]) -> Value {
    json!({ "params": params.iter().map(tensor_value).collect::<Vec<_>>() })
}

/// Parses `{"params": [...]}` and checks the shapes against `model`.
pub fn params_from_value(v: &Value, path: &str, model: &Model) -> Result<ParamList> {
    let items = field(v, "params", path)?
        .as_array()
        .ok_or_else(|| parse_err(path, "params", "expected an array"))?;
    let shapes = model.layout().shapes();
    if items.len() != shapes.len() {
        return Err(parse_err(
            path,
            "params",
            format!("expected {} tensors, got {}", shapes.len(), items.len()),
        ));
    }
    items
        .iter()
        .zip(shapes)
        .enumerate()
        .map(|(i, (item, shape))| {
            let at = format!("params[{i}]");
            let t = nested(item, path, &at)?;
            if t.shape() != shape.as_slice() {
                return Err(parse_err(
                    path,
                    at,
                    format!("expected shape {shape:?}, got {:?}", t.shape()),
                ));
            }
            Ok(t)
        })
        .collect()
}

pub fn load_params(path: &Path, model: &Model) -> Result<ParamList> {
    params_from_value(&read_json(path)?, &path.display().to_string(), model)
}

pub fn save_params(path: &Path, params: &[Tensor]) -> Result<()> {
    write_json(path, &params_to_value(params))
}

pub fn dataset_to_value(data: &Dataset) -> Value {
    let x = tensor_value(data.inputs());
    let y = match data.targets() {
        Targets::Regression(t) => tensor_value(t),
        Targets::Classes(c) => json!(c),
    };
    json!({ "x": x, "y": y })
}

/// Parses `{"x": [[...]], "y": [...]}`; `y` holds rows of reals or class indices.
pub fn dataset_from_value(v: &Value, path: &str) -> Result<Dataset> {
    let x = nested(field(v, "x", path)?, path, "x")?;
    if x.shape().len() != 2 {
        return Err(parse_err(path, "x", "expected an array of rows"));
    }
    let yv = field(v, "y", path)?;
    let ys = yv
        .as_array()
        .ok_or_else(|| parse_err(path, "y", "expected an array"))?;
    let targets = if ys.iter().all(Value::is_u64) && !ys.is_empty() {
        Targets::Classes(
            ys.iter()
                .map(|c| c.as_u64().unwrap_or(0) as usize)
                .collect(),
        )
    } else {
        let t = nested(yv, path, "y")?;
        if t.shape().len() != 2 {
            return Err(parse_err(
                path,
                "y",
                "expected class indices or rows of reals",
            ));
        }
        Targets::Regression(t)
    };
    if targets.len() != x.rows() {
        return Err(parse_err(
            path,
            "y",
            format!("expected {} rows, got {}", x.rows(), targets.len()),
        ));
    }
    Dataset::new(x, targets).map_err(|e| parse_err(path, "y", e.to_string()))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_value(&read_json(path)?, &path.display().to_string())
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_json(path, &dataset_to_value(data))
}

/// Loads a model, its parameters and a data set, and checks that they fit together.
pub fn load_problem(
    model: &Path,
    params: &Path,
    data: &Path,
) -> Result<(EmpiricalRisk, ParamList)> {
    let mf = load_model(model)?;
    let m = mf.model()?;
    let p = load_params(params, &m)?;
    let d = load_dataset(data)?;
    let risk = mf
        .risk(d)
        .map_err(|e| parse_err(&data.display().to_string(), "x", e.to_string()))?;
    Ok((risk, p))
}

/// CSV text with a header row; values in shortest round-trip form.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format_real(*x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Same text as the JSON writer produces for a real.
pub fn format_real(x: f64) -> String {
    serde_json::to_string(&x).unwrap_or_else(|_| "null".to_string())
}
