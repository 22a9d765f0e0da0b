//! Named numeric arrays loaded from a JSON object and checked against a
//! model's data schema.
//!
//! The format is a single object mapping names to scalars or nested,
//! row-major arrays of numbers: `{"N": 3, "x": [0, 1, 2], "X": [[1, 2]]}`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("data is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read data file: {0}")]
    Io(#[from] std::io::Error),
    #[error("data must be a JSON object of numbers and arrays")]
    NotAnObject,
    #[error("field `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error("missing data field `{0}`")]
    Missing(String),
    #[error("dimension `{dim}` is {got} in `{field}` but {expected} elsewhere")]
    DimMismatch {
        dim: String,
        field: String,
        expected: usize,
        got: usize,
    },
}

fn field_err(field: &str, reason: impl Into<String>) -> DataError {
    DataError::Field {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// A dense array with shape; a scalar has an empty shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Array {
    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            values: vec![v],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
        }
    }

    /// Row-major `rows × cols`.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "matrix size");
        Self {
            shape: vec![rows, cols],
            values,
        }
    }

    fn to_json(&self) -> Value {
        fn build(shape: &[usize], values: &[f64]) -> Value {
            match shape.split_first() {
                None => number(values[0]),
                Some((&n, rest)) => {
                    let stride: usize = rest.iter().product();
                    Value::Array(
                        (0..n)
                            .map(|i| build(rest, &values[i * stride..(i + 1) * stride]))
                            .collect(),
                    )
                }
            }
        }
        fn number(v: f64) -> Value {
            if v.fract() == 0.0 && v.abs() < 9e15 {
                Value::from(v as i64)
            } else {
                serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
            }
        }
        build(&self.shape, &self.values)
    }
}

/// Kind of values a field must hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Real,
    /// Non-negative integers.
    Count,
    /// 0 or 1.
    Binary,
    /// 1-based index bounded by a named dimension or scalar field.
    Index(&'static str),
}

/// One entry of a model's data schema. `dims` name each axis; a field with
/// no dims is a scalar.
#[derive(Clone, Debug)]
pub struct Field {
    pub name: &'static str,
    pub dims: &'static [&'static str],
    pub kind: Kind,
    pub optional: bool,
}

impl Field {
    pub const fn new(name: &'static str, dims: &'static [&'static str], kind: Kind) -> Self {
        Self {
            name,
            dims,
            kind,
            optional: false,
        }
    }

    pub const fn optional(mut self) -> Self {
        self.optional = true;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    fields: BTreeMap<String, Array>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, array: Array) -> Self {
        self.insert(name, array);
        self
    }

    pub fn insert(&mut self, name: &str, array: Array) {
        self.fields.insert(name.to_string(), array);
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.fields.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.keys().map(String::as_str)
    }

    pub fn from_json_str(text: &str) -> Result<Self, DataError> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(map) = value else {
            return Err(DataError::NotAnObject);
        };
        let mut fields = BTreeMap::new();
        for (name, v) in map {
            let mut shape = Vec::new();
            let mut values = Vec::new();
            flatten(&name, &v, 0, &mut shape, &mut values)?;
            fields.insert(name, Array { shape, values });
        }
        Ok(Self { fields })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let map: serde_json::Map<String, Value> = self
            .fields
            .iter()
            .map(|(k, v)| (k.clone(), v.to_json()))
            .collect();
        serde_json::to_string(&Value::Object(map)).expect("serializable")
    }

    /// Check fields against `schema` and return the size bound to every
    /// named dimension.
    pub fn validate(&self, schema: &[Field]) -> Result<HashMap<&'static str, usize>, DataError> {
        let mut dims: HashMap<&'static str, usize> = HashMap::new();
        for f in schema {
            let Some(a) = self.get(f.name) else {
                if f.optional {
                    continue;
                }
                return Err(DataError::Missing(f.name.to_string()));
            };
            if a.shape.len() != f.dims.len() {
                return Err(field_err(
                    f.name,
                    format!("expected {} axes, found {}", f.dims.len(), a.shape.len()),
                ));
            }
            for (&d, &n) in f.dims.iter().zip(&a.shape) {
                match dims.get(d) {
                    Some(&expected) if expected != n => {
                        return Err(DataError::DimMismatch {
                            dim: d.to_string(),
                            field: f.name.to_string(),
                            expected,
                            got: n,
                        })
                    }
                    _ => {
                        dims.insert(d, n);
                    }
                }
            }
        }
        let bound = |d: &str| {
            dims.get(d)
                .copied()
                .or_else(|| self.scalar(d).ok().map(|v| v.max(0.0) as usize))
                .unwrap_or(0)
        };
        for f in schema {
            let Some(a) = self.get(f.name) else { continue };
            for (i, &v) in a.values.iter().enumerate() {
                let ok = match f.kind {
                    Kind::Real => v.is_finite(),
                    Kind::Count => v >= 0.0 && v.fract() == 0.0 && v.is_finite(),
                    Kind::Binary => v == 0.0 || v == 1.0,
                    Kind::Index(d) => v >= 1.0 && v.fract() == 0.0 && v <= bound(d) as f64,
                };
                if !ok {
                    let what = match f.kind {
                        Kind::Real => "a finite number".to_string(),
                        Kind::Count => "a non-negative integer".to_string(),
                        Kind::Binary => "0 or 1".to_string(),
                        Kind::Index(d) => format!("an index in 1..={}", bound(d)),
                    };
                    return Err(field_err(f.name, format!("element {i} is {v}, expected {what}")));
                }
            }
        }
        Ok(dims)
    }

    pub fn scalar(&self, name: &str) -> Result<f64, DataError> {
        let a = self.get(name).ok_or_else(|| DataError::Missing(name.to_string()))?;
        if !a.shape.is_empty() {
            return Err(field_err(name, "expected a scalar"));
        }
        Ok(a.values[0])
    }

    pub fn scalar_or(&self, name: &str, default: f64) -> Result<f64, DataError> {
        match self.get(name) {
            None => Ok(default),
            Some(_) => self.scalar(name),
        }
    }

    pub fn values(&self, name: &str) -> Result<&[f64], DataError> {
        self.get(name)
            .map(|a| a.values.as_slice())
            .ok_or_else(|| DataError::Missing(name.to_string()))
    }

    /// 1-based indices converted to 0-based.
    pub fn indices(&self, name: &str) -> Result<Vec<usize>, DataError> {
        Ok(self.values(name)?.iter().map(|&v| v as usize - 1).collect())
    }
}

fn flatten(name: &str, v: &Value, depth: usize, shape: &mut Vec<usize>, out: &mut Vec<f64>) -> Result<(), DataError> {
    match v {
        Value::Number(n) => {
            if depth != shape.len() {
                return Err(field_err(name, "ragged array"));
            }
            out.push(n.as_f64().ok_or_else(|| field_err(name, "number out of range"))?);
            Ok(())
        }
        Value::Array(items) => {
            if depth == shape.len() {
                if !out.is_empty() {
                    return Err(field_err(name, "ragged array"));
                }
                shape.push(items.len());
            } else if shape[depth] != items.len() {
                return Err(field_err(name, "ragged array"));
            }
            if items.is_empty() {
                // An empty axis ends the shape; nothing below it is known.
                if depth + 1 != shape.len() {
                    return Err(field_err(name, "ragged array"));
                }
                return Ok(());
            }
            for item in items {
                flatten(name, item, depth + 1, shape, out)?;
            }
            Ok(())
        }
        _ => Err(field_err(name, "only numbers and arrays are allowed")),
    }
}
