//! Structured text input shared by model and law files.
//!
//! Files are TOML. Values are read from a parsed [`toml::Table`]; a second,
//! span-preserving parse maps every `section.key` to its source line so that
//! errors can point at the offending entry.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use toml::de::{DeTable, DeValue};
use toml::{Table, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Document {
    root: Table,
    lines: HashMap<String, usize>,
}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

fn collect_lines(
    source: &str,
    prefix: &str,
    table: &DeTable<'_>,
    out: &mut HashMap<String, usize>,
) {
    for (key, value) in table.iter() {
        let path = if prefix.is_empty() {
            key.get_ref().to_string()
        } else {
            format!("{prefix}.{}", key.get_ref())
        };
        out.insert(path.clone(), line_of(source, key.span().start));
        if let DeValue::Table(inner) = value.get_ref() {
            collect_lines(source, &path, inner, out);
        }
    }
}

impl Document {
    pub fn parse(source: &str) -> Result<Self> {
        let root: Table = source.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| line_of(source, s.start)).unwrap_or(0);
            Error::Parse {
                key: String::new(),
                line,
                message: e.message().to_string(),
            }
        })?;
        let mut lines = HashMap::new();
        if let Ok(spanned) = DeTable::parse(source) {
            collect_lines(source, "", spanned.get_ref(), &mut lines);
        }
        Ok(Self { root, lines })
    }

    pub fn has_section(&self, section: &str) -> bool {
        matches!(self.root.get(section), Some(Value::Table(_)))
    }

    pub fn section<'a>(&'a self, name: &'a str) -> Result<Section<'a>> {
        match self.root.get(name) {
            Some(Value::Table(table)) => Ok(Section {
                doc: self,
                name,
                table,
            }),
            Some(_) => Err(self.error(name, "expected a section")),
            None => Err(Error::Parse {
                key: name.to_string(),
                line: 0,
                message: "missing section".into(),
            }),
        }
    }

    pub fn error(&self, path: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            key: path.to_string(),
            line: self.lines.get(path).copied().unwrap_or(0),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Section<'a> {
    doc: &'a Document,
    name: &'a str,
    table: &'a Table,
}

impl<'a> Section<'a> {
    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> Error {
        self.doc.error(&self.path(key), message)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.table.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }

    /// Rejects keys outside `allowed`.
    pub fn only(&self, allowed: &[&str]) -> Result<()> {
        for key in self.table.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(self.error(key, "unknown key"));
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&'a Value> {
        self.table.get(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self
            .raw(key)
            .ok_or_else(|| self.error(key, "missing key"))?;
        as_f64(v).ok_or_else(|| self.error(key, "expected a number"))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.contains(key) {
            self.f64(key)
        } else {
            Ok(default)
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        match self.raw(key) {
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(_) => Err(self.error(key, "expected a non-negative integer")),
            None => Err(self.error(key, "missing key")),
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.usize(key).map(|v| v as u64)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(self.error(key, "expected true or false")),
            None => Err(self.error(key, "missing key")),
        }
    }

    pub fn string(&self, key: &str) -> Result<&'a str> {
        match self.raw(key) {
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(self.error(key, "expected a string")),
            None => Err(self.error(key, "missing key")),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self
            .raw(key)
            .ok_or_else(|| self.error(key, "missing key"))?;
        match v {
            Value::Array(items) => items
                .iter()
                .map(|x| as_f64(x).ok_or_else(|| self.error(key, "expected a list of numbers")))
                .collect(),
            other => as_f64(other)
                .map(|x| vec![x])
                .ok_or_else(|| self.error(key, "expected a list of numbers")),
        }
    }

    /// Matrix as a scalar (1×1), a flat list (column vector) or a list of rows.
    pub fn matrix(&self, key: &str) -> Result<DMatrix<f64>> {
        let v = self
            .raw(key)
            .ok_or_else(|| self.error(key, "missing key"))?;
        value_to_matrix(v).map_err(|m| self.error(key, m))
    }

    pub fn vector(&self, key: &str) -> Result<DVector<f64>> {
        let m = self.matrix(key)?;
        if m.ncols() != 1 {
            return Err(self.error(key, "expected a vector"));
        }
        Ok(m.column(0).into_owned())
    }
}

pub(crate) fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

pub(crate) fn value_to_matrix(v: &Value) -> std::result::Result<DMatrix<f64>, String> {
    if let Some(x) = as_f64(v) {
        return Ok(DMatrix::from_element(1, 1, x));
    }
    let Value::Array(rows) = v else {
        return Err("expected a number or a bracketed list".into());
    };
    if rows.is_empty() {
        return Err("empty list".into());
    }
    if rows.iter().all(|r| as_f64(r).is_some()) {
        let col: Vec<f64> = rows.iter().filter_map(as_f64).collect();
        return Ok(DMatrix::from_column_slice(col.len(), 1, &col));
    }
    let mut data = Vec::new();
    let mut ncols = None;
    for row in rows {
        let Value::Array(cells) = row else {
            return Err("mixed scalars and rows".into());
        };
        let vals: Option<Vec<f64>> = cells.iter().map(as_f64).collect();
        let vals = vals.ok_or("non-numeric matrix entry")?;
        match ncols {
            None => ncols = Some(vals.len()),
            Some(n) if n != vals.len() => return Err("ragged rows".into()),
            _ => {}
        }
        data.extend(vals);
    }
    let ncols = ncols.unwrap_or(0);
    if ncols == 0 {
        return Err("empty row".into());
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &data))
}
