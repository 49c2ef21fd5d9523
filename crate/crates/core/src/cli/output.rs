use std::fmt::Write as _;

use clap::ValueEnum;
use serde_json::{Map, Value as Json};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Num(f64),
    Text(String),
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<u64> for Value {
    fn from(x: u64) -> Self {
        Value::Int(x as i64)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as i64)
    }
}

impl From<i64> for Value {
    fn from(x: i64) -> Self {
        Value::Int(x)
    }
}

impl From<String> for Value {
    fn from(x: String) -> Self {
        Value::Text(x)
    }
}

impl From<&str> for Value {
    fn from(x: &str) -> Self {
        Value::Text(x.to_string())
    }
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Num(x) => Some(*x),
            Value::Text(_) => None,
        }
    }

    fn json(&self) -> Json {
        match self {
            Value::Int(i) => Json::from(*i),
            Value::Num(x) => serde_json::Number::from_f64(*x).map_or(Json::Null, Json::Number),
            Value::Text(s) => Json::from(s.as_str()),
        }
    }

    fn csv(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Num(x) => x.to_string(),
            Value::Text(s) => s.clone(),
        }
    }

    fn text(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Num(x) => short(*x),
            Value::Text(s) => s.clone(),
        }
    }
}

/// Six significant digits, plain notation where readable.
pub fn short(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..7).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// A one-row table from `(column, value)` pairs.
    pub fn record(name: &str, fields: Vec<(&str, Value)>) -> Self {
        let mut t = Table::new(name, &fields.iter().map(|f| f.0).collect::<Vec<_>>());
        t.push(fields.into_iter().map(|f| f.1).collect());
        t
    }
}

/// The result of one command: named tables plus an optional hand-laid-out
/// text rendering.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub tables: Vec<Table>,
    pub text: Option<String>,
}

impl Report {
    pub fn new(tables: Vec<Table>) -> Self {
        Report { tables, text: None }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// The number in `column` of the first row of table `name`.
    pub fn number(&self, name: &str, column: &str) -> Option<f64> {
        let t = self.table(name)?;
        let j = t.columns.iter().position(|c| c == column)?;
        t.rows.first()?.get(j)?.as_f64()
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.json(),
            Format::Csv => self.csv(),
            Format::Text => self.text.clone().unwrap_or_else(|| self.plain()),
        }
    }

    fn json(&self) -> String {
        let mut top = Map::new();
        for t in &self.tables {
            let rows = t
                .rows
                .iter()
                .map(|r| {
                    let obj: Map<String, Json> = t
                        .columns
                        .iter()
                        .cloned()
                        .zip(r.iter().map(Value::json))
                        .collect();
                    Json::Object(obj)
                })
                .collect();
            top.insert(t.name.clone(), Json::Array(rows));
        }
        let mut s = serde_json::to_string_pretty(&Json::Object(top)).expect("JSON of plain values");
        s.push('\n');
        s
    }

    fn csv(&self) -> String {
        let mut out = String::new();
        for (k, t) in self.tables.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "# {}", t.name);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&t.columns).expect("in-memory write");
            for r in &t.rows {
                w.write_record(r.iter().map(Value::csv))
                    .expect("in-memory write");
            }
            out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("UTF-8"));
        }
        out
    }

    fn plain(&self) -> String {
        let mut out = String::new();
        for (k, t) in self.tables.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            if t.rows.len() == 1 {
                let width = t.columns.iter().map(|c| c.len()).max().unwrap_or(0);
                for (c, v) in t.columns.iter().zip(&t.rows[0]) {
                    let _ = writeln!(out, "{c:<width$}  {}", v.text());
                }
                continue;
            }
            let _ = writeln!(out, "{}:", t.name);
            let cells: Vec<Vec<String>> = t
                .rows
                .iter()
                .map(|r| r.iter().map(Value::text).collect())
                .collect();
            let widths: Vec<usize> = (0..t.columns.len())
                .map(|j| {
                    cells
                        .iter()
                        .map(|r| r[j].len())
                        .chain([t.columns[j].len()])
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |fields: Vec<&str>| {
                fields
                    .iter()
                    .zip(&widths)
                    .map(|(f, w)| format!("{f:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let _ = writeln!(
                out,
                "{}",
                line(t.columns.iter().map(String::as_str).collect())
            );
            for r in &cells {
                let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
            }
        }
        out
    }
}
