//! Verification reports with byte-stable JSON and CSV output.

use std::io::{self, Write};
use std::path::Path;

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{Map, Value};

use crate::error::Result;

/// One assertion made by a verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub input: Value,
    pub expected: String,
    pub got: String,
    /// Signed distance to the acceptance threshold; nonnegative when the check passes.
    #[serde(serialize_with = "ser_float", deserialize_with = "de_float")]
    pub margin: f64,
    pub pass: bool,
}

/// A failed check as listed in the report's `failures` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub input: Value,
    pub expected: String,
    pub got: String,
    #[serde(serialize_with = "ser_float", deserialize_with = "de_float")]
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub theorem: String,
    pub seed: Option<u64>,
    pub samples: usize,
    pub passes: usize,
    pub failures: Vec<Failure>,
    pub checks: Vec<Check>,
    pub details: Map<String, Value>,
}

impl Report {
    pub fn new(theorem: &str, seed: Option<u64>, samples: usize) -> Self {
        Self {
            theorem: theorem.to_string(),
            seed,
            samples,
            passes: 0,
            failures: Vec::new(),
            checks: Vec::new(),
            details: Map::new(),
        }
    }

    pub fn record(&mut self, name: &str, input: Value, expected: impl Into<String>, got: impl Into<String>, margin: f64, pass: bool) {
        let check = Check {
            name: name.to_string(),
            input,
            expected: expected.into(),
            got: got.into(),
            margin,
            pass,
        };
        if pass {
            self.passes += 1;
        } else {
            self.failures.push(Failure {
                input: check.input.clone(),
                expected: check.expected.clone(),
                got: check.got.clone(),
                margin,
            });
        }
        self.checks.push(check);
    }

    pub fn detail(&mut self, key: &str, value: Value) {
        self.details.insert(key.to_string(), value);
    }

    /// Append all checks of `other`, prefixing their names.
    pub fn absorb(&mut self, prefix: &str, other: Report) {
        for c in other.checks {
            let name = format!("{prefix}/{}", c.name);
            self.record(&name, c.input, c.expected, c.got, c.margin, c.pass);
        }
        if !other.details.is_empty() {
            self.details.insert(prefix.to_string(), Value::Object(other.details));
        }
    }

    pub fn total(&self) -> usize {
        self.checks.len()
    }

    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary(&self) -> String {
        format!("{}: {}/{} checks passed", self.theorem, self.passes, self.total())
    }

    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloats::default());
        value.serialize(&mut ser)?;
        buf.push(b'\n');
        Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV with one row per check.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["theorem", "name", "input", "expected", "got", "margin", "pass"])?;
        for c in &self.checks {
            w.write_record([
                self.theorem.as_str(),
                &c.name,
                &canonical_json(&c.input)?,
                &c.expected,
                &c.got,
                &fmt_float(c.margin),
                if c.pass { "true" } else { "false" },
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writes UTF-8"))
    }
}

/// Write `report` as JSON to `path`, and as CSV next to it when `csv_path` is given.
pub fn emit_report(report: &Report, path: &Path, csv_path: Option<&Path>) -> Result<()> {
    std::fs::write(path, report.to_json()?)?;
    if let Some(p) = csv_path {
        std::fs::write(p, report.to_csv()?)?;
    }
    Ok(())
}

/// Write rows of numbers as CSV with the given header.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    std::fs::write(path, table_csv(header, rows)?)?;
    Ok(())
}

pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| fmt_float(*v)))?;
    }
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writes UTF-8"))
}

/// Seventeen significant digits; non-finite values spelled out.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.16e}")
    }
}

/// JSON value for a float; non-finite values become strings.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else {
        Value::String(fmt_float(v))
    }
}

pub fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

fn canonical_json(v: &Value) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, CompactFixed);
    v.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

fn ser_float<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&fmt_float(*v))
    }
}

fn de_float<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        N(f64),
        S(String),
    }
    match Raw::deserialize(d)? {
        Raw::N(v) => Ok(v),
        Raw::S(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => other.parse().map_err(serde::de::Error::custom),
        },
    }
}

struct CompactFixed;

impl Formatter for CompactFixed {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// Pretty printing with floats at 17 significant digits.
#[derive(Default)]
struct FixedFloats<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for FixedFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Report {
        let mut r = Report::new("demo", Some(7), 2);
        r.record("a", json!({"p": 0.1}), "pass", "pass", 0.5, true);
        r.record("b", json!({"p": num(f64::INFINITY)}), "fail", "pass", f64::NEG_INFINITY, false);
        r.detail("zeta", num(1.0 / 3.0));
        r.detail("alpha", json!([1, 2]));
        r
    }

    #[test]
    fn json_round_trip_and_sorted_keys() {
        let r = sample();
        let text = r.to_json().unwrap();
        let back = Report::from_json(&text).unwrap();
        assert_eq!(back.failures.len(), 1);
        assert_eq!(back.failures[0].margin, f64::NEG_INFINITY);
        assert_eq!(back.passes, 1);
        assert!(text.find("\"alpha\"").unwrap() < text.find("\"zeta\"").unwrap());
        assert!(text.find("\"checks\"").unwrap() < text.find("\"theorem\"").unwrap());
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(text, back.to_json().unwrap());
    }

    #[test]
    fn csv_has_row_per_check() {
        let csv = sample().to_csv().unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().ends_with("-inf,false"));
    }

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_float(0.5), "5.0000000000000000e-1");
        assert_eq!(fmt_float(f64::NAN), "nan");
    }
}
