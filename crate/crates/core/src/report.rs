//! Check records and the JSON/CSV artifacts written by the runner.

use crate::error::Result;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub check: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub meta: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Relation {
    AtMost,
    AtLeast,
}

impl Check {
    fn new(check: impl Into<String>, value: f64, tolerance: f64, rel: Relation) -> Self {
        // NaN never passes
        let pass = match rel {
            Relation::AtMost => value <= tolerance,
            Relation::AtLeast => value >= tolerance,
        };
        let relation = if rel == Relation::AtMost { "<=" } else { ">=" };
        Self { check: check.into(), value, tolerance, pass, meta: json!({ "relation": relation }) }
    }

    pub fn at_most(check: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self::new(check, value, tolerance, Relation::AtMost)
    }

    pub fn at_least(check: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self::new(check, value, tolerance, Relation::AtLeast)
    }

    /// A yes/no property, recorded as value 1 or 0 against 1.
    pub fn holds(check: impl Into<String>, ok: bool) -> Self {
        Self::new(check, if ok { 1.0 } else { 0.0 }, 1.0, Relation::AtLeast)
    }

    pub fn with(mut self, key: &str, v: impl Serialize) -> Self {
        let v = serde_json::to_value(v).unwrap_or(Value::Null);
        if let Value::Object(m) = &mut self.meta {
            m.insert(key.into(), v);
        }
        self
    }

    /// Widens an upper-bound tolerance by `scale`; lower bounds and flags are left alone.
    pub fn scaled(mut self, scale: f64) -> Self {
        if self.meta["relation"] == "<=" && !self.meta.get("flag").is_some_and(|f| f == true) {
            self.tolerance *= scale;
            self.pass = self.value <= self.tolerance;
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub csv: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn table(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = vec![];
        write(&mut buf)?;
        self.tables.push(Table { name: name.into(), csv: buf });
        Ok(())
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
        self.tables.extend(other.tables);
        self.warnings.extend(other.warnings);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.checks)?)
    }

    /// `summary.json` plus one CSV per table.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.json"), self.summary_json()? + "\n")?;
        for t in &self.tables {
            std::fs::write(dir.join(format!("{}.csv", t.name)), &t.csv)?;
        }
        Ok(())
    }
}

/// Writes rows of numbers under a header.
pub fn rows_csv(buf: &mut Vec<u8>, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations_and_scaling() {
        assert!(Check::at_most("a", 1e-11, 1e-10).pass);
        assert!(!Check::at_most("a", f64::NAN, 1e-10).pass);
        assert!(!Check::at_least("b", 1.7, 1.8).pass);
        let c = Check::at_most("c", 2e-10, 1e-10).scaled(3.0);
        assert!(c.pass && c.tolerance == 3e-10);
        assert!(!Check::at_least("d", 1.0, 2.0).scaled(10.0).pass);
        assert_eq!(Check::holds("e", false).value, 0.0);
        let j = serde_json::to_value(Check::holds("e", true).with("n", 3)).unwrap();
        assert_eq!(j["meta"]["n"], 3);
        assert_eq!(j["check"], "e");
    }
}
