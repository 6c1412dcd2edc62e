use std::path::Path;

use serde_json::{Map, Value};

use crate::error::Result;

/// Ordered metric list written as `metric<TAB>value` lines plus a JSON summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, f64)>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn push(&mut self, metric: impl Into<String>, value: f64) {
        self.entries.push((metric.into(), value));
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.entries.iter().find(|(m, _)| m == metric).map(|&(_, v)| v)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn to_tsv(&self) -> String {
        self.entries.iter().map(|(m, v)| format!("{m}\t{v}\n")).collect()
    }

    pub fn to_json(&self) -> Value {
        let map: Map<String, Value> = self
            .entries
            .iter()
            .map(|(m, v)| (m.clone(), serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number)))
            .collect();
        Value::Object(map)
    }

    /// Writes `<stem>.tsv` and `<stem>.json`.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        std::fs::write(stem.with_extension("tsv"), self.to_tsv())?;
        let json = serde_json::to_string_pretty(&self.to_json()).expect("metric map serializes");
        std::fs::write(stem.with_extension("json"), json + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_and_json() {
        let mut r = Report::new();
        r.push("bleu", 12.5);
        r.push("len_dist", 0.25);
        assert_eq!(r.to_tsv(), "bleu\t12.5\nlen_dist\t0.25\n");
        assert_eq!(r.to_json()["len_dist"], 0.25);
        assert_eq!(r.get("bleu"), Some(12.5));
    }
}
