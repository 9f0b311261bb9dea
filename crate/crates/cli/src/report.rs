use std::io::Write;
use std::path::Path;

use hitgap::bounds::{BoundEntry, Status};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub name: String,
    pub value: f64,
    pub unit: &'static str,
    pub status: &'static str,
}

impl Row {
    pub fn new(name: impl Into<String>, value: f64, unit: &'static str) -> Self {
        Row { name: name.into(), value, unit, status: "ok" }
    }
}

pub fn status_str(s: Status) -> &'static str {
    match s {
        Status::Pass => "pass",
        Status::Fail => "fail",
        Status::Inconclusive => "inconclusive",
        Status::NotApplicable => "not_applicable",
    }
}

/// Two rows per entry, lhs and rhs, tagged with the entry status.
pub fn ledger_rows(entries: &[BoundEntry]) -> Vec<Row> {
    let mut rows = Vec::new();
    let mut seen = std::collections::BTreeMap::<&str, usize>::new();
    for e in entries {
        let k = seen.entry(e.id.as_str()).or_insert(0);
        let name = match e.inputs.get("t") {
            Some(t) => format!("{}[t={}]", e.id, t),
            None if *k == 0 => e.id.clone(),
            None => format!("{}#{}", e.id, k),
        };
        *k += 1;
        rows.push(Row { name: format!("{name}.lhs"), value: e.lhs, unit: "", status: status_str(e.status) });
        rows.push(Row { name: format!("{name}.rhs"), value: e.rhs, unit: "", status: status_str(e.status) });
    }
    rows
}

#[derive(Debug, Serialize)]
pub struct Report<C: Serialize> {
    pub config: C,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
    pub results: Value,
    #[serde(skip)]
    pub rows: Vec<Row>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:e}")
    }
}

impl<C: Serialize> Report<C> {
    pub fn render(&self, csv: bool) -> String {
        if csv {
            let mut s = String::from("name,value,unit,status\n");
            for r in &self.rows {
                s.push_str(&format!("{},{},{},{}\n", csv_field(&r.name), fmt_value(r.value), r.unit, r.status));
            }
            s
        } else {
            let mut s = serde_json::to_string_pretty(self).expect("report serializes");
            s.push('\n');
            s
        }
    }

    pub fn write(&self, csv: bool, out: Option<&Path>) -> std::io::Result<()> {
        let text = self.render(csv);
        match out {
            Some(p) => std::fs::write(p, text),
            None => std::io::stdout().write_all(text.as_bytes()),
        }
    }
}
