//! Solve reports: named tables that serialize to JSON and print with six
//! significant digits.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Table entry. Non-finite numbers are stored as text so the JSON form
/// reads back to the same table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Flag(bool),
    Text(String),
}

impl Cell {
    pub fn num(x: f64) -> Self {
        if x.is_finite() {
            Cell::Num(x)
        } else {
            Cell::Text(format!("{x}"))
        }
    }

    pub fn opt(x: Option<f64>) -> Self {
        x.map_or_else(|| Cell::Text("-".into()), Cell::num)
    }

    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn list(xs: &[f64]) -> Self {
        Cell::Text(xs.iter().map(|&x| sig6(x)).collect::<Vec<_>>().join(" "))
    }

    fn render(&self) -> String {
        match self {
            Cell::Num(x) => sig6(*x),
            Cell::Flag(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::num(x)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Flag(b)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Text(n.to_string())
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::Text(n.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Section {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: vec![],
        }
    }

    /// Two-column `quantity, value` table.
    pub fn key_value(title: impl Into<String>) -> Self {
        Self::new(title, &["quantity", "value"])
    }

    pub fn row(mut self, cells: Vec<Cell>) -> Self {
        self.push(cells);
        self
    }

    pub fn push(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    pub fn kv(mut self, key: &str, value: impl Into<Cell>) -> Self {
        self.push(vec![Cell::text(key), value.into()]);
        self
    }
}

/// What a CLI run produced: printable tables plus the raw result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport<T> {
    pub command: String,
    pub scenario: Option<String>,
    pub tables: Vec<Section>,
    pub result: T,
}

impl<T> SolveReport<T> {
    pub fn render(&self) -> String {
        render_tables(&self.command, self.scenario.as_deref(), &self.tables)
    }
}

pub fn render_tables(command: &str, scenario: Option<&str>, tables: &[Section]) -> String {
    let mut out = String::new();
    match scenario {
        Some(s) => writeln!(out, "{command}: {s}").unwrap(),
        None => writeln!(out, "{command}").unwrap(),
    }
    for t in tables {
        writeln!(out, "\n== {} ==", t.title).unwrap();
        let cells: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect();
        let mut widths: Vec<usize> = t.columns.iter().map(|c| c.chars().count()).collect();
        for r in &cells {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |items: &[String]| {
            items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        writeln!(out, "{}", line(&t.columns)).unwrap();
        for r in &cells {
            writeln!(out, "{}", line(r)).unwrap();
        }
    }
    out
}

/// Six significant digits, fixed notation for moderate magnitudes.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(5.130843097092451), "5.13084");
        assert_eq!(sig6(0.24288268857491047), "0.242883");
        assert_eq!(sig6(1.5708032653364664e19), "1.5708e19");
        assert_eq!(sig6(-2.5e-7), "-2.5e-7");
        assert_eq!(sig6(999999.7), "1e6");
        assert_eq!(sig6(2.0), "2");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(f64::NAN), "NaN");
    }

    #[test]
    fn json_round_trip_keeps_the_table() {
        let t = Section::key_value("equilibrium")
            .kv("threshold", 5.130843097092451)
            .kv("stable", true)
            .kv("note", "none")
            .kv("residual", f64::NAN)
            .kv("count", 3usize);
        let report = SolveReport {
            command: "solve-mfg".into(),
            scenario: Some("demo".into()),
            tables: vec![t, Section::new("list", &["a", "b"]).row(vec![Cell::list(&[1.0, 2.5]), Cell::opt(None)])],
            result: (),
        };
        let json = serde_json::to_string(&report).unwrap();
        let back: SolveReport<()> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.render(), report.render());
        assert!(report.render().contains("threshold  5.13084"));
    }
}
