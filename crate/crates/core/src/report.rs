//! Tables of `rho1` per grid depth and model.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::is_divergent;
use crate::network::ModelKind;

pub const CSV_HEADER: [&str; 6] = ["J", "model", "problem", "rho1", "seed", "trained_J"];

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Value(f64),
    /// Estimate at or above one, or not finite.
    Divergent,
    /// The model could not be trained or evaluated.
    Failed(String),
}

impl Cell {
    pub fn from_estimate(rho: f64) -> Self {
        if is_divergent(rho) {
            Cell::Divergent
        } else {
            Cell::Value(rho)
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(*v),
            _ => None,
        }
    }

    fn csv_field(&self) -> String {
        match self {
            Cell::Value(v) => format!("{v}"),
            Cell::Divergent => "-".into(),
            Cell::Failed(msg) => format!("failed: {msg}"),
        }
    }

    fn parse_csv(field: &str) -> Result<Self> {
        if field == "-" {
            return Ok(Cell::Divergent);
        }
        if let Some(msg) = field.strip_prefix("failed: ") {
            return Ok(Cell::Failed(msg.to_string()));
        }
        field.parse::<f64>().map(Cell::Value).map_err(|_| Error::InvalidField(format!("bad rho1 cell '{field}'")))
    }

    /// Two significant figures, `-` for divergence.
    pub fn markdown(&self) -> String {
        match self {
            Cell::Value(v) => format_two_significant(*v),
            Cell::Divergent => "-".into(),
            Cell::Failed(_) => "fail".into(),
        }
    }
}

pub fn format_two_significant(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let decimals = (1 - v.abs().log10().floor() as i32).max(0) as usize;
    format!("{v:.decimals$}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub j: u32,
    pub model: ModelKind,
    pub problem: String,
    pub cell: Cell,
    pub seed: u64,
    /// Depth the model was trained at; `None` for untrained models.
    pub trained_j: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct CsvRecord {
    #[serde(rename = "J")]
    j: u32,
    model: String,
    problem: String,
    rho1: String,
    seed: u64,
    #[serde(rename = "trained_J")]
    trained_j: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TableReport {
    pub problem: String,
    pub rows: Vec<ReportRow>,
}

impl TableReport {
    pub fn new(problem: impl Into<String>) -> Self {
        Self { problem: problem.into(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    /// Orders rows by depth, then by model column.
    pub fn sort(&mut self) {
        self.rows.sort_by_key(|r| (r.j, r.model));
    }

    pub fn get(&self, j: u32, model: ModelKind) -> Option<&Cell> {
        self.rows.iter().find(|r| r.j == j && r.model == model).map(|r| &r.cell)
    }

    pub fn depths(&self) -> Vec<u32> {
        let mut js: Vec<u32> = self.rows.iter().map(|r| r.j).collect();
        js.sort_unstable();
        js.dedup();
        js
    }

    pub fn models(&self) -> Vec<ModelKind> {
        let mut ms: Vec<ModelKind> = self.rows.iter().map(|r| r.model).collect();
        ms.sort_unstable();
        ms.dedup();
        ms
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRecord {
                j: r.j,
                model: r.model.name().into(),
                problem: r.problem.clone(),
                rho1: r.cell.csv_field(),
                seed: r.seed,
                trained_j: r.trained_j,
            })?;
        }
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(Error::InvalidField(format!("unexpected header {header:?}")));
        }
        let mut report = TableReport::default();
        for rec in rd.deserialize() {
            let rec: CsvRecord = rec?;
            if report.problem.is_empty() {
                report.problem = rec.problem.clone();
            }
            report.rows.push(ReportRow {
                j: rec.j,
                model: rec.model.parse()?,
                problem: rec.problem,
                cell: Cell::parse_csv(&rec.rho1)?,
                seed: rec.seed,
                trained_j: rec.trained_j,
            });
        }
        Ok(report)
    }

    pub fn to_markdown(&self) -> String {
        let models = self.models();
        let mut out = String::new();
        writeln!(out, "### {}", self.problem).unwrap();
        writeln!(out).unwrap();
        write!(out, "| J |").unwrap();
        for m in &models {
            write!(out, " {} |", m.label()).unwrap();
        }
        writeln!(out).unwrap();
        write!(out, "|---|").unwrap();
        for _ in &models {
            write!(out, "---|").unwrap();
        }
        writeln!(out).unwrap();
        for j in self.depths() {
            write!(out, "| {j} |").unwrap();
            for &m in &models {
                let cell = self.get(j, m).map(Cell::markdown).unwrap_or_default();
                write!(out, " {cell} |").unwrap();
            }
            writeln!(out).unwrap();
        }
        let failures: Vec<&ReportRow> = self.rows.iter().filter(|r| matches!(r.cell, Cell::Failed(_))).collect();
        if !failures.is_empty() {
            writeln!(out).unwrap();
            for r in failures {
                if let Cell::Failed(msg) = &r.cell {
                    writeln!(out, "- {} at J = {}: {msg}", r.model.label(), r.j).unwrap();
                }
            }
        }
        out
    }
}
