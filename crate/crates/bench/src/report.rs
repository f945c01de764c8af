//! Per-task rows, per-strategy aggregates, and their text forms.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task_id: String,
    pub strategy: String,
    pub correct: bool,
    pub turns: u32,
    pub output_words: u64,
    /// Sum of reported execution durations, so reruns are byte-identical.
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub strategy: String,
    pub tasks: usize,
    pub accuracy: f64,
    pub avg_turns: f64,
    pub avg_output_words: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Structured,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "structured" | "json" => Ok(ReportFormat::Structured),
            other => Err(format!("unknown report format `{other}` (table|structured)")),
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl BenchReport {
    /// Builds a report whose aggregates are computed from `rows`, one per
    /// strategy in order of first appearance.
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let mut strategies: Vec<&str> = Vec::new();
        for r in &rows {
            if !strategies.contains(&r.strategy.as_str()) {
                strategies.push(&r.strategy);
            }
        }
        let aggregates = strategies
            .iter()
            .map(|s| {
                let group: Vec<&ReportRow> = rows.iter().filter(|r| r.strategy == *s).collect();
                Aggregate {
                    strategy: s.to_string(),
                    tasks: group.len(),
                    accuracy: mean(group.iter().map(|r| if r.correct { 1.0 } else { 0.0 })),
                    avg_turns: mean(group.iter().map(|r| r.turns as f64)),
                    avg_output_words: mean(group.iter().map(|r| r.output_words as f64)),
                }
            })
            .collect();
        Self { rows, aggregates }
    }

    pub fn merge(reports: impl IntoIterator<Item = BenchReport>) -> Self {
        Self::from_rows(reports.into_iter().flat_map(|r| r.rows).collect())
    }

    pub fn aggregate(&self, strategy: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.strategy == strategy)
    }

    pub fn to_table(&self) -> String {
        let header = ["Strategy", "Avg Turns", "Correct", "Output Words"];
        let cells: Vec<[String; 4]> = self
            .aggregates
            .iter()
            .map(|a| {
                [
                    a.strategy.clone(),
                    format!("{:.2}", a.avg_turns),
                    format!("{:.1}%", a.accuracy * 100.0),
                    format!("{:.1}", a.avg_output_words),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cols: [&str; 4]| {
            let padded: Vec<String> = cols
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "| {} |", padded.join(" | "));
        };
        line(&mut out, header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        for row in &cells {
            line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Table => self.to_table(),
            ReportFormat::Structured => self.to_json(),
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

pub fn emit_report(report: &BenchReport, path: &Path, format: ReportFormat) -> std::io::Result<()> {
    fs::write(path, report.render(format))
}
