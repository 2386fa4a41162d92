use std::fmt;

use serde::{Deserialize, Serialize};

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    /// e.g. `"Grad-CAM RGB"`.
    pub label: String,
    pub deletion: (f64, f64),
    pub insertion: (f64, f64),
    pub count: usize,
}

impl ResultsRow {
    pub fn from_aucs(label: impl Into<String>, deletion: &[f64], insertion: &[f64]) -> Self {
        Self { label: label.into(), deletion: mean_std(deletion), insertion: mean_std(insertion), count: deletion.len() }
    }
}

/// Mean±std deletion/insertion table, one row per method and spectrum.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultsRow>,
}

fn cell(ms: (f64, f64)) -> String {
    format!("{:.2}±{:.2}", ms.0, ms.1)
}

impl fmt::Display for ResultsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(0).max(6);
        writeln!(f, "| {:width$} | {:11} | {:11} |", "", "Deletion ↓", "Insertion ↑")?;
        writeln!(f, "|{}|{}|{}|", "-".repeat(width + 2), "-".repeat(13), "-".repeat(13))?;
        for r in &self.rows {
            writeln!(f, "| {:width$} | {:11} | {:11} |", r.label, cell(r.deletion), cell(r.insertion))?;
        }
        Ok(())
    }
}
