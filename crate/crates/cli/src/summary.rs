use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub map: f64,
    pub mr1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    /// Keyed by embedding size.
    pub cells: BTreeMap<usize, Cell>,
}

/// Retrieval results with one row per method and one column per embedding
/// size.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn single(label: impl Into<String>, cells: BTreeMap<usize, Cell>) -> Self {
        Self {
            rows: vec![SummaryRow {
                label: label.into(),
                cells,
            }],
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let all: BTreeSet<usize> = self.rows.iter().flat_map(|r| r.cells.keys().copied()).collect();
        all.into_iter().collect()
    }

    /// Joins rows with equal labels. Two results for the same label and size
    /// are an error.
    pub fn merge<'a>(parts: impl IntoIterator<Item = &'a Summary>) -> Result<Self> {
        let mut out = Summary::default();
        for part in parts {
            for row in &part.rows {
                let target = match out.rows.iter_mut().position(|r| r.label == row.label) {
                    Some(i) => &mut out.rows[i],
                    None => {
                        out.rows.push(SummaryRow {
                            label: row.label.clone(),
                            cells: BTreeMap::new(),
                        });
                        out.rows.last_mut().expect("just pushed")
                    }
                };
                for (&d, &cell) in &row.cells {
                    if target.cells.insert(d, cell).is_some() {
                        bail!("two results for `{}` at d={d}", row.label);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summaries always serialize") + "\n"
    }

    /// MAP block then MR1 block, sizes as columns.
    pub fn table(&self) -> String {
        let dims = self.dims();
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
        let mut s = String::new();
        for (title, pick, prec) in [("MAP", 0, 3), ("MR1", 1, 1)] {
            let _ = write!(s, "{title:<width$}");
            for d in &dims {
                let _ = write!(s, " {:>9}", format!("d={d}"));
            }
            s.push('\n');
            for row in &self.rows {
                let _ = write!(s, "{:<width$}", row.label);
                for d in &dims {
                    let cell = row.cells.get(d).map_or("-".to_string(), |c| {
                        format!("{:.prec$}", if pick == 0 { c.map } else { c.mr1 })
                    });
                    let _ = write!(s, " {cell:>9}");
                }
                s.push('\n');
            }
            s.push('\n');
        }
        s.pop();
        s
    }
}
