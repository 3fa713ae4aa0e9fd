//! Performance-matrix accumulation and the AP/AF reductions.
//!
//! `m[j][k]` is the accuracy on task `k` after training through task `j`
//! (1-based). Rows appear as training progresses; cells above the diagonal
//! exist only when zero-shot evaluation is enabled. AP is the mean of the
//! final row; AF is the mean diagonal-minus-final-row gap and may be
//! negative when later training improves earlier tasks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular (optionally full) accuracy matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfMatrix {
    m: usize,
    rows: Vec<Vec<Option<f64>>>,
}

impl PerfMatrix {
    /// Empty matrix for an `m`-task stream.
    pub fn new(m: usize) -> Self {
        PerfMatrix { m, rows: Vec::new() }
    }

    pub fn num_tasks(&self) -> usize {
        self.m
    }

    pub fn completed_rows(&self) -> usize {
        self.rows.len()
    }

    /// Appends the row observed after one more training step. The row must
    /// hold `m` cells with values in `[0, 1]`, and at least the first
    /// `completed_rows + 1` cells defined.
    pub fn push_row(&mut self, row: Vec<Option<f64>>) -> Result<()> {
        if self.rows.len() == self.m {
            return Err(Error::precondition("matrix already has all rows"));
        }
        if row.len() != self.m {
            return Err(Error::shape(format!(
                "row has {} cells, expected {}",
                row.len(),
                self.m
            )));
        }
        let j = self.rows.len() + 1;
        for (k, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::Numeric(format!(
                        "accuracy {v} at column {} outside [0, 1]",
                        k + 1
                    )));
                }
            } else if k < j {
                return Err(Error::shape(format!(
                    "cell ({j}, {}) in the lower triangle is undefined",
                    k + 1
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// `m_{j,k}` with 1-based indices.
    pub fn get(&self, j: usize, k: usize) -> Option<f64> {
        self.rows.get(j.checked_sub(1)?)?.get(k.checked_sub(1)?).copied()?
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    /// Mean of the final row.
    pub fn compute_ap(&self) -> Result<f64> {
        if self.rows.len() != self.m {
            return Err(Error::precondition(format!(
                "final row incomplete: {} of {} rows",
                self.rows.len(),
                self.m
            )));
        }
        let last = &self.rows[self.m - 1];
        let mut sum = 0.0;
        for (k, cell) in last.iter().enumerate() {
            sum += cell.ok_or_else(|| {
                Error::precondition(format!("final row missing column {}", k + 1))
            })?;
        }
        Ok(sum / self.m as f64)
    }

    /// Mean drop from each task's just-trained accuracy to its final
    /// accuracy: `(1/(M-1)) * sum_{i<M} (m_{i,i} - m_{M,i})`.
    pub fn compute_af(&self) -> Result<f64> {
        if self.m < 2 {
            return Err(Error::precondition("AF needs at least 2 tasks"));
        }
        if self.rows.len() != self.m {
            return Err(Error::precondition(format!(
                "final row incomplete: {} of {} rows",
                self.rows.len(),
                self.m
            )));
        }
        let mut sum = 0.0;
        for i in 1..self.m {
            let diag = self.get(i, i).ok_or_else(|| {
                Error::precondition(format!("diagonal cell ({i}, {i}) undefined"))
            })?;
            let last = self.get(self.m, i).ok_or_else(|| {
                Error::precondition(format!("final-row cell ({}, {i}) undefined", self.m))
            })?;
            sum += diag - last;
        }
        Ok(sum / (self.m - 1) as f64)
    }

    /// CSV with header `after_task,task_1..task_M`; one row per completed
    /// step; undefined cells empty. Floats print in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("after_task");
        for k in 1..=self.m {
            out.push_str(&format!(",task_{k}"));
        }
        out.push('\n');
        for (j, row) in self.rows.iter().enumerate() {
            out.push_str(&(j + 1).to_string());
            for cell in row {
                out.push(',');
                if let Some(v) = cell {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the exact format produced by [`PerfMatrix::to_csv`].
    pub fn parse_csv(text: &str) -> Result<PerfMatrix> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::config("empty CSV"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"after_task") {
            return Err(Error::config("CSV header must start with after_task"));
        }
        let m = cols.len() - 1;
        for (k, c) in cols[1..].iter().enumerate() {
            if *c != format!("task_{}", k + 1) {
                return Err(Error::config(format!("unexpected CSV column {c:?}")));
            }
        }
        let mut matrix = PerfMatrix::new(m);
        for (idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != m + 1 {
                return Err(Error::config(format!(
                    "CSV row {} has {} fields, expected {}",
                    idx + 2,
                    fields.len(),
                    m + 1
                )));
            }
            let after: usize = fields[0]
                .parse()
                .map_err(|_| Error::config(format!("bad after_task value {:?}", fields[0])))?;
            if after != idx + 1 {
                return Err(Error::config(format!(
                    "CSV rows out of order: got {after}, expected {}",
                    idx + 1
                )));
            }
            let mut row = Vec::with_capacity(m);
            for f in &fields[1..] {
                if f.is_empty() {
                    row.push(None);
                } else {
                    let v: f64 = f
                        .parse()
                        .map_err(|_| Error::config(format!("bad accuracy value {f:?}")))?;
                    row.push(Some(v));
                }
            }
            matrix.push_row(row)?;
        }
        Ok(matrix)
    }

    pub fn read_csv(path: &Path) -> Result<PerfMatrix> {
        let text = std::fs::read_to_string(path)?;
        PerfMatrix::parse_csv(&text)
    }
}

/// Per-run summary, serialized as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "AF")]
    pub af: f64,
    #[serde(rename = "M")]
    pub m: usize,
}

impl Summary {
    pub fn from_matrix(matrix: &PerfMatrix) -> Result<Self> {
        Ok(Summary {
            ap: matrix.compute_ap()?,
            af: matrix.compute_af()?,
            m: matrix.num_tasks(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
