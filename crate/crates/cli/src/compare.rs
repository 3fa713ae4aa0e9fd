//! Aggregates run directories into a per-arm comparison table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use longcl_core::{Error, Result, Summary};

use crate::config::RunMeta;

/// AP/AF aggregate over the runs sharing one arm label.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRow {
    pub arm_label: String,
    pub runs: usize,
    pub ap_mean: f64,
    pub ap_min: f64,
    pub ap_max: f64,
    pub af_mean: f64,
    pub af_min: f64,
    pub af_max: f64,
}

impl ArmRow {
    pub fn ap_spread(&self) -> f64 {
        self.ap_max - self.ap_min
    }

    pub fn af_spread(&self) -> f64 {
        self.af_max - self.af_min
    }
}

fn collect_cells(dir: &Path, found: &mut Vec<(RunMeta, Summary)>) -> Result<()> {
    if dir.join("summary.json").exists() && dir.join("meta.json").exists() {
        let summary = Summary::load(&dir.join("summary.json"))?;
        let meta = RunMeta::load(&dir.join("meta.json"))?;
        found.push((meta, summary));
        return Ok(());
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        collect_cells(&sub, found)?;
    }
    Ok(())
}

/// Walks the given run directories (cells or ancestors of cells), refuses
/// mixed stream specs, and reduces to one row per arm label.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Vec<ArmRow>> {
    if dirs.is_empty() {
        return Err(Error::config("compare needs at least one run directory"));
    }
    let mut cells = Vec::new();
    for dir in dirs {
        if !dir.is_dir() {
            return Err(Error::config(format!(
                "{} is not a directory",
                dir.display()
            )));
        }
        collect_cells(dir, &mut cells)?;
    }
    if cells.is_empty() {
        return Err(Error::config("no run summaries found under the given directories"));
    }
    let fingerprint = &cells[0].0.stream_fingerprint;
    for (meta, _) in &cells {
        if &meta.stream_fingerprint != fingerprint {
            return Err(Error::config(format!(
                "mismatched streams: {} ran against a different stream spec",
                meta.arm_label
            )));
        }
    }
    let mut groups: BTreeMap<String, Vec<&Summary>> = BTreeMap::new();
    for (meta, summary) in &cells {
        groups.entry(meta.arm_label.clone()).or_default().push(summary);
    }
    let rows = groups
        .into_iter()
        .map(|(arm_label, summaries)| {
            let n = summaries.len() as f64;
            let (mut ap_sum, mut af_sum) = (0.0, 0.0);
            let (mut ap_min, mut ap_max) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut af_min, mut af_max) = (f64::INFINITY, f64::NEG_INFINITY);
            for s in &summaries {
                ap_sum += s.ap;
                af_sum += s.af;
                ap_min = ap_min.min(s.ap);
                ap_max = ap_max.max(s.ap);
                af_min = af_min.min(s.af);
                af_max = af_max.max(s.af);
            }
            ArmRow {
                arm_label,
                runs: summaries.len(),
                ap_mean: ap_sum / n,
                ap_min,
                ap_max,
                af_mean: af_sum / n,
                af_min,
                af_max,
            }
        })
        .collect();
    Ok(rows)
}

/// Aligned text rendering for terminals.
pub fn render_text(rows: &[ArmRow]) -> String {
    let mut width = "arm".len();
    for r in rows {
        width = width.max(r.arm_label.len());
    }
    let mut out = format!(
        "{:<width$}  {:>4}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "arm", "runs", "ap_mean", "ap_sprd", "af_mean", "af_sprd",
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}\n",
            r.arm_label,
            r.runs,
            r.ap_mean,
            r.ap_spread(),
            r.af_mean,
            r.af_spread(),
        ));
    }
    out
}

/// CSV rendering with full min/max detail.
pub fn render_csv(rows: &[ArmRow]) -> String {
    let mut out =
        String::from("arm,runs,ap_mean,ap_min,ap_max,af_mean,af_min,af_max\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.arm_label, r.runs, r.ap_mean, r.ap_min, r.ap_max, r.af_mean, r.af_min, r.af_max
        ));
    }
    out
}
