//! Executes the (arm, order, seed) grid of an experiment config.

use std::path::{Path, PathBuf};

use longcl_core::{
    gen_synthetic_stream, load_jsonl_stream, permute_order, run_stream, shuffle_order, Arm, Error,
    Result, TaskStream,
};

use crate::config::{ExperimentConfig, OrderSpec, RunMeta, StreamSpec};

/// One completed cell of the grid.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub arm_label: String,
    pub order_label: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub ap: f64,
    pub af: f64,
}

fn build_base_stream(spec: &StreamSpec) -> Result<TaskStream> {
    match spec {
        StreamSpec::Synthetic { .. } => {
            gen_synthetic_stream(&spec.to_synthetic().expect("synthetic spec"))
        }
        StreamSpec::Manifest { path } => load_jsonl_stream(path),
    }
}

fn apply_order(stream: &TaskStream, order: &OrderSpec) -> Result<TaskStream> {
    match order {
        OrderSpec::Identity => Ok(stream.clone()),
        OrderSpec::Seed { seed } => shuffle_order(stream, *seed),
        OrderSpec::Explicit { permutation } => permute_order(stream, permutation),
    }
}

/// Runs every (arm, order, seed) cell under `out_dir/<arm>/<order>/<seed>/`
/// and returns the per-cell results in execution order.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<CellResult>> {
    config.validate()?;
    let base = build_base_stream(&config.stream)?;
    let fingerprint = config.stream.fingerprint();
    let mut cells = Vec::new();
    for arm_name in &config.arms {
        let arm = Arm::parse(arm_name)?;
        let arm_label = config.arm_label(arm);
        for order in &config.orders {
            let stream = apply_order(&base, order)?;
            let order_label = order.label();
            for &seed in &config.seeds {
                let dir = out_dir
                    .join(&arm_label)
                    .join(&order_label)
                    .join(format!("seed{seed}"));
                let cfg = config.run_config(seed);
                let output = run_stream(&stream, arm, &cfg, Some(&dir))
                    .map_err(|e| annotate(e, &arm_label, &order_label, seed))?;
                let meta = RunMeta {
                    arm: arm.as_str().to_string(),
                    arm_label: arm_label.clone(),
                    seed,
                    order_label: order_label.clone(),
                    permutation: stream.order.clone(),
                    stream_fingerprint: fingerprint.clone(),
                    m: stream.num_tasks(),
                };
                meta.save(&dir.join("meta.json"))?;
                cells.push(CellResult {
                    arm_label: arm_label.clone(),
                    order_label: order_label.clone(),
                    seed,
                    dir,
                    ap: output.summary.ap,
                    af: output.summary.af,
                });
            }
        }
    }
    Ok(cells)
}

fn annotate(e: Error, arm: &str, order: &str, seed: u64) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("[{arm}/{order}/seed{seed}] {msg}")),
        other => other,
    }
}
