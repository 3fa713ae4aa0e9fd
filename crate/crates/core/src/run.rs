//! The sequential continual-learning loop: per-task training, memory
//! management, replay selection, evaluation, and artifact emission.
//!
//! Five method arms share the loop. `vanilla` trains sequentially with no
//! machinery; `uniform-replay` keeps a uniformly sampled buffer of the same
//! size budget; `memman-only` fuses parameters but keeps no buffer;
//! `memcon-only` replays selected samples without fusion; `long-cl` does
//! both.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::memcon::{
    build_buffer, compute_delta, compute_prototype, select_differential, select_hard, Encoder,
    PrototypeStore, SelectionReport,
};
use crate::memman::{memman_step, MemManConfig, TaskMask};
use crate::metrics::{PerfMatrix, Summary};
use crate::model::{evaluate, train_task, ModelDims, ToyModel, TrainConfig};
use crate::param::{Granularity, ParamVector, UnitPartition};
use crate::streams::{mix_seed, Record, TaskStream};

/// Method arm selecting which mechanisms run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Vanilla,
    UniformReplay,
    MemmanOnly,
    MemconOnly,
    LongCl,
}

impl Arm {
    pub const ALL: [Arm; 5] = [
        Arm::Vanilla,
        Arm::UniformReplay,
        Arm::MemmanOnly,
        Arm::MemconOnly,
        Arm::LongCl,
    ];

    pub fn parse(s: &str) -> Result<Arm> {
        match s {
            "vanilla" => Ok(Arm::Vanilla),
            "uniform-replay" => Ok(Arm::UniformReplay),
            "memman-only" => Ok(Arm::MemmanOnly),
            "memcon-only" => Ok(Arm::MemconOnly),
            "long-cl" => Ok(Arm::LongCl),
            other => Err(Error::config(format!(
                "unknown arm {other:?} (expected vanilla, uniform-replay, memman-only, memcon-only, or long-cl)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Vanilla => "vanilla",
            Arm::UniformReplay => "uniform-replay",
            Arm::MemmanOnly => "memman-only",
            Arm::MemconOnly => "memcon-only",
            Arm::LongCl => "long-cl",
        }
    }

    fn fuses_params(&self) -> bool {
        matches!(self, Arm::MemmanOnly | Arm::LongCl)
    }

    fn selects_replay(&self) -> bool {
        matches!(self, Arm::MemconOnly | Arm::LongCl)
    }

    fn replays(&self) -> bool {
        matches!(self, Arm::UniformReplay | Arm::MemconOnly | Arm::LongCl)
    }

    fn needs_embeddings(&self) -> bool {
        self.fuses_params() || self.selects_replay()
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which frozen encoder embeds samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderChoice {
    Identity,
    RandomProjection { dim: usize },
}

/// Memory-unit layout for drift scoring and fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionChoice {
    /// One unit per adapter factor row.
    FactorRows,
    Scalar,
    Row { width: usize },
    Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub rank: usize,
    pub train: TrainConfig,
    pub memman: MemManConfig,
    pub r_h: f64,
    pub r_g: f64,
    /// When false, the differential selection floor is 0 (filter inactive).
    pub delta_rule: bool,
    pub encoder: EncoderChoice,
    pub granularity: PartitionChoice,
    pub eval_zero_shot: bool,
    /// Record per-task parameter snapshots and selection detail in memory.
    pub record_trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rank: 4,
            train: TrainConfig::default(),
            memman: MemManConfig::default(),
            r_h: 0.10,
            r_g: 0.10,
            delta_rule: true,
            encoder: EncoderChoice::RandomProjection { dim: 32 },
            granularity: PartitionChoice::FactorRows,
            eval_zero_shot: true,
            record_trace: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::config("rank must be positive"));
        }
        self.train.validate()?;
        for (name, r) in [
            ("k_fraction", self.memman.k_fraction),
            ("r_h", self.r_h),
            ("r_g", self.r_g),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::config(format!("{name} must be in (0, 1], got {r}")));
            }
        }
        if !(self.memman.lambda_floor > 0.0 && self.memman.lambda_floor < 1.0) {
            return Err(Error::config(format!(
                "lambda_floor must be in (0, 1), got {}",
                self.memman.lambda_floor
            )));
        }
        if let crate::memman::AlphaMode::Fixed(a) = self.memman.alpha_mode {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config(format!("fixed alpha must be in [0, 1], got {a}")));
            }
        }
        if let EncoderChoice::RandomProjection { dim } = self.encoder {
            if dim == 0 {
                return Err(Error::config("encoder dim must be positive"));
            }
        }
        if let PartitionChoice::Row { width } = self.granularity {
            if width == 0 {
                return Err(Error::config("row width must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-task state captured when `record_trace` is on.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub t: usize,
    pub theta_prev: ParamVector,
    pub phi: ParamVector,
    pub theta: ParamVector,
    pub mask_bits: Option<Vec<bool>>,
    pub alpha: Option<f64>,
    pub selected_units: Vec<usize>,
    pub delta: Option<f64>,
    pub report: Option<SelectionReport>,
}

/// Everything a run produces besides on-disk artifacts.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub perf: PerfMatrix,
    pub summary: Summary,
    pub alphas: Vec<Option<f64>>,
    pub buffer_sizes: Vec<usize>,
    pub trace: Option<Vec<TraceStep>>,
}

fn validate_stream(stream: &TaskStream) -> Result<()> {
    if stream.num_tasks() < 2 {
        return Err(Error::precondition("a run needs at least 2 tasks"));
    }
    let dim = stream.feature_dim();
    let classes = stream.classes();
    if dim == 0 || classes < 2 {
        return Err(Error::config("stream has no usable features or classes"));
    }
    for task in &stream.tasks {
        if task.train.is_empty() || task.test.is_empty() {
            return Err(Error::config(format!(
                "task {:?} has an empty split",
                task.id
            )));
        }
        if task.classes != classes {
            return Err(Error::shape(format!(
                "task {:?} declares {} classes, stream uses {classes}",
                task.id, task.classes
            )));
        }
        for r in task.train.iter().chain(task.test.iter()) {
            if r.x.len() != dim {
                return Err(Error::shape(format!(
                    "task {:?} has a record with {} features, stream uses {dim}",
                    task.id,
                    r.x.len()
                )));
            }
            if r.y >= classes {
                return Err(Error::shape(format!(
                    "task {:?} has label {} outside [0, {classes})",
                    task.id, r.y
                )));
            }
        }
    }
    Ok(())
}

fn build_partition(model: &ToyModel, choice: PartitionChoice) -> Result<UnitPartition> {
    match choice {
        PartitionChoice::FactorRows => Ok(model.default_partition()),
        PartitionChoice::Scalar => {
            UnitPartition::from_segments(model.adapter().segments(), Granularity::Scalar)
        }
        PartitionChoice::Row { width } => {
            UnitPartition::from_segments(model.adapter().segments(), Granularity::Row(width))
        }
        PartitionChoice::Segment => {
            UnitPartition::from_segments(model.adapter().segments(), Granularity::Segment)
        }
    }
}

fn uniform_buffer_target(n: usize, r_h: f64, r_g: f64) -> usize {
    let want = (r_h * n as f64).ceil() as usize + (r_g * n as f64).ceil() as usize;
    want.min(n)
}

struct ArtifactWriter {
    dir: Option<std::path::PathBuf>,
    log: String,
}

impl ArtifactWriter {
    fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(ArtifactWriter {
            dir: dir.map(Path::to_path_buf),
            log: String::new(),
        })
    }

    fn event(&mut self, value: serde_json::Value) {
        self.log.push_str(&value.to_string());
        self.log.push('\n');
    }

    fn write_mask(&self, t: usize, mask: &TaskMask) -> Result<()> {
        if let Some(d) = &self.dir {
            std::fs::write(d.join(format!("mask_t{t:03}.txt")), format!("{}\n", mask.to_bitstring()))?;
        }
        Ok(())
    }

    fn write_selection(&self, t: usize, report: &SelectionReport) -> Result<()> {
        if let Some(d) = &self.dir {
            report.save(&d.join(format!("selection_t{t:03}.json")))?;
        }
        Ok(())
    }

    fn write_checkpoint(&self, t: usize, params: &ParamVector) -> Result<()> {
        if let Some(d) = &self.dir {
            params.save_snapshot(&d.join(format!("params_t{t:03}.pv")))?;
        }
        Ok(())
    }

    fn finish(&self, perf: &PerfMatrix, summary: &Summary) -> Result<()> {
        if let Some(d) = &self.dir {
            std::fs::write(d.join("run.log"), &self.log)?;
            perf.write_csv(&d.join("perf.csv"))?;
            summary.save(&d.join("summary.json"))?;
        }
        Ok(())
    }
}

/// Runs one arm over a task stream, optionally writing the artifact set
/// (`run.log`, `perf.csv`, `summary.json`, per-task masks, selection
/// reports, and parameter checkpoints) into `out_dir`.
pub fn run_stream(
    stream: &TaskStream,
    arm: Arm,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<RunOutput> {
    cfg.validate()?;
    validate_stream(stream)?;
    let m = stream.num_tasks();
    let dims = ModelDims {
        features: stream.feature_dim(),
        classes: stream.classes(),
        rank: cfg.rank,
    };

    let mut writer = ArtifactWriter::new(out_dir)?;
    writer.event(json!({
        "event": "run_start",
        "arm": arm.as_str(),
        "m": m,
        "seed": cfg.train.seed,
        "order": stream.order,
    }));

    let model0 = ToyModel::init(dims, cfg.train.seed)?;
    let base_fingerprint: Vec<u64> = model0
        .frozen_base()
        .values()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    let partition = build_partition(&model0, cfg.granularity)?;
    let encoder = match cfg.encoder {
        EncoderChoice::Identity => Encoder::identity(dims.features),
        EncoderChoice::RandomProjection { dim } => {
            Encoder::random_projection(dims.features, dim, mix_seed(cfg.train.seed, 0x656e63, 0))
        }
    };

    let mut model = model0;
    let mut mask = TaskMask::new(partition.num_units());
    let mut prototypes = PrototypeStore::new();
    let mut replay_pool: Vec<Record> = Vec::new();
    let mut perf = PerfMatrix::new(m);
    let mut alphas = Vec::with_capacity(m);
    let mut buffer_sizes = Vec::with_capacity(m);
    let mut trace = cfg.record_trace.then(Vec::new);

    for (i, task) in stream.tasks.iter().enumerate() {
        let t = i + 1;
        writer.event(json!({
            "event": "task_start",
            "t": t,
            "task_id": task.id,
            "train_size": task.train.len(),
            "replay_size": replay_pool.len(),
        }));

        let theta_prev = model.adapter().clone();
        let replay: &[Record] = if arm.replays() { &replay_pool } else { &[] };
        let tuned = train_task(&model, &task.train, replay, &cfg.train, t)?;
        let phi = tuned.adapter().clone();

        // prototype recorded on task arrival, before selection, so the
        // differential pass at task t sees exactly the prior prototypes
        let embeddings = if arm.needs_embeddings() {
            let embs = encoder.embed_batch(
                &task.train.iter().map(|r| r.x.clone()).collect::<Vec<_>>(),
            )?;
            let proto = compute_prototype(&embs)?;
            prototypes.push(proto, embs.len());
            Some(embs)
        } else {
            None
        };

        let (theta, step_alpha, selected_units, mask_bits) = if arm.fuses_params() {
            let step = memman_step(
                &theta_prev,
                &phi,
                &partition,
                &mask,
                &prototypes,
                t,
                &cfg.memman,
            )?;
            mask = step.mask.clone();
            writer.write_mask(t, &mask)?;
            (step.fused, step.alpha, step.selected, Some(mask.bits().to_vec()))
        } else {
            (phi.clone(), None, Vec::new(), None)
        };
        model = model.with_adapter(theta.clone())?;
        writer.write_checkpoint(t, &theta)?;

        let mut delta_used = None;
        let mut report = None;
        let buffer_size;
        if arm.selects_replay() {
            let embs = embeddings.as_ref().expect("embeddings exist for memcon arms");
            let delta = if cfg.delta_rule {
                compute_delta(&prototypes)
            } else {
                0.0
            };
            let current_proto = prototypes.get(t).expect("prototype just pushed");
            let hard = select_hard(embs, current_proto, cfg.r_h)?;
            let priors = &prototypes.prototypes()[..t - 1];
            let diff = select_differential(embs, priors, cfg.r_g, delta)?;
            let buffer = build_buffer(&hard, &diff);
            buffer_size = buffer.len();
            replay_pool.extend(buffer.iter().map(|rec| task.train[rec.id].clone()));
            let rep = SelectionReport {
                task: t,
                delta,
                hard,
                diff,
                buffer,
            };
            writer.write_selection(t, &rep)?;
            delta_used = Some(delta);
            report = Some(rep);
        } else if arm == Arm::UniformReplay {
            let target = uniform_buffer_target(task.train.len(), cfg.r_h, cfg.r_g);
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(cfg.train.seed, 0x756e6966, t as u64));
            let mut ids =
                rand::seq::index::sample(&mut rng, task.train.len(), target).into_vec();
            ids.sort_unstable();
            buffer_size = ids.len();
            replay_pool.extend(ids.iter().map(|&id| task.train[id].clone()));
        } else {
            buffer_size = 0;
        }
        buffer_sizes.push(buffer_size);
        alphas.push(step_alpha);

        let mut row = Vec::with_capacity(m);
        for (k, eval_task) in stream.tasks.iter().enumerate() {
            if cfg.eval_zero_shot || k <= i {
                row.push(Some(evaluate(&model, &eval_task.test)?));
            } else {
                row.push(None);
            }
        }
        perf.push_row(row)?;

        writer.event(json!({
            "event": "task_end",
            "t": t,
            "alpha": step_alpha,
            "i_count": selected_units.len(),
            "h_count": report.as_ref().map(|r| r.hard.len()),
            "g_count": report.as_ref().map(|r| r.diff.len()),
            "delta": delta_used,
            "buffer_size": buffer_size,
        }));

        if let Some(tr) = trace.as_mut() {
            tr.push(TraceStep {
                t,
                theta_prev,
                phi,
                theta,
                mask_bits,
                alpha: step_alpha,
                selected_units,
                delta: delta_used,
                report,
            });
        }
    }

    let after: Vec<u64> = model
        .frozen_base()
        .values()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    if after != base_fingerprint {
        return Err(Error::Numeric("frozen base changed during the run".into()));
    }

    let summary = Summary::from_matrix(&perf)?;
    writer.event(json!({
        "event": "run_end",
        "ap": summary.ap,
        "af": summary.af,
    }));
    writer.finish(&perf, &summary)?;

    Ok(RunOutput {
        perf,
        summary,
        alphas,
        buffer_sizes,
        trace,
    })
}
