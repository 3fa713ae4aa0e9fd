//! Desk-scale continual-learning toolkit.
//!
//! The crate tracks a flat parameter vector across a stream of tasks,
//! scores per-unit drift between snapshots, maintains a cumulative mask of
//! task-core units, and fuses new and old parameters with an adaptive
//! weight derived from prototype geometry. A consolidation pass selects
//! hard and differential samples into a replay buffer. A small trainer,
//! synthetic task streams, and AP/AF metrics make full runs reproducible
//! end to end.
//!
//! Hot inner loops run on rayon when the default `parallel` feature is
//! enabled and fall back to sequential execution without it; both paths
//! produce bit-identical results.

pub mod error;
pub mod memcon;
pub mod memman;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod param;
pub mod run;
pub mod streams;

pub use error::{Error, Result};
pub use memcon::{
    build_buffer, compute_delta, compute_prototype, euclidean, select_differential, select_hard,
    BufferRecord, DiffPick, Embedding, Encoder, HardPick, PrototypeStore, SelectionReport,
    SourceTag,
};
pub use memman::{
    compose_beta, compute_alpha, fuse_params, memman_step, select_topk_units, update_mask,
    AlphaMode, FusionPlan, MemManConfig, MemManStep, TaskMask,
};
pub use metrics::{PerfMatrix, Summary};
pub use model::{
    adapter_gradient, batch_nll, evaluate, nll_loss, train_task, ModelDims, ToyModel, TrainConfig,
};
pub use param::{compute_drift, DriftScores, Granularity, ParamVector, Segment, UnitPartition};
pub use run::{run_stream, Arm, EncoderChoice, PartitionChoice, RunConfig, RunOutput, TraceStep};
pub use streams::{
    gen_synthetic_stream, load_jsonl_stream, mix_seed, permute_order, shuffle_order, Family,
    Manifest, ManifestTask, Record, SyntheticSpec, TaskDataset, TaskStream,
};
