//! Long-term memory consolidation: frozen-encoder embeddings, per-task
//! prototypes, hard and differential sample selection, and replay-buffer
//! construction.
//!
//! Hard samples are the ones farthest from the current task's prototype;
//! differential samples have the smallest cumulative distance to all prior
//! prototypes while staying at least `delta` away from each of them. The
//! replay buffer is the deduplicated union of both sets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;

/// Fixed-dimension embedding of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub coords: Vec<f64>,
}

impl Embedding {
    pub fn new(coords: Vec<f64>) -> Self {
        Embedding { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Euclidean distance between two equal-dimension embeddings.
pub fn euclidean(a: &Embedding, b: &Embedding) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.coords
        .iter()
        .zip(&b.coords)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Frozen sample encoder. Built once before the first task with a fixed seed
/// and never updated, so embeddings and prototypes are training-invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    /// Passes features through unchanged. Useful for tests and audits.
    Identity { dim: usize },
    /// Seeded random linear projection, row-major `out_dim x in_dim`.
    RandomProjection {
        weights: Vec<f64>,
        in_dim: usize,
        out_dim: usize,
    },
}

impl Encoder {
    pub fn identity(dim: usize) -> Self {
        Encoder::Identity { dim }
    }

    /// Gaussian projection with entries scaled by `1/sqrt(in_dim)` so output
    /// magnitudes stay comparable to the input.
    pub fn random_projection(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..out_dim * in_dim)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale
            })
            .collect();
        Encoder::RandomProjection {
            weights,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Encoder::Identity { dim } => *dim,
            Encoder::RandomProjection { in_dim, .. } => *in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Encoder::Identity { dim } => *dim,
            Encoder::RandomProjection { out_dim, .. } => *out_dim,
        }
    }

    /// Deterministic map from raw features to an embedding.
    pub fn embed(&self, x: &[f64]) -> Result<Embedding> {
        if x.len() != self.in_dim() {
            return Err(Error::shape(format!(
                "encoder expects {} features, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        match self {
            Encoder::Identity { .. } => Ok(Embedding::new(x.to_vec())),
            Encoder::RandomProjection {
                weights,
                in_dim,
                out_dim,
            } => {
                let mut coords = Vec::with_capacity(*out_dim);
                for r in 0..*out_dim {
                    let row = &weights[r * in_dim..(r + 1) * in_dim];
                    let mut acc = 0.0;
                    for (w, v) in row.iter().zip(x) {
                        acc += w * v;
                    }
                    coords.push(acc);
                }
                Ok(Embedding::new(coords))
            }
        }
    }

    /// Embeds a batch; per-sample work runs on the parallel pool.
    pub fn embed_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Embedding>> {
        for (i, x) in xs.iter().enumerate() {
            if x.len() != self.in_dim() {
                return Err(Error::shape(format!(
                    "sample {i}: encoder expects {} features, got {}",
                    self.in_dim(),
                    x.len()
                )));
            }
        }
        Ok(parallel::map_indexed(xs.len(), |i| {
            self.embed(&xs[i]).expect("dims pre-checked")
        }))
    }
}

/// Coordinatewise mean of a nonempty embedding list.
pub fn compute_prototype(embeddings: &[Embedding]) -> Result<Embedding> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::precondition("cannot form a prototype from an empty task"))?;
    let dim = first.dim();
    let mut sum = vec![0.0f64; dim];
    for e in embeddings {
        if e.dim() != dim {
            return Err(Error::shape("embedding dimensions differ within a task"));
        }
        for (s, c) in sum.iter_mut().zip(&e.coords) {
            *s += c;
        }
    }
    let n = embeddings.len() as f64;
    for s in &mut sum {
        *s /= n;
    }
    Ok(Embedding::new(sum))
}

/// Ordered list of per-task mean embeddings with their sample counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrototypeStore {
    prototypes: Vec<Embedding>,
    counts: Vec<usize>,
}

impl PrototypeStore {
    pub fn new() -> Self {
        PrototypeStore::default()
    }

    pub fn push(&mut self, prototype: Embedding, sample_count: usize) {
        self.prototypes.push(prototype);
        self.counts.push(sample_count);
    }

    /// Number of completed tasks recorded so far.
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Prototype of task `t` (1-based).
    pub fn get(&self, t: usize) -> Option<&Embedding> {
        if t == 0 {
            return None;
        }
        self.prototypes.get(t - 1)
    }

    pub fn prototypes(&self) -> &[Embedding] {
        &self.prototypes
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

/// Minimum-distance floor for differential selection: `0.8 * D_max / 2`,
/// where `D_max` is the largest pairwise distance among stored prototypes.
/// With fewer than two prototypes there is nothing to measure and the floor
/// is 0 (filter inactive).
pub fn compute_delta(store: &PrototypeStore) -> f64 {
    let protos = store.prototypes();
    if protos.len() < 2 {
        return 0.0;
    }
    let mut d_max = 0.0f64;
    for i in 0..protos.len() {
        for j in (i + 1)..protos.len() {
            let d = euclidean(&protos[i], &protos[j]);
            if d > d_max {
                d_max = d;
            }
        }
    }
    0.8 * d_max / 2.0
}

/// One hard-set member: sample id and its distance to the task prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardPick {
    pub id: usize,
    pub dist: f64,
}

/// One differential-set member: sample id, cumulative distance to all prior
/// prototypes, and the minimum single-prototype distance that cleared `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffPick {
    pub id: usize,
    pub z: f64,
    pub min_dist: f64,
}

fn fraction_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).ceil() as usize
}

fn check_ratio(name: &str, r: f64) -> Result<()> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::config(format!("{name} must be in (0, 1], got {r}")));
    }
    Ok(())
}

/// Ids of the `ceil(r_h * n)` samples farthest from the prototype, ties
/// broken by lower id. Returned in selection order (farthest first).
pub fn select_hard(
    embeddings: &[Embedding],
    prototype: &Embedding,
    r_h: f64,
) -> Result<Vec<HardPick>> {
    check_ratio("r_h", r_h)?;
    if embeddings.is_empty() {
        return Err(Error::precondition("hard selection over an empty dataset"));
    }
    let dists = parallel::map_indexed(embeddings.len(), |i| euclidean(&embeddings[i], prototype));
    let mut order: Vec<usize> = (0..embeddings.len()).collect();
    order.sort_by(|&a, &b| {
        dists[b]
            .partial_cmp(&dists[a])
            .expect("finite distances")
            .then(a.cmp(&b))
    });
    let count = fraction_count(r_h, embeddings.len()).min(embeddings.len());
    Ok(order[..count]
        .iter()
        .map(|&id| HardPick { id, dist: dists[id] })
        .collect())
}

/// Among samples at least `delta` away from every prior prototype, the
/// `ceil(r_g * n)` with the smallest cumulative distance to the priors, ties
/// by lower id. With no prior prototypes the set is empty; with fewer
/// eligible samples than requested, all eligibles are returned.
pub fn select_differential(
    embeddings: &[Embedding],
    prior_prototypes: &[Embedding],
    r_g: f64,
    delta: f64,
) -> Result<Vec<DiffPick>> {
    check_ratio("r_g", r_g)?;
    if prior_prototypes.is_empty() {
        return Ok(Vec::new());
    }
    if embeddings.is_empty() {
        return Err(Error::precondition(
            "differential selection over an empty dataset",
        ));
    }
    // (z, min_dist) per sample
    let scores = parallel::map_indexed(embeddings.len(), |i| {
        let mut z = 0.0f64;
        let mut min_dist = f64::INFINITY;
        for p in prior_prototypes {
            let d = euclidean(&embeddings[i], p);
            z += d;
            if d < min_dist {
                min_dist = d;
            }
        }
        (z, min_dist)
    });
    let mut eligible: Vec<usize> = (0..embeddings.len())
        .filter(|&i| scores[i].1 >= delta)
        .collect();
    eligible.sort_by(|&a, &b| {
        scores[a]
            .0
            .partial_cmp(&scores[b].0)
            .expect("finite distances")
            .then(a.cmp(&b))
    });
    let count = fraction_count(r_g, embeddings.len()).min(eligible.len());
    Ok(eligible[..count]
        .iter()
        .map(|&id| DiffPick {
            id,
            z: scores[id].0,
            min_dist: scores[id].1,
        })
        .collect())
}

/// Why a sample entered the replay buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Hard,
    Diff,
    Both,
}

/// One replay-buffer record: sample id, provenance, and the scores that
/// selected it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferRecord {
    pub id: usize,
    pub tag: SourceTag,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hard_dist: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diff_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diff_min_dist: Option<f64>,
}

/// Deduplicated union of the hard and differential sets, ordered by id.
pub fn build_buffer(hard: &[HardPick], diff: &[DiffPick]) -> Vec<BufferRecord> {
    let mut records: Vec<BufferRecord> = hard
        .iter()
        .map(|h| BufferRecord {
            id: h.id,
            tag: SourceTag::Hard,
            hard_dist: Some(h.dist),
            diff_z: None,
            diff_min_dist: None,
        })
        .collect();
    for d in diff {
        if let Some(existing) = records.iter_mut().find(|r| r.id == d.id) {
            existing.tag = SourceTag::Both;
            existing.diff_z = Some(d.z);
            existing.diff_min_dist = Some(d.min_dist);
        } else {
            records.push(BufferRecord {
                id: d.id,
                tag: SourceTag::Diff,
                hard_dist: None,
                diff_z: Some(d.z),
                diff_min_dist: Some(d.min_dist),
            });
        }
    }
    records.sort_by_key(|r| r.id);
    records
}

/// Per-task selection artifact, serialized as `selection_t###.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub task: usize,
    pub delta: f64,
    pub hard: Vec<HardPick>,
    pub diff: Vec<DiffPick>,
    pub buffer: Vec<BufferRecord>,
}

impl SelectionReport {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}
