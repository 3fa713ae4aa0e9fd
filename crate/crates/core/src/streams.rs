//! Task-stream generation and ingestion.
//!
//! Synthetic families produce controllably distinct per-task distributions
//! (rotation angle, feature permutation, or mean shift indexed by the task
//! number), all deterministic in the seed. External data comes in as JSONL
//! records `{"x": [floats], "y": int}` listed by a manifest.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub x: Vec<f64>,
    pub y: usize,
}

/// One task's data with disjoint train/test splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub id: String,
    pub train: Vec<Record>,
    pub test: Vec<Record>,
    pub classes: usize,
}

/// Ordered task sequence. `order[i]` is the index of the i-th task in the
/// originally generated (or ingested) list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<TaskDataset>,
    pub order: Vec<usize>,
    pub seed: u64,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.tasks
            .first()
            .and_then(|t| t.train.first())
            .map(|r| r.x.len())
            .unwrap_or(0)
    }

    pub fn classes(&self) -> usize {
        self.tasks.first().map(|t| t.classes).unwrap_or(0)
    }
}

/// Synthetic distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Class means on a circle in the first two feature dimensions, rotated
    /// from 0 to pi across the stream.
    RotatedGaussians,
    /// A fixed Gaussian mixture with a fresh feature permutation per task.
    PermutedFeatures,
    /// Class means translated by a per-task drift vector.
    DriftingMeans,
}

/// Parameters for [`gen_synthetic_stream`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    pub tasks: usize,
    pub train_per_task: usize,
    pub test_per_task: usize,
    pub features: usize,
    pub classes: usize,
    /// Isotropic noise standard deviation around each class mean.
    pub noise: f64,
    /// Radius at which class means sit.
    pub mean_radius: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            family: Family::RotatedGaussians,
            tasks: 10,
            train_per_task: 500,
            test_per_task: 200,
            features: 8,
            classes: 2,
            noise: 0.8,
            mean_radius: 2.0,
            seed: 7,
        }
    }
}

fn class_means(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    (0..spec.classes)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / spec.classes as f64;
            let mut m = vec![0.0; spec.features];
            m[0] = spec.mean_radius * angle.cos();
            m[1] = spec.mean_radius * angle.sin();
            m
        })
        .collect()
}

fn rotate_in_plane(mean: &[f64], theta: f64) -> Vec<f64> {
    let mut out = mean.to_vec();
    let (s, c) = theta.sin_cos();
    out[0] = c * mean[0] - s * mean[1];
    out[1] = s * mean[0] + c * mean[1];
    out
}

fn sample_split(
    rng: &mut ChaCha8Rng,
    means: &[Vec<f64>],
    noise: f64,
    count: usize,
    features: usize,
) -> Vec<Record> {
    let classes = means.len();
    (0..count)
        .map(|i| {
            let y = i % classes; // balanced labels
            let mut x = Vec::with_capacity(features);
            for d in 0..features {
                let z: f64 = rng.sample(StandardNormal);
                x.push(means[y][d] + noise * z);
            }
            Record { x, y }
        })
        .collect()
}

/// Generates `M >= 2` tasks with per-task distribution shifts, deterministic
/// in the seed.
pub fn gen_synthetic_stream(spec: &SyntheticSpec) -> Result<TaskStream> {
    if spec.tasks < 2 {
        return Err(Error::config("a stream needs at least 2 tasks"));
    }
    if spec.features < 2 {
        return Err(Error::config("synthetic streams need at least 2 features"));
    }
    if spec.classes < 2 {
        return Err(Error::config("synthetic streams need at least 2 classes"));
    }
    if spec.train_per_task == 0 || spec.test_per_task == 0 {
        return Err(Error::config("train and test splits must be nonempty"));
    }
    let base_means = class_means(spec);
    let mut tasks = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x7461736b, t as u64));
        let means: Vec<Vec<f64>> = match spec.family {
            Family::RotatedGaussians => {
                let theta = std::f64::consts::PI * t as f64 / (spec.tasks - 1) as f64;
                base_means.iter().map(|m| rotate_in_plane(m, theta)).collect()
            }
            Family::PermutedFeatures => base_means.clone(),
            Family::DriftingMeans => {
                let shift = t as f64 * spec.mean_radius * 0.5;
                base_means
                    .iter()
                    .map(|m| {
                        let mut v = m.clone();
                        // drift along a fixed diagonal direction
                        for d in 0..spec.features.min(2) {
                            v[d] += shift;
                        }
                        v
                    })
                    .collect()
            }
        };
        let mut train = sample_split(&mut rng, &means, spec.noise, spec.train_per_task, spec.features);
        let mut test = sample_split(&mut rng, &means, spec.noise, spec.test_per_task, spec.features);
        if spec.family == Family::PermutedFeatures {
            // task 0 keeps the identity layout; later tasks shuffle features
            if t > 0 {
                let mut perm: Vec<usize> = (0..spec.features).collect();
                perm.shuffle(&mut rng);
                for r in train.iter_mut().chain(test.iter_mut()) {
                    r.x = perm.iter().map(|&d| r.x[d]).collect();
                }
            }
        }
        tasks.push(TaskDataset {
            id: format!("task{:03}", t + 1),
            train,
            test,
            classes: spec.classes,
        });
    }
    Ok(TaskStream {
        tasks,
        order: (0..spec.tasks).collect(),
        seed: spec.seed,
    })
}

/// SplitMix64-style mixing for derived seeds.
pub fn mix_seed(base: u64, tag: u64, k: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(k.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Manifest for external JSONL streams.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: usize,
    pub tasks: Vec<ManifestTask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestTask {
    pub id: String,
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecord {
    x: Vec<f64>,
    y: i64,
}

fn load_jsonl(path: &Path, classes: usize, expect_dim: &mut Option<usize>) -> Result<Vec<Record>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::Ingest {
        file: display.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Ingest {
            file: display.clone(),
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            file: display.clone(),
            line: lineno,
            message: format!("malformed record: {e}"),
        })?;
        if raw.y < 0 || raw.y as usize >= classes {
            return Err(Error::Ingest {
                file: display.clone(),
                line: lineno,
                message: format!("label {} outside [0, {classes})", raw.y),
            });
        }
        match expect_dim {
            Some(d) if *d != raw.x.len() => {
                return Err(Error::Ingest {
                    file: display.clone(),
                    line: lineno,
                    message: format!("feature dimension {} differs from {d}", raw.x.len()),
                });
            }
            Some(_) => {}
            None => *expect_dim = Some(raw.x.len()),
        }
        if let Some(pos) = raw.x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Ingest {
                file: display.clone(),
                line: lineno,
                message: format!("non-finite feature at position {pos}"),
            });
        }
        records.push(Record {
            x: raw.x,
            y: raw.y as usize,
        });
    }
    if records.is_empty() {
        return Err(Error::Ingest {
            file: display,
            line: 0,
            message: "empty dataset".to_string(),
        });
    }
    Ok(records)
}

/// Loads a stream from a manifest of per-task JSONL paths, validating label
/// ranges and feature-dimension consistency across every file.
pub fn load_jsonl_stream(manifest_path: &Path) -> Result<TaskStream> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::Ingest {
        file: manifest_path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Ingest {
        file: manifest_path.display().to_string(),
        line: 0,
        message: format!("bad manifest: {e}"),
    })?;
    if manifest.tasks.is_empty() {
        return Err(Error::config("manifest lists no tasks"));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut dim = None;
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for mt in &manifest.tasks {
        let train = load_jsonl(&resolve(&mt.train), manifest.classes, &mut dim)?;
        let test = load_jsonl(&resolve(&mt.test), manifest.classes, &mut dim)?;
        tasks.push(TaskDataset {
            id: mt.id.clone(),
            train,
            test,
            classes: manifest.classes,
        });
    }
    let n = tasks.len();
    Ok(TaskStream {
        tasks,
        order: (0..n).collect(),
        seed: 0,
    })
}

fn check_bijection(perm: &[usize], m: usize) -> Result<()> {
    if perm.len() != m {
        return Err(Error::config(format!(
            "permutation length {} does not match task count {m}",
            perm.len()
        )));
    }
    let mut seen = vec![false; m];
    for &p in perm {
        if p >= m || seen[p] {
            return Err(Error::config("permutation is not a bijection"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Reorders tasks by `perm` (new position `i` takes old task `perm[i]`).
/// The underlying data is untouched; the stream's `order` records the
/// composed permutation relative to the original stream.
pub fn permute_order(stream: &TaskStream, perm: &[usize]) -> Result<TaskStream> {
    check_bijection(perm, stream.tasks.len())?;
    let tasks = perm.iter().map(|&i| stream.tasks[i].clone()).collect();
    let order = perm.iter().map(|&i| stream.order[i]).collect();
    Ok(TaskStream {
        tasks,
        order,
        seed: stream.seed,
    })
}

/// Derives a shuffle permutation from a seed and applies it.
pub fn shuffle_order(stream: &TaskStream, seed: u64) -> Result<TaskStream> {
    let mut perm: Vec<usize> = (0..stream.tasks.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6f726465, 0));
    perm.shuffle(&mut rng);
    permute_order(stream, &perm)
}
