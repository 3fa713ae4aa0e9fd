//! Desk-scale trainable model: a linear classifier with a trainable low-rank
//! adapter over a frozen base. Prediction is `softmax((W_base + A*B) x)`;
//! only the adapter factors receive gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::param::{ParamVector, Segment, UnitPartition};
use crate::streams::{mix_seed, Record};

/// Probability floor when scoring the target class, keeping the loss finite.
pub const P_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub features: usize,
    pub classes: usize,
    pub rank: usize,
}

impl ModelDims {
    pub fn adapter_len(&self) -> usize {
        self.classes * self.rank + self.rank * self.features
    }
}

/// Frozen base plus trainable adapter. The adapter vector has two segments:
/// `adapter.A` (classes x rank, row-major) and `adapter.B` (rank x features,
/// row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub dims: ModelDims,
    frozen_base: ParamVector,
    adapter: ParamVector,
}

impl ToyModel {
    /// Seeded initialization: Gaussian base and A factor, zero B factor, so
    /// the adapter delta starts at zero.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        if dims.features == 0 || dims.classes < 2 || dims.rank == 0 {
            return Err(Error::config(format!(
                "bad model dims: {dims:?} (need features >= 1, classes >= 2, rank >= 1)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6d6f64656c, 0));
        let base_scale = 0.5 / (dims.features as f64).sqrt();
        let base_vals: Vec<f64> = (0..dims.classes * dims.features)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * base_scale
            })
            .collect();
        let frozen_base = ParamVector::new(
            base_vals,
            vec![Segment::new("base.W", 0, dims.classes * dims.features)],
        )?;

        let a_len = dims.classes * dims.rank;
        let a_scale = 1.0 / (dims.rank as f64).sqrt();
        let mut adapter_vals: Vec<f64> = (0..a_len)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * a_scale
            })
            .collect();
        adapter_vals.extend(std::iter::repeat(0.0).take(dims.rank * dims.features));
        let adapter = ParamVector::new(
            adapter_vals,
            vec![
                Segment::new("adapter.A", 0, a_len),
                Segment::new("adapter.B", a_len, a_len + dims.rank * dims.features),
            ],
        )?;
        Ok(ToyModel {
            dims,
            frozen_base,
            adapter,
        })
    }

    pub fn frozen_base(&self) -> &ParamVector {
        &self.frozen_base
    }

    pub fn adapter(&self) -> &ParamVector {
        &self.adapter
    }

    /// Same base, replacement adapter (used after fusion).
    pub fn with_adapter(&self, adapter: ParamVector) -> Result<Self> {
        self.adapter.ensure_combinable(&adapter)?;
        Ok(ToyModel {
            dims: self.dims,
            frozen_base: self.frozen_base.clone(),
            adapter,
        })
    }

    /// Default memory-unit layout: one unit per factor row (`A` rows have
    /// width `rank`, `B` rows width `features`).
    pub fn default_partition(&self) -> UnitPartition {
        let d = self.dims;
        let mut units = Vec::with_capacity(d.classes + d.rank);
        let mut cursor = 0;
        for _ in 0..d.classes {
            units.push(cursor..cursor + d.rank);
            cursor += d.rank;
        }
        for _ in 0..d.rank {
            units.push(cursor..cursor + d.features);
            cursor += d.features;
        }
        UnitPartition::from_ranges(units, self.adapter.len()).expect("layout is exact")
    }

    /// `W_base + A*B`, row-major classes x features.
    pub fn effective_weights(&self) -> Vec<f64> {
        let d = self.dims;
        let base = self.frozen_base.values();
        let adapter = self.adapter.values();
        let a = &adapter[..d.classes * d.rank];
        let b = &adapter[d.classes * d.rank..];
        let mut w = base.to_vec();
        for c in 0..d.classes {
            for k in 0..d.rank {
                let a_ck = a[c * d.rank + k];
                if a_ck == 0.0 {
                    continue;
                }
                let b_row = &b[k * d.features..(k + 1) * d.features];
                let w_row = &mut w[c * d.features..(c + 1) * d.features];
                for (wv, bv) in w_row.iter_mut().zip(b_row) {
                    *wv += a_ck * bv;
                }
            }
        }
        w
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = self.effective_weights();
        self.proba_with_weights(&w, x)
    }

    fn proba_with_weights(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims;
        if x.len() != d.features {
            return Err(Error::shape(format!(
                "sample has {} features, model expects {}",
                x.len(),
                d.features
            )));
        }
        let mut logits = Vec::with_capacity(d.classes);
        for c in 0..d.classes {
            let row = &w[c * d.features..(c + 1) * d.features];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            logits.push(acc);
        }
        Ok(softmax(&logits))
    }

    /// Argmax class, ties resolved to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let p = self.predict_proba(x)?;
        Ok(argmax(&p))
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Negative log-likelihood of the target class under a distribution that
/// must sum to 1 within 1e-9. Zero probability is clipped at [`P_MIN`].
pub fn nll_loss(distribution: &[f64], target: usize) -> Result<f64> {
    if target >= distribution.len() {
        return Err(Error::shape(format!(
            "target {target} outside distribution of {} classes",
            distribution.len()
        )));
    }
    let sum: f64 = distribution.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::precondition(format!(
            "distribution sums to {sum}, not 1"
        )));
    }
    Ok(-(distribution[target].max(P_MIN)).ln())
}

/// Mean NLL over a batch of (distribution, target) pairs.
pub fn batch_nll(pairs: &[(Vec<f64>, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::precondition("batch loss over an empty batch"));
    }
    let mut sum = 0.0;
    for (dist, target) in pairs {
        sum += nll_loss(dist, *target)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Analytic gradient of the NLL with respect to the adapter, laid out like
/// the adapter vector (`A` rows then `B` rows).
pub fn adapter_gradient(model: &ToyModel, x: &[f64], y: usize) -> Result<Vec<f64>> {
    let d = model.dims;
    if y >= d.classes {
        return Err(Error::shape(format!(
            "label {y} outside {} classes",
            d.classes
        )));
    }
    let w = model.effective_weights();
    gradient_with_weights(model, &w, x, y)
}

fn gradient_with_weights(model: &ToyModel, w: &[f64], x: &[f64], y: usize) -> Result<Vec<f64>> {
    let d = model.dims;
    let p = model.proba_with_weights(w, x)?;
    let adapter = model.adapter.values();
    let a = &adapter[..d.classes * d.rank];
    let b = &adapter[d.classes * d.rank..];

    // residual g_c = p_c - 1[c == y]; dW = g x^T; dA = dW B^T; dB = A^T dW
    let mut g = p;
    g[y] -= 1.0;

    let mut grad = vec![0.0f64; d.adapter_len()];
    // B x (rank-dim)
    let mut bx = vec![0.0f64; d.rank];
    for k in 0..d.rank {
        let row = &b[k * d.features..(k + 1) * d.features];
        let mut acc = 0.0;
        for (bv, xv) in row.iter().zip(x) {
            acc += bv * xv;
        }
        bx[k] = acc;
    }
    // dA[c][k] = g_c * (B x)_k
    for c in 0..d.classes {
        for k in 0..d.rank {
            grad[c * d.rank + k] = g[c] * bx[k];
        }
    }
    // dB[k][f] = (A^T g)_k * x_f
    let off = d.classes * d.rank;
    for k in 0..d.rank {
        let mut ag = 0.0;
        for c in 0..d.classes {
            ag += a[c * d.rank + k] * g[c];
        }
        if ag == 0.0 {
            continue;
        }
        for (f, xv) in x.iter().enumerate() {
            grad[off + k * d.features + f] = ag * xv;
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 16,
            learning_rate: 0.2,
            momentum: 0.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        Ok(())
    }
}

/// SGD over the shuffled concatenation of the task data and accumulated
/// replay records. Deterministic given the config seed and task index; the
/// frozen base never changes.
pub fn train_task(
    model: &ToyModel,
    dataset: &[Record],
    replay: &[Record],
    cfg: &TrainConfig,
    task_index: usize,
) -> Result<ToyModel> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::precondition("cannot train on an empty dataset"));
    }
    let combined: Vec<&Record> = dataset.iter().chain(replay.iter()).collect();
    for (i, r) in combined.iter().enumerate() {
        if r.x.len() != model.dims.features {
            return Err(Error::shape(format!(
                "record {i} has {} features, model expects {}",
                r.x.len(),
                model.dims.features
            )));
        }
        if r.y >= model.dims.classes {
            return Err(Error::shape(format!(
                "record {i} has label {} outside {} classes",
                r.y, model.dims.classes
            )));
        }
    }

    let mut current = model.clone();
    let mut velocity = vec![0.0f64; model.dims.adapter_len()];
    for epoch in 0..cfg.epochs {
        let mut indices: Vec<usize> = (0..combined.len()).collect();
        let shuffle_seed = mix_seed(cfg.seed, 0x73687566, (task_index as u64) << 20 | epoch as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);

        for batch in indices.chunks(cfg.batch_size) {
            let w = current.effective_weights();
            let grads: Vec<Vec<f64>> = parallel::map_indexed(batch.len(), |i| {
                let r = combined[batch[i]];
                gradient_with_weights(&current, &w, &r.x, r.y).expect("records pre-checked")
            });
            // fixed-order accumulation keeps results bit-identical across
            // parallel and sequential builds
            let mut mean = vec![0.0f64; velocity.len()];
            for g in &grads {
                for (m, v) in mean.iter_mut().zip(g) {
                    *m += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut values = current.adapter().values().to_vec();
            for j in 0..values.len() {
                let g = mean[j] * scale;
                velocity[j] = cfg.momentum * velocity[j] + g;
                values[j] -= cfg.learning_rate * velocity[j];
            }
            let adapter = current.adapter().with_values(values)?;
            current = current.with_adapter(adapter)?;
        }
    }
    Ok(current)
}

/// Exact-match accuracy on a test split.
pub fn evaluate(model: &ToyModel, test: &[Record]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::precondition("cannot evaluate on an empty split"));
    }
    let w = model.effective_weights();
    let hits = parallel::map_indexed(test.len(), |i| {
        let r = &test[i];
        let p = model
            .proba_with_weights(&w, &r.x)
            .expect("dims checked by caller");
        argmax(&p) == r.y
    });
    let correct = hits.iter().filter(|&&h| h).count();
    Ok(correct as f64 / test.len() as f64)
}
