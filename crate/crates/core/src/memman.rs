//! Task-core memory management: drift-indexed mask maintenance, adaptive
//! fusion weight from prototype geometry, and position-aware parameter
//! fusion.
//!
//! After each task the units that drifted most are marked in a cumulative
//! mask. A novelty weight `alpha` — the ratio of the new prototype's
//! distances to prior prototypes over all prior pairwise distances, clamped
//! to `[lambda, 1]` — then mixes the tuned parameters with the previous
//! model: masked units get weight `alpha` on the new parameters, unmasked
//! units get `1 - alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memcon::{euclidean, PrototypeStore};
use crate::parallel;
use crate::param::{compute_drift, DriftScores, ParamVector, UnitPartition};

/// Cumulative binary per-unit mask. Bits only ever turn on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMask {
    bits: Vec<bool>,
    task_counter: usize,
}

impl TaskMask {
    /// All-zero mask over `n` units.
    pub fn new(n: usize) -> Self {
        TaskMask {
            bits: vec![false; n],
            task_counter: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn task_counter(&self) -> usize {
        self.task_counter
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Audit format: one '0'/'1' character per unit.
    pub fn to_bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(s: &str, task_counter: usize) -> Result<Self> {
        let mut bits = Vec::with_capacity(s.len());
        for c in s.trim().chars() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                other => {
                    return Err(Error::config(format!(
                        "invalid mask character {other:?}"
                    )))
                }
            }
        }
        Ok(TaskMask { bits, task_counter })
    }
}

/// Indices of the `ceil(k_fraction * N)` largest drifts, ties broken by
/// lower index. Returned sorted ascending.
pub fn select_topk_units(drift: &DriftScores, k_fraction: f64) -> Result<Vec<usize>> {
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(Error::config(format!(
            "k_fraction must be in (0, 1], got {k_fraction}"
        )));
    }
    let scores = drift.values();
    if scores.is_empty() {
        return Err(Error::config("drift list is empty"));
    }
    let n = scores.len();
    let count = ((k_fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("drift scores are finite")
            .then(a.cmp(&b))
    });
    let mut selected = order[..count].to_vec();
    selected.sort_unstable();
    Ok(selected)
}

/// Bitwise OR of the previous mask with the selected index set; the task
/// counter advances by one.
pub fn update_mask(prev: &TaskMask, selected: &[usize]) -> Result<TaskMask> {
    let mut bits = prev.bits.clone();
    for &i in selected {
        if i >= bits.len() {
            return Err(Error::shape(format!(
                "selected index {i} outside mask of length {}",
                bits.len()
            )));
        }
        bits[i] = true;
    }
    Ok(TaskMask {
        bits,
        task_counter: prev.task_counter + 1,
    })
}

/// Novelty weight for task `t` (1-based), clamped to `[lambda_floor, 1]`.
///
/// Raw value: sum of distances from the task-`t` prototype to every prior
/// prototype, over the sum of pairwise distances among the priors. The first
/// transition (`t = 2`) has an empty denominator and is defined as 1
/// (maximal novelty); a zero denominator with coincident prior prototypes
/// also yields 1.
pub fn compute_alpha(prototypes: &PrototypeStore, t: usize, lambda_floor: f64) -> Result<f64> {
    if !(lambda_floor > 0.0 && lambda_floor < 1.0) {
        return Err(Error::config(format!(
            "lambda_floor must be in (0, 1), got {lambda_floor}"
        )));
    }
    if t < 2 {
        return Err(Error::precondition(
            "alpha is defined from task 2 onward; task 1 performs no fusion",
        ));
    }
    if prototypes.len() < t {
        return Err(Error::precondition(format!(
            "alpha for task {t} needs {t} prototypes, store has {}",
            prototypes.len()
        )));
    }
    let protos = prototypes.prototypes();
    let current = &protos[t - 1];
    let raw = if t == 2 {
        1.0
    } else {
        let mut numerator = 0.0f64;
        for prior in &protos[..t - 1] {
            numerator += euclidean(current, prior);
        }
        let mut denominator = 0.0f64;
        for i in 0..t - 1 {
            for j in (i + 1)..t - 1 {
                denominator += euclidean(&protos[i], &protos[j]);
            }
        }
        if denominator == 0.0 {
            1.0
        } else {
            numerator / denominator
        }
    };
    Ok(raw.clamp(lambda_floor, 1.0))
}

/// Per-unit fusion weights: `alpha` on masked units, `1 - alpha` elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPlan {
    pub alpha: f64,
    pub lambda_floor: f64,
    pub beta: Vec<f64>,
}

/// Builds the per-unit weight vector `beta_i = alpha * mask_i +
/// (1 - alpha) * (1 - mask_i)`.
pub fn compose_beta(alpha: f64, mask: &TaskMask, lambda_floor: f64) -> Result<FusionPlan> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::precondition(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    let beta = mask
        .bits()
        .iter()
        .map(|&m| if m { alpha } else { 1.0 - alpha })
        .collect();
    Ok(FusionPlan {
        alpha,
        lambda_floor,
        beta,
    })
}

/// Element-wise fusion `theta = beta * phi + (1 - beta) * theta_prev`, with
/// each unit's beta broadcast to all scalars in the unit.
pub fn fuse_params(
    prev: &ParamVector,
    curr: &ParamVector,
    plan: &FusionPlan,
    part: &UnitPartition,
) -> Result<ParamVector> {
    prev.ensure_combinable(curr)?;
    part.ensure_covers(prev)?;
    if plan.beta.len() != part.num_units() {
        return Err(Error::shape(format!(
            "plan has {} weights for {} units",
            plan.beta.len(),
            part.num_units()
        )));
    }
    let theta_prev = prev.values();
    let phi = curr.values();
    let units = part.units();
    let chunks: Vec<Vec<f64>> = parallel::map_indexed(units.len(), |i| {
        let b = plan.beta[i];
        units[i]
            .clone()
            .map(|j| {
                // bounded lerp: rounding must not push the result outside
                // the closed interval between the two parameter values
                let v = b * phi[j] + (1.0 - b) * theta_prev[j];
                let (lo, hi) = if theta_prev[j] <= phi[j] {
                    (theta_prev[j], phi[j])
                } else {
                    (phi[j], theta_prev[j])
                };
                v.clamp(lo, hi)
            })
            .collect()
    });
    let mut values = Vec::with_capacity(theta_prev.len());
    for c in chunks {
        values.extend(c);
    }
    prev.with_values(values)
}

/// How the fusion weight is produced each task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    /// Prototype-geometry ratio, clamped to `[lambda_floor, 1]`.
    Adaptive,
    /// Constant value for every task.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemManConfig {
    pub k_fraction: f64,
    pub lambda_floor: f64,
    pub alpha_mode: AlphaMode,
}

impl Default for MemManConfig {
    fn default() -> Self {
        MemManConfig {
            k_fraction: 0.10,
            lambda_floor: 0.30,
            alpha_mode: AlphaMode::Adaptive,
        }
    }
}

/// Output of one memory-management step.
#[derive(Debug, Clone, PartialEq)]
pub struct MemManStep {
    pub fused: ParamVector,
    pub mask: TaskMask,
    pub drift: DriftScores,
    pub selected: Vec<usize>,
    /// `None` for task 1 (no fusion happens).
    pub alpha: Option<f64>,
}

/// Full per-task pipeline: drift → top-K → mask OR → alpha → beta → fusion.
///
/// Task 1 adopts the tuned parameters unchanged; its drift is measured
/// against the pre-stream initialization so the first mask is well-defined.
pub fn memman_step(
    prev_model: &ParamVector,
    tuned_model: &ParamVector,
    partition: &UnitPartition,
    mask: &TaskMask,
    prototypes: &PrototypeStore,
    t: usize,
    config: &MemManConfig,
) -> Result<MemManStep> {
    if t < 1 {
        return Err(Error::precondition("task index starts at 1"));
    }
    if mask.len() != partition.num_units() {
        return Err(Error::shape(format!(
            "mask has {} bits for {} units",
            mask.len(),
            partition.num_units()
        )));
    }
    let drift = compute_drift(prev_model, tuned_model, partition)?;
    let selected = select_topk_units(&drift, config.k_fraction)?;
    let mask = update_mask(mask, &selected)?;
    if t == 1 {
        return Ok(MemManStep {
            fused: tuned_model.clone(),
            mask,
            drift,
            selected,
            alpha: None,
        });
    }
    let alpha = match config.alpha_mode {
        AlphaMode::Adaptive => compute_alpha(prototypes, t, config.lambda_floor)?,
        AlphaMode::Fixed(a) => {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config(format!("fixed alpha {a} outside [0, 1]")));
            }
            a
        }
    };
    let plan = compose_beta(alpha, &mask, config.lambda_floor)?;
    let fused = fuse_params(prev_model, tuned_model, &plan, partition)?;
    Ok(MemManStep {
        fused,
        mask,
        drift,
        selected,
        alpha: Some(alpha),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memcon::Embedding;
    use crate::param::Granularity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn drift_of(values: Vec<f64>) -> DriftScores {
        // zero baseline + scalar units gives per-unit drift |v|
        let n = values.len();
        let prev = ParamVector::unlabeled(vec![0.0; n]).unwrap();
        let curr = ParamVector::unlabeled(values).unwrap();
        let part = UnitPartition::make(n, Granularity::Scalar).unwrap();
        compute_drift(&prev, &curr, &part).unwrap()
    }

    fn store_of(points: &[&[f64]]) -> PrototypeStore {
        let mut s = PrototypeStore::new();
        for p in points {
            s.push(Embedding::new(p.to_vec()), 1);
        }
        s
    }

    #[test]
    fn topk_unique_maximum() {
        let d = drift_of(vec![1.0, 9.0, 5.0]);
        assert_eq!(select_topk_units(&d, 0.3).unwrap(), vec![1]);
    }

    #[test]
    fn topk_tie_breaks_by_lowest_index() {
        let d = drift_of(vec![7.0, 7.0, 7.0]);
        assert_eq!(select_topk_units(&d, 0.6).unwrap(), vec![0, 1]);
    }

    #[test]
    fn topk_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..100.0)).collect();
        let d = drift_of(values.clone());
        let got = select_topk_units(&d, 0.10).unwrap();
        let mut order: Vec<usize> = (0..1000).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
        let mut expect = order[..100].to_vec();
        expect.sort_unstable();
        assert_eq!(got, expect);
    }

    #[test]
    fn topk_rejects_bad_fraction_and_empty() {
        let d = drift_of(vec![1.0]);
        assert!(select_topk_units(&d, 0.0).is_err());
        assert!(select_topk_units(&d, 1.5).is_err());
    }

    #[test]
    fn mask_or_update() {
        let prev = TaskMask::from_bitstring("100", 1).unwrap();
        let next = update_mask(&prev, &[2]).unwrap();
        assert_eq!(next.to_bitstring(), "101");
        assert_eq!(next.task_counter(), 2);
    }

    #[test]
    fn mask_empty_selection_is_identity() {
        let prev = TaskMask::from_bitstring("0110", 3).unwrap();
        let next = update_mask(&prev, &[]).unwrap();
        assert_eq!(next.bits(), prev.bits());
    }

    #[test]
    fn mask_update_is_idempotent() {
        let prev = TaskMask::new(5);
        let once = update_mask(&prev, &[1, 3]).unwrap();
        let twice = update_mask(&once, &[1, 3]).unwrap();
        assert_eq!(once.bits(), twice.bits());
    }

    #[test]
    fn mask_rejects_out_of_range() {
        let prev = TaskMask::new(3);
        assert!(matches!(update_mask(&prev, &[3]), Err(Error::Shape(_))));
    }

    #[test]
    fn alpha_first_transition_is_one() {
        let store = store_of(&[&[0.0, 0.0], &[5.0, 5.0]]);
        assert_eq!(compute_alpha(&store, 2, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn alpha_hand_case() {
        // numerator 3 * sqrt(0.5), denominator 2 + sqrt(2)
        let store = store_of(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        let a = compute_alpha(&store, 4, 0.3).unwrap();
        assert!((a - 0.6213203435596424).abs() < 1e-12, "alpha = {a}");
    }

    #[test]
    fn alpha_clamps_at_floor_for_centroid_prototype() {
        // 11 equally spaced collinear prototypes, the 12th at their centroid:
        // raw = 30 / 220 < 0.3, clamped to the floor
        let mut store = PrototypeStore::new();
        for j in 1..=11 {
            store.push(Embedding::new(vec![j as f64, 0.0]), 1);
        }
        store.push(Embedding::new(vec![6.0, 0.0]), 1);
        let a = compute_alpha(&store, 12, 0.3).unwrap();
        assert_eq!(a, 0.3);
        // unclamped check against the hand value
        let raw = 30.0 / 220.0;
        assert!(raw < 0.3);
    }

    #[test]
    fn alpha_zero_denominator_returns_one() {
        let store = store_of(&[&[1.0, 1.0], &[1.0, 1.0], &[4.0, 5.0]]);
        assert_eq!(compute_alpha(&store, 3, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn alpha_requires_two_tasks() {
        let store = store_of(&[&[0.0]]);
        assert!(matches!(
            compute_alpha(&store, 1, 0.3),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn beta_half_alpha_is_uniform() {
        let mask = TaskMask::from_bitstring("10110", 1).unwrap();
        let plan = compose_beta(0.5, &mask, 0.3).unwrap();
        assert!(plan.beta.iter().all(|&b| b == 0.5));
    }

    #[test]
    fn beta_boundary_alpha_one() {
        let mask = TaskMask::from_bitstring("10", 1).unwrap();
        let plan = compose_beta(1.0, &mask, 0.3).unwrap();
        assert_eq!(plan.beta, vec![1.0, 0.0]);
    }

    #[test]
    fn beta_direct_substitution() {
        let mask = TaskMask::from_bitstring("101", 1).unwrap();
        let plan = compose_beta(0.7, &mask, 0.3).unwrap();
        assert_eq!(plan.beta, vec![0.7, 1.0 - 0.7, 0.7]);
        assert!((plan.beta[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn fusion_boundary_cases() {
        let part = UnitPartition::make(3, Granularity::Scalar).unwrap();
        let prev = ParamVector::unlabeled(vec![1.0, 2.0, 3.0]).unwrap();
        let curr = ParamVector::unlabeled(vec![-1.0, 0.5, 9.0]).unwrap();
        let mask_all = TaskMask::from_bitstring("111", 1).unwrap();
        let all_new = fuse_params(&prev, &curr, &compose_beta(1.0, &mask_all, 0.3).unwrap(), &part).unwrap();
        assert_eq!(all_new.values(), curr.values());
        let all_old = fuse_params(&prev, &curr, &compose_beta(0.0, &mask_all, 0.3).unwrap(), &part).unwrap();
        assert_eq!(all_old.values(), prev.values());
    }

    #[test]
    fn fusion_direct_substitution() {
        let part = UnitPartition::make(1, Granularity::Scalar).unwrap();
        let prev = ParamVector::unlabeled(vec![0.0]).unwrap();
        let curr = ParamVector::unlabeled(vec![2.0]).unwrap();
        let mask = TaskMask::from_bitstring("1", 1).unwrap();
        let fused = fuse_params(&prev, &curr, &compose_beta(0.7, &mask, 0.3).unwrap(), &part).unwrap();
        assert!((fused.values()[0] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn step_task_one_adopts_tuned_model() {
        let init = ParamVector::unlabeled(vec![0.0; 6]).unwrap();
        let tuned = ParamVector::unlabeled(vec![0.5, -0.5, 1.0, 0.0, 0.0, 2.0]).unwrap();
        let part = UnitPartition::make(6, Granularity::Row(2)).unwrap();
        let mask = TaskMask::new(part.num_units());
        let store = PrototypeStore::new();
        let cfg = MemManConfig::default();
        let out = memman_step(&init, &tuned, &part, &mask, &store, 1, &cfg).unwrap();
        assert_eq!(out.fused.values(), tuned.values());
        assert!(out.alpha.is_none());
        assert_eq!(out.mask.popcount(), 1); // ceil(0.1 * 3)
    }

    #[test]
    fn step_with_unchanged_tuned_model_is_identity() {
        let prev = ParamVector::unlabeled(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let part = UnitPartition::make(4, Granularity::Row(2)).unwrap();
        let mask = TaskMask::from_bitstring("01", 1).unwrap();
        let store = store_of(&[&[0.0, 0.0], &[3.0, 4.0]]);
        let cfg = MemManConfig::default();
        let out = memman_step(&prev, &prev, &part, &mask, &store, 2, &cfg).unwrap();
        assert_eq!(out.fused.values(), prev.values());
    }

    #[test]
    fn step_matches_scripted_transcript_oracle() {
        // three synthetic tasks over scalar units, checked against a
        // straight-line reimplementation of the per-task pipeline
        let n = 12;
        let part = UnitPartition::make(n, Granularity::Scalar).unwrap();
        let cfg = MemManConfig {
            k_fraction: 0.25,
            lambda_floor: 0.3,
            alpha_mode: AlphaMode::Adaptive,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tuned_models = Vec::new();
        for _ in 0..3 {
            let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            tuned_models.push(ParamVector::unlabeled(vals).unwrap());
        }
        let protos = store_of(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 2.0]]);
        let init = ParamVector::unlabeled(vec![0.0; n]).unwrap();

        // pipeline under test
        let mut theta = init.clone();
        let mut mask = TaskMask::new(n);
        let mut got = Vec::new();
        for (i, phi) in tuned_models.iter().enumerate() {
            let t = i + 1;
            let out = memman_step(&theta, phi, &part, &mask, &protos, t, &cfg).unwrap();
            theta = out.fused.clone();
            mask = out.mask.clone();
            got.push(out);
        }

        // transcript oracle: plain loops, no shared helpers
        let mut o_theta: Vec<f64> = vec![0.0; n];
        let mut o_mask = vec![false; n];
        for (i, phi) in tuned_models.iter().enumerate() {
            let t = i + 1;
            let phi = phi.values();
            let mut drift: Vec<(usize, f64)> = (0..n)
                .map(|j| (j, (o_theta[j] - phi[j]).abs()))
                .collect();
            drift.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for &(j, _) in drift.iter().take(3) {
                o_mask[j] = true;
            }
            if t == 1 {
                o_theta = phi.to_vec();
            } else {
                let ps = protos.prototypes();
                let cur = &ps[t - 1];
                let mut num = 0.0;
                for p in &ps[..t - 1] {
                    num += euclidean(cur, p);
                }
                let mut den = 0.0;
                for a in 0..t - 1 {
                    for b in (a + 1)..t - 1 {
                        den += euclidean(&ps[a], &ps[b]);
                    }
                }
                let raw = if t == 2 || den == 0.0 { 1.0 } else { num / den };
                let alpha = raw.clamp(0.3, 1.0);
                for j in 0..n {
                    let beta = if o_mask[j] { alpha } else { 1.0 - alpha };
                    o_theta[j] = beta * phi[j] + (1.0 - beta) * o_theta[j];
                }
            }
            let step = &got[i];
            assert_eq!(
                step.mask.bits(),
                o_mask.as_slice(),
                "mask diverged at task {t}"
            );
            for j in 0..n {
                assert!(
                    (step.fused.values()[j] - o_theta[j]).abs() < 1e-12,
                    "fused value diverged at task {t}, unit {j}"
                );
            }
        }
    }
}
