//! Property tests for the crate's structural invariants.

use longcl_core::*;
use proptest::prelude::*;

fn pv(values: Vec<f64>) -> ParamVector {
    ParamVector::unlabeled(values).unwrap()
}

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-100.0f64..100.0, len)
}

fn emb_set(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<Embedding>> {
    proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, dim), n)
        .prop_map(|rows| rows.into_iter().map(Embedding::new).collect())
}

/// Rigid isometry in the first two coordinates plus a translation of all.
fn apply_isometry(e: &Embedding, theta: f64, shift: &[f64]) -> Embedding {
    let mut c = e.coords.clone();
    let (s, co) = theta.sin_cos();
    let (x, y) = (c[0], c[1]);
    c[0] = co * x - s * y;
    c[1] = s * x + co * y;
    for (v, d) in c.iter_mut().zip(shift) {
        *v += d;
    }
    Embedding::new(c)
}

proptest! {
    #[test]
    fn drift_is_symmetric(a in finite_vec(24), b in finite_vec(24)) {
        let part = UnitPartition::make(24, Granularity::Row(4)).unwrap();
        let ab = compute_drift(&pv(a.clone()), &pv(b.clone()), &part).unwrap();
        let ba = compute_drift(&pv(b), &pv(a), &part).unwrap();
        prop_assert_eq!(ab.values(), ba.values());
    }

    #[test]
    fn drift_scales_with_abs_c(a in finite_vec(12), b in finite_vec(12), c in -5.0f64..5.0) {
        let part = UnitPartition::make(12, Granularity::Row(3)).unwrap();
        let base = compute_drift(&pv(a.clone()), &pv(b.clone()), &part).unwrap();
        let sa: Vec<f64> = a.iter().map(|v| v * c).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * c).collect();
        let scaled = compute_drift(&pv(sa), &pv(sb), &part).unwrap();
        for (d0, d1) in base.values().iter().zip(scaled.values()) {
            let expect = d0 * c.abs();
            prop_assert!((d1 - expect).abs() <= 1e-9 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn drift_units_are_local(a in finite_vec(20), b in finite_vec(20)) {
        // drift of a unit is unaffected by how the rest of the vector is cut
        let coarse = UnitPartition::make(20, Granularity::Row(5)).unwrap();
        let fine = UnitPartition::make(20, Granularity::Scalar).unwrap();
        let dc = compute_drift(&pv(a.clone()), &pv(b.clone()), &coarse).unwrap();
        let df = compute_drift(&pv(a), &pv(b), &fine).unwrap();
        for (i, unit) in coarse.units().iter().enumerate() {
            let sum: f64 = unit.clone().map(|j| df.values()[j].powi(2)).sum();
            prop_assert!((dc.values()[i] - sum.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn topk_is_argsort_prefix(values in proptest::collection::vec(0.0f64..50.0, 1..200), k in 0.01f64..1.0) {
        let n = values.len();
        let prev = pv(vec![0.0; n]);
        let curr = pv(values.clone());
        let part = UnitPartition::make(n, Granularity::Scalar).unwrap();
        let drift = compute_drift(&prev, &curr, &part).unwrap();
        let got = select_topk_units(&drift, k).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            drift.values()[b].partial_cmp(&drift.values()[a]).unwrap().then(a.cmp(&b))
        });
        let count = (k * n as f64).ceil() as usize;
        let mut expect = order[..count.min(n)].to_vec();
        expect.sort_unstable();
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn mask_monotone_and_popcount_bounded(
        drifts in proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, 40), 1..12),
        k in 0.05f64..0.5,
    ) {
        let part = UnitPartition::make(40, Granularity::Scalar).unwrap();
        let zero = pv(vec![0.0; 40]);
        let mut mask = TaskMask::new(40);
        let bound = (k * 40.0).ceil() as usize;
        for values in drifts {
            let drift = compute_drift(&zero, &pv(values), &part).unwrap();
            let selected = select_topk_units(&drift, k).unwrap();
            let next = update_mask(&mask, &selected).unwrap();
            for (old, new) in mask.bits().iter().zip(next.bits()) {
                prop_assert!(*new >= *old);
            }
            prop_assert!(next.popcount() <= mask.popcount() + bound);
            mask = next;
        }
    }

    #[test]
    fn alpha_in_range_and_isometry_invariant(
        protos in emb_set(3..8, 3),
        theta in 0.0f64..std::f64::consts::TAU,
        shift in proptest::collection::vec(-20.0f64..20.0, 3),
    ) {
        let t = protos.len();
        let mut store = PrototypeStore::new();
        let mut moved = PrototypeStore::new();
        for p in &protos {
            store.push(p.clone(), 1);
            moved.push(apply_isometry(p, theta, &shift), 1);
        }
        let a = compute_alpha(&store, t, 0.3).unwrap();
        prop_assert!((0.3..=1.0).contains(&a));
        let b = compute_alpha(&moved, t, 0.3).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn beta_partitions_by_mask(alpha in 0.0f64..1.0, bits in proptest::collection::vec(any::<bool>(), 1..64)) {
        prop_assume!((alpha - 0.5).abs() > 1e-9);
        let bitstring: String = bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
        let mask = TaskMask::from_bitstring(&bitstring, 1).unwrap();
        let plan = compose_beta(alpha, &mask, 0.3).unwrap();
        for (i, &b) in plan.beta.iter().enumerate() {
            prop_assert_eq!(b == alpha, bits[i]);
        }
    }

    #[test]
    fn fusion_is_convex_per_coordinate(
        prev in finite_vec(18),
        curr in finite_vec(18),
        alpha in 0.0f64..1.0,
        bits in proptest::collection::vec(any::<bool>(), 6),
    ) {
        let part = UnitPartition::make(18, Granularity::Row(3)).unwrap();
        let bitstring: String = bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
        let mask = TaskMask::from_bitstring(&bitstring, 1).unwrap();
        let plan = compose_beta(alpha, &mask, 0.3).unwrap();
        let fused = fuse_params(&pv(prev.clone()), &pv(curr.clone()), &plan, &part).unwrap();
        for j in 0..18 {
            let lo = prev[j].min(curr[j]);
            let hi = prev[j].max(curr[j]);
            prop_assert!(fused.values()[j] >= lo && fused.values()[j] <= hi);
        }
    }

    #[test]
    fn selection_invariant_under_isometry(
        embs in emb_set(20..80, 2),
        protos in emb_set(2..5, 2),
        theta in 0.0f64..std::f64::consts::TAU,
        shift in proptest::collection::vec(-20.0f64..20.0, 2),
    ) {
        let proto = compute_prototype(&protos).unwrap();
        let hard_a = select_hard(&embs, &proto, 0.2).unwrap();
        let delta = {
            let mut s = PrototypeStore::new();
            for p in &protos { s.push(p.clone(), 1); }
            compute_delta(&s)
        };
        let diff_a = select_differential(&embs, &protos, 0.2, delta).unwrap();

        let moved: Vec<Embedding> = embs.iter().map(|e| apply_isometry(e, theta, &shift)).collect();
        let moved_protos: Vec<Embedding> = protos.iter().map(|p| apply_isometry(p, theta, &shift)).collect();
        let moved_proto = compute_prototype(&moved_protos).unwrap();
        let hard_b = select_hard(&moved, &moved_proto, 0.2).unwrap();
        let delta_b = {
            let mut s = PrototypeStore::new();
            for p in &moved_protos { s.push(p.clone(), 1); }
            compute_delta(&s)
        };
        let diff_b = select_differential(&moved, &moved_protos, 0.2, delta_b).unwrap();

        let ids = |h: &[HardPick]| h.iter().map(|p| p.id).collect::<Vec<_>>();
        let dids = |g: &[DiffPick]| g.iter().map(|p| p.id).collect::<Vec<_>>();
        prop_assert_eq!(ids(&hard_a), ids(&hard_b));
        prop_assert_eq!(dids(&diff_a), dids(&diff_b));
    }

    #[test]
    fn differential_respects_floor_and_ordering(
        embs in emb_set(10..60, 2),
        protos in emb_set(1..4, 2),
        r_g in 0.05f64..1.0,
        delta in 0.0f64..5.0,
    ) {
        let picks = select_differential(&embs, &protos, r_g, delta).unwrap();
        let z_of = |e: &Embedding| protos.iter().map(|p| euclidean(e, p)).sum::<f64>();
        let min_of = |e: &Embedding| protos.iter().map(|p| euclidean(e, p)).fold(f64::INFINITY, f64::min);
        let picked: std::collections::HashSet<usize> = picks.iter().map(|p| p.id).collect();
        let worst_picked = picks.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
        let requested = (r_g * embs.len() as f64).ceil() as usize;
        let eligible = (0..embs.len()).filter(|&i| min_of(&embs[i]) >= delta).count();
        // every member clears the floor
        for p in &picks {
            prop_assert!(p.min_dist >= delta);
        }
        // count contract
        prop_assert_eq!(picks.len(), requested.min(eligible));
        // no excluded eligible sample strictly beats an included one
        if picks.len() == requested && requested < eligible {
            for i in 0..embs.len() {
                if !picked.contains(&i) && min_of(&embs[i]) >= delta {
                    prop_assert!(z_of(&embs[i]) >= worst_picked - 1e-12);
                }
            }
        }
    }

    #[test]
    fn hard_count_is_exact(embs in emb_set(1..120, 3), r_h in 0.01f64..1.0) {
        let proto = compute_prototype(&embs).unwrap();
        let picks = select_hard(&embs, &proto, r_h).unwrap();
        let expect = ((r_h * embs.len() as f64).ceil() as usize).min(embs.len());
        prop_assert_eq!(picks.len(), expect);
    }

    #[test]
    fn prototype_centering_residual_vanishes(embs in emb_set(1..60, 4)) {
        let proto = compute_prototype(&embs).unwrap();
        let mut residual = vec![0.0f64; 4];
        for e in &embs {
            for (r, (c, p)) in residual.iter_mut().zip(e.coords.iter().zip(&proto.coords)) {
                *r += c - p;
            }
        }
        for r in residual {
            prop_assert!(r.abs() < 1e-9);
        }
    }

    #[test]
    fn buffer_is_deterministic_and_bounded(
        embs in emb_set(10..50, 2),
        protos in emb_set(1..4, 2),
    ) {
        let proto = compute_prototype(&embs).unwrap();
        let hard = select_hard(&embs, &proto, 0.2).unwrap();
        let diff = select_differential(&embs, &protos, 0.2, 0.1).unwrap();
        let a = build_buffer(&hard, &diff);
        let b = build_buffer(&hard, &diff);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.len() <= hard.len() + diff.len());
        let mut ids: Vec<usize> = a.iter().map(|r| r.id).collect();
        let sorted = { let mut s = ids.clone(); s.sort_unstable(); s };
        prop_assert_eq!(&ids, &sorted);
        ids.dedup();
        prop_assert_eq!(ids.len(), a.len());
    }

    #[test]
    fn csv_round_trip_identity(
        m in 1usize..6,
        fill in proptest::collection::vec(0.0f64..1.0, 36),
        rows in 0usize..7,
    ) {
        let rows = rows.min(m);
        let mut matrix = PerfMatrix::new(m);
        for j in 0..rows {
            let row: Vec<Option<f64>> = (0..m)
                .map(|k| if k <= j { Some(fill[j * 6 + k]) } else { None })
                .collect();
            matrix.push_row(row).unwrap();
        }
        let parsed = PerfMatrix::parse_csv(&matrix.to_csv()).unwrap();
        prop_assert_eq!(parsed, matrix);
    }

    #[test]
    fn ap_af_invariant_under_consistent_relabeling(
        m in 2usize..6,
        fill in proptest::collection::vec(0.0f64..1.0, 36),
        perm_seed in 0u64..1000,
    ) {
        // full (zero-shot) matrices: relabeling tasks permutes both axes;
        // the final training step keeps its position, so the final row and
        // the diagonal prefix are preserved as multisets
        let mut matrix = PerfMatrix::new(m);
        for j in 0..m {
            matrix.push_row((0..m).map(|k| Some(fill[j * 6 + k])).collect()).unwrap();
        }
        let mut perm: Vec<usize> = (0..m).collect();
        // derive a permutation of the first m-1 ids from the seed
        let mut state = perm_seed;
        for i in (1..m - 1).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            perm.swap(i, j);
        }
        let mut relabeled = PerfMatrix::new(m);
        for j in 0..m {
            relabeled.push_row((0..m).map(|k| matrix.get(perm[j] + 1, perm[k] + 1)).collect()).unwrap();
        }
        prop_assert!((matrix.compute_ap().unwrap() - relabeled.compute_ap().unwrap()).abs() < 1e-12);
        prop_assert!((matrix.compute_af().unwrap() - relabeled.compute_af().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn af_zero_for_identical_rows(m in 2usize..6, fill in proptest::collection::vec(0.0f64..1.0, 6)) {
        let mut matrix = PerfMatrix::new(m);
        for _ in 0..m {
            matrix.push_row((0..m).map(|k| Some(fill[k])).collect()).unwrap();
        }
        prop_assert_eq!(matrix.compute_af().unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn streams_are_pure_and_disjoint(seed in 0u64..500, tasks in 2usize..5) {
        let spec = SyntheticSpec {
            tasks,
            train_per_task: 12,
            test_per_task: 6,
            seed,
            ..SyntheticSpec::default()
        };
        let a = gen_synthetic_stream(&spec).unwrap();
        let b = gen_synthetic_stream(&spec).unwrap();
        prop_assert_eq!(&a, &b);
        for task in &a.tasks {
            for te in &task.test {
                prop_assert!(!task.train.contains(te));
            }
        }
    }
}
