use proptest::prelude::*;
use tokcluster::clustering::balanced_kmeans_traced;
use tokcluster::loss::{cluster_probs, combined_loss, softmax, ProbVector};
use tokcluster::rearrange::remap_stream;
use tokcluster::sampling::{
    apply_temperature, cfg_combine, next_token_distribution, top_k_filter, top_p_filter,
    GuidanceSpace, SamplerConfig,
};
use tokcluster::tokens::{decode_tok1, encode_tok1};
use tokcluster::{
    balanced_kmeans, build_permutation, cluster_label, Codebook, FeatureGrid, PermutationMap,
};

fn codebook(max_size: usize, max_dim: usize) -> impl Strategy<Value = Codebook> {
    (1..=max_size, 1..=max_dim).prop_flat_map(|(size, dim)| {
        prop::collection::vec(-4.0f32..4.0, size * dim)
            .prop_map(move |v| Codebook::new(v, size, dim).unwrap())
    })
}

/// Codebook whose size is `n * m` for some small `n`, `m`.
fn clusterable() -> impl Strategy<Value = (Codebook, usize)> {
    (1usize..=5, 1usize..=5, 1usize..=3).prop_flat_map(|(n, m, dim)| {
        let size = n * m;
        prop::collection::vec(-4.0f32..4.0, size * dim)
            .prop_map(move |v| (Codebook::new(v, size, dim).unwrap(), n))
    })
}

fn logits(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8.0f64..8.0, 1..=max_len)
}

fn assert_valid(p: &ProbVector) {
    let s: f64 = p.as_slice().iter().sum();
    assert!((s - 1.0).abs() <= 1e-9, "sum {s}");
    assert!(p.as_slice().iter().all(|&v| v >= 0.0));
}

fn sq_dist_f64(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, &y)| (x - y as f64).powi(2)).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

proptest! {
    #[test]
    fn quantization_picks_a_nearest_entry(
        cb in codebook(24, 4),
        cells in prop::collection::vec(-5.0f32..5.0, 1..40),
    ) {
        let dim = cb.dim();
        let count = cells.len() / dim;
        prop_assume!(count > 0);
        let grid = FeatureGrid::new(cells[..count * dim].to_vec(), 1, count, dim).unwrap();
        let toks = cb.quantize(&grid).unwrap();
        for (j, &t) in toks.indices.iter().enumerate() {
            let z: Vec<f64> = grid.cell(0, j).iter().map(|&v| v as f64).collect();
            let chosen = sq_dist_f64(&z, cb.row(t as usize));
            for k in 0..cb.len() {
                let d = sq_dist_f64(&z, cb.row(k));
                prop_assert!(chosen <= d);
                if d == chosen {
                    prop_assert!(t as usize <= k);
                }
            }
        }
    }

    #[test]
    fn code_distance_ranks_are_a_bijection(cb in codebook(20, 3), q in any::<prop::sample::Index>()) {
        let i = q.index(cb.len());
        let mut seen = vec![false; cb.len()];
        for j in 0..cb.len() {
            let r = cb.code_distance(i, j).unwrap();
            prop_assert!(!seen[r]);
            seen[r] = true;
        }
        prop_assert_eq!(cb.code_distance(i, i).unwrap(), 0);
    }

    #[test]
    fn cbk1_round_trip_is_bit_exact(size in 1usize..16, dim in 1usize..6, bits in prop::collection::vec(any::<u32>(), 96)) {
        // arbitrary finite bit patterns, including subnormals and -0.0
        let entries: Vec<f32> = bits
            .iter()
            .cycle()
            .take(size * dim)
            .map(|&b| f32::from_bits(b))
            .map(|v| if v.is_finite() { v } else { 1.0 })
            .collect();
        let cb = Codebook::new(entries.clone(), size, dim).unwrap();
        let back = Codebook::decode_cbk1(&cb.encode_cbk1()).unwrap();
        let a: Vec<u32> = entries.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.entries().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.dim(), dim);
    }

    #[test]
    fn csv_round_trip_is_bit_exact(cb in codebook(12, 4)) {
        let back = Codebook::parse_csv(&cb.to_csv()).unwrap();
        let a: Vec<u32> = cb.entries().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.entries().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn tok1_round_trip(tokens in prop::collection::vec(any::<u32>(), 0..64)) {
        prop_assert_eq!(decode_tok1(&encode_tok1(&tokens)).unwrap(), tokens);
    }

    #[test]
    fn kmeans_balances_and_is_deterministic((cb, n) in clusterable(), seed in any::<u64>()) {
        let a = balanced_kmeans(&cb, n, 50, seed).unwrap();
        let b = balanced_kmeans(&cb, n, 50, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let sizes = a.cluster_sizes().unwrap();
        prop_assert!(sizes.iter().all(|&s| s == cb.len() / n));
    }

    #[test]
    fn kmeans_objective_never_rises((cb, n) in clusterable(), seed in any::<u64>()) {
        let (_, trace) = balanced_kmeans_traced(&cb, n, 50, seed).unwrap();
        for t in &trace {
            prop_assert!(t.after_update <= t.before_update * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn rearranged_labels_match_clusters((cb, n) in clusterable(), seed in any::<u64>()) {
        let asg = balanced_kmeans(&cb, n, 50, seed).unwrap();
        let perm = build_permutation(&asg).unwrap();
        prop_assert!(perm.is_cluster_contiguous(&asg));
        for old in 0..cb.len() {
            let new = perm.forward()[old] as usize;
            prop_assert_eq!(cluster_label(new, asg.m).unwrap(), asg.assignment[old] as usize);
        }
    }

    #[test]
    fn remap_forward_then_inverse_is_identity(
        order in Just((0u32..24).collect::<Vec<_>>()).prop_shuffle(),
        picks in prop::collection::vec(0u32..24, 0..100),
    ) {
        let perm = PermutationMap::from_forward(order).unwrap();
        let there = remap_stream(&picks, &perm).unwrap();
        let back = remap_stream(&there, &perm.inverted()).unwrap();
        prop_assert_eq!(back, picks);
    }

    #[test]
    fn cluster_distribution_is_normalized(
        w in prop::collection::vec(0.0f64..1.0, 64),
        n in prop::sample::select(vec![1usize, 2, 4, 8, 16, 32, 64]),
    ) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let p = ProbVector::from_weights(w).unwrap();
        let c = cluster_probs(&p, n, 64 / n).unwrap();
        let s: f64 = c.as_slice().iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn combined_loss_is_shift_invariant(
        l in prop::collection::vec(-6.0f64..6.0, 16),
        t in 0usize..16,
        c in -10.0f64..10.0,
        lambda in 0.0f64..2.0,
    ) {
        let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
        let a = combined_loss(&l, t, lambda, 4, 4).unwrap();
        let b = combined_loss(&shifted, t, lambda, 4, 4).unwrap();
        prop_assert!((a.total - b.total).abs() <= 1e-10);
    }

    #[test]
    fn total_is_affine_in_lambda(
        l in prop::collection::vec(-6.0f64..6.0, 8),
        t in 0usize..8,
        lambda in 0.0f64..3.0,
    ) {
        let base = combined_loss(&l, t, 0.0, 2, 4).unwrap();
        let at = combined_loss(&l, t, lambda, 2, 4).unwrap();
        prop_assert_eq!(at.tce, base.tce);
        prop_assert_eq!(at.cce, base.cce);
        prop_assert!((at.total - (base.tce + lambda * base.cce)).abs() <= 1e-12 * (1.0 + at.total));
    }

    #[test]
    fn filters_keep_valid_support_and_argmax(
        l in logits(32),
        k in 0usize..40,
        top_p in 0.01f64..=1.0,
        temperature in 0.1f64..4.0,
    ) {
        let p = apply_temperature(&l, temperature).unwrap();
        assert_valid(&p);
        let top = argmax(p.as_slice());
        let a = top_k_filter(&p, k);
        assert_valid(&a);
        let b = top_p_filter(&a, top_p).unwrap();
        assert_valid(&b);
        prop_assert!(b.as_slice()[top] > 0.0);
        prop_assert!(b.as_slice().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn top_k_at_least_len_is_identity(l in logits(16), extra in 0usize..4) {
        let p = softmax(&l).unwrap();
        prop_assert_eq!(top_k_filter(&p, p.len() + extra), p);
    }

    #[test]
    fn neutral_pipeline_is_plain_softmax(l in logits(24), u in logits(24)) {
        let len = l.len().min(u.len());
        let (l, u) = (&l[..len], &u[..len]);
        prop_assert_eq!(cfg_combine(l, u, 0.0).unwrap(), l.to_vec());
        let cfg = SamplerConfig::default();
        prop_assert_eq!(next_token_distribution(l, u, &cfg).unwrap(), softmax(l).unwrap());
    }

    #[test]
    fn prob_space_guidance_stays_valid(
        l in prop::collection::vec(-6.0f64..6.0, 12),
        u in prop::collection::vec(-6.0f64..6.0, 12),
        w in 0.0f64..5.0,
        temperature in 0.2f64..3.0,
    ) {
        let cfg = SamplerConfig { cfg_scale: w, temperature, cfg_space: GuidanceSpace::Prob, ..Default::default() };
        assert_valid(&next_token_distribution(&l, &u, &cfg).unwrap());
    }
}
