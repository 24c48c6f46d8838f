use std::collections::HashSet;

use knnmt::compression::{fit_pca, greedy_merge_prune, prune_with, PcaModel, PruneOptions, PruneSearch};
use knnmt::vectorstore::{exact_knn_batch, Datastore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn clustered_store(n: usize, dim: usize, n_values: u32, seed: u64) -> Datastore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..n_values)
        .map(|_| (0..dim).map(|_| rng.random_range(-4.0f32..4.0)).collect())
        .collect();
    let mut keys = Vec::with_capacity(n * dim);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let v = rng.random_range(0..n_values);
        // Some entries sit near a center of another value.
        let c = if rng.random_bool(0.2) { rng.random_range(0..n_values) } else { v };
        keys.extend(centers[c as usize].iter().map(|x| x + rng.random_range(-1.0f32..1.0)));
        values.push(v);
    }
    Datastore::new(dim, keys, values).unwrap()
}

fn sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

/// The greedy pass with a fresh f64 brute-force search at every turn.
fn naive_prune(ds: &Datastore, k: usize) -> Vec<usize> {
    let n = ds.len();
    let mut removed = vec![false; n];
    let mut absorbed = vec![false; n];
    for i in 0..n {
        if removed[i] {
            continue;
        }
        let mut alive: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i && !removed[j])
            .map(|j| (sq(ds.key(i), ds.key(j)), j))
            .collect();
        alive.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in alive.iter().take(k) {
            if j > i && !absorbed[j] && ds.value(j) == ds.value(i) {
                removed[j] = true;
                absorbed[i] = true;
            }
        }
    }
    (0..n).filter(|&i| !removed[i]).collect()
}

#[test]
fn one_dimensional_example() {
    let ds = Datastore::new(1, vec![0.0, 0.1, 5.0], vec![0, 0, 1]).unwrap();
    let (pruned, report) = greedy_merge_prune(&ds, 1).unwrap();
    assert_eq!(pruned.keys(), &[0.0, 5.0]);
    assert_eq!(pruned.values(), &[0, 1]);
    assert_eq!((report.pruned_size, report.merges_performed, report.k_used), (2, 1, 1));
}

#[test]
fn distinct_values_are_untouched() {
    let ds = Datastore::new(2, (0..20).map(|x| x as f32).collect(), (0..10).collect()).unwrap();
    let (pruned, report) = greedy_merge_prune(&ds, 3).unwrap();
    assert_eq!(pruned, ds);
    assert_eq!(report.merges_performed, 0);
}

#[test]
fn k_must_be_below_size() {
    let ds = clustered_store(5, 2, 2, 1);
    assert!(greedy_merge_prune(&ds, 5).is_err());
    assert!(greedy_merge_prune(&ds, 0).is_err());
    assert!(greedy_merge_prune(&Datastore::with_dim(2).unwrap(), 1).is_err());
}

#[test]
fn matches_naive_replay_and_sizes_shrink_with_k() {
    let ds = clustered_store(1200, 6, 8, 2);
    let mut sizes = Vec::new();
    for k in [1, 2, 5] {
        let (pruned, report, trace) = prune_with(&ds, PruneOptions { k, search: PruneSearch::Exact }).unwrap();
        assert_eq!(trace.kept, naive_prune(&ds, k), "k={k}");
        assert_eq!(report.pruned_size + report.merges_performed, ds.len());
        assert_eq!(pruned.len(), trace.kept.len());
        for (row, &i) in trace.kept.iter().enumerate() {
            assert_eq!(pruned.key(row), ds.key(i));
        }
        sizes.push(report.pruned_size);
    }
    assert!(sizes[2] <= sizes[1] && sizes[1] <= sizes[0] && sizes[0] < ds.len(), "{sizes:?}");
}

#[test]
fn ivf_pruning_keeps_invariants() {
    let ds = clustered_store(6000, 8, 12, 3);
    let (pruned, report, trace) = prune_with(&ds, PruneOptions { k: 2, search: PruneSearch::Ivf { nprobe: 4 } }).unwrap();
    assert_eq!(report.pruned_size + report.merges_performed, ds.len());
    for (j, by) in trace.removed_by.iter().enumerate() {
        if let Some(i) = *by {
            assert!(i < j && ds.value(i) == ds.value(j) && trace.removed_by[i].is_none());
        }
    }
    let before: HashSet<u32> = ds.values().iter().copied().collect();
    let after: HashSet<u32> = pruned.values().iter().copied().collect();
    assert_eq!(before, after);
}

#[test]
fn pca_examples() {
    let line = Datastore::new(2, vec![0.0, 0.0, 1.0, 1.0, -2.0, -2.0, 3.0, 3.0], vec![0; 4]).unwrap();
    let pca = fit_pca(&line, 1).unwrap();
    let s = std::f32::consts::FRAC_1_SQRT_2;
    assert!((pca.projection()[0] - s).abs() < 1e-6 && (pca.projection()[1] - s).abs() < 1e-6);

    let constant = Datastore::new(3, [1.0, 2.0, 3.0].repeat(10), vec![0; 10]).unwrap();
    let flat = fit_pca(&constant, 2).unwrap();
    assert!(flat.explained_variance().iter().all(|&v| v == 0.0));
    assert!(flat.apply(&[1.0, 2.0, 3.0]).unwrap().iter().all(|&x| x == 0.0));

    assert!(fit_pca(&constant, 4).is_err());
    assert!(flat.apply(&[1.0, 2.0]).is_err());
    assert!(fit_pca(&Datastore::new(3, vec![1.0; 3], vec![0]).unwrap(), 1).is_err());
}

#[test]
fn full_rank_round_trip_and_file() {
    let ds = clustered_store(300, 10, 4, 4);
    let pca = fit_pca(&ds, 10).unwrap();
    for i in 0..ds.len() {
        let back = pca.reconstruct(&pca.apply(ds.key(i)).unwrap()).unwrap();
        assert!(back.iter().zip(ds.key(i)).all(|(a, b)| (a - b).abs() < 1e-4));
    }
    let p = pca.projection();
    for a in 0..10 {
        for b in 0..10 {
            let dot: f64 = (0..10).map(|r| p[r * 10 + a] as f64 * p[r * 10 + b] as f64).sum();
            assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-5);
        }
    }
    let ev = pca.explained_variance();
    assert!(ev.windows(2).all(|w| w[0] >= w[1]));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pca");
    pca.save(&path).unwrap();
    let loaded = PcaModel::load(&path).unwrap();
    assert_eq!(loaded.apply(ds.key(5)).unwrap(), pca.apply(ds.key(5)).unwrap());
}

#[test]
fn low_rank_data_keeps_nearest_neighbors() {
    let (dim, rank, n) = (24, 5, 1500);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let basis: Vec<f32> = (0..rank * dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut point = || -> Vec<f32> {
        let c: Vec<f32> = (0..rank).map(|_| rng.sample(StandardNormal)).collect();
        (0..dim).map(|j| 2.0 + (0..rank).map(|r| c[r] * basis[r * dim + j]).sum::<f32>()).collect()
    };
    let keys: Vec<f32> = (0..n).flat_map(|_| point()).collect();
    let queries: Vec<f32> = (0..100).flat_map(|_| point()).collect();
    let ds = Datastore::new(dim, keys, vec![0; n]).unwrap();
    let pca = fit_pca(&ds, rank).unwrap();
    let reduced = pca.apply_datastore(&ds).unwrap();
    let rq: Vec<f32> = queries.chunks_exact(dim).flat_map(|q| pca.apply(q).unwrap()).collect();
    let before = exact_knn_batch(&ds, &queries, 1).unwrap();
    let after = exact_knn_batch(&reduced, &rq, 1).unwrap();
    for (a, b) in before.iter().zip(&after) {
        assert_eq!(a.indices(), b.indices());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_a_contraction(seed in any::<u64>(), dim in 2usize..12, d in 1usize..12) {
        let d = d.min(dim);
        let ds = clustered_store(80, dim, 3, seed);
        let reduced = fit_pca(&ds, d).unwrap().apply_datastore(&ds).unwrap();
        for i in 0..20 {
            let j = 79 - i;
            let before = sq(ds.key(i), ds.key(j)).sqrt();
            let after = sq(reduced.key(i), reduced.key(j)).sqrt();
            prop_assert!(after <= before + 1e-4, "{} > {}", after, before);
        }
    }

    #[test]
    fn pruning_never_drops_a_value(seed in any::<u64>(), n in 10usize..200, values in 1u32..6, k in 1usize..6) {
        let ds = clustered_store(n, 3, values, seed);
        let (pruned, _) = greedy_merge_prune(&ds, k.min(n - 1)).unwrap();
        let before: HashSet<u32> = ds.values().iter().copied().collect();
        let after: HashSet<u32> = pruned.values().iter().copied().collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn pruning_is_monotone_in_k(seed in any::<u64>(), n in 20usize..250) {
        let ds = clustered_store(n, 4, 4, seed);
        let size = |k| greedy_merge_prune(&ds, k).unwrap().1.pruned_size;
        let (s1, s2, s5) = (size(1), size(2), size(5));
        prop_assert!(s5 <= s2 && s2 <= s1 && s1 <= n);
    }
}
