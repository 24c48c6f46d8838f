use super::{squared_l2_rows, Datastore, Neighbor, NeighborSet, TopK};
use crate::error::{check_dim, invalid, Result};

/// The `min(k, N)` entries nearest to `query` by squared Euclidean distance.
pub fn exact_knn(ds: &Datastore, query: &[f32], k: usize) -> Result<NeighborSet> {
    check_query(ds, query)?;
    Ok(exact_knn_batch(ds, query, k)?.pop().expect("one query"))
}

/// Exact search for a row-major block of queries. The datastore is streamed
/// once and every key row is compared against all queries while it is hot.
pub fn exact_knn_batch(ds: &Datastore, queries: &[f32], k: usize) -> Result<Vec<NeighborSet>> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if !queries.len().is_multiple_of(ds.dim()) || queries.is_empty() {
        return Err(crate::error::Error::DimensionMismatch {
            expected: ds.dim(),
            actual: queries.len(),
        });
    }
    let hits = exact_scan_batch(ds, queries, k, |_, _| false);
    Ok(hits.into_iter().map(|h| to_neighbor_set(ds, h)).collect())
}

pub(crate) fn to_neighbor_set(ds: &Datastore, hits: Vec<(f32, u32)>) -> NeighborSet {
    NeighborSet {
        entries: hits
            .into_iter()
            .map(|(distance, index)| Neighbor {
                index: index as usize,
                distance,
                value: ds.value(index as usize),
            })
            .collect(),
    }
}

/// Raw exhaustive scan. `skip(q, entry)` excludes an entry from query `q`'s
/// candidates (used by pruning to hide removed entries and the query itself).
pub(crate) fn exact_scan_batch<F>(
    ds: &Datastore,
    queries: &[f32],
    k: usize,
    skip: F,
) -> Vec<Vec<(f32, u32)>>
where
    F: Fn(usize, u32) -> bool,
{
    let dim = ds.dim();
    let nq = queries.len() / dim;
    let mut tops: Vec<TopK> = (0..nq).map(|_| TopK::new(k)).collect();
    let mut dists = vec![0.0f32; SCAN_BLOCK];
    for (b, block) in ds.keys().chunks(SCAN_BLOCK * dim).enumerate() {
        let first = b * SCAN_BLOCK;
        let dists = &mut dists[..block.len() / dim];
        for (q, (query, top)) in queries.chunks_exact(dim).zip(&mut tops).enumerate() {
            squared_l2_rows(query, block, dists);
            push_candidates(top, dists, first, |i| skip(q, i));
        }
    }
    tops.into_iter().map(TopK::into_sorted).collect()
}

/// Keys per block in a scan; a block stays in cache across all queries.
const SCAN_BLOCK: usize = 512;

/// Offers `dists[j]` for entry `first + j` to `top`.
#[inline]
pub(crate) fn push_candidates(top: &mut TopK, dists: &[f32], first: usize, skip: impl Fn(u32) -> bool) {
    let mut bound = top.bound();
    for (j, &d) in dists.iter().enumerate() {
        let idx = (first + j) as u32;
        if d <= bound && !skip(idx) {
            top.push(d, idx);
            bound = top.bound();
        }
    }
}

pub(crate) fn check_query(ds: &Datastore, query: &[f32]) -> Result<()> {
    check_dim(ds.dim(), query.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ds(n: usize, dim: usize, seed: u64) -> Datastore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let values = (0..n).map(|i| (i % 7) as u32).collect();
        Datastore::new(dim, keys, values).unwrap()
    }

    /// Float64 brute force, ties by index.
    fn oracle(ds: &Datastore, q: &[f32], k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = (0..ds.len())
            .map(|i| {
                let d = ds
                    .key(i)
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                    .sum();
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn self_query_is_first_at_zero() {
        let ds = random_ds(20, 8, 1);
        let res = exact_knn(&ds, ds.key(3), 4).unwrap();
        let first = res.as_slice()[0];
        assert_eq!((first.index, first.distance, first.value), (3, 0.0, ds.value(3)));
    }

    #[test]
    fn five_random_keys_match_brute_force() {
        let ds = random_ds(5, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            assert_eq!(exact_knn(&ds, &q, 2).unwrap().indices(), oracle(&ds, &q, 2));
        }
    }

    #[test]
    fn k_larger_than_n_returns_everything() {
        let ds = random_ds(4, 3, 4);
        let res = exact_knn(&ds, &[0.0, 0.0, 0.0], 10).unwrap();
        assert_eq!(res.len(), 4);
        assert!(res.is_canonically_ordered());
    }

    #[test]
    fn empty_store_gives_empty_set() {
        let ds = Datastore::with_dim(3).unwrap();
        assert!(exact_knn(&ds, &[1.0, 2.0, 3.0], 5).unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch_names_both() {
        let ds = random_ds(4, 3, 5);
        match exact_knn(&ds, &[0.0; 4], 1) {
            Err(Error::DimensionMismatch { expected: 3, actual: 4 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_keys_tie_by_index() {
        let ds = Datastore::new(1, vec![1.0, 0.0, 1.0, 1.0], vec![0, 1, 2, 3]).unwrap();
        assert_eq!(exact_knn(&ds, &[1.0], 3).unwrap().indices(), vec![0, 2, 3]);
    }
}
