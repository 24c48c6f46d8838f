//! Greedy merging: entries are visited in index order and each surviving
//! entry removes the later, same-valued entries among its nearest living
//! neighbors.

use crate::error::{invalid, Error, Result};
use crate::vectorstore::{exact_scan_batch, Datastore, IvfIndex, IvfParams, DEFAULT_NPROBE};

/// Stores up to this size are pruned with exact neighbor search.
pub const EXACT_PRUNE_MAX: usize = 100_000;

/// Extra candidates fetched per entry beyond `k`, so that neighbors removed
/// earlier in the sweep rarely force a second search.
const CANDIDATE_MARGIN: usize = 8;
const QUERY_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneSearch {
    /// Exact up to [`EXACT_PRUNE_MAX`] entries, IVF above.
    Auto,
    Exact,
    Ivf { nprobe: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PruneOptions {
    pub k: usize,
    pub search: PruneSearch,
}

impl PruneOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            search: PruneSearch::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PruneReport {
    pub original_size: usize,
    pub pruned_size: usize,
    pub merges_performed: usize,
    pub k_used: usize,
}

/// Which entry removed which: `removed_by[j] = Some(i)` when entry `i`
/// absorbed `j` during its turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneTrace {
    pub removed_by: Vec<Option<usize>>,
    pub kept: Vec<usize>,
}

pub fn greedy_merge_prune(ds: &Datastore, k: usize) -> Result<(Datastore, PruneReport)> {
    let (pruned, report, _) = prune_with(ds, PruneOptions::new(k))?;
    Ok((pruned, report))
}

enum Searcher {
    Exact,
    Ivf { index: IvfIndex, nprobe: usize },
}

impl Searcher {
    fn scan<F>(&self, ds: &Datastore, queries: &[f32], k: usize, skip: F) -> Vec<Vec<(f32, u32)>>
    where
        F: Fn(usize, u32) -> bool,
    {
        match self {
            Searcher::Exact => exact_scan_batch(ds, queries, k, skip),
            Searcher::Ivf { index, nprobe } => index.scan_batch(queries, k, *nprobe, skip),
        }
    }
}

pub fn prune_with(ds: &Datastore, opts: PruneOptions) -> Result<(Datastore, PruneReport, PruneTrace)> {
    let n = ds.len();
    let k = opts.k;
    if n == 0 {
        return Err(Error::Empty("datastore"));
    }
    if k == 0 || k >= n {
        return Err(invalid(format!("pruning k must be in 1..{n}, got {k}")));
    }
    let searcher = match opts.search {
        PruneSearch::Exact => Searcher::Exact,
        PruneSearch::Auto if n <= EXACT_PRUNE_MAX => Searcher::Exact,
        PruneSearch::Auto => ivf_searcher(ds, DEFAULT_NPROBE)?,
        PruneSearch::Ivf { nprobe } => ivf_searcher(ds, nprobe)?,
    };

    let dim = ds.dim();
    let m = (k + CANDIDATE_MARGIN).min(n - 1);
    let mut candidates: Vec<u32> = Vec::with_capacity(n * m);
    let mut counts: Vec<u32> = Vec::with_capacity(n);
    for start in (0..n).step_by(QUERY_BLOCK) {
        let end = (start + QUERY_BLOCK).min(n);
        let queries = &ds.keys()[start * dim..end * dim];
        let hits = searcher.scan(ds, queries, m, |q, e| (start + q) as u32 == e);
        for h in hits {
            counts.push(h.len() as u32);
            candidates.extend(h.iter().map(|&(_, e)| e));
            candidates.extend(std::iter::repeat_n(u32::MAX, m - h.len()));
        }
    }

    let mut removed_by: Vec<Option<usize>> = vec![None; n];
    let mut absorbed = vec![false; n];
    let mut merges = 0;
    let mut neighbors: Vec<u32> = Vec::with_capacity(k);
    for i in 0..n {
        if removed_by[i].is_some() {
            continue;
        }
        neighbors.clear();
        let list = &candidates[i * m..i * m + counts[i] as usize];
        neighbors.extend(
            list.iter()
                .copied()
                .filter(|&e| removed_by[e as usize].is_none())
                .take(k),
        );
        // A full candidate list can only stand in for a fresh search when it
        // still holds k living entries.
        if neighbors.len() < k && counts[i] as usize == m {
            let hits = searcher.scan(ds, ds.key(i), k, |_, e| {
                e as usize == i || removed_by[e as usize].is_some()
            });
            neighbors.clear();
            neighbors.extend(hits[0].iter().map(|&(_, e)| e));
        }
        let value = ds.value(i);
        for &j in &neighbors {
            let j = j as usize;
            if j > i && !absorbed[j] && ds.value(j) == value {
                removed_by[j] = Some(i);
                absorbed[i] = true;
                merges += 1;
            }
        }
    }

    let kept: Vec<usize> = (0..n).filter(|&i| removed_by[i].is_none()).collect();
    let pruned = ds.select(&kept);
    let report = PruneReport {
        original_size: n,
        pruned_size: kept.len(),
        merges_performed: merges,
        k_used: k,
    };
    Ok((pruned, report, PruneTrace { removed_by, kept }))
}

fn ivf_searcher(ds: &Datastore, nprobe: usize) -> Result<Searcher> {
    let params = IvfParams::for_size(ds.len());
    let index = IvfIndex::build_with(ds, &params)?;
    if nprobe == 0 || nprobe > index.n_clusters() {
        return Err(invalid(format!(
            "nprobe must be in 1..={}, got {nprobe}",
            index.n_clusters()
        )));
    }
    Ok(Searcher::Ivf { index, nprobe })
}
