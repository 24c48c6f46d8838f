//! Inverted-file index: coarse k-means partitioning of the keys, queries scan
//! only the `nprobe` lists whose centroids are nearest.

use std::path::Path;

use super::knn::{check_query, to_neighbor_set};
use super::{squared_l2_rows, Datastore, NeighborSet, TopK};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{check_dim, invalid, Error, Result};

const INDEX_MAGIC: &[u8; 6] = b"KNNIV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IvfParams {
    pub n_clusters: usize,
    pub kmeans_iters: usize,
    /// k-means trains on at most this many points per cluster, taken at a
    /// fixed stride; all entries are assigned afterwards.
    pub max_train_per_cluster: usize,
}

impl IvfParams {
    /// `round(sqrt(N))` lists, 10 Lloyd iterations.
    pub fn for_size(n_entries: usize) -> Self {
        Self {
            n_clusters: ((n_entries as f64).sqrt().round() as usize).max(1),
            kmeans_iters: 10,
            max_train_per_cluster: 256,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IvfIndex {
    dim: usize,
    centroids: Vec<f32>,
    assignments: Vec<u32>,
    /// CSR layout: list `c` is `ids[offsets[c]..offsets[c + 1]]`, ascending.
    offsets: Vec<usize>,
    ids: Vec<u32>,
    /// Keys copied in list order so each probed list is a contiguous scan.
    list_keys: Vec<f32>,
}

impl IvfIndex {
    pub fn build(ds: &Datastore, n_clusters: usize, kmeans_iters: usize) -> Result<Self> {
        Self::build_with(
            ds,
            &IvfParams {
                n_clusters,
                kmeans_iters,
                ..IvfParams::for_size(ds.len())
            },
        )
    }

    pub fn build_with(ds: &Datastore, params: &IvfParams) -> Result<Self> {
        let n = ds.len();
        let nc = params.n_clusters;
        if nc == 0 || params.kmeans_iters == 0 {
            return Err(invalid("n_clusters and kmeans_iters must be positive"));
        }
        if nc > n {
            return Err(invalid(format!(
                "n_clusters ({nc}) exceeds datastore size ({n})"
            )));
        }
        if n > u32::MAX as usize {
            return Err(invalid("datastore too large for 32-bit entry ids"));
        }
        let dim = ds.dim();

        let max_train = params.max_train_per_cluster.max(1).saturating_mul(nc);
        let sample: Vec<usize> = if n > max_train {
            let stride = n / max_train;
            (0..max_train).map(|i| i * stride).collect()
        } else {
            (0..n).collect()
        };

        let step = sample.len() / nc;
        let mut centroids: Vec<f32> = (0..nc)
            .flat_map(|c| ds.key(sample[c * step]).iter().copied())
            .collect();

        let mut scratch = Vec::new();
        let mut assign = vec![0u32; sample.len()];
        let mut dist = vec![0f32; sample.len()];
        for _ in 0..params.kmeans_iters {
            for (slot, &i) in sample.iter().enumerate() {
                let (c, d) = nearest_centroid(&centroids, dim, ds.key(i), &mut scratch);
                assign[slot] = c;
                dist[slot] = d;
            }
            let mut sums = vec![0f64; nc * dim];
            let mut counts = vec![0usize; nc];
            for (slot, &i) in sample.iter().enumerate() {
                let c = assign[slot] as usize;
                counts[c] += 1;
                for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(ds.key(i)) {
                    *s += *x as f64;
                }
            }
            let mut far: Vec<usize> = Vec::new();
            for c in 0..nc {
                let row = &mut centroids[c * dim..(c + 1) * dim];
                if counts[c] > 0 {
                    let inv = 1.0 / counts[c] as f64;
                    for (x, s) in row.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                        *x = (*s * inv) as f32;
                    }
                    continue;
                }
                // Empty cluster: move it onto the sample point farthest from
                // its own centroid.
                if far.is_empty() {
                    far = (0..sample.len()).collect();
                    far.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
                    far.reverse();
                }
                if let Some(slot) = far.pop() {
                    row.copy_from_slice(ds.key(sample[slot]));
                }
            }
        }

        let mut assignments = vec![0u32; n];
        let mut counts = vec![0usize; nc];
        for (i, a) in assignments.iter_mut().enumerate() {
            *a = nearest_centroid(&centroids, dim, ds.key(i), &mut scratch).0;
            counts[*a as usize] += 1;
        }
        Ok(Self::from_parts(ds, centroids, assignments, &counts))
    }

    fn from_parts(ds: &Datastore, centroids: Vec<f32>, assignments: Vec<u32>, counts: &[usize]) -> Self {
        let dim = ds.dim();
        let nc = counts.len();
        let mut offsets = vec![0usize; nc + 1];
        for c in 0..nc {
            offsets[c + 1] = offsets[c] + counts[c];
        }
        let mut fill = offsets.clone();
        let mut ids = vec![0u32; assignments.len()];
        for (i, &a) in assignments.iter().enumerate() {
            ids[fill[a as usize]] = i as u32;
            fill[a as usize] += 1;
        }
        let mut list_keys = Vec::with_capacity(ds.keys().len());
        for &i in &ids {
            list_keys.extend_from_slice(ds.key(i as usize));
        }
        Self {
            dim,
            centroids,
            assignments,
            offsets,
            ids,
            list_keys,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_clusters(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Entry ids of list `c`, ascending.
    pub fn cluster(&self, c: usize) -> &[u32] {
        &self.ids[self.offsets[c]..self.offsets[c + 1]]
    }

    pub fn assignment(&self, entry: usize) -> usize {
        self.assignments[entry] as usize
    }

    /// The `nprobe` lists nearest to `query`, nearest first.
    pub fn probe(&self, query: &[f32], nprobe: usize) -> Vec<usize> {
        let mut dists = vec![0.0f32; self.n_clusters()];
        squared_l2_rows(query, &self.centroids, &mut dists);
        let mut top = TopK::new(nprobe.min(self.n_clusters()));
        for (c, &d) in dists.iter().enumerate() {
            if d <= top.bound() {
                top.push(d, c as u32);
            }
        }
        top.into_sorted().into_iter().map(|(_, c)| c as usize).collect()
    }

    fn check_store(&self, ds: &Datastore) -> Result<()> {
        check_dim(self.dim, ds.dim())?;
        if ds.len() != self.len() {
            return Err(invalid(format!(
                "index covers {} entries but datastore has {}",
                self.len(),
                ds.len()
            )));
        }
        Ok(())
    }

    pub fn search(&self, ds: &Datastore, query: &[f32], k: usize, nprobe: usize) -> Result<NeighborSet> {
        check_query(ds, query)?;
        Ok(self.search_batch(ds, query, k, nprobe)?.pop().expect("one query"))
    }

    /// Batched search; queries sharing a list scan it together.
    pub fn search_batch(
        &self,
        ds: &Datastore,
        queries: &[f32],
        k: usize,
        nprobe: usize,
    ) -> Result<Vec<NeighborSet>> {
        self.check_store(ds)?;
        if queries.is_empty() || !queries.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: queries.len(),
            });
        }
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if nprobe == 0 || nprobe > self.n_clusters() {
            return Err(invalid(format!(
                "nprobe must be in 1..={}, got {nprobe}",
                self.n_clusters()
            )));
        }
        let hits = self.scan_batch(queries, k, nprobe, |_, _| false);
        Ok(hits.into_iter().map(|h| to_neighbor_set(ds, h)).collect())
    }

    pub(crate) fn scan_batch<F>(
        &self,
        queries: &[f32],
        k: usize,
        nprobe: usize,
        skip: F,
    ) -> Vec<Vec<(f32, u32)>>
    where
        F: Fn(usize, u32) -> bool,
    {
        let dim = self.dim;
        let nq = queries.len() / dim;
        let mut visits: Vec<(u32, u32)> = Vec::with_capacity(nq * nprobe);
        for (q, query) in queries.chunks_exact(dim).enumerate() {
            for c in self.probe(query, nprobe) {
                visits.push((c as u32, q as u32));
            }
        }
        visits.sort_unstable();

        let mut tops: Vec<TopK> = (0..nq).map(|_| TopK::new(k)).collect();
        let mut dists = Vec::new();
        let mut start = 0;
        while start < visits.len() {
            let c = visits[start].0 as usize;
            let mut end = start;
            while end < visits.len() && visits[end].0 as usize == c {
                end += 1;
            }
            let group = &visits[start..end];
            let (lo, hi) = (self.offsets[c], self.offsets[c + 1]);
            let keys = &self.list_keys[lo * dim..hi * dim];
            let ids = &self.ids[lo..hi];
            dists.resize(hi - lo, 0.0);
            for &(_, q) in group {
                let q = q as usize;
                squared_l2_rows(&queries[q * dim..(q + 1) * dim], keys, &mut dists);
                let top = &mut tops[q];
                let mut bound = top.bound();
                for (&d, &id) in dists.iter().zip(ids) {
                    if d <= bound && !skip(q, id) {
                        top.push(d, id);
                        bound = top.bound();
                    }
                }
            }
            start = end;
        }
        tops.into_iter().map(TopK::into_sorted).collect()
    }

    /// `KNNIV1`, u32 n_clusters, u32 dim, centroids, then per list a u64
    /// length followed by u64 entry ids.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = ByteWriter::create(path.as_ref(), INDEX_MAGIC)?;
        w.u32(self.n_clusters() as u32)?;
        w.u32(self.dim as u32)?;
        w.f32s(&self.centroids)?;
        for c in 0..self.n_clusters() {
            let list = self.cluster(c);
            w.u64(list.len() as u64)?;
            w.u64s(list.iter().map(|&i| i as u64))?;
        }
        w.finish()
    }

    /// Reads an index file and re-attaches it to the datastore it was built on.
    pub fn load(path: impl AsRef<Path>, ds: &Datastore) -> Result<Self> {
        let mut r = ByteReader::open(path.as_ref(), INDEX_MAGIC)?;
        let nc = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        check_dim(ds.dim(), dim)?;
        if nc == 0 {
            return Err(Error::Corrupt("index has no lists".into()));
        }
        let centroids = r.f32s(nc * dim)?;
        let mut assignments = vec![u32::MAX; ds.len()];
        let mut counts = vec![0usize; nc];
        for (c, count) in counts.iter_mut().enumerate() {
            let len = r.u64()? as usize;
            let ids = r.u64s(len)?;
            for id in ids {
                let slot = assignments
                    .get_mut(id as usize)
                    .ok_or_else(|| Error::Corrupt(format!("entry id {id} out of range")))?;
                if *slot != u32::MAX {
                    return Err(Error::Corrupt(format!("entry {id} listed twice")));
                }
                *slot = c as u32;
            }
            *count = len;
        }
        r.expect_end()?;
        if let Some(missing) = assignments.iter().position(|&a| a == u32::MAX) {
            return Err(Error::Corrupt(format!("entry {missing} not in any list")));
        }
        Ok(Self::from_parts(ds, centroids, assignments, &counts))
    }
}

fn nearest_centroid(centroids: &[f32], dim: usize, key: &[f32], scratch: &mut Vec<f32>) -> (u32, f32) {
    scratch.resize(centroids.len() / dim, 0.0);
    squared_l2_rows(key, centroids, scratch);
    let mut best = (0u32, f32::INFINITY);
    for (c, &d) in scratch.iter().enumerate() {
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}
