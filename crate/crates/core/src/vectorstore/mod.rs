//! Key/value datastore of decoder representations and the target tokens that
//! followed them, with exact and inverted-file k-nearest-neighbor search.
//!
//! Distances returned by every search are squared Euclidean. Results are
//! ordered by ascending distance, ties broken by ascending entry index, so a
//! query always yields the same neighbor list regardless of scan order.

mod build;
mod distance;
mod ivf;
mod knn;
mod topk;

use std::path::Path;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{check_dim, Error, Result};

pub use build::{build_datastore, build_datastore_with, BuildOptions};
pub use distance::{dot, squared_l2};
pub(crate) use distance::{dot_rows, squared_l2_rows};
pub use ivf::{IvfIndex, IvfParams};
pub use knn::{exact_knn, exact_knn_batch};
pub(crate) use knn::exact_scan_batch;
pub(crate) use topk::TopK;

/// Token identifier in the model vocabulary.
pub type TokenId = u32;

const DATASTORE_MAGIC: &[u8; 6] = b"KNNDS1";

/// Datastores below this size are searched exhaustively by default.
pub const EXACT_SEARCH_BELOW: usize = 4096;
/// Default number of inverted lists probed per query.
pub const DEFAULT_NPROBE: usize = 8;

/// Ordered collection of `(key, value)` entries. Keys are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    dim: usize,
    keys: Vec<f32>,
    values: Vec<TokenId>,
}

impl Datastore {
    /// Empty datastore of the given key width.
    pub fn with_dim(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        Ok(Self {
            dim,
            keys: Vec::new(),
            values: Vec::new(),
        })
    }

    pub fn new(dim: usize, keys: Vec<f32>, values: Vec<TokenId>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if keys.len() != values.len() * dim {
            return Err(Error::InvalidArgument(format!(
                "{} key floats do not form {} rows of width {}",
                keys.len(),
                values.len(),
                dim
            )));
        }
        if let Some(pos) = keys.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "key component {} of entry {}",
                pos % dim,
                pos / dim
            )));
        }
        Ok(Self { dim, keys, values })
    }

    pub fn push(&mut self, key: &[f32], value: TokenId) -> Result<()> {
        check_dim(self.dim, key.len())?;
        if key.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("key of entry {}", self.len())));
        }
        self.keys.extend_from_slice(key);
        self.values.push(value);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn key(&self, index: usize) -> &[f32] {
        &self.keys[index * self.dim..(index + 1) * self.dim]
    }

    pub fn value(&self, index: usize) -> TokenId {
        self.values[index]
    }

    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn values(&self) -> &[TokenId] {
        &self.values
    }

    /// Copies the entries at `indices` (in the given order) into a new store.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut keys = Vec::with_capacity(indices.len() * self.dim);
        let mut values = Vec::with_capacity(indices.len());
        for &i in indices {
            keys.extend_from_slice(self.key(i));
            values.push(self.values[i]);
        }
        Self {
            dim: self.dim,
            keys,
            values,
        }
    }

    /// Checks every value against the owning model's vocabulary size.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.values.iter().position(|&v| v as usize >= vocab_size) {
            Some(i) => Err(Error::InvalidArgument(format!(
                "entry {i} has value {} outside vocabulary of size {vocab_size}",
                self.values[i]
            ))),
            None => Ok(()),
        }
    }

    /// Writes `KNNDS1`, u32 dim, u64 N, N*dim f32 keys, N u32 values (all LE).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = ByteWriter::create(path.as_ref(), DATASTORE_MAGIC)?;
        w.u32(self.dim as u32)?;
        w.u64(self.len() as u64)?;
        w.f32s(&self.keys)?;
        w.u32s(&self.values)?;
        w.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = ByteReader::open(path.as_ref(), DATASTORE_MAGIC)?;
        let dim = r.u32()? as usize;
        let n = r.u64()?;
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        let payload = n
            .checked_mul(dim as u64 * 4 + 4)
            .ok_or_else(|| Error::Corrupt(format!("entry count {n} overflows")))?;
        r.require(payload)?;
        let n = n as usize;
        let keys = r.f32s(n * dim)?;
        let values = r.u32s(n)?;
        r.expect_end()?;
        Self::new(dim, keys, values)
    }
}

/// One retrieved entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    /// Squared Euclidean distance to the query.
    pub distance: f32,
    pub value: TokenId,
}

/// Neighbors sorted by `(distance, index)` ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborSet {
    entries: Vec<Neighbor>,
}

impl NeighborSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a set from unsorted neighbors, imposing the canonical order.
    pub fn from_unsorted(mut entries: Vec<Neighbor>) -> Self {
        entries.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.index.cmp(&b.index))
        });
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Neighbor> {
        self.entries.iter()
    }

    pub fn as_slice(&self) -> &[Neighbor] {
        &self.entries
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|n| n.index).collect()
    }

    /// True when distances are non-decreasing with ascending indices on ties.
    pub fn is_canonically_ordered(&self) -> bool {
        self.entries.windows(2).all(|w| {
            w[0].distance < w[1].distance
                || (w[0].distance == w[1].distance && w[0].index < w[1].index)
        })
    }
}

impl<'a> IntoIterator for &'a NeighborSet {
    type Item = &'a Neighbor;
    type IntoIter = std::slice::Iter<'a, Neighbor>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// How a datastore is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchBackend {
    Exact,
    Ivf { nprobe: usize },
}

impl SearchBackend {
    /// Exact below [`EXACT_SEARCH_BELOW`] entries, IVF with the default
    /// probe count otherwise.
    pub fn auto(n_entries: usize) -> Self {
        if n_entries < EXACT_SEARCH_BELOW {
            Self::Exact
        } else {
            Self::Ivf {
                nprobe: DEFAULT_NPROBE,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Datastore {
        Datastore::new(
            2,
            vec![0.0, 1.0, -2.5, 3.25, 1e-7, f32::MAX],
            vec![5, 6, 7],
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_finite_keys() {
        let err = Datastore::new(2, vec![0.0, f32::NAN], vec![1]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        let mut ds = Datastore::with_dim(1).unwrap();
        assert!(ds.push(&[f32::INFINITY], 0).is_err());
    }

    #[test]
    fn rejects_ragged_keys_and_zero_dim() {
        assert!(Datastore::new(3, vec![0.0; 5], vec![1, 2]).is_err());
        assert!(matches!(
            Datastore::new(0, vec![], vec![]),
            Err(Error::ZeroDimension)
        ));
    }

    #[test]
    fn save_load_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let ds = sample();
        ds.save(&path).unwrap();
        let back = Datastore::load(&path).unwrap();
        assert_eq!(back.dim(), 2);
        let bits = |d: &Datastore| d.keys().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ds), bits(&back));
        assert_eq!(ds.values(), back.values());
        // header + 3*2 keys + 3 values
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 6 + 4 + 8 + 24 + 12);
    }

    #[test]
    fn load_reports_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        sample().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0..6].copy_from_slice(b"NOTDS1");
        std::fs::write(&path, &bytes).unwrap();
        match Datastore::load(&path) {
            Err(Error::BadMagic { found, .. }) => assert_eq!(found, "NOTDS1"),
            other => panic!("expected bad magic, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_truncation_with_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        sample().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // cut in the middle of the key block
        std::fs::write(&path, &bytes[..18 + 10]).unwrap();
        match Datastore::load(&path) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, 54);
                assert_eq!(actual, 28);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_zero_dim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let mut bytes = b"KNNDS1".to_vec();
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Datastore::load(&path), Err(Error::ZeroDimension)));
    }

    #[test]
    fn neighbor_set_orders_ties_by_index() {
        let set = NeighborSet::from_unsorted(vec![
            Neighbor { index: 9, distance: 1.0, value: 0 },
            Neighbor { index: 2, distance: 1.0, value: 0 },
            Neighbor { index: 4, distance: 0.5, value: 0 },
        ]);
        assert_eq!(set.indices(), vec![4, 2, 9]);
        assert!(set.is_canonically_ordered());
    }

    #[test]
    fn auto_backend_switches_at_threshold() {
        assert_eq!(SearchBackend::auto(4095), SearchBackend::Exact);
        assert_eq!(
            SearchBackend::auto(4096),
            SearchBackend::Ivf { nprobe: DEFAULT_NPROBE }
        );
    }
}
