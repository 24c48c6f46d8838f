//! Per-decode cache of retrieval distributions and the adaptive retrieval
//! gate.

mod gate;

pub use gate::{
    collect_examples, fit_gate, gate_features, gradient_check, should_retrieve, train_gate,
    AdaptiveGate, GateExample, GateTrainConfig, GateTrainReport, GradientProbe, DEFAULT_HIDDEN,
};

use crate::error::{check_dim, invalid, Result};
use crate::retrieval::RetrievalDistribution;
use crate::vectorstore::squared_l2;

/// A successful lookup: the matched entry, its distance (unsquared) and
/// the stored distribution.
#[derive(Debug, Clone, Copy)]
pub struct CacheHit<'a> {
    pub index: usize,
    pub distance: f64,
    pub repr: &'a [f32],
    pub dist: &'a RetrievalDistribution,
}

/// Append-only list of (representation, distribution) pairs searched by
/// linear scan with an unsquared Euclidean threshold.
#[derive(Debug, Clone)]
pub struct DistributionCache {
    dim: usize,
    tau: f64,
    reprs: Vec<f32>,
    dists: Vec<RetrievalDistribution>,
}

impl DistributionCache {
    /// `tau` may be infinite; it must not be negative or NaN.
    pub fn new(dim: usize, tau: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("cache dimension must be positive"));
        }
        if tau.is_nan() || tau < 0.0 {
            return Err(invalid(format!("cache threshold must be non-negative, got {tau}")));
        }
        Ok(Self {
            dim,
            tau,
            reprs: Vec::new(),
            dists: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }

    pub fn clear(&mut self) {
        self.reprs.clear();
        self.dists.clear();
    }

    /// The distribution of the closest cached representation if it lies
    /// within `tau`; ties go to the earliest insertion.
    pub fn lookup(&self, query: &[f32]) -> Result<Option<&RetrievalDistribution>> {
        Ok(self.lookup_entry(query)?.map(|h| h.dist))
    }

    pub fn lookup_entry(&self, query: &[f32]) -> Result<Option<CacheHit<'_>>> {
        if self.is_empty() {
            return Ok(None);
        }
        check_dim(self.dim, query.len())?;
        let mut best = (f32::INFINITY, usize::MAX);
        for (i, r) in self.reprs.chunks_exact(self.dim).enumerate() {
            let d = squared_l2(r, query);
            if d < best.0 || best.1 == usize::MAX {
                best = (d, i);
            }
        }
        let (d2, index) = best;
        if index == usize::MAX {
            return Ok(None);
        }
        let distance = (d2 as f64).sqrt();
        if distance <= self.tau {
            Ok(Some(CacheHit {
                index,
                distance,
                repr: &self.reprs[index * self.dim..(index + 1) * self.dim],
                dist: &self.dists[index],
            }))
        } else {
            Ok(None)
        }
    }

    /// Appends one pair per row of `reprs` (row-major, `dim` wide).
    pub fn insert(&mut self, reprs: &[f32], dists: &[RetrievalDistribution]) -> Result<()> {
        if !reprs.len().is_multiple_of(self.dim) {
            return Err(crate::error::Error::DimensionMismatch {
                expected: self.dim,
                actual: reprs.len(),
            });
        }
        if reprs.len() / self.dim != dists.len() {
            return Err(invalid(format!(
                "{} representations but {} distributions",
                reprs.len() / self.dim,
                dists.len()
            )));
        }
        self.reprs.extend_from_slice(reprs);
        self.dists.extend_from_slice(dists);
        Ok(())
    }

    pub fn push(&mut self, repr: &[f32], dist: RetrievalDistribution) -> Result<()> {
        check_dim(self.dim, repr.len())?;
        self.reprs.extend_from_slice(repr);
        self.dists.push(dist);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::knn_distribution;
    use crate::vectorstore::{Neighbor, NeighborSet};

    fn one_hot(token: u32) -> RetrievalDistribution {
        let n = NeighborSet::from_unsorted(vec![Neighbor { index: 0, distance: 0.0, value: token }]);
        knn_distribution(&n, 1.0).unwrap()
    }

    #[test]
    fn empty_cache_misses() {
        let c = DistributionCache::new(2, 6.0).unwrap();
        assert!(c.lookup(&[0.0, 0.0]).unwrap().is_none());
        assert!(c.lookup(&[0.0; 5]).unwrap().is_none());
    }

    #[test]
    fn threshold_is_inclusive_and_unsquared() {
        let mut c = DistributionCache::new(2, 6.0).unwrap();
        c.insert(&[0.0, 0.0], &[one_hot(5)]).unwrap();
        assert_eq!(c.lookup(&[6.0, 0.0]).unwrap(), Some(&one_hot(5)));
        assert!(c.lookup(&[6.5, 0.0]).unwrap().is_none());
        assert!(c.lookup(&[3.6, 4.8]).unwrap().is_some());
    }

    #[test]
    fn tau_zero_self_hit_and_earliest_tie() {
        let mut c = DistributionCache::new(2, 0.0).unwrap();
        c.insert(&[1.0, 1.0, 1.0, 1.0], &[one_hot(4), one_hot(9)]).unwrap();
        let hit = c.lookup_entry(&[1.0, 1.0]).unwrap().unwrap();
        assert_eq!((hit.index, hit.dist), (0, &one_hot(4)));
    }

    #[test]
    fn insert_grows_by_beam_count() {
        let mut c = DistributionCache::new(3, 1.0).unwrap();
        c.insert(&[0.5; 15], &vec![one_hot(4); 5]).unwrap();
        assert_eq!(c.len(), 5);
        assert!(c.insert(&[0.5; 6], &[one_hot(4)]).is_err());
        assert!(c.lookup(&[0.0; 2]).is_err());
        c.clear();
        assert!(c.is_empty());
    }

    #[test]
    fn rejects_bad_threshold() {
        assert!(DistributionCache::new(2, -1.0).is_err());
        assert!(DistributionCache::new(2, f64::NAN).is_err());
        assert!(DistributionCache::new(2, f64::INFINITY).is_ok());
    }
}
