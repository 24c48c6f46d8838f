//! Retrieval distribution over neighbor values and its interpolation with
//! the base model's next-token distribution.

use crate::error::{invalid, Error, Result};
use crate::vectorstore::{NeighborSet, TokenId};

/// Default number of neighbors retrieved per step.
pub const DEFAULT_K: usize = 8;
pub const DEFAULT_LAMBDA: f64 = 0.7;
pub const DEFAULT_TEMPERATURE: f64 = 10.0;

/// Sparse distribution over token ids, sorted by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalDistribution {
    support: Vec<(TokenId, f64)>,
}

impl RetrievalDistribution {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.support
            .binary_search_by_key(&token, |&(t, _)| t)
            .map_or(0.0, |i| self.support[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.support.iter().copied()
    }

    pub fn total(&self) -> f64 {
        self.support.iter().map(|(_, p)| p).sum()
    }

    /// Most probable token, lowest id on ties.
    pub fn argmax(&self) -> Option<TokenId> {
        self.support
            .iter()
            .fold(None, |best: Option<(TokenId, f64)>, &(t, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((t, p)),
            })
            .map(|(t, _)| t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationParams {
    pub k: usize,
    pub lambda: f64,
    pub temperature: f64,
}

impl InterpolationParams {
    pub fn new(k: usize, lambda: f64, temperature: f64) -> Result<Self> {
        let p = Self {
            k,
            lambda,
            temperature,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

impl Default for InterpolationParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            lambda: DEFAULT_LAMBDA,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// Softmax of negative neighbor distances over `temperature`, summed per
/// value. The minimum distance is subtracted before exponentiating.
pub fn knn_distribution(neighbors: &NeighborSet, temperature: f64) -> Result<RetrievalDistribution> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(invalid(format!("temperature must be positive, got {temperature}")));
    }
    if let Some(n) = neighbors.iter().find(|n| !n.distance.is_finite()) {
        return Err(Error::NonFinite(format!(
            "distance {} of entry {}",
            n.distance, n.index
        )));
    }
    let Some(min) = neighbors.iter().map(|n| n.distance as f64).reduce(f64::min) else {
        return Ok(RetrievalDistribution::empty());
    };
    let mut support: Vec<(TokenId, f64)> = Vec::with_capacity(neighbors.len());
    let mut total = 0.0;
    for n in neighbors {
        let w = (-(n.distance as f64 - min) / temperature).exp();
        total += w;
        match support.iter_mut().find(|(t, _)| *t == n.value) {
            Some(slot) => slot.1 += w,
            None => support.push((n.value, w)),
        }
    }
    for (_, p) in &mut support {
        *p /= total;
    }
    support.sort_by_key(|&(t, _)| t);
    Ok(RetrievalDistribution { support })
}

/// `(1 - lambda) * p_nmt + lambda * p_knn`; returns `p_nmt` unchanged when
/// the retrieval distribution is empty.
pub fn interpolate(p_nmt: &[f64], p_knn: &RetrievalDistribution, lambda: f64) -> Result<Vec<f64>> {
    let mut out = p_nmt.to_vec();
    interpolate_in_place(&mut out, p_knn, lambda)?;
    Ok(out)
}

pub fn interpolate_in_place(probs: &mut [f64], p_knn: &RetrievalDistribution, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("base distribution sums to {sum}, not 1")));
    }
    if p_knn.is_empty() {
        return Ok(());
    }
    if let Some((t, _)) = p_knn.iter().find(|&(t, _)| t as usize >= probs.len()) {
        return Err(invalid(format!(
            "retrieved token {t} outside vocabulary of size {}",
            probs.len()
        )));
    }
    for p in probs.iter_mut() {
        *p *= 1.0 - lambda;
    }
    for (t, q) in p_knn.iter() {
        probs[t as usize] += lambda * q;
    }
    Ok(())
}
