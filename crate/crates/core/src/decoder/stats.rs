use std::ops::AddAssign;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Counters collected while decoding. All counts are per hypothesis-step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeStats {
    pub sentences: usize,
    /// Base-model steps, one per live hypothesis per position.
    pub steps: usize,
    /// Steps at which retrieval could have been performed.
    pub retrieval_steps: usize,
    pub searches: usize,
    pub cache_hits: usize,
    pub gate_skips: usize,
    /// Tokens in the returned translations, EOS excluded.
    pub generated_tokens: usize,
    pub peak_cache_entries: usize,
    pub elapsed: Duration,
}

impl DecodeStats {
    /// Equality ignoring wall-clock time.
    pub fn same_counts(&self, other: &Self) -> bool {
        Self { elapsed: Duration::ZERO, ..*self } == Self { elapsed: Duration::ZERO, ..*other }
    }

    pub fn summary(&self) -> Result<DecodeSummary> {
        let secs = self.elapsed.as_secs_f64();
        if secs <= 0.0 {
            return Err(invalid("elapsed time is zero"));
        }
        let frac = |n: usize| {
            if self.retrieval_steps == 0 {
                0.0
            } else {
                n as f64 / self.retrieval_steps as f64
            }
        };
        Ok(DecodeSummary {
            tokens_per_second: self.generated_tokens as f64 / secs,
            search_fraction: frac(self.searches),
            cache_hit_fraction: frac(self.cache_hits),
            gate_skip_fraction: frac(self.gate_skips),
        })
    }
}

impl AddAssign for DecodeStats {
    fn add_assign(&mut self, o: Self) {
        self.sentences += o.sentences;
        self.steps += o.steps;
        self.retrieval_steps += o.retrieval_steps;
        self.searches += o.searches;
        self.cache_hits += o.cache_hits;
        self.gate_skips += o.gate_skips;
        self.generated_tokens += o.generated_tokens;
        self.peak_cache_entries = self.peak_cache_entries.max(o.peak_cache_entries);
        self.elapsed += o.elapsed;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeSummary {
    pub tokens_per_second: f64,
    /// Searches over retrieval-eligible steps.
    pub search_fraction: f64,
    pub cache_hit_fraction: f64,
    pub gate_skip_fraction: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_and_rate() {
        let stats = DecodeStats {
            retrieval_steps: 100,
            searches: 43,
            cache_hits: 57,
            generated_tokens: 500,
            elapsed: Duration::from_secs(2),
            ..Default::default()
        };
        let s = stats.summary().unwrap();
        assert!((s.search_fraction - 0.43).abs() < 1e-12);
        assert!((s.cache_hit_fraction - 0.57).abs() < 1e-12);
        assert!((s.tokens_per_second - 250.0).abs() < 1e-9);
    }

    #[test]
    fn zero_elapsed_is_an_error() {
        assert!(DecodeStats::default().summary().is_err());
    }
}
