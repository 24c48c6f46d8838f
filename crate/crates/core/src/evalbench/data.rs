//! Synthetic multi-domain parallel corpora.
//!
//! Source sentences are Zipf-distributed token sequences shared by every
//! domain. A domain's targets follow the generic task rules with a fraction
//! of the substitution rules rewritten, so each domain has its own lexical
//! choices that only an in-domain datastore can supply.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::decoder::{seeded_rng, SentencePair, TaskRules, N_RESERVED};
use crate::error::{invalid, Result};
use crate::vectorstore::TokenId;

const SENTENCE_SALT: u64 = 0x53454e54;
const DOMAIN_SALT: u64 = 0x444f4d;
const MIN_VOCAB: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomainSpec {
    pub seed: u64,
    pub vocab_size: usize,
    pub n_domains: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Inclusive source length range.
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of substitution rules each domain rewrites.
    pub domain_shift: f64,
    pub zipf_exponent: f64,
}

impl Default for SyntheticDomainSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_size: 512,
            n_domains: 4,
            n_train: 50_000,
            n_valid: 200,
            n_test: 500,
            min_len: 6,
            max_len: 18,
            domain_shift: 0.4,
            zipf_exponent: 1.0,
        }
    }
}

impl SyntheticDomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < MIN_VOCAB {
            return Err(invalid(format!(
                "vocab_size must be at least {MIN_VOCAB}, got {}",
                self.vocab_size
            )));
        }
        if self.n_domains == 0 || self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return Err(invalid("domain count and split sizes must be at least 1"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(invalid(format!(
                "invalid sentence length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.domain_shift) {
            return Err(invalid(format!("domain_shift {} outside [0, 1]", self.domain_shift)));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(invalid("zipf_exponent must be finite and non-negative"));
        }
        let content = (self.vocab_size - N_RESERVED) as f64;
        let possible = content.powi(self.min_len.min(8) as i32);
        let needed = (self.n_train + self.n_valid + self.n_test) as f64;
        if possible < 2.0 * needed {
            return Err(invalid("too few distinct sentences for the requested split sizes"));
        }
        Ok(())
    }

    /// The rules of domain `d`: the generic rules with `domain_shift` of
    /// them rewritten.
    pub fn domain_rules(&self, d: usize) -> Result<TaskRules> {
        let base = TaskRules::generate(self.seed, self.vocab_size)?;
        Ok(base.rewritten(self.domain_shift, self.seed ^ DOMAIN_SALT.wrapping_mul(d as u64 + 1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainCorpus {
    pub name: String,
    pub rules: TaskRules,
    pub train: Vec<SentencePair>,
    pub valid: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
}

/// Distinct source sentences for all splits, drawn once.
fn sample_sources(spec: &SyntheticDomainSpec) -> Result<Vec<Vec<TokenId>>> {
    let content = spec.vocab_size - N_RESERVED;
    let mut rng = seeded_rng(spec.seed, SENTENCE_SALT);
    let mut rank_to_token: Vec<TokenId> = (N_RESERVED as TokenId..spec.vocab_size as TokenId).collect();
    rank_to_token.shuffle(&mut rng);
    let zipf = Zipf::new(content as f64, spec.zipf_exponent).map_err(|e| invalid(e.to_string()))?;
    let total = spec.n_train + spec.n_valid + spec.n_test;
    let mut seen = HashSet::with_capacity(total);
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let sentence: Vec<TokenId> = (0..len)
            .map(|_| rank_to_token[zipf.sample(&mut rng) as usize - 1])
            .collect();
        if seen.insert(sentence.clone()) {
            out.push(sentence);
        }
    }
    Ok(out)
}

/// Domains named `domain-0`, `domain-1`, ...; deterministic in the spec.
pub fn generate_domains(spec: &SyntheticDomainSpec) -> Result<Vec<DomainCorpus>> {
    spec.validate()?;
    let sources = sample_sources(spec)?;
    let (train, rest) = sources.split_at(spec.n_train);
    let (valid, test) = rest.split_at(spec.n_valid);
    (0..spec.n_domains)
        .map(|d| {
            let rules = spec.domain_rules(d)?;
            let pairs = |split: &[Vec<TokenId>]| -> Vec<SentencePair> {
                split
                    .iter()
                    .map(|s| SentencePair {
                        source: s.clone(),
                        target: rules.translate(s),
                    })
                    .collect()
            };
            Ok(DomainCorpus {
                name: format!("domain-{d}"),
                train: pairs(train),
                valid: pairs(valid),
                test: pairs(test),
                rules,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticDomainSpec {
        SyntheticDomainSpec {
            n_train: 300,
            n_valid: 20,
            n_test: 30,
            vocab_size: 64,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_disjoint() {
        let a = generate_domains(&small()).unwrap();
        assert_eq!(a, generate_domains(&small()).unwrap());
        assert_eq!(a.len(), 4);
        let d = &a[0];
        let mut all: HashSet<&Vec<TokenId>> = HashSet::new();
        for p in d.train.iter().chain(&d.valid).chain(&d.test) {
            assert!(all.insert(&p.source));
            assert!((6..=18).contains(&p.source.len()));
            assert_eq!(p.target.len(), p.source.len());
        }
    }

    #[test]
    fn zero_shift_gives_identical_domains() {
        let spec = SyntheticDomainSpec { domain_shift: 0.0, ..small() };
        let domains = generate_domains(&spec).unwrap();
        for d in &domains[1..] {
            assert_eq!(d.train, domains[0].train);
            assert_eq!(d.test, domains[0].test);
        }
    }

    #[test]
    fn shifted_domains_differ() {
        let domains = generate_domains(&small()).unwrap();
        assert_ne!(domains[0].train, domains[1].train);
        assert_eq!(domains[0].train[0].source, domains[1].train[0].source);
    }

    #[test]
    fn rejects_tiny_vocab() {
        assert!(generate_domains(&SyntheticDomainSpec { vocab_size: 15, ..small() }).is_err());
        assert!(generate_domains(&SyntheticDomainSpec { n_test: 0, ..small() }).is_err());
    }
}
