//! Deterministic stand-in translation model.
//!
//! The synthetic task translates a source sentence by reordering it with a
//! local swap rule and mapping every token through a substitution table
//! ([`TaskRules`]). The stub model knows the generic rules only. Its decoder
//! representation combines an embedding of the source token currently being
//! translated, hashed features of the last one to three target tokens and a
//! summary of the whole source sentence. Its output distribution is a softmax
//! over a random linear read-out of that representation plus a bias toward the
//! generic rule's prediction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::vocab::{BOS, EOS, N_RESERVED, PAD};
use super::{BaseModel, Vocab};
use crate::error::{invalid, Error, Result};
use crate::vectorstore::{dot_rows, TokenId};

const RULES_SALT: u64 = 0x52554c45;
const TABLE_SALT: u64 = 0x5441424c;
const SRC_UNIGRAM: u64 = 0x11;
const SRC_BIGRAM: u64 = 0x12;
const TGT_NGRAM: [u64; 3] = [0x21, 0x22, 0x23];

/// Fraction of content tokens that swap places with their right neighbor.
const SWAP_RATE: f64 = 0.15;

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn feature_hash(seed: u64, salt: u64, tokens: &[TokenId]) -> u64 {
    tokens
        .iter()
        .fold(mix64(seed ^ salt.rotate_left(17)), |h, &t| mix64(h ^ t as u64))
}

pub(crate) fn seeded_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(salt)))
}

/// Token substitution table plus the set of tokens that trigger a swap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRules {
    mapping: Vec<TokenId>,
    swaps: Vec<bool>,
}

impl TaskRules {
    pub fn generate(seed: u64, vocab_size: usize) -> Result<Self> {
        if vocab_size <= N_RESERVED + 1 {
            return Err(invalid(format!("vocabulary of {vocab_size} has no room for content tokens")));
        }
        let mut rng = seeded_rng(seed, RULES_SALT);
        let mut targets: Vec<TokenId> = (N_RESERVED as TokenId..vocab_size as TokenId).collect();
        targets.shuffle(&mut rng);
        let mut mapping: Vec<TokenId> = (0..N_RESERVED as TokenId).collect();
        mapping.extend(targets);
        let swaps = (0..vocab_size)
            .map(|i| i >= N_RESERVED && rng.random_bool(SWAP_RATE))
            .collect();
        Ok(Self { mapping, swaps })
    }

    pub fn vocab_size(&self) -> usize {
        self.mapping.len()
    }

    /// Copy with `fraction` of the substitution rules redirected to a
    /// different target, chosen by `seed`.
    pub fn rewritten(&self, fraction: f64, seed: u64) -> Self {
        let content: Vec<usize> = (N_RESERVED..self.vocab_size()).collect();
        let n = (fraction.clamp(0.0, 1.0) * content.len() as f64).round() as usize;
        let mut rng = seeded_rng(seed, RULES_SALT ^ 0xD0);
        let mut chosen = content.clone();
        chosen.shuffle(&mut rng);
        let mut mapping = self.mapping.clone();
        for &s in &chosen[..n] {
            loop {
                let t = rng.random_range(N_RESERVED..self.vocab_size()) as TokenId;
                if t != self.mapping[s] {
                    mapping[s] = t;
                    break;
                }
            }
        }
        Self {
            mapping,
            swaps: self.swaps.clone(),
        }
    }

    pub fn map(&self, token: TokenId) -> TokenId {
        self.mapping.get(token as usize).copied().unwrap_or(token)
    }

    pub fn swaps(&self, token: TokenId) -> bool {
        self.swaps.get(token as usize).copied().unwrap_or(false)
    }

    /// Source order after applying the left-to-right pairwise swaps.
    pub fn reorder(&self, source: &[TokenId]) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(source.len());
        let mut i = 0;
        while i < source.len() {
            if i + 1 < source.len() && self.swaps(source[i]) {
                out.push(source[i + 1]);
                out.push(source[i]);
                i += 2;
            } else {
                out.push(source[i]);
                i += 1;
            }
        }
        out
    }

    pub fn translate(&self, source: &[TokenId]) -> Vec<TokenId> {
        self.reorder(source).into_iter().map(|t| self.map(t)).collect()
    }

    /// Number of content tokens whose substitution differs from `other`.
    pub fn differing_rules(&self, other: &Self) -> usize {
        self.mapping
            .iter()
            .zip(&other.mapping)
            .filter(|(a, b)| a != b)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub repr_dim: usize,
    /// Rows in the hashed n-gram feature table.
    pub hash_rows: usize,
    /// Weight of the embedding of the source token being translated.
    pub align_weight: f32,
    /// Weights of the hashed last 1-, 2- and 3-gram of the target prefix.
    pub ngram_weights: [f32; 3],
    pub summary_weight: f32,
    /// Spectrum decay of the aligned-token embeddings across dimensions.
    pub spectrum_decay: f32,
    /// Scale of the random read-out logits.
    pub readout_scale: f32,
    /// Logit bonus on the generic rule's prediction.
    pub rule_bias: f32,
}

impl StubConfig {
    pub fn new(seed: u64, vocab_size: usize) -> Self {
        Self {
            seed,
            vocab_size,
            repr_dim: 64,
            hash_rows: 1 << 14,
            align_weight: 5.0,
            ngram_weights: [1.2, 0.9, 0.6],
            summary_weight: 1.0,
            spectrum_decay: 0.1,
            readout_scale: 1.0,
            rule_bias: 8.0,
        }
    }
}

/// Encoded source: the unit-norm sentence summary plus the source tokens in
/// the order the generic rules translate them.
#[derive(Debug, Clone, PartialEq)]
pub struct StubSource {
    pub summary: Vec<f32>,
    pub aligned: Vec<TokenId>,
}

#[derive(Debug, Clone)]
pub struct StubModel {
    cfg: StubConfig,
    vocab: Vocab,
    rules: TaskRules,
    hash_table: Vec<f32>,
    align_table: Vec<f32>,
    readout: Vec<f32>,
}

impl StubModel {
    pub fn new(cfg: StubConfig) -> Result<Self> {
        if cfg.repr_dim == 0 || cfg.hash_rows == 0 {
            return Err(invalid("repr_dim and hash_rows must be positive"));
        }
        let rules = TaskRules::generate(cfg.seed, cfg.vocab_size)?;
        let dim = cfg.repr_dim;
        let unit = 1.0 / (dim as f32).sqrt();
        let mut rng = seeded_rng(cfg.seed, TABLE_SALT);
        let mut gaussians = |n: usize, scale: &dyn Fn(usize) -> f32| -> Vec<f32> {
            (0..n)
                .map(|i| rng.sample::<f32, _>(StandardNormal) * scale(i % dim))
                .collect()
        };
        let hash_table = gaussians(cfg.hash_rows * dim, &|_| unit);
        // Geometric spectrum, normalized to unit expected squared norm.
        let decay = cfg.spectrum_decay.clamp(1e-6, 1.0) as f64;
        let ratio = decay.powf(1.0 / dim as f64);
        let total: f64 = (0..dim).map(|j| ratio.powi(j as i32)).sum();
        let spectrum: Vec<f32> = (0..dim)
            .map(|j| (ratio.powi(j as i32) / total).sqrt() as f32)
            .collect();
        let align_table = gaussians(cfg.vocab_size * dim, &|j| spectrum[j]);
        let readout = gaussians(cfg.vocab_size * dim, &|_| unit);
        Ok(Self {
            vocab: Vocab::synthetic(cfg.vocab_size),
            cfg,
            rules,
            hash_table,
            align_table,
            readout,
        })
    }

    pub fn config(&self) -> &StubConfig {
        &self.cfg
    }

    pub fn rules(&self) -> &TaskRules {
        &self.rules
    }

    fn hash_row(&self, h: u64) -> &[f32] {
        let dim = self.cfg.repr_dim;
        let r = (h % self.cfg.hash_rows as u64) as usize;
        &self.hash_table[r * dim..(r + 1) * dim]
    }

    fn aligned_token(source: &StubSource, prefix: &[TokenId]) -> TokenId {
        source.aligned.get(prefix.len() - 1).copied().unwrap_or(EOS)
    }

    fn fill_repr(&self, source: &StubSource, prefix: &[TokenId], repr: &mut [f32]) {
        let dim = self.cfg.repr_dim;
        let a = Self::aligned_token(source, prefix) as usize;
        let emb = &self.align_table[a * dim..(a + 1) * dim];
        let w = self.cfg.align_weight;
        let c = self.cfg.summary_weight;
        for ((r, e), s) in repr.iter_mut().zip(emb).zip(&source.summary) {
            *r = w * e + c * s;
        }
        for (n, (&weight, &salt)) in self.cfg.ngram_weights.iter().zip(&TGT_NGRAM).enumerate() {
            let gram = last_ngram(prefix, n + 1);
            let row = self.hash_row(feature_hash(self.cfg.seed, salt, &gram));
            for (r, x) in repr.iter_mut().zip(row) {
                *r += weight * x;
            }
        }
    }
}

/// Last `n` tokens, left-padded with BOS.
fn last_ngram(prefix: &[TokenId], n: usize) -> Vec<TokenId> {
    let mut gram = vec![BOS; n.saturating_sub(prefix.len())];
    gram.extend_from_slice(&prefix[prefix.len().saturating_sub(n)..]);
    gram
}

impl BaseModel for StubModel {
    type Source = StubSource;

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn repr_dim(&self) -> usize {
        self.cfg.repr_dim
    }

    fn encode(&self, source: &[TokenId]) -> Result<StubSource> {
        if source.is_empty() {
            return Err(Error::Empty("source sentence"));
        }
        let dim = self.cfg.repr_dim;
        let mut acc = vec![0f64; dim];
        let mut add = |row: &[f32]| {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += *x as f64;
            }
        };
        for (i, &tok) in source.iter().enumerate() {
            add(self.hash_row(feature_hash(self.cfg.seed, SRC_UNIGRAM, &[tok])));
            if i + 1 < source.len() {
                add(self.hash_row(feature_hash(self.cfg.seed, SRC_BIGRAM, &source[i..i + 2])));
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        let summary = if norm > 0.0 {
            acc.iter().map(|x| (x / norm) as f32).collect()
        } else {
            let mut v = vec![0f32; dim];
            v[0] = 1.0;
            v
        };
        Ok(StubSource {
            summary,
            aligned: self.rules.reorder(source),
        })
    }

    fn represent(&self, source: &StubSource, prefix: &[TokenId], repr: &mut [f32]) {
        debug_assert_eq!(prefix.first(), Some(&BOS));
        self.fill_repr(source, prefix, repr);
    }

    fn step(&self, source: &StubSource, prefix: &[TokenId], repr: &mut [f32], probs: &mut [f64]) {
        self.represent(source, prefix, repr);
        let dim = self.cfg.repr_dim;
        let favored = self.rules.map(Self::aligned_token(source, prefix)) as usize;
        let mut dots = vec![0f32; probs.len()];
        dot_rows(repr, &self.readout[..probs.len() * dim], &mut dots);
        let mut max = f64::NEG_INFINITY;
        for (v, (p, d)) in probs.iter_mut().zip(dots).enumerate() {
            if v as TokenId == BOS || v as TokenId == PAD {
                *p = f64::NEG_INFINITY;
                continue;
            }
            let mut logit = (self.cfg.readout_scale * d) as f64;
            if v == favored {
                logit += self.cfg.rule_bias as f64;
            }
            *p = logit;
            max = max.max(logit);
        }
        let mut total = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            total += *p;
        }
        for p in probs.iter_mut() {
            *p /= total;
        }
    }
}
