//! Base-model abstraction, the deterministic stub model and kNN-augmented
//! beam search.

mod beam;
mod corpus;
mod retriever;
mod stats;
mod stub;
mod vocab;

pub use beam::{
    beam_decode, knn_beam_decode, knn_beam_decode_observed, BeamHypothesis, CacheHitEvent,
    DecodeConfig, DecodeObserver, Decoded, NoObserver, DEFAULT_BEAM, DEFAULT_MAX_LEN,
};
pub use retriever::Retriever;
pub use corpus::{parse_corpus, read_corpus, write_corpus, SentencePair};
pub use stats::{DecodeStats, DecodeSummary};
pub use stub::{StubConfig, StubModel, StubSource, TaskRules};
pub use vocab::{Vocab, BOS, EOS, N_RESERVED, PAD, UNK};

pub(crate) use stub::seeded_rng;

use crate::error::Result;
use crate::vectorstore::TokenId;

/// A translation model exposing its decoder state.
///
/// `prefix` always starts with BOS. `represent` fills the decoder
/// representation for the next position; `step` additionally fills the
/// next-token distribution, which must sum to one.
pub trait BaseModel {
    type Source;

    fn vocab(&self) -> &Vocab;

    fn repr_dim(&self) -> usize;

    fn encode(&self, source: &[TokenId]) -> Result<Self::Source>;

    fn represent(&self, source: &Self::Source, prefix: &[TokenId], repr: &mut [f32]);

    fn step(&self, source: &Self::Source, prefix: &[TokenId], repr: &mut [f32], probs: &mut [f64]);
}
