//! Nearest-neighbor augmented beam-search decoding with datastore pruning,
//! PCA compression, a retrieval-distribution cache and an adaptive gate.

mod binio;
pub mod cache;
pub mod compression;
pub mod decoder;
pub mod error;
pub mod evalbench;
pub mod retrieval;
pub mod vectorstore;

pub use error::{Error, Result};
