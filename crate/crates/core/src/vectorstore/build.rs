use super::{Datastore, TokenId};
use crate::decoder::{BaseModel, SentencePair, BOS, EOS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Also store the position after the last target token with value EOS.
    pub append_eos: bool,
}

/// One entry per target token under teacher forcing: the key is the
/// decoder representation given the true prefix, the value the token.
pub fn build_datastore<M: BaseModel>(corpus: &[SentencePair], model: &M) -> Result<Datastore> {
    build_datastore_with(corpus, model, BuildOptions::default())
}

pub fn build_datastore_with<M: BaseModel>(
    corpus: &[SentencePair],
    model: &M,
    opts: BuildOptions,
) -> Result<Datastore> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let vocab_size = model.vocab().len();
    for (i, pair) in corpus.iter().enumerate() {
        if let Some(&token) = pair.target.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::TokenOutOfVocab {
                sentence: i,
                token,
                vocab_size,
            });
        }
    }
    let dim = model.repr_dim();
    let total: usize = corpus
        .iter()
        .map(|p| p.target.len() + usize::from(opts.append_eos))
        .sum();
    let mut keys = Vec::with_capacity(total * dim);
    let mut values = Vec::with_capacity(total);
    let mut repr = vec![0f32; dim];
    let mut prefix: Vec<TokenId> = Vec::new();
    for pair in corpus {
        let source = model.encode(&pair.source)?;
        prefix.clear();
        prefix.push(BOS);
        let eos = opts.append_eos.then_some(EOS);
        for &token in pair.target.iter().chain(eos.iter()) {
            model.represent(&source, &prefix, &mut repr);
            keys.extend_from_slice(&repr);
            values.push(token);
            prefix.push(token);
        }
    }
    Datastore::new(dim, keys, values)
}
