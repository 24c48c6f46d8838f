use std::collections::HashMap;

use crate::vectorstore::TokenId;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
pub const PAD: TokenId = 3;
pub const N_RESERVED: usize = 4;

const RESERVED: [&str; N_RESERVED] = ["<s>", "</s>", "<unk>", "<pad>"];

/// Bidirectional token table. Ids `0..4` are BOS, EOS, UNK and PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().map(Into::into));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, index }
    }

    /// `size` entries: the reserved symbols followed by `w4`, `w5`, ...
    pub fn synthetic(size: usize) -> Self {
        Self::from_words((N_RESERVED..size.max(N_RESERVED)).map(|i| format!("w{i}")))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    /// Unknown words map to UNK.
    pub fn id(&self, word: &str) -> TokenId {
        self.lookup(word).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn encode(&self, sentence: &str) -> Vec<TokenId> {
        sentence.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn is_content(id: TokenId) -> bool {
        id as usize >= N_RESERVED
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_unknowns() {
        let v = Vocab::synthetic(10);
        assert_eq!(v.len(), 10);
        assert_eq!(v.token(BOS), "<s>");
        assert_eq!(v.token(EOS), "</s>");
        assert_eq!(v.id("w7"), 7);
        assert_eq!(v.id("nope"), UNK);
        assert_eq!(v.encode("w4 zz w9"), vec![4, UNK, 9]);
        assert_eq!(v.decode(&[4, 9]), "w4 w9");
    }
}
