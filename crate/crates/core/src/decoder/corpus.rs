//! Parallel corpora in the tab-separated text format: one pair per line,
//! `source<TAB>target`, tokens separated by whitespace.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Vocab;
use crate::error::{Error, Result};
use crate::vectorstore::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

pub fn parse_corpus(text: &str, vocab: &Vocab) -> Result<Vec<SentencePair>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: "missing tab separator".into(),
        })?;
        pairs.push(SentencePair {
            source: vocab.encode(src),
            target: vocab.encode(tgt),
        });
    }
    Ok(pairs)
}

pub fn read_corpus(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Vec<SentencePair>> {
    parse_corpus(&fs::read_to_string(path)?, vocab)
}

pub fn write_corpus(path: impl AsRef<Path>, pairs: &[SentencePair], vocab: &Vocab) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in pairs {
        writeln!(w, "{}\t{}", vocab.decode(&p.source), vocab.decode(&p.target))?;
    }
    w.flush()?;
    Ok(())
}
