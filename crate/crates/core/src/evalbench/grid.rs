use serde::{Deserialize, Serialize};

use super::corpus_bleu;
use crate::decoder::{knn_beam_decode, BaseModel, DecodeConfig, Decoded, Retriever, SentencePair};
use crate::error::{invalid, Error, Result};
use crate::vectorstore::TokenId;

/// Decodes the sources of `corpus` and scores them against its targets.
pub fn evaluate_bleu<M: BaseModel>(
    model: &M,
    retriever: Option<&Retriever>,
    corpus: &[SentencePair],
    cfg: &DecodeConfig,
) -> Result<(f64, Decoded)> {
    if corpus.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    let sources: Vec<Vec<TokenId>> = corpus.iter().map(|p| p.source.clone()).collect();
    let refs: Vec<Vec<TokenId>> = corpus.iter().map(|p| p.target.clone()).collect();
    let decoded = knn_beam_decode(model, &sources, retriever, cfg)?;
    Ok((corpus_bleu(&decoded.translations, &refs)?, decoded))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub k: usize,
    pub lambda: f64,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GridRow,
    pub table: Vec<GridRow>,
}

/// Exhaustive search over `k_grid × lambda_grid` by validation BLEU. Ties go
/// to the smaller k, then the smaller lambda.
pub fn grid_search<M: BaseModel>(
    model: &M,
    retriever: &Retriever,
    valid: &[SentencePair],
    k_grid: &[usize],
    lambda_grid: &[f64],
    base: &DecodeConfig,
) -> Result<GridResult> {
    if k_grid.is_empty() || lambda_grid.is_empty() {
        return Err(invalid("grid search needs at least one k and one lambda"));
    }
    let mut table = Vec::with_capacity(k_grid.len() * lambda_grid.len());
    for &k in k_grid {
        for &lambda in lambda_grid {
            let mut cfg = base.clone();
            cfg.params.k = k;
            cfg.params.lambda = lambda;
            let (bleu, _) = evaluate_bleu(model, Some(retriever), valid, &cfg)?;
            table.push(GridRow { k, lambda, bleu });
        }
    }
    let best = *table
        .iter()
        .reduce(|best, row| if better(row, best) { row } else { best })
        .expect("non-empty grid");
    Ok(GridResult { best, table })
}

fn better(a: &GridRow, b: &GridRow) -> bool {
    a.bleu > b.bleu || (a.bleu == b.bleu && (a.k, a.lambda) < (b.k, b.lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub tau: f64,
    pub bleu: f64,
    pub search_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauTuning {
    pub tau: f64,
    /// Validation BLEU of the same configuration without a cache.
    pub reference_bleu: f64,
    pub table: Vec<TauRow>,
}

/// Largest candidate threshold whose validation BLEU stays within `margin`
/// of decoding without the cache; 0 when none does.
pub fn tune_tau<M: BaseModel>(
    model: &M,
    retriever: &Retriever,
    valid: &[SentencePair],
    base: &DecodeConfig,
    candidates: &[f64],
    margin: f64,
) -> Result<TauTuning> {
    if candidates.is_empty() {
        return Err(invalid("no cache thresholds to try"));
    }
    let no_cache = DecodeConfig {
        cache_tau: None,
        ..base.clone()
    };
    let (reference_bleu, _) = evaluate_bleu(model, Some(retriever), valid, &no_cache)?;
    let mut table = Vec::with_capacity(candidates.len());
    for &tau in candidates {
        let cfg = DecodeConfig {
            cache_tau: Some(tau),
            ..base.clone()
        };
        let (bleu, decoded) = evaluate_bleu(model, Some(retriever), valid, &cfg)?;
        let s = &decoded.stats;
        let search_fraction = if s.retrieval_steps == 0 {
            0.0
        } else {
            s.searches as f64 / s.retrieval_steps as f64
        };
        table.push(TauRow {
            tau,
            bleu,
            search_fraction,
        });
    }
    let tau = table
        .iter()
        .filter(|r| r.bleu >= reference_bleu - margin)
        .map(|r| r.tau)
        .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.max(t))))
        .unwrap_or(0.0);
    Ok(TauTuning {
        tau,
        reference_bleu,
        table,
    })
}
