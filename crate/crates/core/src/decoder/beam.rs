//! Beam search whose per-step distribution interpolates the base model with
//! retrieval from a datastore, optionally gated and cached.

use std::time::Instant;

use super::stats::DecodeStats;
use super::{BaseModel, Retriever, BOS, EOS};
use crate::cache::{gate_features, AdaptiveGate, DistributionCache};
use crate::error::{check_dim, invalid, Result};
use crate::retrieval::{interpolate_in_place, knn_distribution, InterpolationParams, RetrievalDistribution};
use crate::vectorstore::TokenId;

pub const DEFAULT_BEAM: usize = 5;
pub const DEFAULT_MAX_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Maximum number of generated tokens, EOS excluded.
    pub max_len: usize,
    pub params: InterpolationParams,
    /// Cache threshold; `None` disables the cache.
    pub cache_tau: Option<f64>,
    pub gate: Option<AdaptiveGate>,
    pub batch_size: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: DEFAULT_BEAM,
            max_len: DEFAULT_MAX_LEN,
            params: InterpolationParams::default(),
            cache_tau: None,
            gate: None,
            batch_size: 1,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_len == 0 || self.batch_size == 0 {
            return Err(invalid("beam size, max length and batch size must be positive"));
        }
        self.params.validate()?;
        if let Some(tau) = self.cache_tau {
            if tau.is_nan() || tau < 0.0 {
                return Err(invalid(format!("cache threshold must be non-negative, got {tau}")));
            }
        }
        Ok(())
    }

    /// Whether a step consults the datastore at all.
    fn retrieves(&self) -> bool {
        self.gate.is_some() || self.params.lambda > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// Generated tokens, BOS excluded.
    pub tokens: Vec<TokenId>,
    pub log_score: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub translations: Vec<Vec<TokenId>>,
    /// Length-normalized log score of each returned translation.
    pub scores: Vec<f64>,
    pub stats: DecodeStats,
}

/// Details of a cache hit, for instrumentation.
#[derive(Debug, Clone, Copy)]
pub struct CacheHitEvent<'a> {
    pub query: &'a [f32],
    pub cached_query: &'a [f32],
    pub distance: f64,
    pub dist: &'a RetrievalDistribution,
}

/// Hooks called during decoding.
pub trait DecodeObserver {
    fn on_search(&mut self, _query: &[f32], _dist: &RetrievalDistribution) {}
    fn on_cache_hit(&mut self, _event: &CacheHitEvent<'_>) {}
}

pub struct NoObserver;

impl DecodeObserver for NoObserver {}

/// Plain beam search with the base model only.
pub fn beam_decode<M: BaseModel>(
    model: &M,
    sources: &[Vec<TokenId>],
    beam_size: usize,
    max_len: usize,
) -> Result<Decoded> {
    let cfg = DecodeConfig {
        beam_size,
        max_len,
        ..DecodeConfig::default()
    };
    knn_beam_decode(model, sources, None, &cfg)
}

pub fn knn_beam_decode<M: BaseModel>(
    model: &M,
    sources: &[Vec<TokenId>],
    retriever: Option<&Retriever>,
    cfg: &DecodeConfig,
) -> Result<Decoded> {
    knn_beam_decode_observed(model, sources, retriever, cfg, &mut NoObserver)
}

pub fn knn_beam_decode_observed<M: BaseModel, O: DecodeObserver>(
    model: &M,
    sources: &[Vec<TokenId>],
    retriever: Option<&Retriever>,
    cfg: &DecodeConfig,
    observer: &mut O,
) -> Result<Decoded> {
    cfg.validate()?;
    let start = Instant::now();
    let retriever = retriever.filter(|_| cfg.retrieves());
    if let Some(r) = retriever {
        check_dim(model.repr_dim(), r.input_dim())?;
        r.datastore().check_vocab(model.vocab().len())?;
        if let Some(g) = &cfg.gate {
            check_dim(r.query_dim() + 2, g.feature_dim())?;
        }
    }
    let mut out = Decoded {
        translations: Vec::with_capacity(sources.len()),
        scores: Vec::with_capacity(sources.len()),
        stats: DecodeStats::default(),
    };
    let mut session = Session::new(model, retriever, cfg)?;
    for batch in sources.chunks(cfg.batch_size) {
        session.decode_batch(batch, &mut out, observer)?;
    }
    out.stats.sentences = sources.len();
    out.stats.elapsed = start.elapsed();
    Ok(out)
}

struct Hyp {
    tokens: Vec<TokenId>,
    score: f64,
}

struct Sentence<S> {
    source: S,
    live: Vec<Hyp>,
    finished: Vec<(Vec<TokenId>, f64)>,
}

impl<S> Sentence<S> {
    fn done(&self, beam: usize) -> bool {
        self.live.is_empty() || self.finished.len() >= beam
    }
}

/// Extension candidate: (score, hypothesis, token).
type Candidate = (f64, usize, TokenId);

/// Orders by descending score, then hypothesis, then token.
fn candidate_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

/// The `n` best one-token extensions across hypotheses with the given
/// scores and next-token distributions.
pub(crate) fn top_candidates(scores: &[f64], probs: &[&[f64]], n: usize) -> Vec<Candidate> {
    let mut all: Vec<Candidate> = Vec::with_capacity(n * scores.len());
    let mut local: Vec<(f64, TokenId)> = Vec::with_capacity(n + 1);
    for (h, (&score, p)) in scores.iter().zip(probs).enumerate() {
        local.clear();
        for (t, &q) in p.iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            if local.len() == n && q <= local[n - 1].0 {
                continue;
            }
            let pos = local.iter().position(|&(lq, _)| q > lq).unwrap_or(local.len());
            local.insert(pos, (q, t as TokenId));
            local.truncate(n);
        }
        all.extend(local.iter().map(|&(q, t)| (score + q.ln(), h, t)));
    }
    all.sort_by(candidate_order);
    all.truncate(n);
    all
}

struct Session<'a, M: BaseModel> {
    model: &'a M,
    retriever: Option<&'a Retriever>,
    cfg: &'a DecodeConfig,
    cache: Option<DistributionCache>,
    vocab: usize,
    rdim: usize,
    qdim: usize,
    reprs: Vec<f32>,
    probs: Vec<f64>,
    queries: Vec<f32>,
    features: Vec<f32>,
}

impl<'a, M: BaseModel> Session<'a, M> {
    fn new(model: &'a M, retriever: Option<&'a Retriever>, cfg: &'a DecodeConfig) -> Result<Self> {
        let qdim = retriever.map_or(0, Retriever::query_dim);
        let cache = match (retriever, cfg.cache_tau) {
            (Some(_), Some(tau)) => Some(DistributionCache::new(qdim, tau)?),
            _ => None,
        };
        Ok(Self {
            model,
            retriever,
            cfg,
            cache,
            vocab: model.vocab().len(),
            rdim: model.repr_dim(),
            qdim,
            reprs: Vec::new(),
            probs: Vec::new(),
            queries: Vec::new(),
            features: Vec::new(),
        })
    }

    fn decode_batch<O: DecodeObserver>(
        &mut self,
        batch: &[Vec<TokenId>],
        out: &mut Decoded,
        observer: &mut O,
    ) -> Result<()> {
        let beam = self.cfg.beam_size;
        let mut sentences = Vec::with_capacity(batch.len());
        for src in batch {
            sentences.push(Sentence {
                source: self.model.encode(src)?,
                live: vec![Hyp {
                    tokens: vec![BOS],
                    score: 0.0,
                }],
                finished: Vec::new(),
            });
        }
        if let Some(c) = &mut self.cache {
            c.clear();
        }
        let mut active: Vec<(usize, usize)> = Vec::new();
        for _ in 0..self.cfg.max_len {
            active.clear();
            for (s, sent) in sentences.iter().enumerate() {
                if !sent.done(beam) {
                    active.extend((0..sent.live.len()).map(|h| (s, h)));
                }
            }
            if active.is_empty() {
                break;
            }
            self.score_step(&sentences, &active, &mut out.stats, observer)?;
            let mut row = 0;
            for sent in sentences.iter_mut() {
                if sent.done(beam) {
                    continue;
                }
                let n = sent.live.len();
                let probs: Vec<&[f64]> = (row..row + n)
                    .map(|r| &self.probs[r * self.vocab..(r + 1) * self.vocab])
                    .collect();
                row += n;
                expand(sent, &probs, beam, self.cfg.max_len);
            }
        }
        for sent in sentences {
            let mut finished = sent.finished;
            // Hypotheses still live at the length limit are finalized as is.
            for h in sent.live {
                if finished.len() >= beam {
                    break;
                }
                let len = h.tokens.len() - 1;
                finished.push((h.tokens[1..].to_vec(), h.score / len.max(1) as f64));
            }
            let best = finished
                .into_iter()
                .reduce(|best, x| if x.1 > best.1 { x } else { best })
                .expect("at least one hypothesis");
            out.stats.generated_tokens += best.0.len();
            out.translations.push(best.0);
            out.scores.push(best.1);
        }
        Ok(())
    }

    /// Fills `self.probs` with the interpolated next-token distribution of
    /// every active hypothesis.
    fn score_step<O: DecodeObserver>(
        &mut self,
        sentences: &[Sentence<M::Source>],
        active: &[(usize, usize)],
        stats: &mut DecodeStats,
        observer: &mut O,
    ) -> Result<()> {
        let n = active.len();
        let (rdim, vocab, qdim) = (self.rdim, self.vocab, self.qdim);
        self.reprs.resize(n * rdim, 0.0);
        self.probs.resize(n * vocab, 0.0);
        for (r, &(s, h)) in active.iter().enumerate() {
            let sent = &sentences[s];
            self.model.step(
                &sent.source,
                &sent.live[h].tokens,
                &mut self.reprs[r * rdim..(r + 1) * rdim],
                &mut self.probs[r * vocab..(r + 1) * vocab],
            );
        }
        stats.steps += n;
        let Some(retriever) = self.retriever else {
            return Ok(());
        };
        stats.retrieval_steps += n;
        self.queries.resize(n * qdim, 0.0);
        for r in 0..n {
            retriever.to_query(&self.reprs[r * rdim..(r + 1) * rdim], &mut self.queries[r * qdim..(r + 1) * qdim])?;
        }

        let mut lambdas = vec![self.cfg.params.lambda; n];
        let mut dists: Vec<Option<RetrievalDistribution>> = vec![None; n];
        let mut pending: Vec<usize> = Vec::new();
        for r in 0..n {
            let query = &self.queries[r * qdim..(r + 1) * qdim];
            if let Some(gate) = &self.cfg.gate {
                gate_features(query, &self.probs[r * vocab..(r + 1) * vocab], &mut self.features);
                let lam = gate.lambda(&self.features)?;
                if !gate.should_retrieve(lam) {
                    stats.gate_skips += 1;
                    continue;
                }
                lambdas[r] = lam;
            }
            let hit = match &self.cache {
                Some(cache) => cache.lookup_entry(query)?,
                None => None,
            };
            match hit {
                Some(hit) => {
                    stats.cache_hits += 1;
                    observer.on_cache_hit(&CacheHitEvent {
                        query,
                        cached_query: hit.repr,
                        distance: hit.distance,
                        dist: hit.dist,
                    });
                    dists[r] = Some(hit.dist.clone());
                }
                None => pending.push(r),
            }
        }
        if !pending.is_empty() {
            let mut block = Vec::with_capacity(pending.len() * qdim);
            for &r in &pending {
                block.extend_from_slice(&self.queries[r * qdim..(r + 1) * qdim]);
            }
            let results = retriever.search_batch(&block, self.cfg.params.k)?;
            stats.searches += pending.len();
            for (&r, neighbors) in pending.iter().zip(results) {
                let dist = knn_distribution(&neighbors, self.cfg.params.temperature)?;
                observer.on_search(&self.queries[r * qdim..(r + 1) * qdim], &dist);
                dists[r] = Some(dist);
            }
        }
        if let Some(cache) = &mut self.cache {
            for (r, d) in dists.iter().enumerate() {
                if let Some(d) = d {
                    cache.push(&self.queries[r * qdim..(r + 1) * qdim], d.clone())?;
                }
            }
            stats.peak_cache_entries = stats.peak_cache_entries.max(cache.len());
        }
        for (r, d) in dists.iter().enumerate() {
            if let Some(d) = d {
                interpolate_in_place(&mut self.probs[r * vocab..(r + 1) * vocab], d, lambdas[r])?;
            }
        }
        Ok(())
    }
}

/// One beam step for a sentence: EOS extensions ranked within the top
/// `beam` are finalized, the best `beam` other extensions stay live.
fn expand<S>(sent: &mut Sentence<S>, probs: &[&[f64]], beam: usize, max_len: usize) {
    let scores: Vec<f64> = sent.live.iter().map(|h| h.score).collect();
    let cands = top_candidates(&scores, probs, 2 * beam);
    let mut live = Vec::with_capacity(beam);
    for (rank, &(score, h, token)) in cands.iter().enumerate() {
        let parent = &sent.live[h];
        if token == EOS {
            if rank < beam && sent.finished.len() < beam {
                // Normalized by generated length including EOS.
                let len = parent.tokens.len();
                sent.finished.push((parent.tokens[1..].to_vec(), score / len as f64));
            }
        } else if live.len() < beam {
            let mut tokens = Vec::with_capacity(parent.tokens.len() + 1);
            tokens.extend_from_slice(&parent.tokens);
            tokens.push(token);
            live.push(Hyp { tokens, score });
        }
    }
    // Hypotheses at the length limit are finalized after this step.
    if live.first().is_some_and(|h| h.tokens.len() > max_len) {
        for h in live.drain(..) {
            if sent.finished.len() >= beam {
                break;
            }
            let len = h.tokens.len() - 1;
            sent.finished.push((h.tokens[1..].to_vec(), h.score / len as f64));
        }
    }
    sent.live = live;
}
