use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cache::AdaptiveGate;
use crate::compression::{fit_pca, prune_with, PruneOptions, PruneReport};
use crate::decoder::{knn_beam_decode, BaseModel, DecodeConfig, Retriever};
use crate::error::{invalid, Error, Result};
use crate::vectorstore::{Datastore, SearchBackend, TokenId};

pub const DEFAULT_PRUNE_K: usize = 2;
pub const DEFAULT_PCA_DIM: usize = 256;
pub const DEFAULT_TAU: f64 = 6.0;

/// A decoding configuration benchmarked as one row of the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Base,
    Knn,
    Cache,
    Pca,
    Pruning,
    PcaCache,
    PcaPruning,
    PcaCachePruning,
    Adaptive,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Base,
        Method::Knn,
        Method::Cache,
        Method::Pca,
        Method::Pruning,
        Method::PcaCache,
        Method::PcaPruning,
        Method::PcaCachePruning,
        Method::Adaptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Knn => "knn",
            Method::Cache => "cache",
            Method::Pca => "pca",
            Method::Pruning => "pruning",
            Method::PcaCache => "pca+cache",
            Method::PcaPruning => "pca+pruning",
            Method::PcaCachePruning => "pca+cache+pruning",
            Method::Adaptive => "adaptive",
        }
    }

    pub fn retrieves(self) -> bool {
        self != Method::Base
    }

    pub fn uses_pca(self) -> bool {
        matches!(self, Method::Pca | Method::PcaCache | Method::PcaPruning | Method::PcaCachePruning)
    }

    pub fn uses_pruning(self) -> bool {
        matches!(self, Method::Pruning | Method::PcaPruning | Method::PcaCachePruning)
    }

    pub fn uses_cache(self) -> bool {
        matches!(self, Method::Cache | Method::PcaCache | Method::PcaCachePruning)
    }

    pub fn uses_gate(self) -> bool {
        self == Method::Adaptive
    }

    fn variant(self) -> usize {
        usize::from(self.uses_pca()) + 2 * usize::from(self.uses_pruning())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                invalid(format!("unknown method '{s}'; valid methods: {}", valid.join(", ")))
            })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub prune_k: usize,
    /// Capped at the datastore width.
    pub pca_dim: usize,
    pub tau: f64,
    /// `None` picks exact or IVF search by datastore size.
    pub backend: Option<SearchBackend>,
    pub gate: Option<AdaptiveGate>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            prune_k: DEFAULT_PRUNE_K,
            pca_dim: DEFAULT_PCA_DIM,
            tau: DEFAULT_TAU,
            backend: None,
            gate: None,
        }
    }
}

/// The retrievers needed by a set of methods, built once: full, reduced,
/// pruned and pruned-then-reduced datastores.
#[derive(Debug, Clone)]
pub struct Pipelines {
    opts: PipelineOptions,
    retrievers: [Option<Retriever>; 4],
    prune_report: Option<PruneReport>,
}

impl Pipelines {
    pub fn build(ds: &Datastore, methods: &[Method], opts: PipelineOptions) -> Result<Self> {
        if methods.contains(&Method::Adaptive) {
            let gate = opts
                .gate
                .as_ref()
                .ok_or_else(|| invalid("the adaptive method needs a trained gate"))?;
            if gate.feature_dim() != ds.dim() + 2 {
                return Err(Error::DimensionMismatch {
                    expected: ds.dim() + 2,
                    actual: gate.feature_dim(),
                });
            }
        }
        let need = |v: usize| methods.iter().any(|m| m.retrieves() && m.variant() == v);
        let backend = |n: usize| opts.backend.unwrap_or_else(|| SearchBackend::auto(n));
        let pca_dim = opts.pca_dim.min(ds.dim());

        let mut prune_report = None;
        let pruned = if need(2) || need(3) {
            let (p, report, _) = prune_with(ds, PruneOptions::new(opts.prune_k))?;
            prune_report = Some(report);
            Some(p)
        } else {
            None
        };
        let reduce = |store: &Datastore| -> Result<Retriever> {
            let pca = fit_pca(store, pca_dim)?;
            let reduced = pca.apply_datastore(store)?;
            let b = backend(reduced.len());
            Retriever::new(reduced, Some(pca), b)
        };
        let mut retrievers: [Option<Retriever>; 4] = Default::default();
        if need(0) {
            retrievers[0] = Some(Retriever::new(ds.clone(), None, backend(ds.len()))?);
        }
        if need(1) {
            retrievers[1] = Some(reduce(ds)?);
        }
        if let Some(p) = &pruned {
            if need(3) {
                retrievers[3] = Some(reduce(p)?);
            }
        }
        if let Some(p) = pruned {
            if need(2) {
                let b = backend(p.len());
                retrievers[2] = Some(Retriever::new(p, None, b)?);
            }
        }
        Ok(Self {
            opts,
            retrievers,
            prune_report,
        })
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.opts
    }

    /// Changes the cache threshold of the cached methods without rebuilding.
    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        if tau.is_nan() || tau < 0.0 {
            return Err(invalid(format!("cache threshold must be non-negative, got {tau}")));
        }
        self.opts.tau = tau;
        Ok(())
    }

    pub fn prune_report(&self) -> Option<&PruneReport> {
        self.prune_report.as_ref()
    }

    pub fn retriever(&self, method: Method) -> Option<&Retriever> {
        if !method.retrieves() {
            return None;
        }
        self.retrievers[method.variant()].as_ref()
    }

    /// `base` with the method's cache and gate settings applied.
    pub fn decode_config(&self, method: Method, base: &DecodeConfig) -> DecodeConfig {
        DecodeConfig {
            cache_tau: method.uses_cache().then_some(self.opts.tau),
            gate: if method.uses_gate() { self.opts.gate.clone() } else { None },
            ..base.clone()
        }
    }

    pub fn datastore_size(&self, method: Method) -> usize {
        self.retriever(method).map_or(0, Retriever::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub batch_size: usize,
    pub tokens_per_second: f64,
    pub search_fraction: f64,
    pub cache_hit_fraction: f64,
    pub datastore_size: usize,
    pub peak_entry_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: Method, batch_size: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.batch_size == batch_size)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times every method at every batch size: one untimed warm-up decode, then
/// `repetitions` timed decodes whose median throughput is reported. Outputs
/// must be identical across repetitions.
pub fn bench_throughput<M: BaseModel>(
    model: &M,
    sources: &[Vec<TokenId>],
    methods: &[Method],
    batch_sizes: &[usize],
    pipelines: &Pipelines,
    base: &DecodeConfig,
    repetitions: usize,
) -> Result<BenchReport> {
    if sources.is_empty() {
        return Err(Error::Empty("benchmark workload"));
    }
    if methods.is_empty() || batch_sizes.is_empty() {
        return Err(invalid("need at least one method and one batch size"));
    }
    if repetitions < 3 {
        return Err(invalid("at least 3 timed repetitions are required"));
    }
    let mut report = BenchReport::default();
    for &method in methods {
        if method.retrieves() && pipelines.retriever(method).is_none() {
            return Err(invalid(format!("pipelines were not built for method '{method}'")));
        }
        for &batch_size in batch_sizes {
            let cfg = DecodeConfig {
                batch_size,
                ..pipelines.decode_config(method, base)
            };
            let retriever = pipelines.retriever(method);
            let reference = knn_beam_decode(model, sources, retriever, &cfg)?;
            let mut rates = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                let run = knn_beam_decode(model, sources, retriever, &cfg)?;
                if run.translations != reference.translations || !run.stats.same_counts(&reference.stats) {
                    return Err(invalid(format!("non-deterministic output for method '{method}'")));
                }
                rates.push(run.stats.summary()?.tokens_per_second);
            }
            let summary = reference.stats.summary()?;
            report.rows.push(BenchRow {
                method,
                batch_size,
                tokens_per_second: median(&rates),
                search_fraction: summary.search_fraction,
                cache_hit_fraction: summary.cache_hit_fraction,
                datastore_size: pipelines.datastore_size(method),
                peak_entry_count: reference.stats.peak_cache_entries,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(invalid(format!("unknown report format '{other}'; expected csv or json"))),
        }
    }
}

pub const CSV_HEADER: &str = "method,batch_size,tokens_per_second,search_fraction,cache_hit_fraction,datastore_size";

pub fn report_to_csv(report: &BenchReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method, r.batch_size, r.tokens_per_second, r.search_fraction, r.cache_hit_fraction, r.datastore_size
        ));
    }
    out
}

pub fn report_emit(report: &BenchReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report_to_csv(report),
        ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
    };
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_json_report(path: impl AsRef<Path>) -> Result<BenchReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
