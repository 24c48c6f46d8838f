//! Synthetic domain corpora, BLEU, hyperparameter search and throughput
//! benchmarking.

mod bench;
mod bleu;
mod data;
mod grid;

pub use bench::{
    bench_throughput, median, read_json_report, report_emit, report_to_csv, BenchReport, BenchRow,
    Method, PipelineOptions, Pipelines, ReportFormat, CSV_HEADER, DEFAULT_PCA_DIM, DEFAULT_PRUNE_K,
    DEFAULT_TAU,
};
pub use bleu::corpus_bleu;
pub use data::{generate_domains, DomainCorpus, SyntheticDomainSpec};
pub use grid::{evaluate_bleu, grid_search, tune_tau, GridResult, GridRow, TauRow, TauTuning};
