mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use knnmt::cache::{train_gate, AdaptiveGate, GateTrainConfig, DEFAULT_HIDDEN};
use knnmt::compression::{fit_pca, prune_with, PcaModel, PruneOptions};
use knnmt::decoder::{
    knn_beam_decode, read_corpus, write_corpus, BaseModel, DecodeConfig, Retriever, SentencePair, StubConfig, StubModel,
    Vocab,
};
use knnmt::evalbench::{
    bench_throughput, corpus_bleu, generate_domains, grid_search, report_emit, report_to_csv, tune_tau, Method,
    PipelineOptions, Pipelines, ReportFormat, SyntheticDomainSpec, DEFAULT_PRUNE_K,
};
use knnmt::retrieval::InterpolationParams;
use knnmt::vectorstore::{build_datastore, Datastore, SearchBackend, TokenId, DEFAULT_NPROBE, EXACT_SEARCH_BELOW};
use serde::Serialize;

use config::{Overrides, Settings};

#[derive(Parser)]
#[command(name = "knnmt", version, about = "Nearest-neighbor augmented decoding toolkit")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-domain parallel corpora
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        domains: usize,
        #[arg(long, default_value_t = 50_000)]
        train: usize,
        #[arg(long, default_value_t = 200)]
        valid: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        /// Fraction of substitution rules each domain rewrites
        #[arg(long, default_value_t = 0.4)]
        shift: f64,
    },
    /// Build a datastore from a parallel corpus
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge-prune a datastore
    Prune {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Neighbors examined per entry
        #[arg(long, default_value_t = DEFAULT_PRUNE_K)]
        prune_k: usize,
    },
    /// Fit PCA on a datastore and write the model and the reduced datastore
    Pca {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate the sources of a corpus
    Translate {
        #[arg(long)]
        input: PathBuf,
        /// Omit for plain beam search
        #[arg(long)]
        datastore: Option<PathBuf>,
        /// PCA model; the datastore must be the matching reduced one
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        gate: Option<PathBuf>,
        /// Enable the retrieval cache with threshold --tau
        #[arg(long)]
        cache: bool,
        /// Translations file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure throughput of decoding methods
    Bench {
        #[arg(long)]
        datastore: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "base,knn,cache,pca,pruning,pca+cache,pca+pruning,pca+cache+pruning")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,8,16")]
        batches: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value_t = DEFAULT_PRUNE_K)]
        prune_k: usize,
        /// Required by the adaptive method
        #[arg(long)]
        gate: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a grid of k and lambda, or of cache thresholds, on a validation corpus
    Sweep {
        #[arg(long)]
        datastore: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        k_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8")]
        lambda_grid: Vec<f64>,
        /// Sweep cache thresholds at the configured k and lambda instead
        #[arg(long, value_delimiter = ',')]
        tau_grid: Option<Vec<f64>>,
        /// BLEU loss tolerated when choosing a threshold
        #[arg(long, default_value_t = 0.5)]
        margin: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the adaptive retrieval gate on a validation corpus
    TrainGate {
        #[arg(long)]
        datastore: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HIDDEN)]
        hidden: usize,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let s = Settings::resolve(&cli.overrides)?;
    match cli.command {
        Command::GenData {
            out,
            domains,
            train,
            valid,
            test,
            shift,
        } => gen_data(&s, &out, domains, train, valid, test, shift),
        Command::Build { corpus, out } => {
            let model = model(&s)?;
            let ds = build_datastore(&load_corpus(&s, &corpus)?, &model)?;
            save_store(&ds, &out)?;
            println!("datastore: {} entries, dim {}", ds.len(), ds.dim());
            Ok(())
        }
        Command::Prune { input, out, prune_k } => {
            let ds = load_store(&input)?;
            let (pruned, report, _) = prune_with(&ds, PruneOptions::new(prune_k))?;
            save_store(&pruned, &out)?;
            println!(
                "pruned: {} -> {} entries, {} merges, k {}",
                report.original_size, report.pruned_size, report.merges_performed, report.k_used
            );
            Ok(())
        }
        Command::Pca { input, model, out } => {
            let ds = load_store(&input)?;
            let pca = fit_pca(&ds, s.dim)?;
            let reduced = pca.apply_datastore(&ds)?;
            pca.save(&model).with_context(|| format!("writing {}", model.display()))?;
            save_store(&reduced, &out)?;
            println!("pca: dim {} -> {}, {} entries", pca.input_dim(), pca.output_dim(), reduced.len());
            Ok(())
        }
        Command::Translate {
            input,
            datastore,
            pca,
            gate,
            cache,
            out,
        } => translate(&s, &input, datastore.as_deref(), pca.as_deref(), gate.as_deref(), cache, out.as_deref()),
        Command::Bench {
            datastore,
            input,
            methods,
            batches,
            repetitions,
            prune_k,
            gate,
            limit,
            out,
        } => {
            let methods = methods.iter().map(|m| m.parse()).collect::<knnmt::Result<Vec<Method>>>()?;
            let gate = gate.as_deref().map(load_gate).transpose()?;
            let ds = load_store(&datastore)?;
            let model = model(&s)?;
            let mut sources: Vec<Vec<TokenId>> = load_corpus(&s, &input)?.into_iter().map(|p| p.source).collect();
            if let Some(n) = limit {
                sources.truncate(n);
            }
            let opts = PipelineOptions {
                prune_k,
                pca_dim: s.dim,
                tau: s.tau,
                backend: pipeline_backend(&s),
                gate,
            };
            let pipelines = Pipelines::build(&ds, &methods, opts)?;
            let report = bench_throughput(&model, &sources, &methods, &batches, &pipelines, &decode_config(&s)?, repetitions)?;
            match out {
                Some(path) => {
                    report_emit(&report, &path, s.report_format()?)?;
                    println!("report: {} rows written to {}", report.rows.len(), path.display());
                }
                None => emit_stdout(&report, s.report_format()?, report_to_csv)?,
            }
            Ok(())
        }
        Command::Sweep {
            datastore,
            valid,
            k_grid,
            lambda_grid,
            tau_grid,
            margin,
            out,
        } => {
            let model = model(&s)?;
            let retriever = retriever(&s, load_store(&datastore)?)?;
            let valid = load_corpus(&s, &valid)?;
            let base = decode_config(&s)?;
            let text = match tau_grid {
                Some(taus) => {
                    let t = tune_tau(&model, &retriever, &valid, &base, &taus, margin)?;
                    let mut csv = String::from("tau,bleu,search_fraction\n");
                    for r in &t.table {
                        csv.push_str(&format!("{},{},{}\n", r.tau, r.bleu, r.search_fraction));
                    }
                    eprintln!("reference BLEU {:.2}; chosen tau {}", t.reference_bleu, t.tau);
                    render(&t, s.report_format()?, csv)?
                }
                None => {
                    let g = grid_search(&model, &retriever, &valid, &k_grid, &lambda_grid, &base)?;
                    let mut csv = String::from("k,lambda,bleu\n");
                    for r in &g.table {
                        csv.push_str(&format!("{},{},{}\n", r.k, r.lambda, r.bleu));
                    }
                    eprintln!("best k {} lambda {} BLEU {:.2}", g.best.k, g.best.lambda, g.best.bleu);
                    render(&g, s.report_format()?, csv)?
                }
            };
            write_output(out.as_deref(), &text)
        }
        Command::TrainGate {
            datastore,
            valid,
            out,
            hidden,
            epochs,
        } => {
            let model = model(&s)?;
            let retriever = retriever(&s, load_store(&datastore)?)?;
            let cfg = GateTrainConfig {
                hidden,
                epochs,
                alpha: s.alpha,
                seed: s.seed,
                k: s.k,
                temperature: s.temperature,
                ..GateTrainConfig::default()
            };
            let (gate, report) = train_gate(&model, &retriever, &load_corpus(&s, &valid)?, &cfg)?;
            gate.save(&out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "gate: {} examples, objective {:.4} -> {:.4}",
                report.examples, report.initial_objective, report.final_objective
            );
            Ok(())
        }
    }
}

fn gen_data(s: &Settings, out: &Path, domains: usize, train: usize, valid: usize, test: usize, shift: f64) -> Result<()> {
    let spec = SyntheticDomainSpec {
        seed: s.seed,
        vocab_size: s.vocab,
        n_domains: domains,
        n_train: train,
        n_valid: valid,
        n_test: test,
        domain_shift: shift,
        ..SyntheticDomainSpec::default()
    };
    let corpora = generate_domains(&spec)?;
    let vocab = Vocab::synthetic(s.vocab);
    for d in &corpora {
        let dir = out.join(&d.name);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (split, pairs) in [("train", &d.train), ("valid", &d.valid), ("test", &d.test)] {
            let path = dir.join(format!("{split}.tsv"));
            write_corpus(&path, pairs, &vocab).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    println!("generated {} domains in {}", corpora.len(), out.display());
    Ok(())
}

fn translate(
    s: &Settings,
    input: &Path,
    datastore: Option<&Path>,
    pca: Option<&Path>,
    gate: Option<&Path>,
    cache: bool,
    out: Option<&Path>,
) -> Result<()> {
    let model = model(s)?;
    let corpus = load_corpus(s, input)?;
    let retriever = match datastore {
        Some(path) => {
            let ds = load_store(path)?;
            let pca = pca
                .map(|p| PcaModel::load(p).with_context(|| format!("reading {}", p.display())))
                .transpose()?;
            let b = backend(s, ds.len());
            Some(Retriever::new(ds, pca, b)?)
        }
        None if pca.is_some() || gate.is_some() || cache => bail!("--pca, --gate and --cache need --datastore"),
        None => None,
    };
    let mut cfg = decode_config(s)?;
    if cache {
        cfg.cache_tau = Some(s.tau);
    }
    cfg.gate = gate.map(load_gate).transpose()?;
    let sources: Vec<Vec<TokenId>> = corpus.iter().map(|p| p.source.clone()).collect();
    let decoded = knn_beam_decode(&model, &sources, retriever.as_ref(), &cfg)?;
    let vocab = model.vocab();
    let mut text = String::new();
    for t in &decoded.translations {
        text.push_str(&vocab.decode(t));
        text.push('\n');
    }
    write_output(out, &text)?;
    let st = &decoded.stats;
    let summary = st.summary().ok();
    let refs: Vec<Vec<TokenId>> = corpus.iter().map(|p| p.target.clone()).collect();
    let bleu = corpus_bleu(&decoded.translations, &refs)?;
    eprintln!(
        "sentences {} tokens {} BLEU {:.2} searches {} cache_hits {} gate_skips {} search_fraction {:.3} tokens_per_second {:.0}",
        st.sentences,
        st.generated_tokens,
        bleu,
        st.searches,
        st.cache_hits,
        st.gate_skips,
        summary.map_or(0.0, |m| m.search_fraction),
        summary.map_or(0.0, |m| m.tokens_per_second)
    );
    Ok(())
}

fn model(s: &Settings) -> Result<StubModel> {
    Ok(StubModel::new(StubConfig::new(s.seed, s.vocab))?)
}

fn decode_config(s: &Settings) -> Result<DecodeConfig> {
    let cfg = DecodeConfig {
        beam_size: s.beam,
        max_len: s.max_len,
        params: InterpolationParams::new(s.k, s.lambda, s.temperature)?,
        cache_tau: None,
        gate: None,
        batch_size: s.batch,
    };
    cfg.validate()?;
    if !(0.0..=1.0).contains(&s.alpha) {
        bail!("alpha {} outside [0, 1]", s.alpha);
    }
    Ok(cfg)
}

fn backend(s: &Settings, n_entries: usize) -> SearchBackend {
    if s.exact || n_entries < EXACT_SEARCH_BELOW {
        SearchBackend::Exact
    } else {
        SearchBackend::Ivf { nprobe: s.nprobe }
    }
}

fn pipeline_backend(s: &Settings) -> Option<SearchBackend> {
    if s.exact {
        Some(SearchBackend::Exact)
    } else if s.nprobe == DEFAULT_NPROBE {
        None
    } else {
        Some(SearchBackend::Ivf { nprobe: s.nprobe })
    }
}

fn retriever(s: &Settings, ds: Datastore) -> Result<Retriever> {
    let b = backend(s, ds.len());
    Ok(Retriever::new(ds, None, b)?)
}

fn load_corpus(s: &Settings, path: &Path) -> Result<Vec<SentencePair>> {
    let vocab = Vocab::synthetic(s.vocab);
    read_corpus(path, &vocab).with_context(|| format!("reading {}", path.display()))
}

fn load_store(path: &Path) -> Result<Datastore> {
    Datastore::load(path).with_context(|| format!("reading {}", path.display()))
}

fn save_store(ds: &Datastore, path: &Path) -> Result<()> {
    ds.save(path).with_context(|| format!("writing {}", path.display()))
}

fn load_gate(path: &Path) -> Result<AdaptiveGate> {
    AdaptiveGate::load(path).with_context(|| format!("reading {}", path.display()))
}

fn render<T: Serialize>(value: &T, format: ReportFormat, csv: String) -> Result<String> {
    Ok(match format {
        ReportFormat::Csv => csv,
        ReportFormat::Json => serde_json::to_string_pretty(value)? + "\n",
    })
}

fn emit_stdout<T: Serialize>(value: &T, format: ReportFormat, csv: impl Fn(&T) -> String) -> Result<()> {
    let text = render(value, format, csv(value))?;
    write_output(None, &text)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}
