//! Run settings merged from built-in defaults, a `key = value` file and
//! command-line flags, in increasing priority.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use knnmt::decoder::{DEFAULT_BEAM, DEFAULT_MAX_LEN};
use knnmt::evalbench::{ReportFormat, DEFAULT_PCA_DIM, DEFAULT_TAU};
use knnmt::retrieval::{DEFAULT_K, DEFAULT_LAMBDA, DEFAULT_TEMPERATURE};
use knnmt::vectorstore::DEFAULT_NPROBE;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub vocab: usize,
    pub k: usize,
    pub lambda: f64,
    pub temperature: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beam: usize,
    pub batch: usize,
    pub max_len: usize,
    pub dim: usize,
    pub nprobe: usize,
    pub exact: bool,
    pub format: String,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab: 512,
            k: DEFAULT_K,
            lambda: DEFAULT_LAMBDA,
            temperature: DEFAULT_TEMPERATURE,
            tau: DEFAULT_TAU,
            alpha: 0.5,
            beam: DEFAULT_BEAM,
            batch: 1,
            max_len: DEFAULT_MAX_LEN,
            dim: DEFAULT_PCA_DIM,
            nprobe: DEFAULT_NPROBE,
            exact: false,
            format: "csv".into(),
        }
    }
}

/// Flag values; `None` leaves the lower-priority value in place.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Settings file with one `key = value` per line
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Vocabulary size of the synthetic model and corpora
    #[arg(long, global = true)]
    pub vocab: Option<usize>,
    /// Neighbors retrieved per step
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Cache threshold
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Gate threshold
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    /// PCA output dimension
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub nprobe: Option<usize>,
    /// Search exhaustively instead of through an IVF index
    #[arg(long, global = true)]
    pub exact: bool,
    /// Report format: csv or json
    #[arg(long, global = true)]
    pub format: Option<String>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value '{value}' for '{key}': {e}"))
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "vocab" => self.vocab = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "temperature" => self.temperature = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "beam" => self.beam = parse_value(key, value)?,
            "batch" => self.batch = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "nprobe" => self.nprobe = parse_value(key, value)?,
            "exact" => self.exact = parse_value(key, value)?,
            "format" => self.format = value.to_string(),
            _ => bail!("unknown setting '{key}'"),
        }
        Ok(())
    }

    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected 'key = value'", n + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.apply_file_text(&text)
            .with_context(|| format!("config {}", path.display()))
    }

    pub fn apply_flags(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = &o.$f { self.$f = v.clone(); })* };
        }
        take!(seed, vocab, k, lambda, temperature, tau, alpha, beam, batch, max_len, dim, nprobe, format);
        if o.exact {
            self.exact = true;
        }
    }

    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut s = Self::default();
        if let Some(path) = &o.config {
            s.apply_file(path)?;
        }
        s.apply_flags(o);
        s.report_format()?;
        Ok(s)
    }

    pub fn report_format(&self) -> Result<ReportFormat> {
        Ok(self.format.parse()?)
    }
}
