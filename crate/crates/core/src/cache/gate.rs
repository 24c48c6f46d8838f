//! Adaptive retrieval: a two-layer MLP predicting the interpolation
//! coefficient from the query and the base model's confidence.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::binio::{ByteReader, ByteWriter};
use crate::decoder::{seeded_rng, BaseModel, Retriever, SentencePair, BOS, EOS};
use crate::error::{check_dim, invalid, Error, Result};
use crate::retrieval::knn_distribution;
use crate::vectorstore::TokenId;

const GATE_MAGIC: &[u8; 6] = b"KNNGT1";
const GATE_SALT: u64 = 0x47415445;
pub const DEFAULT_HIDDEN: usize = 128;
/// Outputs are clamped this far from 0 and 1.
const EDGE: f64 = 1e-12;

/// `true` iff `lambda > alpha`.
pub fn should_retrieve(lambda: f64, alpha: f64) -> bool {
    lambda > alpha
}

/// Query vector followed by the maximum probability and the entropy of the
/// base distribution.
pub fn gate_features(query: &[f32], probs: &[f64], out: &mut Vec<f32>) {
    out.clear();
    out.extend_from_slice(query);
    let mut max = 0f64;
    let mut entropy = 0f64;
    for &p in probs {
        max = max.max(p);
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    out.push(max as f32);
    out.push(entropy as f32);
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveGate {
    feature_dim: usize,
    hidden: usize,
    /// `hidden × feature_dim`, row-major.
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: f32,
    alpha: f64,
}

impl AdaptiveGate {
    pub fn zeros(feature_dim: usize, hidden: usize, alpha: f64) -> Result<Self> {
        Self::from_parts(
            feature_dim,
            hidden,
            vec![0.0; hidden * feature_dim],
            vec![0.0; hidden],
            vec![0.0; hidden],
            0.0,
            alpha,
        )
    }

    pub fn from_parts(
        feature_dim: usize,
        hidden: usize,
        w1: Vec<f32>,
        b1: Vec<f32>,
        w2: Vec<f32>,
        b2: f32,
        alpha: f64,
    ) -> Result<Self> {
        if feature_dim == 0 || hidden == 0 {
            return Err(invalid("gate dimensions must be positive"));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid(format!("alpha {alpha} outside [0, 1]")));
        }
        check_dim(hidden * feature_dim, w1.len())?;
        check_dim(hidden, b1.len())?;
        check_dim(hidden, w2.len())?;
        if w1.iter().chain(&b1).chain(&w2).chain([&b2]).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("gate weights".into()));
        }
        Ok(Self {
            feature_dim,
            hidden,
            w1,
            b1,
            w2,
            b2,
            alpha,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(Self { alpha, ..self.clone() })
    }

    /// Predicted interpolation coefficient, strictly inside (0, 1).
    pub fn lambda(&self, features: &[f32]) -> Result<f64> {
        check_dim(self.feature_dim, features.len())?;
        let mut z = self.b2 as f64;
        for ((row, b), w) in self.w1.chunks_exact(self.feature_dim).zip(&self.b1).zip(&self.w2) {
            let h = crate::vectorstore::dot(row, features) + b;
            if h > 0.0 {
                z += (h * w) as f64;
            }
        }
        Ok(sigmoid(z).clamp(EDGE, 1.0 - EDGE))
    }

    pub fn should_retrieve(&self, lambda: f64) -> bool {
        should_retrieve(lambda, self.alpha)
    }

    /// `KNNGT1`, u32 feature_dim, u32 hidden, then float32 W1 (row-major,
    /// hidden × feature_dim), b1, W2, b2 and alpha.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = ByteWriter::create(path.as_ref(), GATE_MAGIC)?;
        w.u32(self.feature_dim as u32)?;
        w.u32(self.hidden as u32)?;
        w.f32s(&self.w1)?;
        w.f32s(&self.b1)?;
        w.f32s(&self.w2)?;
        w.f32s(&[self.b2, self.alpha as f32])?;
        w.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = ByteReader::open(path.as_ref(), GATE_MAGIC)?;
        let feature_dim = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        if feature_dim == 0 || hidden == 0 {
            return Err(Error::ZeroDimension);
        }
        r.require(4 * (hidden * feature_dim + 2 * hidden + 2) as u64)?;
        let w1 = r.f32s(hidden * feature_dim)?;
        let b1 = r.f32s(hidden)?;
        let w2 = r.f32s(hidden)?;
        let tail = r.f32s(2)?;
        r.expect_end()?;
        Self::from_parts(feature_dim, hidden, w1, b1, w2, tail[0], tail[1] as f64)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One teacher-forced validation step: gate features plus the probability
/// the base model and the retrieval distribution give the reference token.
#[derive(Debug, Clone, PartialEq)]
pub struct GateExample {
    pub features: Vec<f32>,
    pub p_nmt: f64,
    pub p_knn: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub seed: u64,
    pub k: usize,
    pub temperature: f64,
}

impl Default for GateTrainConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            epochs: 40,
            batch_size: 128,
            learning_rate: 3e-3,
            alpha: 0.5,
            seed: 0,
            k: crate::retrieval::DEFAULT_K,
            temperature: crate::retrieval::DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateTrainReport {
    pub examples: usize,
    /// Mean negative interpolated log-likelihood at initialization.
    pub initial_objective: f64,
    pub final_objective: f64,
}

/// Teacher-forced steps over `corpus`, including the final EOS position.
pub fn collect_examples<M: BaseModel>(
    model: &M,
    retriever: &Retriever,
    corpus: &[SentencePair],
    k: usize,
    temperature: f64,
) -> Result<Vec<GateExample>> {
    let vocab = model.vocab().len();
    let qdim = retriever.query_dim();
    let mut repr = vec![0f32; model.repr_dim()];
    let mut probs = vec![0f64; vocab];
    let mut out = Vec::new();
    for (s, pair) in corpus.iter().enumerate() {
        if let Some(&token) = pair.target.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::TokenOutOfVocab {
                sentence: s,
                token,
                vocab_size: vocab,
            });
        }
        let source = model.encode(&pair.source)?;
        let mut prefix: Vec<TokenId> = vec![BOS];
        let mut queries = Vec::new();
        let mut pending = Vec::new();
        for &gold in pair.target.iter().chain([&EOS]) {
            model.step(&source, &prefix, &mut repr, &mut probs);
            let mut q = vec![0f32; qdim];
            retriever.to_query(&repr, &mut q)?;
            let mut features = Vec::with_capacity(qdim + 2);
            gate_features(&q, &probs, &mut features);
            queries.extend_from_slice(&q);
            pending.push((features, probs[gold as usize], gold));
            prefix.push(gold);
        }
        let hits = retriever.search_batch(&queries, k)?;
        for ((features, p_nmt, gold), neighbors) in pending.into_iter().zip(hits) {
            let p_knn = knn_distribution(&neighbors, temperature)?.prob(gold);
            out.push(GateExample {
                features,
                p_nmt,
                p_knn,
            });
        }
    }
    Ok(out)
}

/// Fits a gate on teacher-forced steps of a validation corpus.
pub fn train_gate<M: BaseModel>(
    model: &M,
    retriever: &Retriever,
    corpus: &[SentencePair],
    cfg: &GateTrainConfig,
) -> Result<(AdaptiveGate, GateTrainReport)> {
    if corpus.is_empty() {
        return Err(Error::Empty("validation corpus"));
    }
    let examples = collect_examples(model, retriever, corpus, cfg.k, cfg.temperature)?;
    fit_gate(&examples, cfg)
}

/// Flat f64 parameters: W1, b1, W2, b2.
#[derive(Debug, Clone)]
struct Mlp {
    f: usize,
    h: usize,
    theta: Vec<f64>,
}

impl Mlp {
    fn len(f: usize, h: usize) -> usize {
        h * f + 2 * h + 1
    }

    fn init(f: usize, h: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed, GATE_SALT);
        let mut theta = vec![0f64; Self::len(f, h)];
        let s1 = (2.0 / f as f64).sqrt();
        for w in &mut theta[..h * f] {
            *w = rng.sample::<f64, _>(StandardNormal) * s1;
        }
        let s2 = (1.0 / h as f64).sqrt() * 0.1;
        for w in &mut theta[h * f + h..h * f + 2 * h] {
            *w = rng.sample::<f64, _>(StandardNormal) * s2;
        }
        Self { f, h, theta }
    }

    /// Mean objective over `batch` and, when `grad` is given, its gradient.
    fn objective(&self, xs: &[f64], ys: &[(f64, f64)], batch: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
        let (f, h) = (self.f, self.h);
        let (w1, rest) = self.theta.split_at(h * f);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let b2 = b2[0];
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut hidden = vec![0f64; h];
        let mut total = 0.0;
        for &e in batch {
            let x = &xs[e * f..(e + 1) * f];
            let (a, b) = ys[e];
            let mut z = b2;
            for j in 0..h {
                let pre: f64 = b1[j] + w1[j * f..(j + 1) * f].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                hidden[j] = pre.max(0.0);
                z += w2[j] * hidden[j];
            }
            let lam = sigmoid(z);
            let mix = ((1.0 - lam) * a + lam * b).max(1e-300);
            total -= mix.ln();
            if let Some(g) = grad.as_deref_mut() {
                // d(-ln mix)/dz
                let dz = -(b - a) / mix * lam * (1.0 - lam) * scale;
                let (g1, rest) = g.split_at_mut(h * f);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(h);
                gb2[0] += dz;
                for j in 0..h {
                    gw2[j] += dz * hidden[j];
                    if hidden[j] > 0.0 {
                        let dh = dz * w2[j];
                        gb1[j] += dh;
                        for (gw, v) in g1[j * f..(j + 1) * f].iter_mut().zip(x) {
                            *gw += dh * v;
                        }
                    }
                }
            }
        }
        total * scale
    }
}

/// One parameter coordinate of [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientProbe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientProbe {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Compares the analytic gradient of the training objective with central
/// differences on `coords` random coordinates of a seeded random gate.
/// Coordinates whose gradient is below 1e-7 in magnitude are skipped.
pub fn gradient_check(examples: &[GateExample], hidden: usize, seed: u64, coords: usize) -> Result<Vec<GradientProbe>> {
    let Some(first) = examples.first() else {
        return Err(Error::Empty("gate training examples"));
    };
    if hidden == 0 {
        return Err(invalid("hidden width must be positive"));
    }
    let f = first.features.len();
    if let Some(e) = examples.iter().find(|e| e.features.len() != f) {
        return Err(Error::DimensionMismatch {
            expected: f,
            actual: e.features.len(),
        });
    }
    let xs: Vec<f64> = examples.iter().flat_map(|e| e.features.iter().map(|&x| x as f64)).collect();
    let ys: Vec<(f64, f64)> = examples.iter().map(|e| (e.p_nmt, e.p_knn)).collect();
    let mut mlp = Mlp::init(f, hidden, seed);
    let mut rng = seeded_rng(seed, GATE_SALT ^ 2);
    // A non-trivial output layer so every parameter receives gradient.
    for w in mlp.theta.iter_mut().skip(hidden * f) {
        *w = rng.random_range(-0.5..0.5);
    }
    let batch: Vec<usize> = (0..examples.len()).collect();
    let mut grad = vec![0f64; mlp.theta.len()];
    mlp.objective(&xs, &ys, &batch, Some(&mut grad));
    let step = 1e-6;
    let mut probes = Vec::with_capacity(coords);
    let mut attempts = 0;
    while probes.len() < coords && attempts < 100 * coords.max(1) {
        attempts += 1;
        let index = rng.random_range(0..mlp.theta.len());
        let mut plus = mlp.clone();
        plus.theta[index] += step;
        let mut minus = mlp.clone();
        minus.theta[index] -= step;
        let numeric =
            (plus.objective(&xs, &ys, &batch, None) - minus.objective(&xs, &ys, &batch, None)) / (2.0 * step);
        if numeric.abs().max(grad[index].abs()) < 1e-7 {
            continue;
        }
        probes.push(GradientProbe {
            index,
            analytic: grad[index],
            numeric,
        });
    }
    Ok(probes)
}

/// Trains on precomputed examples with Adam. Features are standardized for
/// optimization and the scaling is folded into the first layer afterwards.
pub fn fit_gate(examples: &[GateExample], cfg: &GateTrainConfig) -> Result<(AdaptiveGate, GateTrainReport)> {
    if examples.is_empty() {
        return Err(Error::Empty("gate training examples"));
    }
    if cfg.hidden == 0 || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(invalid("hidden width, batch size and epochs must be positive"));
    }
    if cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(invalid("learning rate must be positive"));
    }
    let f = examples[0].features.len();
    let n = examples.len();
    if let Some(e) = examples.iter().find(|e| e.features.len() != f) {
        return Err(Error::DimensionMismatch {
            expected: f,
            actual: e.features.len(),
        });
    }
    let mut mean = vec![0f64; f];
    for e in examples {
        for (m, &x) in mean.iter_mut().zip(&e.features) {
            *m += x as f64 / n as f64;
        }
    }
    let mut std = vec![0f64; f];
    for e in examples {
        for ((s, &x), m) in std.iter_mut().zip(&e.features).zip(&mean) {
            *s += (x as f64 - m).powi(2) / n as f64;
        }
    }
    for s in &mut std {
        *s = s.sqrt().max(1e-6);
    }
    let xs: Vec<f64> = examples
        .iter()
        .flat_map(|e| {
            e.features
                .iter()
                .zip(&mean)
                .zip(&std)
                .map(|((&x, m), s)| (x as f64 - m) / s)
        })
        .collect();
    let ys: Vec<(f64, f64)> = examples.iter().map(|e| (e.p_nmt, e.p_knn)).collect();

    let mut mlp = Mlp::init(f, cfg.hidden, cfg.seed);
    let all: Vec<usize> = (0..n).collect();
    let initial_objective = mlp.objective(&xs, &ys, &all, None);

    let p = mlp.theta.len();
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m1 = vec![0f64; p];
    let mut m2 = vec![0f64; p];
    let mut grad = vec![0f64; p];
    let mut order = all.clone();
    let mut rng = seeded_rng(cfg.seed, GATE_SALT ^ 1);
    let mut t = 0i32;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            mlp.objective(&xs, &ys, batch, Some(&mut grad));
            t += 1;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for i in 0..p {
                m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
                m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
                mlp.theta[i] -= cfg.learning_rate * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
            }
        }
    }
    let final_objective = mlp.objective(&xs, &ys, &all, None);

    let h = cfg.hidden;
    let (w1, rest) = mlp.theta.split_at(h * f);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(h);
    let mut fw1 = Vec::with_capacity(h * f);
    let mut fb1 = Vec::with_capacity(h);
    for j in 0..h {
        let row = &w1[j * f..(j + 1) * f];
        let mut bias = b1[j];
        for ((w, m), s) in row.iter().zip(&mean).zip(&std) {
            fw1.push((w / s) as f32);
            bias -= w * m / s;
        }
        fb1.push(bias as f32);
    }
    let gate = AdaptiveGate::from_parts(
        f,
        h,
        fw1,
        fb1,
        w2.iter().map(|&w| w as f32).collect(),
        b2[0] as f32,
        cfg.alpha,
    )?;
    Ok((
        gate,
        GateTrainReport {
            examples: n,
            initial_objective,
            final_objective,
        },
    ))
}
