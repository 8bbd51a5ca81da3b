//! Diagnosis-conditioned CBOW.
//!
//! The context (a set of diseases) is embedded through the disease matrix and
//! averaged into a projection `h`. Each candidate drug's logit is the dot
//! product of its output vector with `h`; a softmax over the candidate set
//! gives the probability of each drug being the central word. Training never
//! materializes that softmax: it maximizes
//! `log σ(v_t·h) + Σ_x log σ(−v_x·h)` over the target `t` and the sampled
//! negatives `x` by plain SGD with a linearly decaying learning rate.

mod io;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Corpus, DiseaseId, DrugId, Vocabulary};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::sampler::{self, SamplerConfig, TrainingSample};
use crate::seed;
use crate::vectorize::{self, DrugCooccurrenceVector};

pub use io::{decode, encode, load, save, FORMAT_VERSION, MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Disease rows uniform in `[-0.5/d, 0.5/d]`, drug rows zero.
    Random,
    /// Drug rows start as L2-normalized co-occurrence vectors; needs
    /// `d == |diseases|`.
    Cooccurrence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub embedding_dim: usize,
    pub learning_rate: f64,
    /// Floor of the linear decay.
    pub min_learning_rate: f64,
    pub epochs: usize,
    pub init_mode: InitMode,
    pub rng_seed: u64,
    /// Keep drug vectors at their initial values (ablation).
    pub freeze_drug_vectors: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            embedding_dim: 64,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            epochs: 5,
            init_mode: InitMode::Random,
            rng_seed: 0,
            freeze_drug_vectors: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.min_learning_rate >= 0.0 && self.min_learning_rate <= self.learning_rate) {
            return Err(Error::InvalidConfig(format!(
                "minimum learning rate {} must lie in [0, {}]",
                self.min_learning_rate, self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `|diseases| x d`, context vectors.
    pub disease_embeddings: Matrix,
    /// `|drugs| x d`, output vectors.
    pub drug_embeddings: Matrix,
}

impl ModelParams {
    pub fn dim(&self) -> usize {
        self.disease_embeddings.cols()
    }

    pub fn drug_vector(&self, m: DrugId) -> &[f64] {
        self.drug_embeddings.row(m.index())
    }

    pub fn disease_vector(&self, d: DiseaseId) -> &[f64] {
        self.disease_embeddings.row(d.index())
    }

    pub fn is_finite(&self) -> bool {
        self.disease_embeddings.as_slice().iter().all(|x| x.is_finite())
            && self.drug_embeddings.as_slice().iter().all(|x| x.is_finite())
    }
}

pub fn init(
    vocab: &Vocabulary,
    hp: &Hyperparams,
    drug_counts: Option<&[DrugCooccurrenceVector]>,
) -> Result<ModelParams> {
    hp.validate()?;
    let d = hp.embedding_dim;
    let mut rng = seed::rng_for(hp.rng_seed, "model/init");
    let bound = 0.5 / d as f64;
    let mut disease_embeddings = Matrix::zeros(vocab.num_diseases(), d);
    for x in disease_embeddings.data.iter_mut() {
        *x = rng.gen_range(-bound..bound);
    }
    let mut drug_embeddings = Matrix::zeros(vocab.num_drugs(), d);
    if hp.init_mode == InitMode::Cooccurrence {
        if d != vocab.num_diseases() {
            return Err(Error::DimensionMismatch {
                expected: vocab.num_diseases(),
                actual: d,
            });
        }
        let counts = drug_counts.ok_or_else(|| {
            Error::InvalidConfig("co-occurrence init requires drug count vectors".into())
        })?;
        if counts.len() != vocab.num_drugs() {
            return Err(Error::DimensionMismatch {
                expected: vocab.num_drugs(),
                actual: counts.len(),
            });
        }
        for (i, v) in counts.iter().enumerate() {
            if v.0.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: v.0.len(),
                });
            }
            let norm = v.0.iter().map(|&c| f64::from(c).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (dst, &c) in drug_embeddings.row_mut(i).iter_mut().zip(&v.0) {
                    *dst = f64::from(c) / norm;
                }
            }
        }
    }
    Ok(ModelParams {
        disease_embeddings,
        drug_embeddings,
    })
}

/// Mean of the context rows.
pub fn project(context: &[DiseaseId], params: &ModelParams) -> Vec<f64> {
    let mut h = vec![0.0; params.dim()];
    for &w in context {
        for (acc, &x) in h.iter_mut().zip(params.disease_vector(w)) {
            *acc += x;
        }
    }
    let inv = 1.0 / context.len() as f64;
    for x in h.iter_mut() {
        *x *= inv;
    }
    h
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax probabilities over a candidate set, in candidate order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    pub entries: Vec<(DrugId, f64)>,
}

impl CandidateScores {
    pub fn get(&self, m: DrugId) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == m).map(|e| e.1)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}

/// Max-subtracted softmax of raw logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `candidates` must be distinct and non-empty.
pub fn score_candidates(h: &[f64], candidates: &[DrugId], params: &ModelParams) -> CandidateScores {
    debug_assert!(!candidates.is_empty());
    let logits: Vec<f64> = candidates
        .iter()
        .map(|&m| dot(params.drug_vector(m), h))
        .collect();
    CandidateScores {
        entries: candidates.iter().copied().zip(softmax(&logits)).collect(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Negated negative-sampling objective for one sample.
pub fn sample_loss(sample: &TrainingSample, params: &ModelParams) -> f64 {
    let h = project(&sample.context, params);
    let mut loss = -log_sigmoid(dot(params.drug_vector(sample.target), &h));
    for &x in &sample.negatives {
        loss -= log_sigmoid(-dot(params.drug_vector(x), &h));
    }
    loss
}

/// Gradient of [`sample_loss`] with respect to every row it touches.
/// Repeated negatives accumulate into one entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradient {
    pub disease_rows: BTreeMap<DiseaseId, Vec<f64>>,
    pub drug_rows: BTreeMap<DrugId, Vec<f64>>,
}

pub fn sample_gradient(sample: &TrainingSample, params: &ModelParams) -> (f64, SampleGradient) {
    let d = params.dim();
    let h = project(&sample.context, params);
    let mut grad_h = vec![0.0; d];
    let mut drug_rows: BTreeMap<DrugId, Vec<f64>> = BTreeMap::new();
    let mut loss = 0.0;
    let outputs = std::iter::once((sample.target, 1.0)).chain(sample.negatives.iter().map(|&x| (x, 0.0)));
    for (m, label) in outputs {
        let v = params.drug_vector(m);
        let f = dot(v, &h);
        loss -= if label > 0.0 { log_sigmoid(f) } else { log_sigmoid(-f) };
        let g = sigmoid(f) - label;
        for (acc, &x) in grad_h.iter_mut().zip(v) {
            *acc += g * x;
        }
        let row = drug_rows.entry(m).or_insert_with(|| vec![0.0; d]);
        for (acc, &x) in row.iter_mut().zip(&h) {
            *acc += g * x;
        }
    }
    let inv = 1.0 / sample.context.len() as f64;
    let disease_rows = sample
        .context
        .iter()
        .map(|&w| (w, grad_h.iter().map(|g| g * inv).collect()))
        .collect();
    (
        loss,
        SampleGradient {
            disease_rows,
            drug_rows,
        },
    )
}

/// One SGD step on the exact gradient at the current parameters. Returns the
/// loss before the update.
pub fn train_step(sample: &TrainingSample, params: &mut ModelParams, lr: f64) -> Result<f64> {
    train_step_with(sample, params, lr, true)
}

pub fn train_step_with(
    sample: &TrainingSample,
    params: &mut ModelParams,
    lr: f64,
    update_drugs: bool,
) -> Result<f64> {
    let d = params.dim();
    let h = project(&sample.context, params);
    let mut grad_h = vec![0.0; d];
    let mut loss = 0.0;
    // Coefficients are computed from pre-update vectors before anything moves.
    let mut coeffs = Vec::with_capacity(1 + sample.negatives.len());
    for (m, label) in std::iter::once((sample.target, 1.0)).chain(sample.negatives.iter().map(|&x| (x, 0.0))) {
        let v = params.drug_vector(m);
        let f = dot(v, &h);
        loss -= if label > 0.0 { log_sigmoid(f) } else { log_sigmoid(-f) };
        let g = sigmoid(f) - label;
        for (acc, &x) in grad_h.iter_mut().zip(v) {
            *acc += g * x;
        }
        coeffs.push((m, g));
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { loss, step: 0, lr });
    }
    if update_drugs {
        for (m, g) in coeffs {
            for (dst, &x) in params.drug_embeddings.row_mut(m.index()).iter_mut().zip(&h) {
                *dst -= lr * g * x;
            }
        }
    }
    let scale = lr / sample.context.len() as f64;
    for &w in &sample.context {
        for (dst, &g) in params.disease_embeddings.row_mut(w.index()).iter_mut().zip(&grad_h) {
            *dst -= scale * g;
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub samples: usize,
    pub final_learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub epochs: Vec<EpochStats>,
}

/// The samples epoch `epoch` trains on, before shuffling.
pub fn epoch_samples(corpus: &Corpus, scfg: &SamplerConfig, epoch: usize) -> Vec<TrainingSample> {
    let cfg = SamplerConfig {
        rng_seed: seed::derive_seed(scfg.rng_seed, &format!("epoch/{epoch}")),
        ..scfg.clone()
    };
    sampler::collect_training_set(corpus, &cfg, Parallelism::Sequential)
}

/// Trains on `epochs` passes of the sample stream. Each epoch redraws
/// negatives and shuffles sample order from seeds derived from the config
/// seeds, so the result is a pure function of the inputs.
pub fn train(
    corpus: &Corpus,
    scfg: &SamplerConfig,
    hp: &Hyperparams,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    scfg.validate()?;
    hp.validate()?;
    let drug_counts = match hp.init_mode {
        InitMode::Cooccurrence => Some(vectorize::drug_vectors(corpus)),
        InitMode::Random => None,
    };
    let mut params = init(&corpus.vocabulary, hp, drug_counts.as_deref())?;
    let mut epochs = Vec::new();
    if hp.epochs == 0 {
        return Ok(TrainOutcome { params, epochs });
    }
    let mut samples = epoch_samples(corpus, scfg, 0);
    if samples.is_empty() {
        return Err(Error::NoTrainingSamples);
    }
    let total_steps = (hp.epochs * samples.len()) as f64;
    let mut step: u64 = 0;
    for epoch in 0..hp.epochs {
        if epoch > 0 {
            samples = epoch_samples(corpus, scfg, epoch);
        }
        let mut rng = seed::rng_for(hp.rng_seed, &format!("shuffle/{epoch}"));
        samples.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut lr = hp.learning_rate;
        for s in &samples {
            let frac = step as f64 / total_steps;
            lr = (hp.learning_rate - (hp.learning_rate - hp.min_learning_rate) * frac)
                .max(hp.min_learning_rate);
            let loss = train_step_with(s, &mut params, lr, !hp.freeze_drug_vectors).map_err(
                |e| match e {
                    Error::NonFiniteLoss { loss, lr, .. } => Error::NonFiniteLoss { loss, step, lr },
                    other => other,
                },
            )?;
            sum += loss;
            step += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: sum / samples.len() as f64,
            samples: samples.len(),
            final_learning_rate: lr,
        };
        log::info!("epoch {} mean loss {:.6}", stats.epoch, stats.mean_loss);
        progress(&stats);
        epochs.push(stats);
    }
    Ok(TrainOutcome { params, epochs })
}
