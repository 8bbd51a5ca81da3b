//! Training-set construction.
//!
//! A patient's diagnoses are unordered, so instead of a sliding window every
//! `m`-subset of the diagnoses serves as a context, and every prescribed drug
//! is paired with every context as the central word. Negatives are drawn from
//! drugs the patient does *not* take, weighted by patient frequency raised to
//! `frequency_exponent`.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DiseaseId, DrugId, PatientRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Diseases per context (`m`).
    pub context_size: usize,
    /// Negatives per sample (`r`).
    pub num_negatives: usize,
    /// Seeded uniform subsample of contexts when a patient has more.
    pub max_contexts_per_patient: Option<usize>,
    /// 1.0 follows raw frequencies; 0.75 is the word2vec convention.
    pub frequency_exponent: f64,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            context_size: 2,
            num_negatives: 5,
            max_contexts_per_patient: None,
            frequency_exponent: 1.0,
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_size == 0 {
            return Err(Error::InvalidConfig("context size must be >= 1".into()));
        }
        if self.num_negatives == 0 {
            return Err(Error::InvalidConfig("number of negatives must be >= 1".into()));
        }
        if self.max_contexts_per_patient == Some(0) {
            return Err(Error::InvalidConfig("max contexts per patient must be >= 1".into()));
        }
        if !(self.frequency_exponent >= 0.0 && self.frequency_exponent.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "frequency exponent {} must be finite and non-negative",
                self.frequency_exponent
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub context: Vec<DiseaseId>,
    pub target: DrugId,
    pub negatives: Vec<DrugId>,
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// All `m`-subsets of `items` in lexicographic order of positions.
pub fn combinations<T: Copy>(items: &[T], m: usize) -> Vec<Vec<T>> {
    let k = items.len();
    if m == 0 || m > k {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(binomial(k, m) as usize);
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        // Rightmost position that can still advance.
        let mut i = m;
        while i > 0 && idx[i - 1] == k - m + (i - 1) {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Every `m`-subset of the patient's diagnoses, ascending by id. With a cap
/// smaller than `C(k, m)`, a uniform subsample of `cap` subsets is kept, still
/// in lexicographic order.
pub fn enumerate_contexts<R: Rng>(
    patient: &PatientRecord,
    m: usize,
    cap: Option<usize>,
    rng: &mut R,
) -> Vec<Vec<DiseaseId>> {
    let k = patient.diagnoses.len();
    if k < m {
        log::warn!(
            "patient {}: {k} diagnoses, fewer than context size {m}; skipped",
            patient.patient_id
        );
        return Vec::new();
    }
    let dx: Vec<DiseaseId> = patient.diagnoses.iter().copied().collect();
    let all = combinations(&dx, m);
    match cap {
        Some(cap) if cap < all.len() => {
            let mut keep = index::sample(rng, all.len(), cap).into_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| all[i].clone()).collect()
        }
        _ => all,
    }
}

/// Frequency-weighted draws from a candidate set with some drugs excluded.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    candidates: Vec<DrugId>,
    weights: Vec<f64>,
    dist: WeightedIndex<f64>,
}

impl NegativeSampler {
    /// `universe` is the drug population (`S_drug`); `excluded` is removed
    /// from it before weighting.
    pub fn new<I>(
        universe: I,
        excluded: &BTreeSet<DrugId>,
        vocab: &Vocabulary,
        exponent: f64,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = DrugId>,
    {
        let candidates: Vec<DrugId> = universe
            .into_iter()
            .filter(|m| !excluded.contains(m))
            .collect();
        let weights: Vec<f64> = candidates
            .iter()
            .map(|&m| f64::from(vocab.drug_patient_count(m)).powf(exponent))
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|_| Error::NoNegativeCandidates)?;
        Ok(NegativeSampler {
            candidates,
            weights,
            dist,
        })
    }

    pub fn candidates(&self) -> &[DrugId] {
        &self.candidates
    }

    /// Normalized sampling probability of each candidate, in candidate order.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    /// `r` draws with replacement.
    pub fn draw<R: Rng>(&self, rng: &mut R, r: usize) -> Vec<DrugId> {
        (0..r)
            .map(|_| self.candidates[self.dist.sample(rng)])
            .collect()
    }

    /// Up to `s` distinct drugs, weighted sampling without replacement.
    pub fn draw_distinct<R: Rng>(&self, rng: &mut R, s: usize) -> Vec<DrugId> {
        let s = s.min(self.candidates.len());
        let pairs: Vec<(DrugId, f64)> = self
            .candidates
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .collect();
        pairs
            .choose_multiple_weighted(rng, s, |p| p.1)
            .map(|it| it.map(|p| p.0).collect())
            .unwrap_or_default()
    }
}

/// `r` negatives from all vocabulary drugs except `excluded`.
pub fn draw_negatives<R: Rng>(
    excluded: &BTreeSet<DrugId>,
    vocab: &Vocabulary,
    r: usize,
    exponent: f64,
    rng: &mut R,
) -> Result<Vec<DrugId>> {
    let sampler = NegativeSampler::new(vocab.drug_ids(), excluded, vocab, exponent)?;
    Ok(sampler.draw(rng, r))
}

/// Number of samples a patient contributes under `cfg`.
pub fn sample_count(patient: &PatientRecord, cfg: &SamplerConfig) -> u64 {
    let mut contexts = binomial(patient.diagnoses.len(), cfg.context_size);
    if let Some(cap) = cfg.max_contexts_per_patient {
        contexts = contexts.min(cap as u64);
    }
    contexts * patient.prescriptions.len() as u64
}

/// All samples for one patient: contexts x prescriptions, each with fresh
/// negatives. Deterministic in `(cfg.rng_seed, patient_id)`.
pub fn patient_samples(
    corpus: &Corpus,
    patient: &PatientRecord,
    cfg: &SamplerConfig,
) -> Vec<TrainingSample> {
    let mut rng = seed::rng_for(cfg.rng_seed, &format!("samples/{}", patient.patient_id));
    let contexts = enumerate_contexts(
        patient,
        cfg.context_size,
        cfg.max_contexts_per_patient,
        &mut rng,
    );
    if contexts.is_empty() {
        return Vec::new();
    }
    let sampler = match NegativeSampler::new(
        corpus.all_drugs.iter().copied(),
        &patient.prescriptions,
        &corpus.vocabulary,
        cfg.frequency_exponent,
    ) {
        Ok(s) => s,
        Err(_) => {
            log::warn!(
                "patient {} takes every drug in the corpus; no negatives, skipped",
                patient.patient_id
            );
            return Vec::new();
        }
    };
    let mut out = Vec::with_capacity(contexts.len() * patient.prescriptions.len());
    for ctx in &contexts {
        for &target in &patient.prescriptions {
            out.push(TrainingSample {
                context: ctx.clone(),
                target,
                negatives: sampler.draw(&mut rng, cfg.num_negatives),
            });
        }
    }
    out
}

/// The full sample stream in patient order.
pub fn build_training_set<'a>(
    corpus: &'a Corpus,
    cfg: &'a SamplerConfig,
) -> impl Iterator<Item = TrainingSample> + 'a {
    corpus
        .patients
        .iter()
        .flat_map(move |p| patient_samples(corpus, p, cfg))
}

/// Same stream as [`build_training_set`], materialized, with patients
/// processed under `mode`.
pub fn collect_training_set(
    corpus: &Corpus,
    cfg: &SamplerConfig,
    mode: Parallelism,
) -> Vec<TrainingSample> {
    exec::map_collect(&corpus.patients, mode, |p| patient_samples(corpus, p, cfg))
        .into_iter()
        .flatten()
        .collect()
}
