//! Ranking accumulation.
//!
//! A trained model concentrates nearly all probability on one drug per
//! context, which rules that drug out but leaves the others tied near zero.
//! Summing each prescribed drug's probability over every `m`-subset of the
//! patient's diagnoses separates them: the drug that is never plausible for
//! any context ends with the smallest `SumRank`.

use std::collections::BTreeMap;

use crate::corpus::{Corpus, DiseaseId, DrugId, PatientRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::model::{self, CandidateScores, ModelParams};
use crate::sampler::{self, NegativeSampler};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    /// Add the softmax probability.
    #[default]
    Probability,
    /// Add the drug's ascending rank among the candidates (0 = least likely).
    RankPosition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub context_size: usize,
    /// External negatives appended to each context's candidate set.
    pub num_negatives: usize,
    pub max_contexts: Option<usize>,
    pub frequency_exponent: f64,
    pub score_mode: ScoreMode,
    pub rng_seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            context_size: 2,
            num_negatives: 5,
            max_contexts: None,
            frequency_exponent: 1.0,
            score_mode: ScoreMode::Probability,
            rng_seed: 0,
        }
    }
}

/// Per-patient scores, lower = more anomalous.
///
/// Scores are compared with ties broken by drug id, which is lexicographic
/// drug-name order within a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTable {
    pub patient_id: String,
    pub sum_rank: BTreeMap<DrugId, f64>,
    pub contexts_used: usize,
}

impl RankingTable {
    /// Drugs in ascending score order.
    pub fn ordered(&self) -> Vec<(DrugId, f64)> {
        let mut v: Vec<(DrugId, f64)> = self.sum_rank.iter().map(|(&m, &s)| (m, s)).collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suspects {
    pub drugs: Vec<(DrugId, f64)>,
    /// `n` exceeded the number of prescribed drugs.
    pub truncated: bool,
}

pub fn top_suspects(table: &RankingTable, n: usize) -> Result<Suspects> {
    if n == 0 {
        return Err(Error::InvalidConfig("top-N requires N >= 1".into()));
    }
    let mut drugs = table.ordered();
    let truncated = n > drugs.len();
    drugs.truncate(n);
    Ok(Suspects { drugs, truncated })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipRecord {
    pub patient_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingOutcome {
    pub tables: Vec<RankingTable>,
    pub skipped: Vec<SkipRecord>,
}

fn check_shapes(params: &ModelParams, vocab: &Vocabulary) -> Result<()> {
    if params.disease_embeddings.rows() != vocab.num_diseases() {
        return Err(Error::DimensionMismatch {
            expected: vocab.num_diseases(),
            actual: params.disease_embeddings.rows(),
        });
    }
    if params.drug_embeddings.rows() != vocab.num_drugs() {
        return Err(Error::DimensionMismatch {
            expected: vocab.num_drugs(),
            actual: params.drug_embeddings.rows(),
        });
    }
    Ok(())
}

pub fn rank_patient(
    patient: &PatientRecord,
    params: &ModelParams,
    vocab: &Vocabulary,
    cfg: &DetectorConfig,
) -> Result<RankingTable> {
    rank_patient_traced(patient, params, vocab, cfg, &mut |_, _| {})
}

/// Like [`rank_patient`], also handing every context and its full candidate
/// scores to `trace`.
pub fn rank_patient_traced(
    patient: &PatientRecord,
    params: &ModelParams,
    vocab: &Vocabulary,
    cfg: &DetectorConfig,
    trace: &mut dyn FnMut(&[DiseaseId], &CandidateScores),
) -> Result<RankingTable> {
    let fail = |reason: String| Error::Patient {
        patient_id: patient.patient_id.clone(),
        reason,
    };
    if cfg.context_size == 0 {
        return Err(Error::InvalidConfig("context size must be >= 1".into()));
    }
    if patient.prescriptions.is_empty() {
        return Err(fail("no prescriptions".into()));
    }
    if patient.diagnoses.len() < cfg.context_size {
        return Err(fail(format!(
            "{} diagnoses, fewer than context size {}",
            patient.diagnoses.len(),
            cfg.context_size
        )));
    }
    let mut rng = seed::rng_for(cfg.rng_seed, &format!("detect/{}", patient.patient_id));
    let contexts =
        sampler::enumerate_contexts(patient, cfg.context_size, cfg.max_contexts, &mut rng);
    let ballast = if cfg.num_negatives > 0 {
        NegativeSampler::new(
            vocab.drug_ids(),
            &patient.prescriptions,
            vocab,
            cfg.frequency_exponent,
        )
        .ok()
    } else {
        None
    };
    let prescribed: Vec<DrugId> = patient.prescriptions.iter().copied().collect();
    let mut sum_rank: BTreeMap<DrugId, f64> = prescribed.iter().map(|&m| (m, 0.0)).collect();
    let mut candidates = Vec::with_capacity(prescribed.len() + cfg.num_negatives);
    for ctx in &contexts {
        candidates.clear();
        candidates.extend_from_slice(&prescribed);
        if let Some(s) = &ballast {
            candidates.extend(s.draw_distinct(&mut rng, cfg.num_negatives));
        }
        let h = model::project(ctx, params);
        let scores = model::score_candidates(&h, &candidates, params);
        trace(ctx, &scores);
        match cfg.score_mode {
            ScoreMode::Probability => {
                for &(m, p) in &scores.entries[..prescribed.len()] {
                    *sum_rank.get_mut(&m).unwrap() += p;
                }
            }
            ScoreMode::RankPosition => {
                for &(m, p) in &scores.entries[..prescribed.len()] {
                    let below = scores.entries.iter().filter(|e| e.1 < p).count();
                    *sum_rank.get_mut(&m).unwrap() += below as f64;
                }
            }
        }
    }
    Ok(RankingTable {
        patient_id: patient.patient_id.clone(),
        sum_rank,
        contexts_used: contexts.len(),
    })
}

/// Ranks every patient. Per-patient failures become skip records. Each
/// patient's negatives come from a seed derived from its id, so parallel and
/// sequential runs agree exactly.
pub fn rank_corpus(
    corpus: &Corpus,
    params: &ModelParams,
    cfg: &DetectorConfig,
    mode: Parallelism,
) -> Result<RankingOutcome> {
    check_shapes(params, &corpus.vocabulary)?;
    let results = exec::map_collect(&corpus.patients, mode, |p| {
        rank_patient(p, params, &corpus.vocabulary, cfg)
    });
    let mut tables = Vec::new();
    let mut skipped = Vec::new();
    for (p, r) in corpus.patients.iter().zip(results) {
        match r {
            Ok(t) => tables.push(t),
            Err(Error::Patient { reason, .. }) => {
                log::warn!("skipping patient {}: {reason}", p.patient_id);
                skipped.push(SkipRecord {
                    patient_id: p.patient_id.clone(),
                    reason,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RankingOutcome { tables, skipped })
}
