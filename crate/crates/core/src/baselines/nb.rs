//! Naive Bayes over drugs as classes and diagnoses as independent features.
//!
//! `score(m) = log P(m) + Σ_{d ∈ D_y} log P(d | m)` with additive smoothing.
//! With a frequency floor `i > 0` (NB+(i)), diseases and drugs seen in fewer
//! than `i` patients are left out of the model.

use crate::corpus::{Corpus, DrugId, PatientRecord};
use crate::detector::RankingTable;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::vectorize;

#[derive(Debug, Clone, PartialEq)]
pub struct NbModel {
    pub alpha: f64,
    pub floor: u32,
    kept_diseases: Vec<bool>,
    kept_drugs: Vec<bool>,
    /// Per drug; meaningful only for kept drugs.
    log_prior: Vec<f64>,
    /// Drug-major `|drugs| x |diseases|`.
    log_cond: Vec<f64>,
    num_diseases: usize,
    unseen_log_prior: f64,
    unseen_log_cond: f64,
}

pub fn nb_train(corpus: &Corpus, alpha: f64, floor: u32) -> Result<NbModel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("smoothing alpha {alpha} must be positive")));
    }
    let vocab = &corpus.vocabulary;
    let min = floor.max(1);
    let kept_diseases: Vec<bool> = vocab.disease_patient_counts().iter().map(|&c| c >= min).collect();
    let kept_drugs: Vec<bool> = vocab.drug_patient_counts().iter().map(|&c| c >= min).collect();
    let n_dis = kept_diseases.iter().filter(|&&k| k).count();
    let n_drug = kept_drugs.iter().filter(|&&k| k).count();
    if n_drug == 0 || n_dis == 0 {
        return Err(Error::InvalidConfig(format!(
            "frequency floor {floor} removes every {}",
            if n_drug == 0 { "drug" } else { "disease" }
        )));
    }
    let cooc = vectorize::drug_vectors(corpus);
    let prior_total: f64 = vocab
        .drug_ids()
        .filter(|m| kept_drugs[m.index()])
        .map(|m| f64::from(vocab.drug_patient_count(m)))
        .sum::<f64>()
        + alpha * n_drug as f64;
    let nd = vocab.num_diseases();
    let mut log_prior = vec![f64::NAN; vocab.num_drugs()];
    let mut log_cond = vec![f64::NAN; vocab.num_drugs() * nd];
    for m in vocab.drug_ids().filter(|m| kept_drugs[m.index()]) {
        log_prior[m.index()] = ((f64::from(vocab.drug_patient_count(m)) + alpha) / prior_total).ln();
        let row = &cooc[m.index()].0;
        let denom: f64 = row
            .iter()
            .zip(&kept_diseases)
            .filter(|(_, &k)| k)
            .map(|(&c, _)| f64::from(c))
            .sum::<f64>()
            + alpha * n_dis as f64;
        for (d, &c) in row.iter().enumerate() {
            if kept_diseases[d] {
                log_cond[m.index() * nd + d] = ((f64::from(c) + alpha) / denom).ln();
            }
        }
    }
    Ok(NbModel {
        alpha,
        floor,
        kept_diseases,
        kept_drugs,
        log_prior,
        log_cond,
        num_diseases: nd,
        unseen_log_prior: (alpha / prior_total).ln(),
        unseen_log_cond: (1.0 / n_dis as f64).ln(),
    })
}

impl NbModel {
    pub fn log_prior(&self, m: DrugId) -> f64 {
        match self.kept_drugs.get(m.index()) {
            Some(true) => self.log_prior[m.index()],
            _ => self.unseen_log_prior,
        }
    }

    /// `None` when the disease is outside the model.
    pub fn log_conditional(&self, disease: usize, m: DrugId) -> Option<f64> {
        if !self.kept_diseases.get(disease).copied().unwrap_or(false) {
            return None;
        }
        Some(match self.kept_drugs.get(m.index()) {
            Some(true) => self.log_cond[m.index() * self.num_diseases + disease],
            _ => self.unseen_log_cond,
        })
    }

    pub fn score(&self, patient: &PatientRecord, m: DrugId) -> f64 {
        self.log_prior(m)
            + patient
                .diagnoses
                .iter()
                .filter_map(|d| self.log_conditional(d.index(), m))
                .sum::<f64>()
    }

    pub fn method_name(&self) -> String {
        if self.floor == 0 {
            "NB".to_string()
        } else {
            format!("NB+({})", self.floor)
        }
    }
}

pub fn nb_rank(patient: &PatientRecord, model: &NbModel) -> RankingTable {
    let used = patient
        .diagnoses
        .iter()
        .filter(|d| model.kept_diseases.get(d.index()).copied().unwrap_or(false))
        .count();
    RankingTable {
        patient_id: patient.patient_id.clone(),
        sum_rank: patient
            .prescriptions
            .iter()
            .map(|&m| (m, model.score(patient, m)))
            .collect(),
        contexts_used: used,
    }
}

pub fn nb_rank_corpus(corpus: &Corpus, model: &NbModel, mode: Parallelism) -> Vec<RankingTable> {
    exec::map_collect(&corpus.patients, mode, |p| nb_rank(p, model))
}
