//! TransE over the patient, disease and drug graph.
//!
//! Triples are `(patient, has_disease, disease)`, `(patient, has_medicine, drug)`
//! and `(disease, Corr, drug)` for every disease and drug that share a patient.
//! A drug is suspicious when none of the patient's diseases translate close
//! to it along `Corr`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Corpus, DrugId, PatientRecord};
use crate::detector::RankingTable;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::model::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    L1,
    #[default]
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Relation {
    HasDisease = 0,
    HasMedicine = 1,
    Corr = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranseConfig {
    pub dim: usize,
    pub margin: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub norm: Norm,
    pub rng_seed: u64,
}

impl Default for TranseConfig {
    fn default() -> Self {
        TranseConfig {
            dim: 32,
            margin: 1.0,
            epochs: 50,
            learning_rate: 0.01,
            norm: Norm::L2,
            rng_seed: 0,
        }
    }
}

impl TranseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("TransE dimension must be >= 1".into()));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidConfig(format!("TransE margin {} must be >= 0", self.margin)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "TransE learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Entity rows are laid out patients, then diseases, then drugs.
#[derive(Debug, Clone, PartialEq)]
pub struct TranseModel {
    pub entities: Matrix,
    pub relations: Matrix,
    pub margin: f64,
    pub norm: Norm,
    num_patients: usize,
    num_diseases: usize,
}

impl TranseModel {
    pub fn patient_row(&self, i: usize) -> usize {
        i
    }

    pub fn disease_row(&self, d: usize) -> usize {
        self.num_patients + d
    }

    pub fn drug_row(&self, m: usize) -> usize {
        self.num_patients + self.num_diseases + m
    }

    pub fn relation(&self, r: Relation) -> &[f64] {
        self.relations.row(r as usize)
    }

    /// `dist(e_head + r, e_tail)`.
    pub fn distance(&self, head: usize, r: Relation, tail: usize) -> f64 {
        translated_distance(self.entities.row(head), self.relation(r), self.entities.row(tail), self.norm)
    }
}

pub fn translated_distance(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> f64 {
    let it = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t);
    match norm {
        Norm::L1 => it.map(f64::abs).sum(),
        Norm::L2 => it.map(|x| x * x).sum::<f64>().sqrt(),
    }
}

pub fn margin_loss(positive: f64, negative: f64, margin: f64) -> f64 {
    (margin + positive - negative).max(0.0)
}

/// d dist / d h for `dist(h + r, t)`. Zero at the origin.
fn distance_gradient(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> Vec<f64> {
    let diff: Vec<f64> = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t).collect();
    match norm {
        Norm::L1 => diff.iter().map(|&x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }).collect(),
        Norm::L2 => {
            let n = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-12 {
                vec![0.0; diff.len()]
            } else {
                diff.iter().map(|x| x / n).collect()
            }
        }
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: Relation,
    pub tail: usize,
}

/// Entity row ranges for each relation's head and tail.
fn pools(r: Relation, np: usize, nd: usize, nm: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let patients = 0..np;
    let diseases = np..np + nd;
    let drugs = np + nd..np + nd + nm;
    match r {
        Relation::HasDisease => (patients, diseases),
        Relation::HasMedicine => (patients, drugs),
        Relation::Corr => (diseases, drugs),
    }
}

pub fn build_triples(corpus: &Corpus) -> Vec<Triple> {
    let np = corpus.num_patients();
    let nd = corpus.vocabulary.num_diseases();
    let mut corr = BTreeSet::new();
    let mut out = Vec::new();
    for (i, p) in corpus.patients.iter().enumerate() {
        for d in &p.diagnoses {
            out.push(Triple {
                head: i,
                relation: Relation::HasDisease,
                tail: np + d.index(),
            });
        }
        for m in &p.prescriptions {
            out.push(Triple {
                head: i,
                relation: Relation::HasMedicine,
                tail: np + nd + m.index(),
            });
            for d in &p.diagnoses {
                corr.insert((d.index(), m.index()));
            }
        }
    }
    out.extend(corr.into_iter().map(|(d, m)| Triple {
        head: np + d,
        relation: Relation::Corr,
        tail: np + nd + m,
    }));
    out
}

fn pick_other<R: Rng>(rng: &mut R, pool: std::ops::Range<usize>, avoid: usize) -> Option<usize> {
    if pool.len() < 2 {
        return None;
    }
    loop {
        let c = rng.gen_range(pool.clone());
        if c != avoid {
            return Some(c);
        }
    }
}

/// Replaces the head or the tail with another entity of the same type.
fn corrupt<R: Rng>(rng: &mut R, t: &Triple, np: usize, nd: usize, nm: usize) -> Triple {
    let (heads, tails) = pools(t.relation, np, nd, nm);
    let head_first = rng.gen_bool(0.5);
    for head_side in [head_first, !head_first] {
        if head_side {
            if let Some(h) = pick_other(rng, heads.clone(), t.head) {
                return Triple { head: h, ..*t };
            }
        } else if let Some(tl) = pick_other(rng, tails.clone(), t.tail) {
            return Triple { tail: tl, ..*t };
        }
    }
    *t
}

fn init_model(np: usize, nd: usize, nm: usize, cfg: &TranseConfig) -> TranseModel {
    let mut rng = seed::rng_for(cfg.rng_seed, "transe/init");
    let bound = 6.0 / (cfg.dim as f64).sqrt();
    let mut draw = |rows: usize| {
        let data: Vec<f64> = (0..rows * cfg.dim).map(|_| rng.gen_range(-bound..bound)).collect();
        let mut m = Matrix::from_vec(rows, cfg.dim, data).expect("shape");
        for i in 0..rows {
            normalize(m.row_mut(i));
        }
        m
    };
    let relations = draw(3);
    let entities = draw(np + nd + nm);
    TranseModel {
        entities,
        relations,
        margin: cfg.margin,
        norm: cfg.norm,
        num_patients: np,
        num_diseases: nd,
    }
}

pub fn transe_train(corpus: &Corpus, cfg: &TranseConfig) -> Result<(TranseModel, Vec<f64>)> {
    transe_train_with(corpus, cfg, &mut |_| {})
}

/// Like [`transe_train`], calling `observer` after every update step.
/// Returns the model and the mean margin loss of each epoch.
pub fn transe_train_with(
    corpus: &Corpus,
    cfg: &TranseConfig,
    observer: &mut dyn FnMut(&TranseModel),
) -> Result<(TranseModel, Vec<f64>)> {
    cfg.validate()?;
    let np = corpus.num_patients();
    let nd = corpus.vocabulary.num_diseases();
    let nm = corpus.vocabulary.num_drugs();
    let mut model = init_model(np, nd, nm, cfg);
    let mut triples = build_triples(corpus);
    let lr = cfg.learning_rate;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng_for(cfg.rng_seed, &format!("transe/epoch/{epoch}"));
        triples.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, pos) in triples.iter().enumerate() {
            let neg = corrupt(&mut rng, pos, np, nd, nm);
            let r = pos.relation as usize;
            let rel = model.relations.row(r).to_vec();
            let (h, t) = (model.entities.row(pos.head).to_vec(), model.entities.row(pos.tail).to_vec());
            let (hn, tn) = (model.entities.row(neg.head).to_vec(), model.entities.row(neg.tail).to_vec());
            let dp = translated_distance(&h, &rel, &t, cfg.norm);
            let dn = translated_distance(&hn, &rel, &tn, cfg.norm);
            let loss = margin_loss(dp, dn, cfg.margin);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss,
                    step: (epoch * triples.len() + step) as u64,
                    lr,
                });
            }
            total += loss;
            if loss > 0.0 {
                let gp = distance_gradient(&h, &rel, &t, cfg.norm);
                let gn = distance_gradient(&hn, &rel, &tn, cfg.norm);
                let axpy = |m: &mut Matrix, row: usize, g: &[f64], s: f64| {
                    m.row_mut(row).iter_mut().zip(g).for_each(|(x, g)| *x += s * g);
                };
                axpy(&mut model.entities, pos.head, &gp, -lr);
                axpy(&mut model.entities, pos.tail, &gp, lr);
                axpy(&mut model.entities, neg.head, &gn, lr);
                axpy(&mut model.entities, neg.tail, &gn, -lr);
                let rrow = model.relations.row_mut(r);
                rrow.iter_mut().zip(gp.iter().zip(&gn)).for_each(|(x, (p, n))| *x -= lr * (p - n));
                for e in [pos.head, pos.tail, neg.head, neg.tail] {
                    normalize(model.entities.row_mut(e));
                }
            }
            observer(&model);
        }
        let mean = if triples.is_empty() { 0.0 } else { total / triples.len() as f64 };
        log::debug!("transe epoch {epoch}: mean loss {mean:.6}");
        losses.push(mean);
    }
    Ok((model, losses))
}

/// Scores each prescription by negated minimum `Corr` distance from any of
/// the patient's diseases.
pub fn transe_rank(patient: &PatientRecord, model: &TranseModel) -> RankingTable {
    let score = |m: DrugId| {
        patient
            .diagnoses
            .iter()
            .map(|d| model.distance(model.disease_row(d.index()), Relation::Corr, model.drug_row(m.index())))
            .fold(f64::INFINITY, f64::min)
    };
    RankingTable {
        patient_id: patient.patient_id.clone(),
        sum_rank: patient.prescriptions.iter().map(|&m| (m, -score(m))).collect(),
        contexts_used: patient.diagnoses.len(),
    }
}

pub fn transe_rank_corpus(corpus: &Corpus, model: &TranseModel, mode: Parallelism) -> Vec<RankingTable> {
    exec::map_collect(&corpus.patients, mode, |p| transe_rank(p, model))
}
