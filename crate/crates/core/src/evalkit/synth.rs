//! Synthetic corpora with planted anomalies.
//!
//! Each condition owns a disjoint pool of diseases and drugs. A patient
//! draws a few conditions, then some diseases and drugs from each pool.
//! An anomalous patient has one drug swapped for a drug from a condition
//! they do not have.
//!
//! Names encode the owning condition: `dis_c03_2`, `drug_c03_7`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;

use super::{GoldLabels, GoldNames};
use crate::corpus::{ingest, AliasMap, Corpus, RawTriple};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_conditions: usize,
    pub diseases_per_condition: usize,
    pub drugs_per_condition: usize,
    pub num_patients: usize,
    /// Inclusive range.
    pub conditions_per_patient: (usize, usize),
    /// Diseases drawn per held condition, inclusive.
    pub diseases_drawn: (usize, usize),
    /// Drugs drawn per held condition, inclusive.
    pub drugs_drawn: (usize, usize),
    pub anomaly_rate: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_conditions: 10,
            diseases_per_condition: 5,
            drugs_per_condition: 8,
            num_patients: 500,
            conditions_per_patient: (1, 3),
            diseases_drawn: (2, 4),
            drugs_drawn: (2, 4),
            anomaly_rate: 0.3,
            rng_seed: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (usize, usize), pool: usize) -> Result<()> {
    if lo == 0 || lo > hi || hi > pool {
        return Err(Error::InvalidConfig(format!(
            "{name} range ({lo}, {hi}) must satisfy 1 <= lo <= hi <= {pool}"
        )));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_patients == 0 {
            return Err(Error::InvalidConfig("num_patients must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.anomaly_rate) {
            return Err(Error::InvalidConfig(format!(
                "anomaly_rate {} must lie in [0, 1]",
                self.anomaly_rate
            )));
        }
        check_range("conditions_per_patient", self.conditions_per_patient, self.num_conditions)?;
        check_range("diseases_drawn", self.diseases_drawn, self.diseases_per_condition)?;
        check_range("drugs_drawn", self.drugs_drawn, self.drugs_per_condition)?;
        if self.anomaly_rate > 0.0 && self.conditions_per_patient.1 >= self.num_conditions {
            return Err(Error::InvalidConfig(
                "anomalies need a condition the patient lacks: conditions_per_patient max must be < num_conditions"
                    .into(),
            ));
        }
        Ok(())
    }
}

pub fn disease_name(condition: usize, j: usize) -> String {
    format!("dis_c{condition:02}_{j}")
}

pub fn drug_name(condition: usize, j: usize) -> String {
    format!("drug_c{condition:02}_{j}")
}

/// Condition index encoded in a generated name.
pub fn condition_of(name: &str) -> Option<usize> {
    let rest = name.split("_c").nth(1)?;
    rest.split('_').next()?.parse().ok()
}

/// Raw records plus gold anomalies by name.
pub fn generate_records(cfg: &SynthConfig) -> Result<(Vec<RawTriple>, GoldNames)> {
    cfg.validate()?;
    let mut rng = seed::rng_for(cfg.rng_seed, "synth");
    let width = cfg.num_patients.to_string().len();
    let mut records = Vec::with_capacity(cfg.num_patients);
    let mut gold = BTreeMap::new();
    for i in 0..cfg.num_patients {
        let k = rng.gen_range(cfg.conditions_per_patient.0..=cfg.conditions_per_patient.1);
        let mut held = index::sample(&mut rng, cfg.num_conditions, k).into_vec();
        held.sort_unstable();
        let mut diseases = BTreeSet::new();
        let mut drugs = BTreeSet::new();
        for &c in &held {
            let nd = rng.gen_range(cfg.diseases_drawn.0..=cfg.diseases_drawn.1);
            for j in index::sample(&mut rng, cfg.diseases_per_condition, nd) {
                diseases.insert(disease_name(c, j));
            }
            let nm = rng.gen_range(cfg.drugs_drawn.0..=cfg.drugs_drawn.1);
            for j in index::sample(&mut rng, cfg.drugs_per_condition, nm) {
                drugs.insert(drug_name(c, j));
            }
        }
        let pid = format!("S{i:0width$}");
        if rng.gen_bool(cfg.anomaly_rate) {
            let out = rng.gen_range(0..drugs.len());
            let removed = drugs.iter().nth(out).cloned().expect("in range");
            drugs.remove(&removed);
            let others: Vec<usize> = (0..cfg.num_conditions).filter(|c| !held.contains(c)).collect();
            let c = others[rng.gen_range(0..others.len())];
            let planted = drug_name(c, rng.gen_range(0..cfg.drugs_per_condition));
            drugs.insert(planted.clone());
            gold.insert(pid.clone(), BTreeSet::from([planted]));
        }
        records.push(RawTriple {
            patient_id: pid,
            diagnosis_names: diseases.into_iter().collect(),
            drug_names: drugs.into_iter().collect(),
        });
    }
    Ok((records, gold))
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Corpus, GoldLabels)> {
    let (records, gold) = generate_records(cfg)?;
    let corpus = ingest(records.into_iter().map(Ok), &AliasMap::default())?;
    let gold = GoldLabels::from_names(&gold, &corpus.vocabulary)?;
    Ok((corpus, gold))
}
