//! Patient corpus: raw triples in, indexed records and vocabularies out.
//!
//! Records for the same `patient_id` are merged into one diagnosis set and one
//! prescription set. Names are normalized through an [`AliasMap`] before
//! indexing, and ids are assigned in lexicographic name order, so the corpus
//! does not depend on input order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DiseaseId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DrugId(pub u32);

impl DiseaseId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl DrugId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for DiseaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.0)
    }
}

impl fmt::Display for DrugId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.0)
    }
}

/// One input record: a patient with some diagnoses and some drugs.
///
/// JSONL encoding: `{"patient_id": str, "diagnoses": [str], "drugs": [str]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTriple {
    pub patient_id: String,
    #[serde(rename = "diagnoses")]
    pub diagnosis_names: Vec<String>,
    #[serde(rename = "drugs")]
    pub drug_names: Vec<String>,
}

impl RawTriple {
    fn validate(&self, line: usize) -> Result<()> {
        let fail = |message: &str| {
            Err(Error::MalformedRecord {
                line,
                message: message.to_string(),
            })
        };
        if self.patient_id.trim().is_empty() {
            return fail("empty patient_id");
        }
        if !self.diagnosis_names.iter().any(|n| !n.trim().is_empty()) {
            return fail("record has no diagnosis names");
        }
        if !self.drug_names.iter().any(|n| !n.trim().is_empty()) {
            return fail("record has no drug names");
        }
        Ok(())
    }
}

/// Reads one [`RawTriple`] per non-blank line. Errors carry 1-based line numbers.
pub fn read_jsonl<R: BufRead>(reader: R) -> impl Iterator<Item = Result<RawTriple>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line_no = i + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::Io(e))),
            };
            if line.trim().is_empty() {
                return None;
            }
            let parsed = serde_json::from_str::<RawTriple>(&line)
                .map_err(|e| Error::MalformedRecord {
                    line: line_no,
                    message: e.to_string(),
                })
                .and_then(|t| t.validate(line_no).map(|_| t));
            Some(parsed)
        })
}

/// Reads the exploded CSV encoding: header `patient_id,diagnosis,drug`, each
/// row contributing at most one diagnosis and one drug.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<RawTriple>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["patient_id", "diagnosis", "drug"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::MalformedRecord {
            line: 1,
            message: format!("expected header patient_id,diagnosis,drug, found {:?}", headers),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.len() != 3 {
            return Err(Error::MalformedRecord {
                line,
                message: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let patient_id = row[0].trim();
        let diagnosis = row[1].trim();
        let drug = row[2].trim();
        if patient_id.is_empty() {
            return Err(Error::MalformedRecord {
                line,
                message: "empty patient_id".into(),
            });
        }
        if diagnosis.is_empty() && drug.is_empty() {
            return Err(Error::MalformedRecord {
                line,
                message: "row has neither diagnosis nor drug".into(),
            });
        }
        let one = |s: &str| if s.is_empty() { vec![] } else { vec![s.to_string()] };
        out.push(RawTriple {
            patient_id: patient_id.to_string(),
            diagnosis_names: one(diagnosis),
            drug_names: one(drug),
        });
    }
    Ok(out)
}

/// Original name to unified name. A unified name never maps onward to a
/// different name, so a single lookup is a complete normalization.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasMap {
    entries: BTreeMap<String, String>,
}

impl AliasMap {
    pub fn new<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for (k, v) in pairs {
            let k = k.into().trim().to_string();
            let v = v.into().trim().to_string();
            if k.is_empty() || v.is_empty() {
                return Err(Error::InvalidAliasMap("empty name".into()));
            }
            if let Some(prev) = entries.insert(k.clone(), v.clone()) {
                if prev != v {
                    return Err(Error::InvalidAliasMap(format!(
                        "{k:?} maps to both {prev:?} and {v:?}"
                    )));
                }
            }
        }
        for (k, v) in &entries {
            if let Some(next) = entries.get(v) {
                if next != v {
                    return Err(Error::InvalidAliasMap(format!(
                        "chained alias {k:?} -> {v:?} -> {next:?}"
                    )));
                }
            }
        }
        Ok(AliasMap { entries })
    }

    /// Two-column CSV `original,unified`. A leading `original,unified` header
    /// row is skipped.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut pairs = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            if row.len() != 2 {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    message: format!("alias row needs 2 fields, found {}", row.len()),
                });
            }
            if i == 0 && row[0].trim() == "original" && row[1].trim() == "unified" {
                continue;
            }
            pairs.push((row[0].to_string(), row[1].to_string()));
        }
        AliasMap::new(pairs)
    }

    pub fn resolve<'a>(&'a self, name: &'a str) -> &'a str {
        let name = name.trim();
        self.entries.get(name).map(String::as_str).unwrap_or(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Bidirectional name/id maps for diseases and drugs, with distinct-patient
/// counts per entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    disease_names: Vec<String>,
    drug_names: Vec<String>,
    disease_index: HashMap<String, DiseaseId>,
    drug_index: HashMap<String, DrugId>,
    disease_patient_counts: Vec<u32>,
    drug_patient_counts: Vec<u32>,
}

impl Vocabulary {
    /// Names must be strictly increasing (lexicographic id policy) and each
    /// count list must match its name list in length.
    pub fn from_parts(
        disease_names: Vec<String>,
        disease_patient_counts: Vec<u32>,
        drug_names: Vec<String>,
        drug_patient_counts: Vec<u32>,
    ) -> Result<Self> {
        if disease_names.len() != disease_patient_counts.len() {
            return Err(Error::DimensionMismatch {
                expected: disease_names.len(),
                actual: disease_patient_counts.len(),
            });
        }
        if drug_names.len() != drug_patient_counts.len() {
            return Err(Error::DimensionMismatch {
                expected: drug_names.len(),
                actual: drug_patient_counts.len(),
            });
        }
        let sorted = |names: &[String]| names.windows(2).all(|w| w[0] < w[1]);
        if !sorted(&disease_names) || !sorted(&drug_names) {
            return Err(Error::InvalidConfig(
                "vocabulary names must be unique and lexicographically ordered".into(),
            ));
        }
        let disease_index = disease_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), DiseaseId(i as u32)))
            .collect();
        let drug_index = drug_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), DrugId(i as u32)))
            .collect();
        Ok(Vocabulary {
            disease_names,
            drug_names,
            disease_index,
            drug_index,
            disease_patient_counts,
            drug_patient_counts,
        })
    }

    pub fn num_diseases(&self) -> usize {
        self.disease_names.len()
    }

    pub fn num_drugs(&self) -> usize {
        self.drug_names.len()
    }

    pub fn disease_id(&self, name: &str) -> Option<DiseaseId> {
        self.disease_index.get(name).copied()
    }

    pub fn drug_id(&self, name: &str) -> Option<DrugId> {
        self.drug_index.get(name).copied()
    }

    pub fn disease_name(&self, id: DiseaseId) -> &str {
        &self.disease_names[id.index()]
    }

    pub fn drug_name(&self, id: DrugId) -> &str {
        &self.drug_names[id.index()]
    }

    pub fn disease_names(&self) -> &[String] {
        &self.disease_names
    }

    pub fn drug_names(&self) -> &[String] {
        &self.drug_names
    }

    pub fn drug_patient_count(&self, id: DrugId) -> u32 {
        self.drug_patient_counts[id.index()]
    }

    pub fn disease_patient_count(&self, id: DiseaseId) -> u32 {
        self.disease_patient_counts[id.index()]
    }

    pub fn drug_patient_counts(&self) -> &[u32] {
        &self.drug_patient_counts
    }

    pub fn disease_patient_counts(&self) -> &[u32] {
        &self.disease_patient_counts
    }

    pub fn drug_ids(&self) -> impl Iterator<Item = DrugId> + '_ {
        (0..self.drug_names.len() as u32).map(DrugId)
    }

    pub fn disease_ids(&self) -> impl Iterator<Item = DiseaseId> + '_ {
        (0..self.disease_names.len() as u32).map(DiseaseId)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub diagnoses: BTreeSet<DiseaseId>,
    pub prescriptions: BTreeSet<DrugId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub vocabulary: Vocabulary,
    /// Sorted by `patient_id`.
    pub patients: Vec<PatientRecord>,
    /// Union of all prescriptions.
    pub all_drugs: BTreeSet<DrugId>,
}

type NamedPatients = BTreeMap<String, (BTreeSet<String>, BTreeSet<String>)>;

impl Corpus {
    /// Builds a corpus from already-normalized, merged name sets. Patients
    /// lacking either diagnoses or drugs are dropped.
    fn from_named(named: NamedPatients) -> Result<Self> {
        let mut disease_counts: BTreeMap<&str, u32> = BTreeMap::new();
        let mut drug_counts: BTreeMap<&str, u32> = BTreeMap::new();
        let mut kept = Vec::new();
        for (pid, (dx, rx)) in &named {
            if dx.is_empty() || rx.is_empty() {
                log::warn!(
                    "dropping patient {pid}: {} diagnoses, {} drugs",
                    dx.len(),
                    rx.len()
                );
                continue;
            }
            for d in dx {
                *disease_counts.entry(d).or_default() += 1;
            }
            for m in rx {
                *drug_counts.entry(m).or_default() += 1;
            }
            kept.push((pid, dx, rx));
        }
        if kept.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let (disease_names, disease_counts): (Vec<String>, Vec<u32>) = disease_counts
            .into_iter()
            .map(|(n, c)| (n.to_string(), c))
            .unzip();
        let (drug_names, drug_counts): (Vec<String>, Vec<u32>) = drug_counts
            .into_iter()
            .map(|(n, c)| (n.to_string(), c))
            .unzip();
        let vocabulary =
            Vocabulary::from_parts(disease_names, disease_counts, drug_names, drug_counts)?;
        let patients: Vec<PatientRecord> = kept
            .into_iter()
            .map(|(pid, dx, rx)| PatientRecord {
                patient_id: pid.clone(),
                diagnoses: dx.iter().map(|n| vocabulary.disease_index[n]).collect(),
                prescriptions: rx.iter().map(|n| vocabulary.drug_index[n]).collect(),
            })
            .collect();
        let all_drugs = vocabulary.drug_ids().collect();
        Ok(Corpus {
            vocabulary,
            patients,
            all_drugs,
        })
    }

    fn to_named_map(&self) -> NamedPatients {
        self.patients
            .iter()
            .map(|p| {
                let dx = p
                    .diagnoses
                    .iter()
                    .map(|&d| self.vocabulary.disease_name(d).to_string())
                    .collect();
                let rx = p
                    .prescriptions
                    .iter()
                    .map(|&m| self.vocabulary.drug_name(m).to_string())
                    .collect();
                (p.patient_id.clone(), (dx, rx))
            })
            .collect()
    }

    /// One normalized triple per patient, names in lexicographic order. This
    /// is the on-disk corpus encoding; re-ingesting it yields the same corpus.
    pub fn to_records(&self) -> Vec<RawTriple> {
        self.to_named_map()
            .into_iter()
            .map(|(patient_id, (dx, rx))| RawTriple {
                patient_id,
                diagnosis_names: dx.into_iter().collect(),
                drug_names: rx.into_iter().collect(),
            })
            .collect()
    }

    pub fn num_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn patient(&self, patient_id: &str) -> Option<&PatientRecord> {
        self.patients
            .binary_search_by(|p| p.patient_id.as_str().cmp(patient_id))
            .ok()
            .map(|i| &self.patients[i])
    }

    /// Re-indexes this corpus under another vocabulary (typically a trained
    /// model's). Unknown diagnoses are dropped from a patient; a patient with
    /// an unknown drug, or with no known diagnoses left, is skipped and
    /// reported as `(patient_id, reason)`.
    pub fn project_onto(&self, vocab: &Vocabulary) -> (Corpus, Vec<(String, String)>) {
        let mut skipped = Vec::new();
        let mut patients = Vec::new();
        for p in &self.patients {
            let diagnoses: BTreeSet<DiseaseId> = p
                .diagnoses
                .iter()
                .filter_map(|&d| vocab.disease_id(self.vocabulary.disease_name(d)))
                .collect();
            let mut prescriptions = BTreeSet::new();
            let mut unknown = None;
            for &m in &p.prescriptions {
                let name = self.vocabulary.drug_name(m);
                match vocab.drug_id(name) {
                    Some(id) => {
                        prescriptions.insert(id);
                    }
                    None => {
                        unknown = Some(name.to_string());
                        break;
                    }
                }
            }
            if let Some(name) = unknown {
                skipped.push((p.patient_id.clone(), format!("unknown drug {name:?}")));
            } else if diagnoses.is_empty() {
                skipped.push((p.patient_id.clone(), "no known diagnoses".to_string()));
            } else {
                patients.push(PatientRecord {
                    patient_id: p.patient_id.clone(),
                    diagnoses,
                    prescriptions,
                });
            }
        }
        let all_drugs = patients
            .iter()
            .flat_map(|p| p.prescriptions.iter().copied())
            .collect();
        (
            Corpus {
                vocabulary: vocab.clone(),
                patients,
                all_drugs,
            },
            skipped,
        )
    }

    /// Drugs prescribed to fewer than `min_count` distinct patients.
    pub fn rare_drugs(&self, min_count: u32) -> Vec<DrugId> {
        self.vocabulary
            .drug_ids()
            .filter(|&m| self.vocabulary.drug_patient_count(m) < min_count)
            .collect()
    }
}

/// Merges records per patient, normalizes diagnosis names through `aliases`,
/// and indexes everything.
pub fn ingest<I>(source: I, aliases: &AliasMap) -> Result<Corpus>
where
    I: IntoIterator<Item = Result<RawTriple>>,
{
    let mut named = NamedPatients::new();
    let mut seen_any = false;
    for record in source {
        let record = record?;
        seen_any = true;
        let entry = named
            .entry(record.patient_id.trim().to_string())
            .or_default();
        for d in &record.diagnosis_names {
            let unified = aliases.resolve(d);
            if !unified.is_empty() {
                entry.0.insert(unified.to_string());
            }
        }
        for m in &record.drug_names {
            let m = m.trim();
            if !m.is_empty() {
                entry.1.insert(m.to_string());
            }
        }
    }
    if !seen_any {
        return Err(Error::EmptyCorpus);
    }
    Corpus::from_named(named)
}

#[derive(Debug, Clone)]
pub struct Screened {
    pub corpus: Corpus,
    pub removed_drugs: Vec<String>,
    pub dropped_patients: Vec<String>,
}

/// Unifies drug aliases, then removes drugs prescribed to at least
/// `ubiquity_threshold` of patients. Removal can leave patients with no
/// drugs; those are dropped, which changes the fractions, so the pass repeats
/// until no drug reaches the threshold.
pub fn screen_medications(
    corpus: &Corpus,
    ubiquity_threshold: f64,
    drug_aliases: &AliasMap,
) -> Result<Screened> {
    if !(ubiquity_threshold > 0.0 && ubiquity_threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "ubiquity threshold {ubiquity_threshold} outside (0, 1]"
        )));
    }
    let mut named = corpus.to_named_map();
    for (_, rx) in named.values_mut() {
        *rx = rx
            .iter()
            .map(|m| drug_aliases.resolve(m).to_string())
            .collect();
    }
    let mut removed_drugs = Vec::new();
    let mut dropped_patients = Vec::new();
    loop {
        let total = named.len();
        if total == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, rx) in named.values() {
            for m in rx {
                *counts.entry(m.as_str()).or_default() += 1;
            }
        }
        let ubiquitous: BTreeSet<String> = counts
            .into_iter()
            .filter(|&(_, c)| c as f64 / total as f64 >= ubiquity_threshold)
            .map(|(m, _)| m.to_string())
            .collect();
        if ubiquitous.is_empty() {
            break;
        }
        for (_, rx) in named.values_mut() {
            rx.retain(|m| !ubiquitous.contains(m));
        }
        named.retain(|pid, (_, rx)| {
            if rx.is_empty() {
                log::warn!("screening left patient {pid} with no prescriptions; dropped");
                dropped_patients.push(pid.clone());
                false
            } else {
                true
            }
        });
        removed_drugs.extend(ubiquitous);
    }
    Ok(Screened {
        corpus: Corpus::from_named(named)?,
        removed_drugs,
        dropped_patients,
    })
}
