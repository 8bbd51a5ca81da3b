//! Count vectorizations over the disease dimension: a multi-hot vector per
//! patient and a co-occurrence vector per drug.

use std::io::{self, Write};

use crate::corpus::{Corpus, PatientRecord, Vocabulary};

/// Entry `d` counts disease `d` in a patient's diagnoses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagnosisVector(pub Vec<u32>);

/// Entry `d` counts distinct patients with disease `d` who take the drug.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrugCooccurrenceVector(pub Vec<u32>);

pub fn diagnosis_vector(patient: &PatientRecord, vocab: &Vocabulary) -> DiagnosisVector {
    let mut v = vec![0u32; vocab.num_diseases()];
    for d in &patient.diagnoses {
        v[d.index()] += 1;
    }
    DiagnosisVector(v)
}

/// One vector per drug, indexed by `DrugId`.
pub fn drug_vectors(corpus: &Corpus) -> Vec<DrugCooccurrenceVector> {
    let n_dis = corpus.vocabulary.num_diseases();
    let mut out = vec![DrugCooccurrenceVector(vec![0; n_dis]); corpus.vocabulary.num_drugs()];
    for p in &corpus.patients {
        for m in &p.prescriptions {
            let row = &mut out[m.index()].0;
            for d in &p.diagnoses {
                row[d.index()] += 1;
            }
        }
    }
    out
}

fn write_tsv_header<W: Write>(out: &mut W, vocab: &Vocabulary, first: &str) -> io::Result<()> {
    write!(out, "{first}")?;
    for name in vocab.disease_names() {
        write!(out, "\t{name}")?;
    }
    writeln!(out)
}

fn write_tsv_row<W: Write>(out: &mut W, name: &str, values: &[u32]) -> io::Result<()> {
    write!(out, "{name}")?;
    for v in values {
        write!(out, "\t{v}")?;
    }
    writeln!(out)
}

/// Rows are patients, columns are disease names.
pub fn write_diagnosis_tsv<W: Write>(corpus: &Corpus, mut out: W) -> io::Result<()> {
    write_tsv_header(&mut out, &corpus.vocabulary, "patient")?;
    for p in &corpus.patients {
        let v = diagnosis_vector(p, &corpus.vocabulary);
        write_tsv_row(&mut out, &p.patient_id, &v.0)?;
    }
    Ok(())
}

/// Rows are drugs, columns are disease names.
pub fn write_drug_tsv<W: Write>(corpus: &Corpus, mut out: W) -> io::Result<()> {
    write_tsv_header(&mut out, &corpus.vocabulary, "drug")?;
    for (i, v) in drug_vectors(corpus).iter().enumerate() {
        let name = &corpus.vocabulary.drug_names()[i];
        write_tsv_row(&mut out, name, &v.0)?;
    }
    Ok(())
}
