//! Gold labels, Top-N accuracy and method comparison.

pub mod synth;

pub use synth::{generate_records, generate_synthetic, SynthConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::baselines::{self, LofConfig, TranseConfig};
use crate::corpus::{Corpus, DrugId, Vocabulary};
use crate::detector::{self, DetectorConfig, RankingTable};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::model::{self, Hyperparams};
use crate::sampler::SamplerConfig;

/// Gold labels by name, as stored in gold files.
pub type GoldNames = BTreeMap<String, BTreeSet<String>>;

/// Patient id to the drugs known to be anomalous for that patient.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldLabels {
    labels: BTreeMap<String, BTreeSet<DrugId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLine {
    pub patient_id: String,
    pub anomalous_drugs: Vec<String>,
}

impl GoldLabels {
    pub fn new(labels: BTreeMap<String, BTreeSet<DrugId>>) -> Self {
        let labels = labels.into_iter().filter(|(_, s)| !s.is_empty()).collect();
        GoldLabels { labels }
    }

    pub fn from_names(names: &GoldNames, vocab: &Vocabulary) -> Result<Self> {
        let mut labels = BTreeMap::new();
        for (pid, drugs) in names {
            let ids = drugs
                .iter()
                .map(|m| vocab.drug_id(m).ok_or_else(|| Error::UnknownName(m.clone())))
                .collect::<Result<BTreeSet<_>>>()?;
            labels.insert(pid.clone(), ids);
        }
        Ok(GoldLabels::new(labels))
    }

    pub fn to_names(&self, vocab: &Vocabulary) -> GoldNames {
        self.labels
            .iter()
            .map(|(p, s)| (p.clone(), s.iter().map(|&m| vocab.drug_name(m).to_string()).collect()))
            .collect()
    }

    pub fn get(&self, patient_id: &str) -> Option<&BTreeSet<DrugId>> {
        self.labels.get(patient_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<DrugId>)> {
        self.labels.iter().map(|(p, s)| (p.as_str(), s))
    }

    /// Labeled patients.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn total(&self) -> usize {
        self.labels.values().map(BTreeSet::len).sum()
    }

    /// Every labeled drug must be one of that patient's prescriptions.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyGoldSet);
        }
        for (pid, drugs) in &self.labels {
            let p = corpus.patient(pid).ok_or_else(|| Error::Patient {
                patient_id: pid.clone(),
                reason: "labeled patient not in corpus".into(),
            })?;
            if let Some(m) = drugs.iter().find(|m| !p.prescriptions.contains(m)) {
                return Err(Error::Patient {
                    patient_id: pid.clone(),
                    reason: format!("labeled drug {} is not prescribed", corpus.vocabulary.drug_name(*m)),
                });
            }
        }
        Ok(())
    }
}

pub fn read_gold<R: BufRead>(reader: R) -> Result<GoldNames> {
    let mut out = GoldNames::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GoldLine = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.entry(g.patient_id).or_default().extend(g.anomalous_drugs);
    }
    Ok(out)
}

pub fn write_gold<W: Write>(mut out: W, gold: &GoldNames) -> Result<()> {
    for (pid, drugs) in gold {
        let line = GoldLine {
            patient_id: pid.clone(),
            anomalous_drugs: drugs.iter().cloned().collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// `t / TN` over all labeled anomalies.
    #[default]
    Pooled,
    /// Mean of each patient's hit fraction.
    Macro,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopNEntry {
    pub n: usize,
    pub hits: usize,
    pub total: usize,
    pub accuracy: f64,
    pub evaluated: usize,
    /// Labeled patients with no ranking.
    pub skipped: Vec<String>,
    /// Evaluated patients with fewer than `n` ranked drugs.
    pub short: Vec<String>,
}

pub fn top_n(rankings: &[RankingTable], gold: &GoldLabels, n: usize, averaging: Averaging) -> Result<TopNEntry> {
    if n == 0 {
        return Err(Error::InvalidConfig("top-N requires N >= 1".into()));
    }
    let by_patient: BTreeMap<&str, &RankingTable> = rankings.iter().map(|t| (t.patient_id.as_str(), t)).collect();
    let mut entry = TopNEntry {
        n,
        hits: 0,
        total: 0,
        accuracy: 0.0,
        evaluated: 0,
        skipped: Vec::new(),
        short: Vec::new(),
    };
    let mut macro_sum = 0.0;
    for (pid, labeled) in gold.iter() {
        let Some(table) = by_patient.get(pid) else {
            entry.skipped.push(pid.to_string());
            continue;
        };
        let suspects = detector::top_suspects(table, n)?;
        if suspects.truncated {
            entry.short.push(pid.to_string());
        }
        let hits = suspects.drugs.iter().filter(|(m, _)| labeled.contains(m)).count();
        entry.hits += hits;
        entry.total += labeled.len();
        entry.evaluated += 1;
        macro_sum += hits as f64 / labeled.len() as f64;
    }
    if entry.total == 0 {
        return Err(Error::EmptyGoldSet);
    }
    entry.accuracy = match averaging {
        Averaging::Pooled => entry.hits as f64 / entry.total as f64,
        Averaging::Macro => macro_sum / entry.evaluated as f64,
    };
    Ok(entry)
}

pub const MAX_N: usize = 5;

/// Top-1 through Top-5.
pub fn evaluate(rankings: &[RankingTable], gold: &GoldLabels, averaging: Averaging) -> Result<Vec<TopNEntry>> {
    (1..=MAX_N).map(|n| top_n(rankings, gold, n, averaging)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Cbowra {
        sampler: SamplerConfig,
        hyperparams: Hyperparams,
        detector: DetectorConfig,
    },
    NaiveBayes {
        alpha: f64,
        floor: u32,
    },
    Lof(LofConfig),
    Transe(TranseConfig),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Cbowra { .. } => "cbowra".into(),
            Method::NaiveBayes { floor: 0, .. } => "NB".into(),
            Method::NaiveBayes { floor, .. } => format!("NB+({floor})"),
            Method::Lof(_) => "LOF".into(),
            Method::Transe(_) => "TransE".into(),
        }
    }

    /// Trains if needed and ranks every patient.
    pub fn rank(&self, corpus: &Corpus, mode: Parallelism) -> Result<Vec<RankingTable>> {
        match self {
            Method::Cbowra {
                sampler,
                hyperparams,
                detector: dcfg,
            } => {
                let out = model::train(corpus, sampler, hyperparams, &mut |_| {})?;
                Ok(detector::rank_corpus(corpus, &out.params, dcfg, mode)?.tables)
            }
            Method::NaiveBayes { alpha, floor } => {
                let m = baselines::nb_train(corpus, *alpha, *floor)?;
                Ok(baselines::nb::nb_rank_corpus(corpus, &m, mode))
            }
            Method::Lof(cfg) => baselines::lof_rank(corpus, cfg, mode),
            Method::Transe(cfg) => {
                let (m, _) = baselines::transe_train(corpus, cfg)?;
                Ok(baselines::transe::transe_rank_corpus(corpus, &m, mode))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    /// Top-1..Top-5, or the error that stopped this method.
    pub result: std::result::Result<Vec<f64>, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Rows sorted by Top-1 descending, ties by name, failed methods last.
    pub fn from_rows(mut rows: Vec<ComparisonRow>) -> Self {
        rows.sort_by(|a, b| match (&a.result, &b.result) {
            (Ok(x), Ok(y)) => y[0].total_cmp(&x[0]).then_with(|| a.method.cmp(&b.method)),
            (Ok(_), Err(_)) => std::cmp::Ordering::Less,
            (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
            (Err(_), Err(_)) => a.method.cmp(&b.method),
        });
        ComparisonTable { rows }
    }

    pub fn from_rankings(runs: Vec<(String, Vec<RankingTable>)>, gold: &GoldLabels, averaging: Averaging) -> Self {
        let rows = runs
            .into_iter()
            .map(|(method, tables)| ComparisonRow {
                method,
                result: accuracies(&tables, gold, averaging).map_err(|e| e.to_string()),
            })
            .collect();
        ComparisonTable::from_rows(rows)
    }

    pub fn get(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "top1", "top2", "top3", "top4", "top5"])?;
        for row in &self.rows {
            let mut rec = vec![row.method.clone()];
            match &row.result {
                Ok(v) => rec.extend(v.iter().map(|a| a.to_string())),
                Err(_) => rec.extend(std::iter::repeat_n(String::new(), MAX_N)),
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        write!(f, "{:<width$}", "method")?;
        for n in 1..=MAX_N {
            write!(f, "  {:>6}", format!("Top-{n}"))?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:<width$}", row.method)?;
            match &row.result {
                Ok(v) => {
                    for a in v {
                        write!(f, "  {a:>6.3}")?;
                    }
                }
                Err(e) => write!(f, "  error: {e}")?,
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn accuracies(tables: &[RankingTable], gold: &GoldLabels, averaging: Averaging) -> Result<Vec<f64>> {
    Ok(evaluate(tables, gold, averaging)?.into_iter().map(|e| e.accuracy).collect())
}

/// Runs every method on `corpus`. A failing method gets an error row.
pub fn evaluate_methods(
    corpus: &Corpus,
    gold: &GoldLabels,
    methods: &[Method],
    averaging: Averaging,
    mode: Parallelism,
) -> ComparisonTable {
    let rows = methods
        .iter()
        .map(|m| {
            let result = m
                .rank(corpus, mode)
                .and_then(|t| accuracies(&t, gold, averaging))
                .map_err(|e| {
                    log::warn!("{} failed: {e}", m.name());
                    e.to_string()
                });
            ComparisonRow { method: m.name(), result }
        })
        .collect();
    ComparisonTable::from_rows(rows)
}
