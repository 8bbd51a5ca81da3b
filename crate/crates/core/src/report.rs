//! JSONL ranking reports, one [`RankingTable`] per line:
//!
//! ```json
//! {"patient_id":"P1","method":"cbowra","ranking":[{"drug":"x","sum_rank":0.02}],"contexts_used":6}
//! ```
//!
//! `ranking` is in ascending score order (most anomalous first).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{DrugId, Vocabulary};
use crate::detector::RankingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDrug {
    pub drug: String,
    pub sum_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub patient_id: String,
    pub method: String,
    pub ranking: Vec<RankedDrug>,
    pub contexts_used: usize,
}

impl ReportLine {
    pub fn from_table(table: &RankingTable, vocab: &Vocabulary, method: &str) -> Self {
        ReportLine {
            patient_id: table.patient_id.clone(),
            method: method.to_string(),
            ranking: table
                .ordered()
                .into_iter()
                .map(|(m, s)| RankedDrug {
                    drug: vocab.drug_name(m).to_string(),
                    sum_rank: s,
                })
                .collect(),
            contexts_used: table.contexts_used,
        }
    }
}

pub fn write_report<W: Write>(
    mut out: W,
    tables: &[RankingTable],
    vocab: &Vocabulary,
    method: &str,
) -> Result<()> {
    for t in tables {
        serde_json::to_writer(&mut out, &ReportLine::from_table(t, vocab, method))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_report<R: BufRead>(reader: R) -> Result<Vec<ReportLine>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Drug-only vocabulary over a set of names, ids in lexicographic order.
pub fn drug_vocabulary<'a, I>(names: I) -> Vocabulary
where
    I: IntoIterator<Item = &'a str>,
{
    let names: BTreeSet<&str> = names.into_iter().collect();
    let n = names.len();
    Vocabulary::from_parts(
        Vec::new(),
        Vec::new(),
        names.into_iter().map(str::to_string).collect(),
        vec![1; n],
    )
    .expect("sorted unique names")
}

/// Rebuilds tables from report lines under `vocab`. Because both orderings
/// break ties by drug name, `ordered()` on the result reproduces each line's
/// ranking order.
pub fn tables_from_report(lines: &[ReportLine], vocab: &Vocabulary) -> Result<Vec<RankingTable>> {
    lines
        .iter()
        .map(|l| {
            let sum_rank = l
                .ranking
                .iter()
                .map(|r| {
                    vocab
                        .drug_id(&r.drug)
                        .map(|m| (m, r.sum_rank))
                        .ok_or_else(|| Error::UnknownName(r.drug.clone()))
                })
                .collect::<Result<BTreeMap<DrugId, f64>>>()?;
            Ok(RankingTable {
                patient_id: l.patient_id.clone(),
                sum_rank,
                contexts_used: l.contexts_used,
            })
        })
        .collect()
}
