use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use cbowra::corpus::{self, AliasMap, RawTriple};
use cbowra::{Corpus, Vocabulary};

/// A problem with how the tool was invoked. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(usage(format!("{}: no such file", path.display())));
    }
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// `path`, or stdout for `None`.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn read_aliases(path: Option<&Path>) -> Result<AliasMap> {
    match path {
        None => Ok(AliasMap::default()),
        Some(p) => AliasMap::from_csv(open(p)?).with_context(|| format!("in {}", p.display())),
    }
}

/// Raw records from a `.csv` (exploded rows) or JSONL file.
pub fn read_raw(path: &Path) -> Result<Vec<RawTriple>> {
    let reader = open(path)?;
    let ctx = || format!("in {}", path.display());
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        corpus::read_csv(reader).with_context(ctx)
    } else {
        corpus::read_jsonl(reader)
            .collect::<cbowra::Result<Vec<_>>>()
            .with_context(ctx)
    }
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let records = read_raw(path)?;
    corpus::ingest(records.into_iter().map(Ok), &AliasMap::default()).with_context(|| format!("in {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = create(path)?;
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Entry<'a> {
    name: &'a str,
    patients: u32,
}

#[derive(Serialize)]
struct VocabFile<'a> {
    diseases: Vec<Entry<'a>>,
    drugs: Vec<Entry<'a>>,
}

pub fn sidecar_path(corpus_path: &Path) -> PathBuf {
    let mut s = corpus_path.as_os_str().to_owned();
    s.push(".vocab.json");
    PathBuf::from(s)
}

/// Writes the corpus JSONL and its `<path>.vocab.json` sidecar.
pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_jsonl(path, corpus.to_records())?;
    let v: &Vocabulary = &corpus.vocabulary;
    fn entries<'a>(names: &'a [String], counts: &[u32]) -> Vec<Entry<'a>> {
        names.iter().zip(counts).map(|(n, &c)| Entry { name: n, patients: c }).collect()
    }
    let file = VocabFile {
        diseases: entries(v.disease_names(), v.disease_patient_counts()),
        drugs: entries(v.drug_names(), v.drug_patient_counts()),
    };
    let mut out = create(&sidecar_path(path))?;
    serde_json::to_writer_pretty(&mut out, &file)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
