//! Medication anomaly detection from diagnosis and prescription sets.
//!
//! A modified CBOW model learns which drugs fit which diagnoses. Each
//! patient's drugs are then ranked by how plausible they are across every
//! small subset of that patient's diagnoses; the least plausible drug is the
//! suspect.
//!
//! ```no_run
//! use cbowra::{corpus, detector, model, sampler, Parallelism};
//!
//! let file = std::io::BufReader::new(std::fs::File::open("patients.jsonl")?);
//! let corpus = corpus::ingest(corpus::read_jsonl(file), &corpus::AliasMap::default())?;
//! let trained = model::train(
//!     &corpus,
//!     &sampler::SamplerConfig::default(),
//!     &model::Hyperparams::default(),
//!     &mut |_| {},
//! )?;
//! let outcome = detector::rank_corpus(
//!     &corpus,
//!     &trained.params,
//!     &detector::DetectorConfig::default(),
//!     Parallelism::Sequential,
//! )?;
//! for table in &outcome.tables {
//!     let (drug, _) = table.ordered()[0];
//!     println!("{}: {}", table.patient_id, corpus.vocabulary.drug_name(drug));
//! }
//! # Ok::<(), cbowra::Error>(())
//! ```

pub mod baselines;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod evalkit;
pub mod exec;
pub mod model;
pub mod report;
pub mod sampler;
pub mod seed;
pub mod vectorize;

pub use corpus::{Corpus, DiseaseId, DrugId, PatientRecord, Vocabulary};
pub use detector::{DetectorConfig, RankingTable};
pub use error::{Error, Result};
pub use exec::Parallelism;
pub use model::{Hyperparams, ModelParams};
pub use sampler::SamplerConfig;
