//! `cbowra` command-line front end.

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cbowra", version, about = "Flag prescriptions that do not fit a patient's diagnoses")]
pub struct Cli {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Root seed; every stage derives its own seed from it [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for parallel stages; 1 runs everything sequentially [default: 1].
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Normalize raw records (JSONL or CSV) into a corpus file.
    Ingest(IngestArgs),
    /// Remove ubiquitous drugs from a corpus file.
    Screen(ScreenArgs),
    /// Train a model and write the model file.
    Train(TrainArgs),
    /// Rank each patient's drugs, most anomalous first.
    Detect(DetectArgs),
    /// Rank with a baseline method (same report format as detect).
    Baseline(BaselineArgs),
    /// Score reports against gold labels.
    Eval(EvalArgs),
    /// Generate a synthetic corpus with planted anomalies.
    SynthGen(SynthArgs),
    /// Write count-vector TSVs for inspection.
    DumpVectors(DumpArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Raw records: `.csv` (patient_id,diagnosis,drug) or JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Two-column CSV `original,unified` for diagnosis names.
    #[arg(long, value_name = "CSV")]
    pub diagnosis_aliases: Option<PathBuf>,
    /// Two-column CSV `original,unified` for drug names.
    #[arg(long, value_name = "CSV")]
    pub drug_aliases: Option<PathBuf>,
    /// Also drop drugs given to at least this fraction of patients.
    #[arg(long)]
    pub screen_threshold: Option<f64>,
    /// Corpus JSONL; a `<output>.vocab.json` sidecar is written next to it.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScreenArgs {
    /// Corpus JSONL written by `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Drop drugs given to at least this fraction of patients [default: 0.9].
    #[arg(long)]
    pub screen_threshold: Option<f64>,
    /// Two-column CSV `original,unified` applied before counting.
    #[arg(long, value_name = "CSV")]
    pub drug_aliases: Option<PathBuf>,
    /// Screened corpus JSONL (with sidecar).
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum InitArg {
    Random,
    Cooccurrence,
}

#[derive(Args, Debug, Clone)]
pub struct SamplerArgs {
    /// Diseases per context [default: 2].
    #[arg(long)]
    pub context_size: Option<usize>,
    /// Negatives per training sample [default: 5].
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Cap on contexts per patient (seeded subsample).
    #[arg(long)]
    pub max_contexts: Option<usize>,
    /// Exponent on drug frequencies for negative draws [default: 1.0].
    #[arg(long)]
    pub frequency_exponent: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus JSONL written by `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Embedding dimension [default: 64, or the disease count with --init cooccurrence].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Passes over the samples; 0 writes the initialized model [default: 5].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Starting learning rate [default: 0.025].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Final learning rate of the linear decay [default: 0.0001].
    #[arg(long)]
    pub min_learning_rate: Option<f64>,
    /// Drug vector initialization [default: random].
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Keep drug vectors at their initial values.
    #[arg(long)]
    pub freeze_drugs: bool,
    /// Write the first epoch's training samples here (JSONL).
    #[arg(long, value_name = "FILE")]
    pub dump_samples: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodArg {
    Cbowra,
    Nb,
    Lof,
    Transe,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ScoreModeArg {
    Probability,
    Rank,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum NormArg {
    L1,
    L2,
}

#[derive(Args, Debug, Clone)]
pub struct BaselineOpts {
    /// Naive Bayes smoothing [default: 1.0].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Naive Bayes minimum patient count per entity; 0 is plain NB [default: 0].
    #[arg(long)]
    pub floor: Option<u32>,
    /// LOF neighborhood size [default: 10].
    #[arg(long)]
    pub k_nn: Option<usize>,
    /// TransE embedding dimension [default: 32].
    #[arg(long)]
    pub transe_dim: Option<usize>,
    /// TransE margin [default: 1.0].
    #[arg(long)]
    pub margin: Option<f64>,
    /// TransE epochs [default: 50].
    #[arg(long)]
    pub transe_epochs: Option<usize>,
    /// TransE learning rate [default: 0.01].
    #[arg(long)]
    pub transe_lr: Option<f64>,
    /// TransE distance norm [default: l2].
    #[arg(long, value_enum)]
    pub norm: Option<NormArg>,
}

#[derive(Args, Debug, Clone)]
pub struct DetectorOpts {
    /// Diseases per scoring context [default: 2].
    #[arg(long)]
    pub context_size: Option<usize>,
    /// Extra unprescribed drugs added to each context's candidates [default: 5].
    #[arg(long)]
    pub ballast: Option<usize>,
    /// Cap on contexts per patient (seeded subsample).
    #[arg(long)]
    pub max_contexts: Option<usize>,
    /// Exponent on drug frequencies for ballast draws [default: 1.0].
    #[arg(long)]
    pub frequency_exponent: Option<f64>,
    /// What each context adds to a drug's score [default: probability].
    #[arg(long, value_enum)]
    pub score_mode: Option<ScoreModeArg>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Ranking method [default: cbowra].
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Model file (required for cbowra).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Corpus JSONL written by `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Report JSONL; stdout when omitted and --top is not given.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Print the N most suspicious drugs per patient.
    #[arg(long, value_name = "N")]
    pub top: Option<usize>,
    #[command(flatten)]
    pub detector: DetectorOpts,
    #[command(flatten)]
    pub baseline: BaselineOpts,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMethodArg {
    Nb,
    Lof,
    Transe,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// Baseline to run.
    #[arg(long, value_enum)]
    pub method: BaselineMethodArg,
    /// Corpus JSONL written by `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Report JSONL; stdout when omitted and --top is not given.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Print the N most suspicious drugs per patient.
    #[arg(long, value_name = "N")]
    pub top: Option<usize>,
    #[command(flatten)]
    pub baseline: BaselineOpts,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Gold JSONL: `{"patient_id": str, "anomalous_drugs": [str]}` per line.
    #[arg(long)]
    pub gold: PathBuf,
    /// Report JSONL; repeat for several methods.
    #[arg(long, required = true)]
    pub report: Vec<PathBuf>,
    /// Comparison CSV (method,top1..top5).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Average per-patient hit fractions instead of pooling hits.
    #[arg(long = "macro")]
    pub macro_avg: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Raw records JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// Gold labels JSONL.
    #[arg(long)]
    pub gold: PathBuf,
    /// Number of patients [default: 500].
    #[arg(long)]
    pub patients: Option<usize>,
    /// Number of latent conditions [default: 10].
    #[arg(long)]
    pub conditions: Option<usize>,
    /// Diseases per condition [default: 5].
    #[arg(long)]
    pub diseases_per_condition: Option<usize>,
    /// Drugs per condition [default: 8].
    #[arg(long)]
    pub drugs_per_condition: Option<usize>,
    /// Fraction of patients given one out-of-place drug [default: 0.3].
    #[arg(long)]
    pub anomaly_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    /// Corpus JSONL written by `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Patient x disease TSV.
    #[arg(long)]
    pub diagnosis_out: PathBuf,
    /// Drug x disease co-occurrence TSV.
    #[arg(long)]
    pub drug_out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.is::<files::UsageError>() || matches!(e.downcast_ref::<cbowra::Error>(), Some(cbowra::Error::InvalidConfig(_)))
    });
    if usage {
        2
    } else {
        1
    }
}

// A closed stdout (e.g. piped into `head`) is not an error.
fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
