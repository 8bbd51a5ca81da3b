use std::collections::BTreeSet;
use std::io::Write;

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;

use cbowra::baselines::{lof::LofConfig, transe::Norm, transe::TranseConfig};
use cbowra::corpus::{self, AliasMap};
use cbowra::detector::{self, ScoreMode};
use cbowra::evalkit::{self, Averaging, ComparisonTable, GoldLabels, Method, SynthConfig};
use cbowra::model::{self, InitMode};
use cbowra::seed::derive_seed;
use cbowra::{report, vectorize};
use cbowra::{Corpus, DetectorConfig, Hyperparams, Parallelism, RankingTable, SamplerConfig, Vocabulary};

use crate::config::FileConfig;
use crate::files::{self, usage};
use crate::*;

struct Ctx {
    cfg: FileConfig,
    seed: u64,
    mode: Parallelism,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => {
            if !p.exists() {
                return Err(usage(format!("{}: no such file", p.display())));
            }
            FileConfig::load(p).map_err(|e| usage(format!("{e:#}")))?
        }
        None => FileConfig::default(),
    };
    let seed = cfg.pick(cli.seed, "seed", 0u64)?;
    let threads = cfg.pick(cli.threads, "threads", 1usize)?;
    if threads == 0 {
        return Err(usage("--threads must be >= 1"));
    }
    if threads > 1 {
        if !cfg!(feature = "parallel") {
            log::warn!("built without the `parallel` feature; --threads {threads} runs sequentially");
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("starting thread pool")?;
    }
    let ctx = Ctx {
        cfg,
        seed,
        mode: Parallelism::from_threads(threads),
    };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Screen(a) => screen(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Detect(a) => detect(&ctx, a),
        Command::Baseline(a) => {
            let method = match a.method {
                BaselineMethodArg::Nb => MethodArg::Nb,
                BaselineMethodArg::Lof => MethodArg::Lof,
                BaselineMethodArg::Transe => MethodArg::Transe,
            };
            let corpus = files::read_corpus(&a.corpus)?;
            let ranked = rank_baseline(&ctx, method, &a.baseline, &corpus)?;
            emit(&ctx, ranked, a.output.as_deref(), a.top)
        }
        Command::Eval(a) => eval(&ctx, a),
        Command::SynthGen(a) => synth(&ctx, a),
        Command::DumpVectors(a) => dump(a),
    }
}

fn print_shape(c: &Corpus) {
    println!(
        "patients={} diseases={} drugs={}",
        c.num_patients(),
        c.vocabulary.num_diseases(),
        c.vocabulary.num_drugs()
    );
}

fn report_screening(s: &corpus::Screened) {
    if !s.removed_drugs.is_empty() {
        eprintln!("removed drugs: {}", s.removed_drugs.join(", "));
    }
    for pid in &s.dropped_patients {
        eprintln!("dropped patient {pid}: no drugs left after screening");
    }
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<()> {
    let dx_aliases = files::read_aliases(a.diagnosis_aliases.as_deref())?;
    let rx_aliases = files::read_aliases(a.drug_aliases.as_deref())?;
    let mut records = files::read_raw(&a.input)?;
    for r in &mut records {
        for m in &mut r.drug_names {
            *m = rx_aliases.resolve(m).to_string();
        }
    }
    let mut corpus = corpus::ingest(records.into_iter().map(Ok), &dx_aliases)
        .with_context(|| format!("in {}", a.input.display()))?;
    if let Some(t) = ctx.cfg.pick_opt(a.screen_threshold, "screen_threshold")? {
        let s = corpus::screen_medications(&corpus, t, &AliasMap::default())?;
        report_screening(&s);
        corpus = s.corpus;
    }
    files::write_corpus(&a.output, &corpus)?;
    print_shape(&corpus);
    Ok(())
}

fn screen(ctx: &Ctx, a: ScreenArgs) -> Result<()> {
    let aliases = files::read_aliases(a.drug_aliases.as_deref())?;
    let corpus = files::read_corpus(&a.corpus)?;
    let t = ctx.cfg.pick(a.screen_threshold, "screen_threshold", 0.9)?;
    let s = corpus::screen_medications(&corpus, t, &aliases)?;
    report_screening(&s);
    files::write_corpus(&a.output, &s.corpus)?;
    print_shape(&s.corpus);
    Ok(())
}

fn sampler_config(ctx: &Ctx, a: &SamplerArgs) -> Result<SamplerConfig> {
    let d = SamplerConfig::default();
    let c = &ctx.cfg;
    Ok(SamplerConfig {
        context_size: c.pick(a.context_size, "context_size", d.context_size)?,
        num_negatives: c.pick(a.negatives, "negatives", d.num_negatives)?,
        max_contexts_per_patient: c.pick_opt(a.max_contexts, "max_contexts")?,
        frequency_exponent: c.pick(a.frequency_exponent, "frequency_exponent", d.frequency_exponent)?,
        rng_seed: derive_seed(ctx.seed, "train/sampler"),
    })
}

fn parse_init(s: &str) -> Result<InitMode> {
    match s {
        "random" => Ok(InitMode::Random),
        "cooccurrence" => Ok(InitMode::Cooccurrence),
        other => Err(usage(format!("config init = {other:?}: expected \"random\" or \"cooccurrence\""))),
    }
}

#[derive(Serialize)]
struct SampleLine<'a> {
    context: Vec<&'a str>,
    target: &'a str,
    negatives: Vec<&'a str>,
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let c = &ctx.cfg;
    let corpus = files::read_corpus(&a.corpus)?;
    let scfg = sampler_config(ctx, &a.sampler)?;
    let init_mode = match a.init {
        Some(InitArg::Random) => InitMode::Random,
        Some(InitArg::Cooccurrence) => InitMode::Cooccurrence,
        None => match c.get::<String>("init")? {
            Some(s) => parse_init(&s)?,
            None => InitMode::Random,
        },
    };
    let d = Hyperparams::default();
    let default_dim = match init_mode {
        InitMode::Cooccurrence => corpus.vocabulary.num_diseases(),
        InitMode::Random => d.embedding_dim,
    };
    let hp = Hyperparams {
        embedding_dim: c.pick(a.dim, "dim", default_dim)?,
        learning_rate: c.pick(a.learning_rate, "learning_rate", d.learning_rate)?,
        min_learning_rate: c.pick(a.min_learning_rate, "min_learning_rate", d.min_learning_rate)?,
        epochs: c.pick(a.epochs, "epochs", d.epochs)?,
        init_mode,
        rng_seed: derive_seed(ctx.seed, "train/model"),
        freeze_drug_vectors: a.freeze_drugs || c.get("freeze_drugs")?.unwrap_or(false),
    };
    if let Some(path) = &a.dump_samples {
        scfg.validate()?;
        let v = &corpus.vocabulary;
        let samples = model::epoch_samples(&corpus, &scfg, 0);
        files::write_jsonl(
            path,
            samples.iter().map(|s| SampleLine {
                context: s.context.iter().map(|&d| v.disease_name(d)).collect(),
                target: v.drug_name(s.target),
                negatives: s.negatives.iter().map(|&m| v.drug_name(m)).collect(),
            }),
        )?;
        info!("wrote {} samples to {}", samples.len(), path.display());
    }
    let out = model::train(&corpus, &scfg, &hp, &mut |e| {
        println!("epoch={} loss={:.6} samples={} lr={:.6}", e.epoch + 1, e.mean_loss, e.samples, e.final_learning_rate);
    })?;
    model::save(&a.output, &out.params, &corpus.vocabulary, &hp)?;
    info!("model written to {}", a.output.display());
    Ok(())
}

fn detector_config(ctx: &Ctx, a: &DetectorOpts) -> Result<DetectorConfig> {
    let d = DetectorConfig::default();
    let c = &ctx.cfg;
    let score_mode = match a.score_mode {
        Some(ScoreModeArg::Probability) => ScoreMode::Probability,
        Some(ScoreModeArg::Rank) => ScoreMode::RankPosition,
        None => match c.get::<String>("score_mode")?.as_deref() {
            None | Some("probability") => ScoreMode::Probability,
            Some("rank") => ScoreMode::RankPosition,
            Some(other) => return Err(usage(format!("config score_mode = {other:?}: expected \"probability\" or \"rank\""))),
        },
    };
    Ok(DetectorConfig {
        context_size: c.pick(a.context_size, "context_size", d.context_size)?,
        num_negatives: c.pick(a.ballast, "ballast", d.num_negatives)?,
        max_contexts: c.pick_opt(a.max_contexts, "max_contexts")?,
        frequency_exponent: c.pick(a.frequency_exponent, "frequency_exponent", d.frequency_exponent)?,
        score_mode,
        rng_seed: derive_seed(ctx.seed, "detect"),
    })
}

fn baseline_method(ctx: &Ctx, method: MethodArg, a: &BaselineOpts) -> Result<Method> {
    let c = &ctx.cfg;
    Ok(match method {
        MethodArg::Nb => Method::NaiveBayes {
            alpha: c.pick(a.alpha, "alpha", 1.0)?,
            floor: c.pick(a.floor, "floor", 0)?,
        },
        MethodArg::Lof => Method::Lof(LofConfig {
            k_nn: c.pick(a.k_nn, "k_nn", LofConfig::default().k_nn)?,
        }),
        MethodArg::Transe => {
            let d = TranseConfig::default();
            let norm = match a.norm {
                Some(NormArg::L1) => Norm::L1,
                Some(NormArg::L2) => Norm::L2,
                None => match c.get::<String>("norm")?.as_deref() {
                    None | Some("l2") => Norm::L2,
                    Some("l1") => Norm::L1,
                    Some(other) => return Err(usage(format!("config norm = {other:?}: expected \"l1\" or \"l2\""))),
                },
            };
            Method::Transe(TranseConfig {
                dim: c.pick(a.transe_dim, "transe_dim", d.dim)?,
                margin: c.pick(a.margin, "margin", d.margin)?,
                epochs: c.pick(a.transe_epochs, "transe_epochs", d.epochs)?,
                learning_rate: c.pick(a.transe_lr, "transe_lr", d.learning_rate)?,
                norm,
                rng_seed: derive_seed(ctx.seed, "baseline/transe"),
            })
        }
        MethodArg::Cbowra => unreachable!("cbowra is not a baseline"),
    })
}

struct Ranked {
    method: String,
    tables: Vec<RankingTable>,
    vocab: Vocabulary,
}

fn rank_baseline(ctx: &Ctx, method: MethodArg, a: &BaselineOpts, corpus: &Corpus) -> Result<Ranked> {
    let m = baseline_method(ctx, method, a)?;
    let tables = m.rank(corpus, ctx.mode)?;
    Ok(Ranked {
        method: m.name(),
        tables,
        vocab: corpus.vocabulary.clone(),
    })
}

fn detect(ctx: &Ctx, a: DetectArgs) -> Result<()> {
    let method = a.method.unwrap_or(MethodArg::Cbowra);
    let corpus = files::read_corpus(&a.corpus)?;
    let ranked = if method == MethodArg::Cbowra {
        let path = a.model.as_deref().ok_or_else(|| usage("--model is required for --method cbowra"))?;
        if !path.exists() {
            return Err(usage(format!("{}: no such file", path.display())));
        }
        let (params, vocab, _) = model::load(path).with_context(|| format!("loading {}", path.display()))?;
        let (projected, skipped) = corpus.project_onto(&vocab);
        for (pid, reason) in &skipped {
            eprintln!("skipped patient {pid}: {reason}");
        }
        if projected.patients.is_empty() {
            anyhow::bail!("no patient in {} fits the model vocabulary", a.corpus.display());
        }
        let dcfg = detector_config(ctx, &a.detector)?;
        let outcome = detector::rank_corpus(&projected, &params, &dcfg, ctx.mode)?;
        for s in &outcome.skipped {
            eprintln!("skipped patient {}: {}", s.patient_id, s.reason);
        }
        Ranked {
            method: "cbowra".into(),
            tables: outcome.tables,
            vocab,
        }
    } else {
        if a.model.is_some() {
            log::warn!("--model is ignored by baseline methods");
        }
        rank_baseline(ctx, method, &a.baseline, &corpus)?
    };
    emit(ctx, ranked, a.output.as_deref(), a.top)
}

fn emit(ctx: &Ctx, r: Ranked, output: Option<&std::path::Path>, top: Option<usize>) -> Result<()> {
    let top = ctx.cfg.pick_opt(top, "top")?;
    if output.is_some() || top.is_none() {
        let mut out = files::output(output)?;
        report::write_report(&mut out, &r.tables, &r.vocab, &r.method)?;
        out.flush()?;
    }
    if let Some(n) = top {
        if n == 0 {
            return Err(usage("--top must be >= 1"));
        }
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        for t in &r.tables {
            let s = detector::top_suspects(t, n)?;
            write!(out, "{}", t.patient_id)?;
            for (m, score) in &s.drugs {
                write!(out, "\t{}={score:.6}", r.vocab.drug_name(*m))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let gold_names = evalkit::read_gold(files::open(&a.gold)?).with_context(|| format!("in {}", a.gold.display()))?;
    let mut reports = Vec::new();
    for path in &a.report {
        let lines = report::read_report(files::open(path)?).with_context(|| format!("in {}", path.display()))?;
        reports.push((path, lines));
    }
    let mut names: BTreeSet<&str> = BTreeSet::new();
    for (_, lines) in &reports {
        names.extend(lines.iter().flat_map(|l| l.ranking.iter().map(|r| r.drug.as_str())));
    }
    names.extend(gold_names.values().flatten().map(String::as_str));
    let vocab = report::drug_vocabulary(names);
    let gold = GoldLabels::from_names(&gold_names, &vocab)?;
    let averaging = if a.macro_avg || ctx.cfg.get("macro")?.unwrap_or(false) {
        Averaging::Macro
    } else {
        Averaging::Pooled
    };
    let mut runs = Vec::new();
    let mut used: BTreeSet<String> = BTreeSet::new();
    for (path, lines) in &reports {
        let base = lines.first().map(|l| l.method.clone()).unwrap_or_else(|| path.display().to_string());
        let mut name = base.clone();
        let mut k = 2;
        while !used.insert(name.clone()) {
            name = format!("{base}#{k}");
            k += 1;
        }
        let tables = report::tables_from_report(lines, &vocab)?;
        let reported: BTreeSet<&str> = tables.iter().map(|t| t.patient_id.as_str()).collect();
        let missing: Vec<&str> = gold.iter().map(|(p, _)| p).filter(|p| !reported.contains(p)).collect();
        if !missing.is_empty() {
            eprintln!(
                "{}: {} gold patient(s) missing from report: {}",
                path.display(),
                missing.len(),
                missing.join(", ")
            );
        }
        runs.push((name, tables));
    }
    let table = ComparisonTable::from_rankings(runs, &gold, averaging);
    print!("{table}");
    if let Some(p) = &a.output {
        let mut out = files::create(p)?;
        table.write_csv(&mut out)?;
        out.flush()?;
    }
    if table.rows.iter().all(|r| r.result.is_err()) {
        anyhow::bail!("no report could be scored");
    }
    Ok(())
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let c = &ctx.cfg;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        num_patients: c.pick(a.patients, "patients", d.num_patients)?,
        num_conditions: c.pick(a.conditions, "conditions", d.num_conditions)?,
        diseases_per_condition: c.pick(a.diseases_per_condition, "diseases_per_condition", d.diseases_per_condition)?,
        drugs_per_condition: c.pick(a.drugs_per_condition, "drugs_per_condition", d.drugs_per_condition)?,
        anomaly_rate: c.pick(a.anomaly_rate, "anomaly_rate", d.anomaly_rate)?,
        rng_seed: derive_seed(ctx.seed, "synth"),
        ..d
    };
    let (records, gold) = evalkit::generate_records(&cfg)?;
    files::write_jsonl(&a.output, &records)?;
    let mut out = files::create(&a.gold)?;
    evalkit::write_gold(&mut out, &gold)?;
    out.flush()?;
    println!("patients={} anomalous={}", records.len(), gold.len());
    Ok(())
}

fn dump(a: DumpArgs) -> Result<()> {
    let corpus = files::read_corpus(&a.corpus)?;
    let mut out = files::create(&a.diagnosis_out)?;
    vectorize::write_diagnosis_tsv(&corpus, &mut out)?;
    out.flush()?;
    let mut out = files::create(&a.drug_out)?;
    vectorize::write_drug_tsv(&corpus, &mut out)?;
    out.flush()?;
    Ok(())
}
