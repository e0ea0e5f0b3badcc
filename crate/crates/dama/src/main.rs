//! Command-line front end for the adaptive preference-optimization toolkit.
//!
//! Subcommands mirror the pipeline stages: `gen` → `split` → `score-mock` →
//! `hardness` → `train` → `eval` → `report`. Every command is deterministic
//! given its inputs and flags; output files never embed timestamps, so
//! re-running a stage reproduces identical bytes.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 for internal
//! invariant violations (which indicate a bug, not a bad input).

use clap::{Args, Parser, Subcommand};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use dama::config::{load_run_config, RunConfigFile};
use dama::corpus::{
    load_corpus, load_scores, load_subsentences, mock_similarity_scores, split_sentences,
    tokenize, write_scores, write_subsentences, SimilarityRecord, SubSentences, Vocabulary,
    DEFAULT_MOCK_SCALE,
};
use dama::error::{DamaError, DamaResult};
use dama::hardness::{
    annotate_corpus, load_hardness_records, write_hardness_records, write_hardness_summary,
    HardnessMode, DEFAULT_RAW_EPSILON,
};
use dama::policy::Checkpoint;
use dama::report::{
    file_digest, read_eval_json, read_metrics_csv, write_comparison_csv, write_eval_json,
    write_metrics_csv, RunManifest,
};
use dama::synth::{make_synthetic_corpus, write_labeled_corpus, SynthSpec};
use dama::trainer::{evaluate, run_training, EvalReport};

#[derive(Parser)]
#[command(
    name = "dama",
    version,
    about = "Preference optimization with data- and model-adaptive temperatures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic preference corpus with easy and hard pairs
    Gen(GenArgs),
    /// Split corpus responses into sub-sentences
    Split(SplitArgs),
    /// Score sub-sentences with the deterministic mock similarity scorer
    ScoreMock(ScoreMockArgs),
    /// Annotate a corpus with offline hardness coefficients
    Hardness(HardnessArgs),
    /// Train a policy from a config file
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus
    Eval(EvalArgs),
    /// Merge metrics and evaluation files into one comparison table
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Directory receiving corpus.jsonl and scores.jsonl
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 512)]
    pairs: usize,
    #[arg(long, default_value_t = 0.5)]
    easy_fraction: f64,
    #[arg(long, default_value_t = 4096)]
    vocab_size: usize,
    #[arg(long, default_value_t = 0.5)]
    gap_strength: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output JSONL of sub-sentence records
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreMockArgs {
    /// Sub-sentence records produced by `split`
    #[arg(long)]
    subsentences: PathBuf,
    /// Output JSONL of similarity records
    #[arg(long)]
    out: PathBuf,
    /// Scores are drawn from [-scale, +scale]
    #[arg(long, default_value_t = DEFAULT_MOCK_SCALE)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct HardnessArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Similarity records covering every corpus instance
    #[arg(long)]
    scores: PathBuf,
    /// Output JSONL of per-instance hardness records
    #[arg(long)]
    out_records: PathBuf,
    /// Output JSON with the corpus mean delta
    #[arg(long)]
    out_summary: PathBuf,
    #[arg(long, value_enum, default_value_t = HardnessMode::Probabilities)]
    mode: HardnessMode,
    /// Denominator clamp for the raw-ratio mode
    #[arg(long, default_value_t = DEFAULT_RAW_EPSILON)]
    raw_epsilon: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file with [data], [train], and [output] sections
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. --set train.seed=7 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// checkpoint.json from a training run
    #[arg(long)]
    checkpoint: PathBuf,
    /// vocab.json from the same run
    #[arg(long)]
    vocab: PathBuf,
    /// Corpus to evaluate on
    #[arg(long)]
    corpus: PathBuf,
    /// Hardness records covering the corpus (for the easy/hard split)
    #[arg(long)]
    hardness_records: PathBuf,
    /// Inverse temperature for the reward gaps
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    /// Output JSON report
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// metrics.csv files to include (label = path; repeatable)
    #[arg(long = "metrics")]
    metrics: Vec<PathBuf>,
    /// eval.json files to include (label = path; repeatable)
    #[arg(long = "eval")]
    eval: Vec<PathBuf>,
    /// Output comparison CSV
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outcomes; anything else is a
            // usage error and exits 1.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> DamaResult<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Split(args) => cmd_split(args),
        Command::ScoreMock(args) => cmd_score_mock(args),
        Command::Hardness(args) => cmd_hardness(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn ensure_parent(path: &Path) -> DamaResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| DamaError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    Ok(())
}

fn cmd_gen(args: GenArgs) -> DamaResult<()> {
    let spec = SynthSpec {
        pairs: args.pairs,
        easy_fraction: args.easy_fraction,
        vocab_size: args.vocab_size,
        gap_strength: args.gap_strength,
        seed: args.seed,
    };
    println!(
        "gen: pairs={} easy_fraction={} vocab_size={} gap_strength={} seed={}",
        spec.pairs, spec.easy_fraction, spec.vocab_size, spec.gap_strength, spec.seed
    );
    let synth = make_synthetic_corpus(&spec)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|source| DamaError::Io {
        path: args.out_dir.clone(),
        source,
    })?;
    let corpus_path = args.out_dir.join("corpus.jsonl");
    let scores_path = args.out_dir.join("scores.jsonl");
    write_labeled_corpus(&corpus_path, &synth)?;
    write_scores(&scores_path, &synth.scores)?;
    println!(
        "wrote {} pairs to {} and {}",
        synth.instances.len(),
        corpus_path.display(),
        scores_path.display()
    );
    Ok(())
}

fn cmd_split(args: SplitArgs) -> DamaResult<()> {
    let corpus = load_corpus(&args.corpus)?;
    let subs: Vec<SubSentences> = corpus.iter().map(split_sentences).collect();
    ensure_parent(&args.out)?;
    write_subsentences(&args.out, &subs)?;
    println!("split {} instances into {}", subs.len(), args.out.display());
    Ok(())
}

fn cmd_score_mock(args: ScoreMockArgs) -> DamaResult<()> {
    let subs = load_subsentences(&args.subsentences)?;
    let scores = subs
        .iter()
        .map(|s| mock_similarity_scores(s, args.scale, args.seed))
        .collect::<DamaResult<Vec<_>>>()?;
    ensure_parent(&args.out)?;
    write_scores(&args.out, &scores)?;
    println!(
        "scored {} instances (scale={} seed={}) into {}",
        scores.len(),
        args.scale,
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn cmd_hardness(args: HardnessArgs) -> DamaResult<()> {
    let corpus = load_corpus(&args.corpus)?;
    let scores = load_scores(&args.scores)?;
    let by_id: HashMap<&str, &SimilarityRecord> =
        scores.iter().map(|r| (r.instance_id.as_str(), r)).collect();
    // Annotate in corpus order; score records for unknown ids are ignored,
    // but every corpus instance must be covered.
    let ordered: Vec<SimilarityRecord> = corpus
        .iter()
        .map(|inst| {
            by_id
                .get(inst.id.as_str())
                .map(|&r| r.clone())
                .ok_or_else(|| DamaError::MissingRecord {
                    kind: "similarity score",
                    instance_id: inst.id.clone(),
                })
        })
        .collect::<DamaResult<Vec<_>>>()?;
    let (records, summary) = annotate_corpus(&ordered, args.mode, args.raw_epsilon)?;
    ensure_parent(&args.out_records)?;
    ensure_parent(&args.out_summary)?;
    write_hardness_records(&args.out_records, &records)?;
    write_hardness_summary(&args.out_summary, &summary)?;
    println!(
        "annotated {} instances (mean delta {}) into {} and {}",
        records.len(),
        summary.delta_bar,
        args.out_records.display(),
        args.out_summary.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> DamaResult<()> {
    let started = std::time::Instant::now();
    let file: RunConfigFile = load_run_config(&args.config, &args.set)?;
    println!("resolved configuration:\n{}", file.to_toml_string()?);

    let corpus = load_corpus(&file.data.corpus)?;
    let vocab = match &file.data.vocab {
        Some(path) => Some(Vocabulary::load(path)?),
        None => None,
    };
    let (tokenized, vocab) = tokenize(&corpus, vocab, file.train.context_count)?;
    let hardness = match &file.data.hardness_records {
        Some(path) => load_hardness_records(path)?,
        None => {
            if file.train.switches().data_aware && !file.train.force_alpha_d_one {
                return Err(DamaError::InvalidConfig(format!(
                    "mode {:?} needs data.hardness_records",
                    file.train.mode
                )));
            }
            Vec::new()
        }
    };

    let outcome = run_training(&file.train, &tokenized, vocab.len(), &hardness)?;

    std::fs::create_dir_all(&file.output.dir).map_err(|source| DamaError::Io {
        path: file.output.dir.clone(),
        source,
    })?;
    vocab.save(&file.output.dir.join("vocab.json"))?;
    let checkpoint = Checkpoint::new(outcome.policy, &outcome.reference);
    checkpoint.save(&file.output.dir.join("checkpoint.json"))?;
    write_metrics_csv(&file.output.dir.join("metrics.csv"), &outcome.reports)?;

    let mut inputs = vec![file_digest(&file.data.corpus)?];
    if let Some(path) = &file.data.vocab {
        inputs.push(file_digest(path)?);
    }
    if let Some(path) = &file.data.hardness_records {
        inputs.push(file_digest(path)?);
    }
    let manifest = RunManifest {
        config: file.train.clone(),
        inputs,
    };
    manifest.save(&file.output.dir.join("run_manifest.json"))?;

    println!(
        "trained {} batches; final loss {}; outputs in {} ({:.2?})",
        outcome.reports.len(),
        outcome.final_loss,
        file.output.dir.display(),
        started.elapsed()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> DamaResult<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let corpus = load_corpus(&args.corpus)?;
    let context_count = checkpoint.policy.context_count();
    let (tokenized, _) = tokenize(&corpus, Some(vocab), context_count)?;
    let hardness = load_hardness_records(&args.hardness_records)?;
    let reference = checkpoint.reference_snapshot();
    let report: EvalReport = evaluate(
        &checkpoint.policy,
        &reference,
        &tokenized,
        &hardness,
        args.beta,
    )?;
    ensure_parent(&args.out)?;
    write_eval_json(&args.out, &report)?;
    println!(
        "preference accuracy {} over {} pairs (easy {}, hard {}); report in {}",
        report.preference_accuracy,
        report.easy_count + report.hard_count,
        report.easy_count,
        report.hard_count,
        args.out.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> DamaResult<()> {
    if args.metrics.is_empty() && args.eval.is_empty() {
        return Err(DamaError::InvalidConfig(
            "report needs at least one --metrics or --eval file".to_string(),
        ));
    }
    let metrics_runs = args
        .metrics
        .iter()
        .map(|path| Ok((path.display().to_string(), read_metrics_csv(path)?)))
        .collect::<DamaResult<Vec<_>>>()?;
    let eval_runs = args
        .eval
        .iter()
        .map(|path| Ok((path.display().to_string(), read_eval_json(path)?)))
        .collect::<DamaResult<Vec<_>>>()?;
    ensure_parent(&args.out)?;
    write_comparison_csv(&args.out, &metrics_runs, &eval_runs)?;
    println!(
        "combined {} metrics and {} eval runs into {}",
        metrics_runs.len(),
        eval_runs.len(),
        args.out.display()
    );
    Ok(())
}
