//! End-to-end pipeline CLI: ingest -> build-dataset -> annotate-stats ->
//! train -> evaluate -> infer -> features -> regress -> report.
//!
//! Every run is driven by a TOML config (see `PipelineConfig`) and writes a
//! manifest (config snapshot + input hashes + versions) into the output
//! directory. Exit codes: 0 success, 1 validation/usage error, 2 runtime
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use talkmoves::analysis::{
    default_specs, format_table_text, read_outcomes_csv, run_table, write_table_csv,
    RegressionSpec,
};
use talkmoves::annotation::{
    any_label_overlap_rate, label_distribution, pairwise_agreement, read_annotation_csv, TalkMove,
};
use talkmoves::classifier::{evaluate, train_move_model, BackendKind, EvalReport};
use talkmoves::example_builder::{read_examples, sample_examples, train_test_split, write_examples};
use talkmoves::inference::{
    aggregate_session, export_features, import_features, predict_corpus, read_predictions,
    write_predictions,
};
use talkmoves::pipeline::{
    attach_gold, ingest, load_corpus, load_model_suite, prepare_for_move, sessions_by_id,
    write_run_manifest, PipelineConfig, PipelineError,
};

#[derive(Parser)]
#[command(
    name = "talkmoves",
    about = "Talk-move classification and outcome-regression pipeline",
    version
)]
struct Cli {
    /// Pipeline configuration file (TOML)
    #[arg(long, global = true, default_value = "talkmoves.toml")]
    config: PathBuf,

    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Restrict to a single talk move (train/evaluate)
    #[arg(long = "move", global = true)]
    talk_move: Option<String>,

    /// Worker cap for parallel stages
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Override the training backend
    #[arg(long, global = true)]
    backend: Option<String>,

    /// Drop examples whose gold labels mark poor transcription
    #[arg(long, global = true)]
    exclude_poor_transcription: bool,

    /// Reuse the inference checkpoint instead of starting fresh
    #[arg(long, global = true)]
    resume: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize raw sessions, merging chat logs
    Ingest {
        /// Directory of raw *.session.jsonl (and *.chat.jsonl) files
        #[arg(long)]
        raw_dir: PathBuf,
    },
    /// Sample instructor utterances and segment them into examples
    BuildDataset,
    /// Compute agreement statistics and attach union gold labels
    AnnotateStats {
        /// Annotation CSV (example_id, annotator_id, one 0/1 column per label)
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Train one binary model per enabled talk move
    Train,
    /// Score trained models on the held-out split
    Evaluate,
    /// Predict talk moves over the whole corpus with checkpointing
    Infer,
    /// Aggregate predictions into per-session hourly rates
    Features,
    /// Fit the outcome regressions with instructor-clustered SEs
    Regress {
        /// Outcomes/covariates CSV
        #[arg(long)]
        outcomes: PathBuf,
    },
    /// Emit the aligned plain-text results table
    Report {
        #[arg(long)]
        outcomes: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors exit 1 with the synopsis on stderr; --help/--version
            // print normally and exit 0
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    return ExitCode::SUCCESS;
                }
                _ => {
                    eprint!("{e}");
                    return ExitCode::from(1);
                }
            }
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn selected_moves(config: &PipelineConfig, flag: &Option<String>) -> Result<Vec<TalkMove>, CliError> {
    match flag {
        Some(name) => {
            let m = TalkMove::parse(name)
                .ok_or_else(|| CliError::Usage(format!("unknown talk move '{name}'")))?;
            Ok(vec![m])
        }
        None => Ok(config.enabled_moves()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = Some(jobs);
    }
    if cli.exclude_poor_transcription {
        config.exclude_poor_transcription = true;
    }
    // validate flag values before any filesystem work so bad input fails
    // fast with a usage error
    selected_moves(&config, &cli.talk_move)?;
    if let Some(backend) = &cli.backend {
        parse_backend(backend)?;
    }
    fs::create_dir_all(&config.output_dir)?;

    let tokenizer = config.make_tokenizer()?;
    let out = config.output_dir.clone();

    match &cli.command {
        Command::Ingest { raw_dir } => {
            let n = ingest(raw_dir, &config.corpus_dir)?;
            write_run_manifest(&out, "ingest", &config, &[raw_dir.as_path()])?;
            println!("ingested {n} sessions into {}", config.corpus_dir.display());
        }
        Command::BuildDataset => {
            let corpus = load_corpus(&config.corpus_dir)?;
            let preprocess = config
                .config_for_move(TalkMove::Eliciting)
                .map(|(p, _)| p)?;
            let examples =
                sample_examples(&corpus, config.sample_size, config.seed, &preprocess, &*tokenizer)
                    .map_err(runtime)?;
            let dataset_dir = out.join("dataset");
            fs::create_dir_all(&dataset_dir)?;
            let path = dataset_dir.join("examples.jsonl");
            write_examples(&examples, &path).map_err(runtime)?;
            write_run_manifest(&out, "build-dataset", &config, &[config.corpus_dir.as_path()])?;
            println!(
                "sampled {} utterances into {} examples at {}",
                config.sample_size,
                examples.len(),
                path.display()
            );
        }
        Command::AnnotateStats { annotations } => {
            let examples = read_examples(&out.join("dataset/examples.jsonl")).map_err(runtime)?;
            let records = read_annotation_csv(annotations).map_err(runtime)?;
            let (gold_examples, excluded) =
                attach_gold(&examples, &records, config.exclude_poor_transcription);
            let gold_path = out.join("dataset/examples_gold.jsonl");
            write_examples(&gold_examples, &gold_path).map_err(runtime)?;

            let mut stats = serde_json::Map::new();
            let mut agreement = serde_json::Map::new();
            for m in TalkMove::CORE {
                let (_, mean) = pairwise_agreement(&records, m).map_err(runtime)?;
                agreement.insert(m.name().to_string(), mean.into());
            }
            stats.insert("mean_agreement".into(), agreement.into());
            stats.insert(
                "any_label_overlap_rate".into(),
                any_label_overlap_rate(&records).map_err(runtime)?.into(),
            );
            let gold: Vec<_> = gold_examples.iter().filter_map(|e| e.gold).collect();
            let dist = label_distribution(&gold).map_err(runtime)?;
            stats.insert(
                "label_distribution".into(),
                dist.iter()
                    .map(|(m, f)| (m.name().to_string(), serde_json::Value::from(*f)))
                    .collect::<serde_json::Map<_, _>>()
                    .into(),
            );
            stats.insert("examples_excluded_poor_transcription".into(), excluded.into());
            let stats_dir = out.join("stats");
            fs::create_dir_all(&stats_dir)?;
            fs::write(
                stats_dir.join("annotation_stats.json"),
                serde_json::to_string_pretty(&stats).map_err(runtime)?,
            )?;
            write_run_manifest(&out, "annotate-stats", &config, &[annotations.as_path()])?;
            println!("wrote {} and {}", gold_path.display(), stats_dir.join("annotation_stats.json").display());
        }
        Command::Train => {
            let corpus = load_corpus(&config.corpus_dir)?;
            let sessions = sessions_by_id(&corpus);
            let examples =
                read_examples(&out.join("dataset/examples_gold.jsonl")).map_err(runtime)?;
            let (train, _test) = train_test_split(&examples, config.split_ratio, config.seed);
            for m in selected_moves(&config, &cli.talk_move)? {
                let (preprocess, mut training) = config.config_for_move(m)?;
                if let Some(backend) = &cli.backend {
                    training.backend = parse_backend(backend)?;
                }
                let prepared = prepare_for_move(&train, &sessions, &preprocess, &*tokenizer)?;
                let handle =
                    train_move_model(m, &prepared, &preprocess, &training).map_err(runtime)?;
                let dir = out.join("models").join(m.name());
                handle.save(&dir).map_err(runtime)?;
                println!("trained {m} -> {}", dir.display());
            }
            write_run_manifest(&out, "train", &config, &[config.corpus_dir.as_path()])?;
        }
        Command::Evaluate => {
            let corpus = load_corpus(&config.corpus_dir)?;
            let sessions = sessions_by_id(&corpus);
            let examples =
                read_examples(&out.join("dataset/examples_gold.jsonl")).map_err(runtime)?;
            let (_train, test) = train_test_split(&examples, config.split_ratio, config.seed);
            let mut reports: Vec<EvalReport> = Vec::new();
            for m in selected_moves(&config, &cli.talk_move)? {
                let handle = talkmoves::classifier::ModelHandle::load(
                    &out.join("models").join(m.name()),
                )
                .map_err(runtime)?;
                let prepared = prepare_for_move(&test, &sessions, &handle.preprocess, &*tokenizer)?;
                let report = evaluate(&handle, &prepared, handle.training.decision_threshold)
                    .map_err(runtime)?;
                println!(
                    "{:<16} P={:.3} R={:.3} F1={:.3} (tp={} fp={} fn={} tn={})",
                    m.name(),
                    report.precision,
                    report.recall,
                    report.f1,
                    report.true_positive,
                    report.false_positive,
                    report.false_negative,
                    report.true_negative
                );
                reports.push(report);
            }
            let eval_dir = out.join("eval");
            fs::create_dir_all(&eval_dir)?;
            write_eval_csv(&reports, &eval_dir.join("eval_reports.csv"))?;
            write_run_manifest(&out, "evaluate", &config, &[config.corpus_dir.as_path()])?;
        }
        Command::Infer => {
            let corpus = load_corpus(&config.corpus_dir)?;
            let moves = config.enabled_moves();
            let suite = load_model_suite(&out.join("models"), &moves)?;
            let pred_dir = out.join("predictions");
            let checkpoint_dir = pred_dir.join("checkpoints");
            if !cli.resume && checkpoint_dir.exists() {
                fs::remove_dir_all(&checkpoint_dir)?;
            }
            let records =
                predict_corpus(&suite, &corpus, &checkpoint_dir, &*tokenizer).map_err(runtime)?;
            let path = pred_dir.join("predictions.jsonl");
            write_predictions(&records, &path).map_err(runtime)?;
            write_run_manifest(&out, "infer", &config, &[config.corpus_dir.as_path()])?;
            println!("wrote {} prediction records to {}", records.len(), path.display());
        }
        Command::Features => {
            let corpus = load_corpus(&config.corpus_dir)?;
            let moves = config.enabled_moves();
            let records =
                read_predictions(&out.join("predictions/predictions.jsonl")).map_err(runtime)?;
            let mut features = Vec::new();
            for session in &corpus {
                let session_records: Vec<_> = records
                    .iter()
                    .filter(|r| r.session_id == session.session_id)
                    .cloned()
                    .collect();
                features.push(
                    aggregate_session(
                        session,
                        &session_records,
                        &moves,
                        config.segment_level_counting,
                    )
                    .map_err(runtime)?,
                );
            }
            let features_dir = out.join("features");
            fs::create_dir_all(&features_dir)?;
            let path = features_dir.join("features.csv");
            export_features(&features, &moves, &path).map_err(runtime)?;
            write_run_manifest(&out, "features", &config, &[config.corpus_dir.as_path()])?;
            println!("wrote {}", path.display());
        }
        Command::Regress { outcomes } => {
            let cells = regress(&config, &out, outcomes, &cli.talk_move)?;
            let regress_dir = out.join("regress");
            fs::create_dir_all(&regress_dir)?;
            let path = regress_dir.join("regression_table.csv");
            write_table_csv(&cells, &path).map_err(runtime)?;
            write_run_manifest(&out, "regress", &config, &[outcomes.as_path()])?;
            println!("wrote {}", path.display());
        }
        Command::Report { outcomes } => {
            let cells = regress(&config, &out, outcomes, &cli.talk_move)?;
            let text = format_table_text(&cells);
            let report_dir = out.join("report");
            fs::create_dir_all(&report_dir)?;
            fs::write(report_dir.join("report.txt"), &text)?;
            write_run_manifest(&out, "report", &config, &[outcomes.as_path()])?;
            print!("{text}");
        }
    }
    Ok(())
}

fn regress(
    config: &PipelineConfig,
    out: &Path,
    outcomes: &Path,
    move_flag: &Option<String>,
) -> Result<Vec<talkmoves::analysis::TableCell>, CliError> {
    let moves = config.enabled_moves();
    let features =
        import_features(&moves, &out.join("features/features.csv")).map_err(runtime)?;
    let rows = read_outcomes_csv(outcomes).map_err(runtime)?;
    let specs: Vec<RegressionSpec> = match move_flag {
        Some(name) => {
            let m = TalkMove::parse(name)
                .ok_or_else(|| CliError::Usage(format!("unknown talk move '{name}'")))?;
            default_specs().into_iter().filter(|s| s.predictor_move == m).collect()
        }
        None => default_specs(),
    };
    Ok(run_table(&features, &rows, &specs))
}

fn parse_backend(name: &str) -> Result<BackendKind, CliError> {
    match name {
        "linear_baseline" => Ok(BackendKind::LinearBaseline),
        "remote_completion_service" => Ok(BackendKind::RemoteCompletionService),
        "local_encoder" => Ok(BackendKind::LocalEncoder),
        other => Err(CliError::Usage(format!("unknown backend '{other}'"))),
    }
}

fn write_eval_csv(reports: &[EvalReport], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(fs::File::create(path)?);
    w.write_record([
        "move", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "zero_denominator",
    ])
    .map_err(runtime)?;
    for r in reports {
        w.write_record([
            r.talk_move.name().to_string(),
            r.true_positive.to_string(),
            r.false_positive.to_string(),
            r.false_negative.to_string(),
            r.true_negative.to_string(),
            format!("{}", r.precision),
            format!("{}", r.recall),
            format!("{}", r.f1),
            r.zero_denominator.to_string(),
        ])
        .map_err(runtime)?;
    }
    w.flush()?;
    Ok(())
}
