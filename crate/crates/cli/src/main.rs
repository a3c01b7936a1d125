//! jobmatch: config-driven pipeline for job-title and skill matching
//! experiments. Stages run one at a time (`ingest`, `pairs`, `train`,
//! `embed`, `rank`, `eval`, `analyze`), `run-all` chains the stages the
//! configured method needs, `gridsearch` sweeps configurations, and `synth`
//! writes a small synthetic corpus to try the whole thing end to end.
//!
//! Exit codes: 0 on success, 2 on validation errors (bad config or data),
//! 3 on runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jobmatch_core::error::Error;
use jobmatch_core::pipeline::{
    run_analyze, run_embed, run_eval, run_gridsearch, run_ingest, run_pairs, run_rank, run_train,
    Method, PipelineConfig, StageReport,
};
use jobmatch_core::synthetic;

#[derive(Parser)]
#[command(
    name = "jobmatch",
    version,
    about = "Job title and skill matching pipeline"
)]
struct Cli {
    /// Pipeline config file (flat `key = value` lines with dotted sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Concurrent grid cells for `gridsearch`.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate all configured inputs and write canonical copies.
    Ingest,
    /// Build the training set (labeled or contrastive pairs).
    Pairs,
    /// Train the configured model and write a checkpoint.
    Train,
    /// Embed queries and knowledge base (or import external embeddings).
    Embed,
    /// Produce one run file per language.
    Rank {
        /// Keep only the top K entries per query (export-size control;
        /// MAP over a truncated run may drop gold documents).
        #[arg(long)]
        top_k: Option<usize>,
        /// Override the configured method for this run.
        #[arg(long)]
        method: Option<String>,
        /// Override the configured task.
        #[arg(long)]
        task: Option<String>,
        /// Restrict to one configured language.
        #[arg(long)]
        lang: Option<String>,
        /// Run tag written into the TREC file.
        #[arg(long)]
        tag: Option<String>,
    },
    /// Score run files against qrels and write the MAP report.
    Eval,
    /// Coverage, major-group and cross-lingual breakdowns.
    Analyze,
    /// Run every stage the configured method needs, in order.
    RunAll,
    /// Evaluate every grid cell and write a leaderboard.
    Gridsearch,
    /// Write a synthetic corpus for end-to-end experiments.
    Synth {
        /// Output directory for the corpus files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        clusters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_report(stage: &str, report: &StageReport) {
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    println!("{stage}: ok ({})", report.manifest_path.display());
}

fn stages_for(method: Method) -> &'static [&'static str] {
    match method {
        Method::Prompt => &["ingest", "embed", "rank", "eval", "analyze"],
        Method::Contrastive => &[
            "ingest", "pairs", "train", "embed", "rank", "eval", "analyze",
        ],
        Method::Classify => &["ingest", "pairs", "train", "rank", "eval", "analyze"],
    }
}

fn run_stage(name: &str, cfg: &PipelineConfig) -> Result<StageReport, Error> {
    match name {
        "ingest" => run_ingest(cfg),
        "pairs" => run_pairs(cfg),
        "train" => run_train(cfg),
        "embed" => run_embed(cfg),
        "rank" => run_rank(cfg),
        "eval" => run_eval(cfg),
        "analyze" => run_analyze(cfg),
        other => unreachable!("unknown stage {other}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Command::Synth {
        out,
        clusters,
        seed,
    } = &cli.command
    {
        let corpus = synthetic::task_a_corpus(*seed, *clusters);
        synthetic::write_corpus_files(&corpus, out)?;
        println!(
            "synth: wrote {} entities, {} kb titles, {} queries to {}",
            corpus.entities.len(),
            corpus.kb.len(),
            corpus.queries.len(),
            out.display()
        );
        return Ok(());
    }

    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| Error::Validation("--config is required for this command".into()))?;

    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Command::Rank {
        top_k,
        method,
        task,
        lang,
        tag,
    } = &cli.command
    {
        if let Some(k) = top_k {
            overrides.push(("rank.top_k".into(), k.to_string()));
        }
        if let Some(m) = method {
            overrides.push(("method".into(), m.clone()));
        }
        if let Some(t) = task {
            overrides.push(("task".into(), t.clone()));
        }
        if let Some(l) = lang {
            overrides.push(("languages".into(), l.clone()));
        }
        if let Some(t) = tag {
            overrides.push(("rank.tag".into(), t.clone()));
        }
    }
    let cfg = PipelineConfig::load_with_overrides(&config_path, &overrides)?;

    match cli.command {
        Command::Synth { .. } => unreachable!("handled above"),
        Command::Ingest => print_report("ingest", &run_ingest(&cfg)?),
        Command::Pairs => print_report("pairs", &run_pairs(&cfg)?),
        Command::Train => print_report("train", &run_train(&cfg)?),
        Command::Embed => print_report("embed", &run_embed(&cfg)?),
        Command::Rank { .. } => print_report("rank", &run_rank(&cfg)?),
        Command::Eval => {
            let report = run_eval(&cfg)?;
            print_report("eval", &report);
            let report_txt = cfg.stage_dir("eval").join("report.txt");
            if let Ok(text) = std::fs::read_to_string(report_txt) {
                print!("{text}");
            }
        }
        Command::Analyze => print_report("analyze", &run_analyze(&cfg)?),
        Command::RunAll => {
            for stage in stages_for(cfg.method) {
                print_report(stage, &run_stage(stage, &cfg)?);
            }
        }
        Command::Gridsearch => {
            let leaderboard = run_gridsearch(&config_path, &cfg, cli.jobs.max(1))?;
            let total = leaderboard.cells.len();
            let failed = leaderboard
                .cells
                .iter()
                .filter(|c| c.error.is_some())
                .count();
            println!("gridsearch: {total} cells evaluated, {failed} failed");
            match &leaderboard.best {
                Some(best) => {
                    println!(
                        "best: dev MAP {:.3} with {}",
                        best.dev_map.unwrap_or(f64::NAN),
                        if best.overrides.is_empty() {
                            "the base config".to_string()
                        } else {
                            best.overrides
                                .iter()
                                .map(|(k, v)| format!("{k}={v}"))
                                .collect::<Vec<_>>()
                                .join(" ")
                        }
                    );
                }
                None => println!("best: none (every cell failed)"),
            }
            println!(
                "leaderboard: {}",
                cfg.output_dir
                    .join("grid")
                    .join("leaderboard.txt")
                    .display()
            );
        }
    }
    Ok(())
}
