use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use quiet_core::pipeline::{
    cmd_collect, cmd_score, cmd_sensitivity, cmd_stats, cmd_verify_paper, render_verify_report, CollectOptions,
    EmbeddingText, ScoreOptions, SensitivityOptions, PAPER_TOLERANCE,
};
use quiet_core::providers::load_provider_configs;
use quiet_core::stats::ScoringConfig;
use quiet_core::{testset, ErrorClass, Mode, ProviderConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_PROVIDER: u8 = 3;
const EXIT_SCORING: u8 = 4;

#[derive(Parser)]
#[command(name = "quiet", version, about = "Score multi-blank cloze stories for constraint satisfaction and surprise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query each model once with the story prompt and store transcripts.
    Collect(CollectArgs),
    /// Judge and embed a collected run and write all tables.
    Score(ScoreArgs),
    /// Recompute agreement and robustness statistics for a scored run.
    Stats {
        run_dir: PathBuf,
    },
    /// Recompute composite totals from a CSV of published group cells.
    VerifyPaper(VerifyArgs),
    /// Re-score a scored run under other configurations, without providers.
    Sensitivity {
        run_dir: PathBuf,
        /// Comma-separated configuration ids, or "default" for the full grid.
        #[arg(long, default_value = "default")]
        configs: String,
    },
    /// Check a test set and print its findings.
    Validate {
        #[arg(long)]
        testset: PathBuf,
    },
}

#[derive(Args)]
struct ProviderArgs {
    /// live, replay or record.
    #[arg(long, default_value = "live")]
    mode: Mode,
    /// Response cache; required for replay and record.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Upper bound on concurrent provider calls.
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    testset: PathBuf,
    /// JSON file listing the models to evaluate.
    #[arg(long)]
    models: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Show each group's conditions to the evaluated models.
    #[arg(long)]
    reveal_constraints: bool,
    #[command(flatten)]
    providers: ProviderArgs,
}

#[derive(Args)]
struct ScoreArgs {
    /// Run directory written by `collect`.
    run_dir: PathBuf,
    /// JSON file listing the judges; defaults to the built-in ensemble.
    #[arg(long)]
    judges: Option<PathBuf>,
    /// JSON file with one embedding backend; defaults to the built-in one.
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Comma-separated configuration ids (the first is the main one), or "default".
    #[arg(long, default_value = "default")]
    configs: String,
    /// Models scored but left out of every centroid (comma-separated).
    #[arg(long, value_delimiter = ',')]
    exclude_from_centroid: Vec<String>,
    /// Embed each filling with its surrounding sentence fragments.
    #[arg(long)]
    context_embedding: bool,
    #[command(flatten)]
    providers: ProviderArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// CSV with rank, model_id, s_g*, u_g*, satisfy_mean, surprise_mean, total.
    #[arg(long)]
    tables: PathBuf,
    #[arg(long, default_value_t = PAPER_TOLERANCE)]
    tolerance: f64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Exit non-zero unless every total and the rank order match.
    #[arg(long)]
    strict: bool,
}

fn providers_from(path: &Path) -> Result<Vec<ProviderConfig>> {
    load_provider_configs(path).with_context(|| format!("loading providers from {}", path.display()))
}

fn collect(a: CollectArgs) -> Result<u8> {
    let report = cmd_collect(&CollectOptions {
        testset: a.testset,
        models: providers_from(&a.models)?,
        mode: a.providers.mode,
        cache_dir: a.providers.cache_dir,
        out: a.out.clone(),
        parallelism: a.providers.parallelism,
        reveal_constraints: a.reveal_constraints,
    })?;
    println!("run {} written to {}", report.run_id, a.out.display());
    for m in &report.models {
        println!("  {:<28} {:?}{}", m.model_id, m.status, if m.aligned { " (aligned)" } else { "" });
    }
    Ok(0)
}

fn score(a: ScoreArgs) -> Result<u8> {
    let judges = match &a.judges {
        Some(p) => providers_from(p)?,
        None => ProviderConfig::default_judges(),
    };
    let embedding = match &a.embedding {
        Some(p) => {
            let mut v = providers_from(p)?;
            if v.len() != 1 {
                bail!("{} must list exactly one embedding backend, found {}", p.display(), v.len());
            }
            v.remove(0)
        }
        None => ProviderConfig::default_embedding(),
    };
    let artifacts = cmd_score(&ScoreOptions {
        run_dir: a.run_dir.clone(),
        judges,
        embedding,
        mode: a.providers.mode,
        cache_dir: a.providers.cache_dir,
        configs: ScoringConfig::parse_list(&a.configs)?,
        parallelism: a.providers.parallelism,
        exclude_from_centroid: a.exclude_from_centroid.into_iter().collect::<BTreeSet<_>>(),
        embedding_text: if a.context_embedding { EmbeddingText::Context } else { EmbeddingText::Filling },
    })?;
    println!("{} files written to {}; see report.md", artifacts.files.len(), a.run_dir.display());
    Ok(0)
}

fn verify(a: VerifyArgs) -> Result<u8> {
    let report = cmd_verify_paper(&a.tables, a.tolerance)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", render_verify_report(&report));
    }
    Ok(if a.strict && !report.passed() { EXIT_SCORING } else { 0 })
}

fn validate(path: &Path) -> Result<u8> {
    let ts = testset::load_testset_file(path)?;
    let report = testset::validate(&ts);
    if report.is_valid() {
        println!(
            "{}: {} blanks, {} groups, {} constraints, {} edges; no findings",
            ts.id,
            ts.blank_count(),
            ts.groups.len(),
            ts.constraint_count(),
            ts.edges.len()
        );
        if let Some(order) = &report.topological_order {
            println!("group order: {order:?}");
        }
        return Ok(0);
    }
    for f in &report.findings {
        println!("{f}");
    }
    Ok(EXIT_VALIDATION)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Collect(a) => collect(a),
        Command::Score(a) => score(a),
        Command::Stats { run_dir } => {
            println!("{}", serde_json::to_string_pretty(&cmd_stats(&run_dir)?)?);
            Ok(0)
        }
        Command::VerifyPaper(a) => verify(a),
        Command::Sensitivity { run_dir, configs } => {
            let artifacts = cmd_sensitivity(&SensitivityOptions { run_dir, configs: ScoringConfig::parse_list(&configs)? })?;
            println!("{} files written under {}", artifacts.files.len(), artifacts.root.join("sensitivity").display());
            Ok(0)
        }
        Command::Validate { testset } => validate(&testset),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<quiet_core::Error>().map(quiet_core::Error::class) {
        Some(ErrorClass::Usage) | None => EXIT_USAGE,
        Some(ErrorClass::Validation) => EXIT_VALIDATION,
        Some(ErrorClass::Provider) => EXIT_PROVIDER,
        Some(ErrorClass::Scoring) => EXIT_SCORING,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
