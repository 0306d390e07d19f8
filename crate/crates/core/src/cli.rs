//! Command-line front end. Exit codes: 0 success, 1 operational failure
//! (pipeline, generation, output), 2 invalid input (config, dataset, flags).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use tracing::{info, warn};

use crate::bench::{report_json, run_bench, run_critique_suite, run_jsonrag_suite, write_bench_outputs, SuiteResult};
use crate::config::LoadedConfig;
use crate::eval::cost::{cost_report, cost_report_csv};
use crate::eval::load_dataset;
use crate::eval::report::{aggregate, render_table, CaseOutcome};
use crate::forge::{make_critique_suite, make_jsonrag_suite, CritiqueSuite, RagDocument, RagSuiteEntry};
use crate::pipeline::{CritiqueSource, Engine};
use crate::planner::{CritiqueLevel, CritiqueRequest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "coalition",
    version,
    about = "Run, benchmark and evaluate a coalition of models on tool-use tasks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    None,
    General,
    Assisted,
    Explicit,
}

impl LevelArg {
    fn level(self) -> Option<CritiqueLevel> {
        match self {
            LevelArg::None => None,
            LevelArg::General => Some(CritiqueLevel::General),
            LevelArg::Assisted => Some(CritiqueLevel::Assisted),
            LevelArg::Explicit => Some(CritiqueLevel::Explicit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteKind {
    Critique,
    Jsonrag,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer one query end to end and print the response.
    Run {
        #[arg(long)]
        config: PathBuf,
        query: String,
        /// Only `none` and `general` apply without a golden plan.
        #[arg(long, value_enum, default_value = "none")]
        critique_level: LevelArg,
        /// Directory for `trace.jsonl`; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a golden dataset and write the report, outcomes and traces.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the processor count, capped by the
        /// live in-flight limit.
        #[arg(long)]
        jobs: Option<usize>,
        /// Give each plan oracle feedback at this level before executing it.
        #[arg(long, value_enum, default_value = "none")]
        critique_level: LevelArg,
    },
    /// Generate a critique or JSON-reduction suite file.
    Forge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: SuiteKind,
        /// Golden cases (critique) or documents with required paths (jsonrag).
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base pollution seed; repeat for several variants per case.
        #[arg(long = "seed", default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Re-aggregate an outcomes file without re-running anything.
    Report {
        #[arg(long)]
        outcomes: PathBuf,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Tabulate success rates against model size as CSV.
    Cost {
        #[arg(long)]
        config: PathBuf,
        /// JSON object mapping model id to success rate in percent.
        #[arg(long)]
        success: PathBuf,
    },
    /// Run a forged suite against the configured Critic or JsonRag model.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: SuiteKind,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Error carrying the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

fn invalid(message: impl ToString) -> CliError {
    CliError {
        code: EXIT_INVALID,
        message: message.to_string(),
    }
}

fn failure(message: impl ToString) -> CliError {
    CliError {
        code: EXIT_FAILURE,
        message: message.to_string(),
    }
}

/// Runs a parsed command, printing diagnostics to stderr.
pub fn execute(cli: Cli) -> i32 {
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            query,
            critique_level,
            out,
        } => cmd_run(&config, &query, critique_level, out.as_deref()),
        Command::Bench {
            config,
            dataset,
            out,
            jobs,
            critique_level,
        } => cmd_bench(&config, &dataset, out.as_deref(), jobs, critique_level),
        Command::Forge {
            config,
            kind,
            dataset,
            out,
            seeds,
        } => cmd_forge(&config, kind, &dataset, &out, &seeds),
        Command::Report { outcomes, json } => cmd_report(&outcomes, json),
        Command::Cost { config, success } => cmd_cost(&config, &success),
        Command::Suite {
            config,
            kind,
            suite,
            out,
        } => cmd_suite(&config, kind, &suite, out.as_deref()),
    }
}

fn load(config: &Path) -> Result<(LoadedConfig, Engine), CliError> {
    let loaded = LoadedConfig::load(config).map_err(invalid)?;
    let engine = loaded.engine().map_err(invalid)?;
    Ok((loaded, engine))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let raw = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| invalid(format!("invalid {what} {}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(failure)? + "\n";
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| failure(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| failure(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_run(config: &Path, query: &str, level: LevelArg, out: Option<&Path>) -> Result<(), CliError> {
    let source = match level.level() {
        None => CritiqueSource::None,
        Some(CritiqueLevel::General) => CritiqueSource::Fixed(CritiqueRequest::general()),
        Some(other) => {
            return Err(invalid(format!(
                "critique level '{other}' needs a golden plan; use `bench`"
            )))
        }
    };
    let (loaded, engine) = load(config)?;
    let record = engine.run(query, &source);
    let dir = out.map_or_else(|| loaded.output_dir.clone(), Path::to_path_buf);
    let trace_path = dir.join("trace.jsonl");
    fs::create_dir_all(&dir)
        .and_then(|()| record.trace.write_file(&trace_path))
        .map_err(|e| failure(format!("cannot write trace {}: {e}", trace_path.display())))?;
    info!(path = %trace_path.display(), "trace written");
    if !record.sanitize.removed.is_empty() || !record.sanitize.replaced.is_empty() {
        warn!(
            removed = record.sanitize.removed.len(),
            replaced = record.sanitize.replaced.len(),
            "plan referenced tools outside the catalog"
        );
    }
    match (&record.response, &record.error) {
        (Some(response), None) => {
            println!("{}", response.text);
            Ok(())
        }
        (_, Some(e)) => Err(failure(e)),
        (None, None) => Err(failure("run produced no response")),
    }
}

pub fn cmd_bench(
    config: &Path,
    dataset: &Path,
    out: Option<&Path>,
    jobs: Option<usize>,
    level: LevelArg,
) -> Result<(), CliError> {
    let (loaded, engine) = load(config)?;
    let cases = load_dataset(dataset, Some(&loaded.catalog)).map_err(invalid)?;
    let default_jobs = std::thread::available_parallelism().map_or(1, usize::from);
    let jobs = match (jobs, loaded.max_jobs()) {
        (Some(0), _) => return Err(invalid("--jobs must be positive")),
        (Some(j), _) => j,
        (None, Some(cap)) => default_jobs.min(cap),
        (None, None) => default_jobs,
    };
    info!(cases = cases.len(), jobs, "running bench");
    let run = run_bench(&engine, &cases, level.level(), jobs).map_err(failure)?;
    let dir = out.map_or_else(|| loaded.output_dir.clone(), Path::to_path_buf);
    write_bench_outputs(&run, &dir).map_err(|e| failure(format!("cannot write outputs to {}: {e}", dir.display())))?;
    for o in run.outcomes.iter().filter(|o| o.error.is_some()) {
        warn!(case = %o.id, "{}", o.error.as_deref().unwrap_or_default());
    }
    print!("{}", render_table(&run.report));
    Ok(())
}

pub fn cmd_forge(config: &Path, kind: SuiteKind, dataset: &Path, out: &Path, seeds: &[u64]) -> Result<(), CliError> {
    let loaded = LoadedConfig::load(config).map_err(invalid)?;
    match kind {
        SuiteKind::Critique => {
            let cases = load_dataset(dataset, Some(&loaded.catalog)).map_err(invalid)?;
            let suite = make_critique_suite(&cases, &loaded.catalog, seeds, &loaded.templates).map_err(failure)?;
            for s in &suite.skipped {
                info!(case = %s.case_id, kind = %s.kind, seed = s.seed, "skipped: {}", s.reason);
            }
            write_json(out, &suite)?;
            println!(
                "{} tasks written to {} ({} variants skipped)",
                suite.tasks.len(),
                out.display(),
                suite.skipped.len()
            );
        }
        SuiteKind::Jsonrag => {
            let documents: Vec<RagDocument> = read_json(dataset, "document set")?;
            if documents.is_empty() {
                return Err(invalid(format!("document set {} is empty", dataset.display())));
            }
            let entries = make_jsonrag_suite(&documents).map_err(failure)?;
            write_json(out, &entries)?;
            println!("{} tasks written to {}", entries.len(), out.display());
        }
    }
    Ok(())
}

pub fn cmd_report(outcomes: &Path, json: bool) -> Result<(), CliError> {
    let outcomes: Vec<CaseOutcome> = read_json(outcomes, "outcomes file")?;
    let report = aggregate(&outcomes).map_err(invalid)?;
    if json {
        print!("{}", report_json(&report));
    } else {
        print!("{}", render_table(&report));
    }
    Ok(())
}

pub fn cmd_cost(config: &Path, success: &Path) -> Result<(), CliError> {
    let loaded = LoadedConfig::load(config).map_err(invalid)?;
    let success: BTreeMap<String, f64> = read_json(success, "success file")?;
    let models: Vec<_> = loaded.registry.specs().cloned().collect();
    let rows = cost_report(&models, &success).map_err(invalid)?;
    print!("{}", cost_report_csv(&rows).map_err(failure)?);
    Ok(())
}

pub fn cmd_suite(config: &Path, kind: SuiteKind, suite: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let (loaded, engine) = load(config)?;
    let result: SuiteResult = match kind {
        SuiteKind::Critique => {
            let suite: CritiqueSuite = read_json(suite, "critique suite")?;
            run_critique_suite(&suite.tasks, &loaded.catalog, &engine.gateway, &loaded.templates).map_err(failure)?
        }
        SuiteKind::Jsonrag => {
            let entries: Vec<RagSuiteEntry> = read_json(suite, "jsonrag suite")?;
            run_jsonrag_suite(&entries, &engine.gateway, &loaded.templates, loaded.file.preview_len).map_err(failure)?
        }
    };
    if result.overall.total == 0 {
        return Err(invalid("suite has no tasks"));
    }
    for (group, tally) in &result.groups {
        println!("{group:<40} {:>5.1}%  ({}/{})", tally.rate(), tally.passed, tally.total);
    }
    println!(
        "{:<40} {:>5.1}%  ({}/{})",
        "overall", result.success_rate, result.overall.passed, result.overall.total
    );
    if let Some(path) = out {
        write_json(path, &result)?;
    }
    Ok(())
}
