//! The `ttm` command line.
//!
//! ```text
//! ttm prompt-gen       --config FILE [--dry-run]
//! ttm transform        --config FILE [--dry-run]
//! ttm eval             --config FILE [--dry-run] [--keep-artifacts]
//! ttm report           RESULTS... [--out DIR] [--svg]
//! ttm compare-backends (--config FILE | --input RESULTS...) [--dry-run]
//! ttm seeds            (--config FILE | --input RESULTS...) [--dry-run]
//! ```
//!
//! Exit status is 0 on success, 1 when a run fails (including too many
//! per-image failures) and 2 for usage or configuration errors.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use ttm_core::config::{ExperimentConfig, ReportFormat};
use ttm_core::prompting::build_meta_prompt;
use ttm_core::report::{self, RunReport};
use ttm_core::runner::{Experiment, RunOptions, RunOutcome, PROMPT_FILE};
use ttm_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "ttm", version, about = "Test-time modification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Produce the source-domain prompt and store it in the output directory.
    PromptGen(ConfigArgs),
    /// Generate and cache every pseudo-source image without evaluating.
    Transform(ConfigArgs),
    /// Run the full experiment and write the report files.
    Eval(EvalArgs),
    /// Re-emit reports from stored results files.
    Report(ReportArgs),
    /// Table of each generation backend against the base model.
    CompareBackends(SourceArgs),
    /// Table of per-model mean ± std across seeds.
    Seeds(SourceArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Print the work plan and exit without contacting any service.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Store every scored prediction under `output_dir/artifacts`.
    #[arg(long)]
    keep_artifacts: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// `results.jsonl` or `results.csv` files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write markdown, CSV and JSON-lines here instead of printing markdown.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Debug)]
struct SourceArgs {
    #[arg(long, required_unless_present = "input", conflicts_with = "input")]
    config: Option<PathBuf>,
    /// Stored `results.jsonl` or `results.csv` files.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, conflicts_with = "input")]
    dry_run: bool,
}

/// Errors that mean "fix your invocation" rather than "the run broke".
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Manifest { .. }
        | Error::Argument(_)
        | Error::Spec(_)
        | Error::PromptFormat { .. } => EXIT_USAGE,
        _ => EXIT_RUN_FAILED,
    }
}

/// Parse `argv` (including the program name) and execute it.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn load(path: &Path) -> ttm_core::Result<Experiment> {
    Experiment::from_config(ExperimentConfig::load(path)?)
}

fn io(e: std::io::Error) -> Error {
    Error::Io {
        context: "writing output".into(),
        source: e,
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> ttm_core::Result<()> {
    match command {
        Command::PromptGen(a) => prompt_gen(&a, out),
        Command::Transform(a) => transform(&a, out),
        Command::Eval(a) => {
            let exp = load(&a.common.config)?;
            if a.common.dry_run {
                return write!(out, "{}", exp.plan()?).map_err(io);
            }
            let outcome = evaluate(
                &exp,
                RunOptions {
                    keep_artifacts: a.keep_artifacts,
                },
            )?;
            for r in outcome.report.by_dataset() {
                write!(out, "{}", report::render_markdown(&r)?).map_err(io)?;
            }
            writeln!(
                out,
                "\n{} of {} image(s) evaluated; reports in {}",
                outcome.evaluated,
                exp.manifest.len(),
                exp.config.output_dir.display()
            )
            .map_err(io)
        }
        Command::Report(a) => {
            let merged = read_all(&a.inputs)?;
            match a.out {
                Some(dir) => {
                    let formats = [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::JsonLines];
                    for path in report::write_report(&merged, &dir, &formats, a.svg)? {
                        writeln!(out, "{}", path.display()).map_err(io)?;
                    }
                    Ok(())
                }
                None => {
                    for (i, r) in merged.by_dataset().iter().enumerate() {
                        if i > 0 {
                            writeln!(out).map_err(io)?;
                        }
                        write!(out, "{}", report::render_markdown(r)?).map_err(io)?;
                    }
                    Ok(())
                }
            }
        }
        Command::CompareBackends(a) => table(&a, out, report::render_backends),
        Command::Seeds(a) => table(&a, out, report::render_seeds),
    }
}

fn prompt_gen(a: &ConfigArgs, out: &mut dyn Write) -> ttm_core::Result<()> {
    let exp = load(&a.config)?;
    if a.dry_run {
        return match exp.known_prompt()? {
            Some(p) => writeln!(out, "prompt ({}): {}", p.provenance().as_str(), p.text()).map_err(io),
            None => {
                let meta = build_meta_prompt(&exp.meta_prompt_spec()?)?;
                writeln!(out, "would send meta-prompt:\n{meta}").map_err(io)
            }
        };
    }
    let prompt = exp.resolve_prompt()?;
    writeln!(out, "{}", prompt.text()).map_err(io)?;
    writeln!(out, "stored in {}", exp.config.output_dir.join(PROMPT_FILE).display()).map_err(io)
}

fn transform(a: &ConfigArgs, out: &mut dyn Write) -> ttm_core::Result<()> {
    let exp = load(&a.config)?;
    if a.dry_run {
        return write!(out, "{}", exp.plan()?).map_err(io);
    }
    let prompt = exp.resolve_prompt()?;
    let t = exp.transform(&prompt)?;
    for f in &t.failures {
        log::warn!("{} failed at {}: {}", f.image, f.stage, f.reason);
    }
    writeln!(
        out,
        "{} job(s): {} cached, {} generated, {} failed; cache at {}",
        t.jobs,
        t.cache_hits,
        t.backend_calls,
        t.failures.len(),
        exp.cache.root().display()
    )
    .map_err(io)?;
    let total = t.jobs.max(1);
    if t.failures.len() as f64 > exp.config.failure_threshold * total as f64 {
        return Err(Error::RunFailed {
            failed: t.failures.len(),
            total: t.jobs,
            threshold: 100.0 * exp.config.failure_threshold,
        });
    }
    Ok(())
}

/// Run, write every report file, then surface a threshold failure.
fn evaluate(exp: &Experiment, opts: RunOptions) -> ttm_core::Result<RunOutcome> {
    let prompt = exp.resolve_prompt()?;
    let outcome = exp.run(&prompt, opts)?;
    exp.finish(&outcome)?;
    Ok(outcome)
}

fn read_all(inputs: &[PathBuf]) -> ttm_core::Result<RunReport> {
    let mut merged = RunReport::default();
    for path in inputs {
        let r = report::read_results(path)?;
        merged.cells.extend(r.cells);
        merged.provenance.extend(r.provenance);
    }
    Ok(merged)
}

fn table(a: &SourceArgs, out: &mut dyn Write, render: fn(&RunReport) -> ttm_core::Result<String>) -> ttm_core::Result<()> {
    let report = match &a.config {
        Some(config) => {
            let exp = load(config)?;
            if a.dry_run {
                return write!(out, "{}", exp.plan()?).map_err(io);
            }
            evaluate(&exp, RunOptions::default())?.report
        }
        None => read_all(&a.input)?,
    };
    for (i, r) in report.by_dataset().iter().enumerate() {
        if i > 0 {
            writeln!(out).map_err(io)?;
        }
        write!(out, "{}", render(r)?).map_err(io)?;
    }
    Ok(())
}
