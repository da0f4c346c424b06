mod output;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lfi::models::hmm::{infinite_hmm_model, HmmConfig};
use lfi::models::pcfg::{pcfg_model, GnfGrammar};
use lfi::models::random_list::random_list_model;
use lfi::sanity::sample_estimate;
use lfi::{anytime_run, Algorithm, AnytimeOptions, BpOptions, ElementId, Error, Registry, Value};
use log::warn;

use crate::output::{format_sig, write_csv, write_json, Record};

#[derive(Parser, Debug)]
#[command(name = "lfi", version, about = "Anytime probability bounds by lazy factored inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one model over a depth schedule and write one record per depth.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelName {
    RandomList,
    Hmm,
    PcfgFinite,
    PcfgInfinite,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgorithmName {
    Ve,
    Bp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, value_enum)]
    model: ModelName,

    /// Grammar file (JSON) for `--model custom`.
    #[arg(long)]
    grammar: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "ve")]
    algorithm: AlgorithmName,

    /// Run a single depth.
    #[arg(long, conflicts_with_all = ["start", "step", "max"], allow_negative_numbers = true)]
    depth: Option<i64>,

    /// First depth of the schedule.
    #[arg(long, requires = "max", allow_negative_numbers = true)]
    start: Option<i64>,

    #[arg(long, requires = "max")]
    step: Option<i64>,

    /// Last depth of the schedule (inclusive).
    #[arg(long)]
    max: Option<i64>,

    #[arg(long, value_enum, default_value = "csv")]
    format: Format,

    /// Output file; standard output if omitted.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Query value whose bounds are reported.
    #[arg(long, default_value = "true")]
    value: String,

    /// HMM initial state.
    #[arg(long, default_value_t = 7)]
    initial_state: i64,

    /// HMM observed emissions, e.g. `TTTF` or `true,false`; `none` for no
    /// evidence. Defaults to ten `true`s.
    #[arg(long)]
    observations: Option<String>,

    /// Substring the grammar query looks for.
    #[arg(long, default_value = "de")]
    pattern: String,

    /// Substring observed to occur; empty for no evidence.
    #[arg(long, default_value = "a")]
    evidence_pattern: String,

    #[arg(long, default_value_t = 100)]
    bp_max_iterations: usize,

    #[arg(long, default_value_t = 1e-9)]
    bp_tolerance: f64,

    #[arg(long, default_value_t = 0.0)]
    bp_damping: f64,

    /// Accumulate BP messages as logarithms.
    #[arg(long)]
    bp_log_domain: bool,

    /// Also estimate the query by truncated forward sampling.
    #[arg(long, default_value_t = 0)]
    sanity_samples: usize,

    /// Per-world depth budget for the sampler.
    #[arg(long, default_value_t = 200)]
    sanity_budget: i64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Write 0 for elapsed_ms so repeated runs give identical files.
    #[arg(long)]
    omit_timing: bool,
}

impl RunArgs {
    fn schedule(&self) -> Result<Vec<i64>> {
        if let Some(d) = self.depth {
            return Ok(vec![d]);
        }
        let Some(max) = self.max else {
            bail!("give either --depth or --max (with optional --start and --step)");
        };
        let start = self.start.unwrap_or(1);
        let step = self.step.unwrap_or(1);
        if step <= 0 {
            bail!("--step must be positive");
        }
        if start > max {
            bail!("--start {start} is beyond --max {max}");
        }
        Ok((start..=max).step_by(step as usize).collect())
    }

    fn observations(&self) -> Result<Vec<bool>> {
        let Some(text) = &self.observations else {
            return Ok(HmmConfig::default().observations);
        };
        let text = text.trim();
        if text.is_empty() || text.eq_ignore_ascii_case("none") {
            return Ok(Vec::new());
        }
        if text.contains(',') {
            return text
                .split(',')
                .map(|t| match t.trim().to_ascii_lowercase().as_str() {
                    "true" | "t" | "1" => Ok(true),
                    "false" | "f" | "0" => Ok(false),
                    other => bail!("bad observation {other:?}"),
                })
                .collect();
        }
        text.chars()
            .map(|c| match c.to_ascii_uppercase() {
                'T' | '1' => Ok(true),
                'F' | '0' => Ok(false),
                other => bail!("bad observation {other:?}"),
            })
            .collect()
    }

    fn grammar(&self) -> Result<Option<GnfGrammar>> {
        Ok(match self.model {
            ModelName::PcfgFinite => Some(GnfGrammar::finite()),
            ModelName::PcfgInfinite => Some(GnfGrammar::infinite()),
            ModelName::Custom => {
                let path = self.grammar.as_ref().context("--model custom needs --grammar")?;
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Some(GnfGrammar::from_json(&text)?)
            }
            _ => None,
        })
    }

    /// Builds the selected model in a fresh registry.
    fn build(&self) -> Result<(Registry, ElementId)> {
        let mut reg = Registry::new();
        let query = match self.model {
            ModelName::RandomList => random_list_model(&mut reg)?.query,
            ModelName::Hmm => {
                let config = HmmConfig {
                    initial_state: self.initial_state,
                    observations: self.observations()?,
                };
                infinite_hmm_model(&mut reg, &config)?.query
            }
            ModelName::PcfgFinite | ModelName::PcfgInfinite | ModelName::Custom => {
                let grammar = self.grammar()?.expect("grammar models");
                pcfg_model(&mut reg, &grammar, &self.pattern, &self.evidence_pattern)?.query
            }
        };
        Ok((reg, query))
    }

    fn options(&self) -> AnytimeOptions {
        let bp = BpOptions {
            max_iterations: self.bp_max_iterations,
            tolerance: self.bp_tolerance,
            damping: self.bp_damping,
            normalize_messages: None,
            log_domain: self.bp_log_domain,
            simplify: true,
        };
        let options = match self.algorithm {
            AlgorithmName::Ve => AnytimeOptions::ve(),
            AlgorithmName::Bp => AnytimeOptions::bp(bp),
        };
        options.with_domain(vec![Value::Bool(false), Value::Bool(true)])
    }
}

fn write_records(args: &RunArgs, records: &[Record]) -> Result<()> {
    let sink: Box<dyn Write> = match &args.output {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    match args.format {
        Format::Csv => write_csv(sink, records),
        Format::Json => write_json(sink, records),
    }
}

fn sanity_check(args: &RunArgs, value: &Value, last: Option<&lfi::DepthResult>) -> Result<()> {
    let (mut reg, query) = args.build()?;
    let est = sample_estimate(&mut reg, query, value, args.sanity_budget, args.sanity_samples, args.seed)?;
    let se = est.standard_error();
    eprintln!(
        "sanity: estimate {} (se {}) from {} samples, {} rejected, {} truncated",
        format_sig(est.estimate),
        format_sig(se),
        est.num_samples,
        est.num_rejected,
        est.num_truncated
    );
    if let Some(r) = last {
        let (lo, hi) = r.bounds.get(value);
        if est.estimate < lo - 3.0 * se || est.estimate > hi + 3.0 * se {
            warn!("sampled estimate lies outside the final bounds [{lo}, {hi}] by more than 3 standard errors");
            eprintln!("sanity: estimate is outside the final bounds [{}, {}]", format_sig(lo), format_sig(hi));
        }
    }
    Ok(())
}

/// Exit code 2 for inconsistent evidence, 1 for anything else.
fn failure_code(err: &anyhow::Error) -> u8 {
    let inconsistent = err.chain().any(|e| {
        e.downcast_ref::<Error>()
            .is_some_and(|e| matches!(e.root_cause(), Error::InconsistentEvidence))
    });
    if inconsistent {
        2
    } else {
        1
    }
}

fn run(args: &RunArgs) -> Result<()> {
    let schedule = args.schedule()?;
    if args.model != ModelName::Custom && args.grammar.is_some() {
        bail!("--grammar only applies to --model custom");
    }
    let value = Value::parse(&args.value);
    let (mut reg, query) = args.build()?;
    let options = args.options();
    let outcome = anytime_run(&mut reg, query, &schedule, &options, |_| {});
    let (results, failure) = match outcome {
        Ok(results) => (results, None),
        Err(e) => (e.partial, Some(e.source)),
    };
    let records: Vec<Record> = results
        .iter()
        .map(|r| Record::new(r, &value, args.omit_timing))
        .collect();
    write_records(args, &records)?;
    if let Some(err) = failure {
        return Err(err.into());
    }
    if options.algorithm() == Algorithm::Bp && results.iter().any(|r| !r.converged) {
        warn!("belief propagation hit the iteration cap on some depths");
    }
    if args.sanity_samples > 0 {
        sanity_check(args, &value, results.last())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LFI_LOG", "off")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Command::Run(args) = &cli.command;
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure_code(&e))
        }
    }
}
