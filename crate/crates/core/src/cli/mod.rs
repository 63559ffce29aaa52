//! The `convlab` command line.
//!
//! ```text
//! convlab attribute   --events log.jsonl --rule LTA --relation user --enforcement post --r 2
//! convlab measure     --events log.jsonl --config run.json --epsilon 1 --seed 7
//! convlab sensitivity --events log.jsonl --pool pool.jsonl --rule FTA --relation impression --enforcement post
//! convlab classify    --trials 100 --witness-dir witnesses/
//! convlab reproduce   --table 4
//! ```
//!
//! Exit status is 0 on success, 1 on a user error (bad flags, unreadable or
//! invalid input, refused measurement) and 2 on an internal error.

mod reproduce;

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::adjacency::{sensitivity_report, NeighborPool};
use crate::attribution::{make_rule, AttributionRuleSpec, RuleKind};
use crate::bounding::{run, Configuration, EnforcementPoint, Relation};
use crate::dp::{measure, MeasureOptions, PrivacyParams};
use crate::events::{parse_events, Dataset};
use crate::queries::QuerySpec;
use crate::validity::{classification_table, classify, table_rules, CheckOptions, TableCell, TableOptions};

pub use reproduce::{reproduce_table, TableOutput};

/// Environment variable that takes precedence over `--jobs`.
pub const JOBS_ENV: &str = "CONVLAB_JOBS";

#[derive(Debug, Parser)]
#[command(name = "convlab", version, about = "Differentially private conversion measurement lab")]
struct Cli {
    /// JSON-lines event log.
    #[arg(long, global = true)]
    events: Option<PathBuf>,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for neighbour sweeps and validity trials.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Attribute conversions and print the attributed dataset as JSON lines.
    Attribute(ConfigArgs),
    /// Run a noisy measurement.
    Measure(MeasureArgs),
    /// Exhaustive empirical sensitivity over removal and pool neighbours.
    Sensitivity(SensitivityArgs),
    /// Check every configuration cell and print the classification matrix.
    Classify(ClassifyArgs),
    /// Recompute one of the reference tables.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args, Default)]
struct ConfigArgs {
    /// LTA, FTA, UNI, EXP, US, POS or IPA.
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    half_life: Option<f64>,
    #[arg(long)]
    relation: Option<String>,
    /// none, pre, post or event_admission.
    #[arg(long)]
    enforcement: Option<String>,
    /// Contribution bound.
    #[arg(long = "r", alias = "bound")]
    r: Option<u32>,
}

#[derive(Debug, Args)]
struct MeasureArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Query as inline JSON, or `@path` to read it from a file.
    #[arg(long)]
    query: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Validity constant; defaults to the configuration's classification.
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    unsafe_allow_invalid: bool,
}

#[derive(Debug, Args)]
struct SensitivityArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// JSON-lines pool of addition candidates grouped by `unit`.
    #[arg(long)]
    pool: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    /// Random datasets per cell.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Use 1000 trials per cell.
    #[arg(long)]
    full: bool,
    /// Directory for witness dataset pairs.
    #[arg(long)]
    witness_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    #[arg(long, value_parser = ["1", "3", "4", "5"])]
    table: String,
    /// Full trial count for table 5.
    #[arg(long)]
    full: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RuleField {
    Name(RuleKind),
    Spec(AttributionRuleSpec),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    rule: Option<RuleField>,
    relation: Option<Relation>,
    enforcement: Option<EnforcementPoint>,
    r: Option<u32>,
    query: Option<QuerySpec>,
    epsilon: Option<f64>,
    c0: Option<f64>,
    #[serde(default)]
    unsafe_allow_invalid: bool,
    pool: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    fn user(e: impl std::fmt::Display) -> Self {
        CliError::User(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (program name first), runs the subcommand, and returns the
/// exit status.
pub fn run_command<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let status = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if status == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return status;
        }
    };
    let result = jobs(&cli).and_then(|n| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Internal(e.to_string()))?;
        pool.install(|| execute(&cli))
    });
    let result = result.and_then(|text| emit(&cli, &text, out));
    match result {
        Ok(()) => 0,
        Err(CliError::User(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(CliError::Internal(msg)) => {
            let _ = writeln!(err, "internal error: {msg}");
            2
        }
    }
}

fn jobs(cli: &Cli) -> CliResult<Option<usize>> {
    match std::env::var(JOBS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::User(format!("{JOBS_ENV} must be a non-negative integer, got {v:?}"))),
        _ => Ok(cli.jobs),
    }
}

fn emit(cli: &Cli, text: &str, out: &mut dyn Write) -> CliResult<()> {
    match &cli.output {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display()))),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Internal(e.to_string())),
    }
}

fn execute(cli: &Cli) -> CliResult<String> {
    let file = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Attribute(args) => {
            let d = load_events(cli)?;
            let cfg = configuration(args, &file)?;
            Ok(run(&d, &cfg).map_err(CliError::user)?.to_jsonl())
        }
        Command::Measure(args) => cmd_measure(cli, args, &file),
        Command::Sensitivity(args) => {
            let d = load_events(cli)?;
            let cfg = configuration(&args.config, &file)?;
            let pool = match args.pool.as_ref().or(file.pool.as_ref()) {
                Some(path) => NeighborPool::parse(BufReader::new(open(path)?)).map_err(CliError::user)?,
                None => NeighborPool::empty(),
            };
            let report = sensitivity_report(&d, &cfg, &pool).map_err(CliError::user)?;
            Ok(format!("{}\n", report.value))
        }
        Command::Classify(args) => {
            let trials = if args.full { 1000 } else { args.trials };
            cmd_classify(cli.seed, trials, args.witness_dir.as_deref())
        }
        Command::Reproduce(args) => {
            let table: u8 = args.table.parse().expect("restricted by clap");
            let trials = if args.full { 1000 } else { 100 };
            let output = reproduce_table(table, trials, cli.seed).map_err(CliError::user)?;
            Ok(format!(
                "{}\n{}\n",
                output.text,
                serde_json::to_string_pretty(&output.json).expect("tables serialize")
            ))
        }
    }
}

fn open(path: &Path) -> CliResult<fs::File> {
    fs::File::open(path).map_err(|e| CliError::User(format!("cannot open {}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::User(format!("invalid config {}: {e}", path.display())))
        }
    }
}

fn load_events(cli: &Cli) -> CliResult<Dataset> {
    let path = cli
        .events
        .as_deref()
        .ok_or_else(|| CliError::User("--events is required".into()))?;
    parse_events(BufReader::new(open(path)?)).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

fn configuration(args: &ConfigArgs, file: &ConfigFile) -> CliResult<Configuration> {
    let mut spec = match (&args.rule, &file.rule) {
        (Some(name), _) => AttributionRuleSpec::new(name.parse::<RuleKind>().map_err(CliError::user)?),
        (None, Some(RuleField::Name(kind))) => AttributionRuleSpec::new(*kind),
        (None, Some(RuleField::Spec(spec))) => spec.clone(),
        (None, None) => AttributionRuleSpec::new(RuleKind::Lta),
    };
    if let Some(h) = args.half_life {
        spec.half_life = Some(h);
    }
    let rule = make_rule(&spec).map_err(CliError::user)?;
    let relation = match &args.relation {
        Some(s) => s.parse().map_err(CliError::user)?,
        None => file.relation.unwrap_or(Relation::Conversion),
    };
    let enforcement = match &args.enforcement {
        Some(s) => s.parse().map_err(CliError::user)?,
        None => file.enforcement.unwrap_or(EnforcementPoint::None),
    };
    let r = args.r.or(file.r).unwrap_or(1);
    Configuration::new(rule, relation, enforcement, r).map_err(CliError::user)
}

fn cmd_measure(cli: &Cli, args: &MeasureArgs, file: &ConfigFile) -> CliResult<String> {
    let d = load_events(cli)?;
    let cfg = configuration(&args.config, file)?;
    let query = match &args.query {
        Some(text) => {
            let json = match text.strip_prefix('@') {
                Some(path) => fs::read_to_string(path)
                    .map_err(|e| CliError::User(format!("cannot read {path}: {e}")))?,
                None => text.clone(),
            };
            serde_json::from_str::<QuerySpec>(&json).map_err(|e| CliError::User(format!("invalid query: {e}")))?
        }
        None => file
            .query
            .clone()
            .ok_or_else(|| CliError::User("--query is required".into()))?,
    };
    let epsilon = args
        .epsilon
        .or(file.epsilon)
        .ok_or_else(|| CliError::User("--epsilon is required".into()))?;
    let unsafe_allow_invalid = args.unsafe_allow_invalid || file.unsafe_allow_invalid;
    let class = classify(&cfg.rule, cfg.relation, cfg.enforcement);
    let c0 = match args.c0.or(file.c0).or(class.c0()) {
        Some(c0) => c0,
        None if unsafe_allow_invalid => {
            return Err(CliError::User("--c0 is required with --unsafe-allow-invalid".into()))
        }
        None => {
            return Err(CliError::User(format!(
                "refusing to measure under {}: {}",
                cfg.describe(),
                class.refusal().unwrap_or_default()
            )))
        }
    };
    let params = PrivacyParams::new(epsilon, c0, cli.seed).map_err(CliError::user)?;
    let m = measure(&d, &cfg, &query, &params, MeasureOptions { unsafe_allow_invalid }).map_err(CliError::user)?;
    Ok(format!("{}\n", serde_json::to_string_pretty(&m).expect("measurements serialize")))
}

fn file_stem(cell: &TableCell) -> String {
    let raw = format!("{}_{}_{}", cell.rule, cell.relation, cell.enforcement);
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

fn cmd_classify(seed: u64, trials: usize, witness_dir: Option<&Path>) -> CliResult<String> {
    let opts = TableOptions {
        check: CheckOptions {
            trials,
            seed,
            ..CheckOptions::default()
        },
        ..TableOptions::default()
    };
    let cells = classification_table(&table_rules(), &Relation::ALL, &opts).map_err(CliError::user)?;
    if let Some(dir) = witness_dir {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::User(format!("cannot create {}: {e}", dir.display())))?;
    }
    let mut rendered = Vec::new();
    for cell in &cells {
        let mut path = None;
        if let (Some(dir), Some(w)) = (witness_dir, cell.report.as_ref().and_then(|r| r.witness.as_ref())) {
            let stem = dir.join(file_stem(cell));
            let write = |suffix: &str, d: &Dataset| {
                let p = stem.with_extension(format!("{suffix}.jsonl"));
                fs::write(&p, d.to_jsonl())
                    .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", p.display())))
            };
            write("d", &w.d)?;
            write("d_prime", &w.d_prime)?;
            path = Some(stem.display().to_string());
        }
        rendered.push(json!({
            "rule": cell.rule,
            "relation": cell.relation,
            "enforcement": cell.enforcement,
            "expected": cell.expected,
            "observed": cell.observed(),
            "agrees": cell.agrees(),
            "report": cell.report.as_ref().map(|r| r.to_json(path.as_deref())),
        }));
    }
    let matrix = json!({
        "trials": trials,
        "seed": seed,
        "all_agree": cells.iter().all(TableCell::agrees),
        "cells": rendered,
    });
    Ok(format!("{}\n", serde_json::to_string_pretty(&matrix).expect("matrix serializes")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("convlab").chain(args.iter().copied());
        let code = run_command(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (code, _, err) = call(&["reproduce", "--tabel", "1"]);
        assert_eq!(code, 1);
        assert!(err.contains("--tabel"));
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("reproduce"));
    }

    #[test]
    fn missing_events_is_user_error() {
        let (code, _, err) = call(&["attribute"]);
        assert_eq!(code, 1);
        assert!(err.contains("--events"));
    }

    #[test]
    fn reproduce_table_one() {
        let (code, out, _) = call(&["reproduce", "--table", "1"]);
        assert_eq!(code, 0);
        assert!(out.contains("0.0667"));
        assert!(out.contains("0.5333"));
    }

    #[test]
    fn config_file_fields() {
        let file: ConfigFile = serde_json::from_str(
            r#"{"rule":{"rule":"EXP","half_life":2},"relation":"impression","enforcement":"post","r":2}"#,
        )
        .unwrap();
        let cfg = configuration(&ConfigArgs::default(), &file).unwrap();
        assert_eq!(cfg.describe(), "rule=EXP(half_life=2);relation=impression;enforcement=post;r=2");
        let named: ConfigFile = serde_json::from_str(r#"{"rule":"UNI"}"#).unwrap();
        assert!(matches!(named.rule, Some(RuleField::Name(RuleKind::Uni))));
        assert!(serde_json::from_str::<ConfigFile>(r#"{"rules":"UNI"}"#).is_err());
    }
}
