//! Command-line front end. Everything except `serve` runs synchronously
//! against a store directory and writes to the given output.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use curation_core::collector::{render_export, ExampleFilter, ExampleStatus, ExportSelection};
use curation_core::metrics::{
    check_printed_scores, format_pct, group_scores, load_eval_table, parse_group_keys, GroupSummary,
};
use curation_core::parsers::{
    parse_composition, parse_pressure, parse_temperature, Composition, Quantity, QuantityError,
};
use curation_core::store::Store;
use curation_core::workflow::{ScanSelection, StageConfig};
use curation_core::{DocumentId, Stage, Status, SystemClock};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(
    name = "curation",
    version,
    about = "Staging area for curating extracted superconductor records"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    /// Store directory.
    #[arg(long, env = "CURATION_STORE", default_value = "curation-store")]
    pub store: PathBuf,
    /// Require a different curator to validate a corrected record.
    #[arg(long)]
    pub double_round: bool,
}

impl StoreArgs {
    pub fn open(&self) -> anyhow::Result<Stage> {
        Stage::open(
            &self.store,
            Arc::new(SystemClock),
            StageConfig {
                double_round: self.double_round,
            },
        )
        .with_context(|| format!("opening store {}", self.store.display()))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API.
    Serve {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long, env = "CURATION_HOST", default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "CURATION_PORT", default_value_t = 8080)]
        port: u16,
        /// Bearer token required on every request when set.
        #[arg(long, env = "CURATION_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
    /// Parse newline-delimited values, one JSON object per line.
    Parse {
        #[arg(long, value_enum, default_value = "formula")]
        kind: ParseKind,
        /// Input file; standard input when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run the anomaly rules and print the scan report.
    Scan {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long, conflicts_with_all = ["document", "status"])]
        all: bool,
        #[arg(long, conflicts_with = "status")]
        document: Option<String>,
        #[arg(long)]
        status: Option<Status>,
    },
    /// Ingest a payload file or a directory of .json/.jsonl files.
    Ingest {
        #[command(flatten)]
        store: StoreArgs,
        path: PathBuf,
    },
    /// Export training examples and mark them exported.
    ExportTraining {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        status: Option<ExampleStatus>,
        #[arg(long)]
        document: Option<String>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an evaluation table.
    Score {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated subset of curator,method.
        #[arg(long, default_value = "")]
        group: String,
        #[arg(long, value_enum, default_value = "table")]
        format: ScoreFormat,
        /// Also list rows whose printed scores disagree with their counts.
        #[arg(long)]
        check: bool,
    },
    /// Write every entity as newline-delimited JSON.
    Dump {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a dump into an empty store.
    Load {
        #[command(flatten)]
        store: StoreArgs,
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParseKind {
    Formula,
    Temperature,
    Pressure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreFormat {
    Table,
    Csv,
    Json,
}

pub fn parse_line(kind: ParseKind, input: &str) -> serde_json::Value {
    let quantity = |r: Result<Quantity, QuantityError>| match r {
        Ok(q) => ("parsed", json!({"magnitude": q.magnitude, "unit": q.unit})),
        Err(e) => ("parse_error", json!({"reason": e.reason(), "message": e.to_string()})),
    };
    let (outcome, details) = match kind {
        ParseKind::Formula => {
            let c = parse_composition(input);
            let details = match &c {
                Composition::Resolved { elements } => json!({ "elements": elements }),
                Composition::Unresolved { variables } => json!({ "variables": variables }),
                Composition::ParseError { reason } => json!({ "reason": reason }),
            };
            (c.outcome(), details)
        }
        ParseKind::Temperature => quantity(parse_temperature(input)),
        ParseKind::Pressure => quantity(parse_pressure(input)),
    };
    json!({"input": input, "outcome": outcome, "details": details})
}

fn write_to(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => Ok(stdout.write_all(text.as_bytes())?),
    }
}

fn parse_document(raw: &str) -> anyhow::Result<DocumentId> {
    DocumentId::parse(raw).map_err(|e| anyhow::anyhow!("{e}"))
}

/// Renders grouped scores. Percentages round half-up to two decimals.
pub fn render_scores(groups: &[GroupSummary], format: ScoreFormat) -> String {
    match format {
        ScoreFormat::Json => {
            let rows: Vec<_> = groups
                .iter()
                .map(|g| {
                    let s = g.scores.rounded();
                    json!({
                        "curator": g.curator,
                        "method": g.method,
                        "precision": s.precision,
                        "recall": s.recall,
                        "f1": s.f1,
                        "docs": g.docs,
                        "pages": g.pages,
                    })
                })
                .collect();
            let mut text = serde_json::to_string_pretty(&rows).expect("scores serialise");
            text.push('\n');
            text
        }
        ScoreFormat::Csv => {
            let mut text = String::from("group,precision,recall,f1,docs,pages\n");
            for g in groups {
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    g.label(),
                    format_pct(g.scores.precision),
                    format_pct(g.scores.recall),
                    format_pct(g.scores.f1),
                    g.docs,
                    g.pages
                ));
            }
            text
        }
        ScoreFormat::Table => {
            let width = groups.iter().map(|g| g.label().len()).max().unwrap_or(5).max(5);
            let mut text = format!(
                "{:<width$}  {:>7}  {:>7}  {:>7}  {:>5}  {:>6}\n",
                "group", "P (%)", "R (%)", "F1 (%)", "docs", "pages"
            );
            for g in groups {
                text.push_str(&format!(
                    "{:<width$}  {:>7}  {:>7}  {:>7}  {:>5}  {:>6}\n",
                    g.label(),
                    format_pct(g.scores.precision),
                    format_pct(g.scores.recall),
                    format_pct(g.scores.f1),
                    g.docs,
                    g.pages
                ));
            }
            text
        }
    }
}

/// The `score` subcommand minus I/O on its output.
pub fn score(input: &Path, group: &str, format: ScoreFormat, check: bool) -> anyhow::Result<String> {
    let rows = load_eval_table(input)?;
    let keys = parse_group_keys(group).map_err(anyhow::Error::msg)?;
    let mut text = render_scores(&group_scores(&rows, &keys)?, format);
    if check {
        let mismatches = check_printed_scores(&rows);
        text.push_str(&format!(
            "\n{} of {} rows disagree with their counts\n",
            mismatches.len(),
            rows.iter().filter(|r| r.printed.is_some()).count()
        ));
        for m in mismatches {
            text.push_str(&format!("  {m}\n"));
        }
    }
    Ok(text)
}

/// Runs every subcommand except `serve`.
pub fn run(command: Command, stdout: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::Serve { .. } => bail!("serve runs through the async entry point"),
        Command::Parse { kind, input } => {
            let reader: Box<dyn BufRead> = match input {
                Some(path) => Box::new(io::BufReader::new(
                    fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?,
                )),
                None => Box::new(io::BufReader::new(io::stdin())),
            };
            for line in reader.lines() {
                let line = line?;
                writeln!(stdout, "{}", parse_line(kind, &line))?;
            }
            Ok(())
        }
        Command::Scan {
            store,
            all,
            document,
            status,
        } => {
            let selection = match (all, document, status) {
                (_, Some(doc), _) => ScanSelection::Document(parse_document(&doc)?),
                (_, None, Some(status)) => ScanSelection::Status(status),
                (true, None, None) => ScanSelection::All,
                (false, None, None) => bail!("choose one of --all, --document or --status"),
            };
            let report = store.open()?.scan_selection(&selection)?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(())
        }
        Command::Ingest { store, path } => {
            for entry in store.open()?.ingest_batch(&path)? {
                writeln!(stdout, "{}", serde_json::to_string(&entry)?)?;
            }
            Ok(())
        }
        Command::ExportTraining {
            store,
            status,
            document,
            out,
        } => {
            let filter = ExampleFilter {
                status,
                document_id: document.as_deref().map(parse_document).transpose()?,
                include_deleted: false,
            };
            let entries = store.open()?.export_examples(&ExportSelection::Filter(filter))?;
            write_to(out.as_deref(), &render_export(&entries), stdout)
        }
        Command::Score {
            input,
            group,
            format,
            check,
        } => {
            let text = score(&input, &group, format, check)?;
            Ok(stdout.write_all(text.as_bytes())?)
        }
        Command::Dump { store, out } => {
            let dump = store.open()?.dump();
            write_to(out.as_deref(), &dump, stdout)
        }
        Command::Load { store, path } => {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut target = Store::open(&store.store)?;
            let n = target.load(&text)?;
            writeln!(stdout, "loaded {n} entities into {}", store.store.display())?;
            Ok(())
        }
    }
}
