//! Command-line front end. Exit codes: 0 success, 1 validation or command
//! failure, 2 unreadable or corrupt input.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use redline_core::edit::{validate_payload, PayloadError};
use redline_core::prompt::PromptTemplate;
use redline_core::session::DEFAULT_SAMPLE_PERIOD_MS;
use redline_core::{FileStore, Provider, Script, ScriptedProvider, Session, SessionEvent, StoreError, TemplateSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_CORRUPT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "redline", version, about = "Validate edit payloads, run sessions, replay logs and export audits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Scripted,
    Remote,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Check an edit payload file against the edit schema.
    Validate { payload: PathBuf },
    /// Run a command script against a new stored document.
    Apply {
        script: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Defaults to scripted when --fixtures is given, remote otherwise.
        #[arg(long, value_enum)]
        provider: Option<ProviderKind>,
        /// Directory of scripted provider fixtures.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        perturbed_template: Option<PathBuf>,
    },
    /// Fold an event log and print the final document, spans and metrics.
    Replay {
        log: PathBuf,
        /// Document to report when the log is empty.
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Export the audit report of a stored document directory.
    Audit {
        document: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print session metrics and the edit-distance series of a stored document.
    Metrics {
        document: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_PERIOD_MS)]
        period_ms: u64,
    },
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Cmd::Validate { payload } => validate(&payload, out, err),
        Cmd::Apply {
            script,
            store,
            provider: kind,
            fixtures,
            perturbed_template,
        } => provider(kind, fixtures.as_deref())
            .and_then(|p| apply(&script, &store, p.as_ref(), perturbed_template.as_deref(), out, err)),
        Cmd::Replay { log, template, format } => replay(&log, template.as_deref(), format, out),
        Cmd::Audit { document, format, out: file } => audit(&document, format, file.as_deref(), out),
        Cmd::Metrics { document, period_ms } => metrics(&document, period_ms, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

struct Failure(i32, String);

fn corrupt(msg: impl std::fmt::Display) -> Failure {
    Failure(EXIT_CORRUPT, msg.to_string())
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))
}

fn io(e: std::io::Error) -> Failure {
    Failure(EXIT_INVALID, e.to_string())
}

fn validate(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let items = validate_payload(&read(path)?).map_err(corrupt)?;
    let mut bad = 0;
    for (i, item) in items.iter().enumerate() {
        match item {
            Ok(_) => writeln!(out, "edit {i}: OK").map_err(io)?,
            Err(PayloadError::SchemaViolation { reason, .. }) => {
                bad += 1;
                writeln!(out, "edit {i}: SchemaViolation: {reason}").map_err(io)?;
            }
            Err(e) => writeln!(out, "edit {i}: {e}").map_err(io)?,
        }
    }
    writeln!(err, "{} edits, {} invalid", items.len(), bad).map_err(io)?;
    Ok(if bad == 0 { EXIT_OK } else { EXIT_INVALID })
}

fn provider(kind: Option<ProviderKind>, fixtures: Option<&Path>) -> Result<Box<dyn Provider>, Failure> {
    let kind = kind.unwrap_or(if fixtures.is_some() { ProviderKind::Scripted } else { ProviderKind::Remote });
    if kind == ProviderKind::Scripted {
        let dir = fixtures.ok_or_else(|| Failure(EXIT_INVALID, "--provider scripted needs --fixtures".into()))?;
        return Ok(Box::new(ScriptedProvider::from_dir(dir).map_err(corrupt)?));
    }
    let config = redline_core::provider::RemoteConfig::from_env()
        .ok_or_else(|| Failure(EXIT_INVALID, "set REDLINE_PROVIDER_URL for the remote provider".into()))?;
    Ok(Box::new(
        redline_core::provider::RemoteProvider::new(config).map_err(|e| Failure(EXIT_INVALID, e.to_string()))?,
    ))
}

fn store_err(e: StoreError) -> Failure {
    match e {
        StoreError::StoreCorrupt { .. } | StoreError::NotFound(_) | StoreError::InvalidId(_) => corrupt(e),
        other => Failure(EXIT_INVALID, other.to_string()),
    }
}

fn apply(
    script: &Path,
    store: &Path,
    provider: &dyn Provider,
    perturbed: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Failure> {
    let script = Script::load(script).map_err(corrupt)?;
    let mut templates = TemplateSet::default();
    if let Some(p) = perturbed {
        templates = templates.with_perturbed(PromptTemplate::load(p).map_err(corrupt)?);
    }
    let store = FileStore::open(store).map_err(store_err)?;
    let id = store.create_id().map_err(store_err)?;
    let mut session = Session::create(script.template.clone(), script.settings.clone(), script.time_of(0));
    store.save(&id, &mut session).map_err(store_err)?;
    let mut failed = 0;
    for (i, cmd) in script.commands.iter().enumerate() {
        let result = session.execute(cmd.clone(), provider, &templates, script.time_of(i + 1));
        store.save(&id, &mut session).map_err(store_err)?;
        match result {
            Ok(o) => writeln!(out, "{i}: {}", serde_json::to_string(&o).expect("outcome serializes")).map_err(io)?,
            Err(e) => {
                failed += 1;
                writeln!(err, "{i}: {e}").map_err(io)?;
            }
        }
    }
    writeln!(out, "document {id}").map_err(io)?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_INVALID })
}

fn parse_log(raw: &[u8]) -> Result<Vec<SessionEvent>, Failure> {
    let text = std::str::from_utf8(raw).map_err(corrupt)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| corrupt(format!("line {}: {e}", n + 1))))
        .collect()
}

fn replay(log: &Path, template: Option<&Path>, format: Format, out: &mut dyn Write) -> Result<i32, Failure> {
    let events = parse_log(&read(log)?)?;
    let session = if events.is_empty() {
        let template = template.ok_or_else(|| corrupt("empty event log; pass --template"))?;
        let text = String::from_utf8(read(template)?).map_err(corrupt)?;
        Session::create(text, Default::default(), redline_core::Timestamp(0))
    } else {
        Session::replay(events.iter()).map_err(corrupt)?
    };
    let report = session.audit_report();
    match format {
        Format::Json => out.write_all(report.to_json().as_bytes()).map_err(io)?,
        Format::Text => {
            writeln!(out, "{}", session.content()).map_err(io)?;
            writeln!(out, "---").map_err(io)?;
            out.write_all(report.to_text().as_bytes()).map_err(io)?;
        }
    }
    Ok(EXIT_OK)
}

fn load_dir(document: &Path) -> Result<Session, Failure> {
    let name = document
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| corrupt(format!("{} is not a document directory", document.display())))?;
    let parent = document.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    FileStore::open(parent).and_then(|s| s.load(name)).map_err(store_err)
}

fn audit(document: &Path, format: Format, file: Option<&Path>, out: &mut dyn Write) -> Result<i32, Failure> {
    let report = load_dir(document)?.audit_report();
    let text = match format {
        Format::Json => report.to_json(),
        Format::Text => report.to_text(),
    };
    match file {
        Some(path) => std::fs::write(path, text).map_err(io)?,
        None => out.write_all(text.as_bytes()).map_err(io)?,
    }
    Ok(EXIT_OK)
}

fn metrics(document: &Path, period_ms: u64, out: &mut dyn Write) -> Result<i32, Failure> {
    let s = load_dir(document)?;
    let body = serde_json::json!({
        "metrics": s.metrics(),
        "edit_distance": s.edit_distance_series(period_ms),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&body).expect("metrics serialize")).map_err(io)?;
    Ok(EXIT_OK)
}
