//! Server settings read from `REDLINE_*` environment variables.

use std::path::PathBuf;
use std::time::Duration;

use redline_core::session::DEFAULT_SNAPSHOT_DEBOUNCE_MS;
use redline_core::verify::DEFAULT_SEARCH_URL;
use redline_core::PerturbMode;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub addr: String,
    pub store: PathBuf,
    /// Bearer token required on every route but `/health`.
    pub token: Option<String>,
    /// Serve scripted answers from this directory instead of a remote model.
    pub fixtures: Option<PathBuf>,
    pub perturbed_template: Option<PathBuf>,
    pub search_url: String,
    /// Zero disables the background marker pass.
    pub marker_period: Duration,
    pub snapshot_debounce_ms: u64,
    pub perturb: PerturbMode,
    pub study: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            addr: "127.0.0.1:8080".into(),
            store: PathBuf::from("redline-data"),
            token: None,
            fixtures: None,
            perturbed_template: None,
            search_url: DEFAULT_SEARCH_URL.into(),
            marker_period: Duration::from_secs(30),
            snapshot_debounce_ms: DEFAULT_SNAPSHOT_DEBOUNCE_MS,
            perturb: PerturbMode::Disabled,
            study: false,
        }
    }
}

pub fn parse_perturb(s: &str) -> Result<PerturbMode, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "off" | "disabled" | "false" => Ok(PerturbMode::Disabled),
        "1" | "on" | "alternate" | "true" => Ok(PerturbMode::Alternate),
        other => other
            .strip_prefix("random:")
            .and_then(|seed| seed.parse().ok())
            .map(|seed| PerturbMode::Random { seed })
            .ok_or_else(|| format!("REDLINE_PERTURB: expected disabled, alternate or random:<seed>, got {s:?}")),
    }
}

fn parse_bool(key: &str, s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" | "" => Ok(false),
        _ => Err(format!("{key}: expected a boolean, got {s:?}")),
    }
}

fn parse_num(key: &str, s: &str) -> Result<u64, String> {
    s.trim().parse().map_err(|_| format!("{key}: expected a number, got {s:?}"))
}

impl Config {
    pub fn from_env() -> Result<Self, String> {
        Self::from_vars(|k| std::env::var(k).ok())
    }

    pub fn from_vars(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut c = Config::default();
        if let Some(v) = get("REDLINE_ADDR") {
            c.addr = v;
        }
        if let Some(v) = get("REDLINE_STORE") {
            c.store = v.into();
        }
        c.token = get("REDLINE_TOKEN").filter(|t| !t.is_empty());
        c.fixtures = get("REDLINE_FIXTURES").map(PathBuf::from);
        c.perturbed_template = get("REDLINE_PERTURBED_TEMPLATE").map(PathBuf::from);
        if let Some(v) = get("REDLINE_SEARCH_URL") {
            if !v.contains("{query}") {
                return Err("REDLINE_SEARCH_URL must contain {query}".into());
            }
            c.search_url = v;
        }
        if let Some(v) = get("REDLINE_MARKER_PERIOD_SECS") {
            c.marker_period = Duration::from_secs(parse_num("REDLINE_MARKER_PERIOD_SECS", &v)?);
        }
        if let Some(v) = get("REDLINE_SNAPSHOT_DEBOUNCE_MS") {
            c.snapshot_debounce_ms = parse_num("REDLINE_SNAPSHOT_DEBOUNCE_MS", &v)?;
        }
        if let Some(v) = get("REDLINE_PERTURB") {
            c.perturb = parse_perturb(&v)?;
        }
        if let Some(v) = get("REDLINE_STUDY") {
            c.study = parse_bool("REDLINE_STUDY", &v)?;
        }
        Ok(c)
    }
}
