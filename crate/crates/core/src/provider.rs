//! Suggestion providers and parsing of their output.
//!
//! A provider turns a filled prompt into raw bytes. Nothing a provider
//! returns reaches the suggestion manager without going through one of the
//! parsers here.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Deserialize;
use serde_json::Value;

use crate::edit::{parse_edit_payload, strip_fence, ExecutableEdit};
use crate::prompt::{Prompt, PromptKind, Variant};

/// Text shown to the author whenever a provider call fails.
pub const RETRY_MESSAGE: &str =
    "The assistant could not produce a usable answer this time. Please try again.";

pub const MAX_OPTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider returned unusable output: {0}")]
    InvalidProviderOutput(String),
    #[error("provider unreachable: {0}")]
    TransportFailure(String),
    #[error("no scripted response for {kind} prompt {digest}")]
    Unscripted { kind: PromptKind, digest: String },
}

impl ProviderError {
    pub fn user_message(&self) -> &'static str {
        RETRY_MESSAGE
    }
}

pub trait Provider: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<Vec<u8>, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn complete(&self, prompt: &Prompt) -> Result<Vec<u8>, ProviderError> {
        (**self).complete(prompt)
    }
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, prompt: &Prompt) -> Result<Vec<u8>, ProviderError> {
        (**self).complete(prompt)
    }
}

/// Parsed chat or comment answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderReply {
    pub reply_text: String,
    pub edits: Vec<ExecutableEdit>,
    /// Indices into `edits` the fixture marks as factually wrong.
    pub inaccurate: Vec<usize>,
    pub raw: Vec<u8>,
}

fn utf8(raw: &[u8]) -> Result<&str, ProviderError> {
    std::str::from_utf8(raw).map_err(|e| ProviderError::InvalidProviderOutput(format!("not UTF-8: {e}")))
}

fn invalid(msg: impl Into<String>) -> ProviderError {
    ProviderError::InvalidProviderOutput(msg.into())
}

/// Split free text followed by a fenced JSON block.
fn split_trailing_fence(text: &str) -> Option<(&str, &str)> {
    let open = text.find("```")?;
    Some((text[..open].trim(), &text[open..]))
}

type ReplyParts = (String, Vec<ExecutableEdit>, Vec<usize>);

fn reply_parts(raw: &[u8]) -> Result<ReplyParts, ProviderError> {
    let text = utf8(raw)?;
    let (reply_text, edits_raw, inaccurate) = match serde_json::from_str::<Value>(strip_fence(text)) {
        Ok(Value::Object(mut obj)) => {
            let reply = match obj.remove("reply") {
                None | Some(Value::Null) => String::new(),
                Some(Value::String(s)) => s,
                Some(other) => return Err(invalid(format!("reply must be a string, got {other}"))),
            };
            let edits = obj.remove("edits").unwrap_or(Value::Array(Vec::new()));
            let inaccurate = match obj.remove("ground_truth_inaccurate") {
                None | Some(Value::Null) => Vec::new(),
                Some(v) => serde_json::from_value::<Vec<usize>>(v)
                    .map_err(|e| invalid(format!("ground_truth_inaccurate: {e}")))?,
            };
            (reply, edits.to_string(), inaccurate)
        }
        Ok(arr @ Value::Array(_)) => (String::new(), arr.to_string(), Vec::new()),
        Ok(other) => return Err(invalid(format!("unexpected JSON value {other}"))),
        Err(e) => match split_trailing_fence(text) {
            Some((prose, fenced)) => (prose.to_owned(), fenced.to_owned(), Vec::new()),
            None => return Err(invalid(e.to_string())),
        },
    };
    let edits = parse_edit_payload(edits_raw.as_bytes()).map_err(|e| invalid(e.to_string()))?;
    if let Some(&bad) = inaccurate.iter().find(|&&i| i >= edits.len()) {
        return Err(invalid(format!("ground_truth_inaccurate index {bad} out of range")));
    }
    Ok((reply_text, edits, inaccurate))
}

/// Accepts `{"reply", "edits", "ground_truth_inaccurate"}`, a bare edit
/// array, or prose followed by a fenced edit array.
pub fn parse_reply(raw: &[u8]) -> Result<ProviderReply, ProviderError> {
    let (reply_text, edits, inaccurate) = reply_parts(raw)?;
    if reply_text.trim().is_empty() && edits.is_empty() {
        return Err(invalid("neither a reply nor any edits"));
    }
    Ok(ProviderReply {
        reply_text,
        edits,
        inaccurate,
        raw: raw.to_vec(),
    })
}

/// Edits only, as background markers return them. An empty list is a
/// valid answer.
pub fn parse_edit_list(raw: &[u8]) -> Result<(Vec<ExecutableEdit>, Vec<usize>), ProviderError> {
    let (_, edits, inaccurate) = reply_parts(raw)?;
    Ok((edits, inaccurate))
}

/// A list of strings, either bare or under `key`.
fn string_list(raw: &[u8], key: &str) -> Result<Vec<String>, ProviderError> {
    let text = utf8(raw)?;
    let value: Value = serde_json::from_str(strip_fence(text)).map_err(|e| invalid(e.to_string()))?;
    let list = match value {
        Value::Array(items) => items,
        Value::Object(mut obj) => match obj.remove(key) {
            Some(Value::Array(items)) => items,
            _ => return Err(invalid(format!("expected an array under {key:?}"))),
        },
        other => return Err(invalid(format!("expected a list, got {other}"))),
    };
    let mut out = Vec::new();
    for item in list {
        match item {
            Value::String(s) if !s.trim().is_empty() => out.push(s.trim().to_owned()),
            Value::String(_) => {}
            other => return Err(invalid(format!("expected strings, got {other}"))),
        }
    }
    Ok(out)
}

/// Search queries for a verification: at least one, at most six.
pub fn parse_queries(raw: &[u8]) -> Result<Vec<String>, ProviderError> {
    let mut queries = string_list(raw, "queries")?;
    if queries.is_empty() {
        return Err(invalid("no search queries"));
    }
    queries.truncate(crate::verify::MAX_QUERIES);
    Ok(queries)
}

/// Brainstorm paraphrases, capped at five.
pub fn parse_options(raw: &[u8]) -> Result<Vec<String>, ProviderError> {
    let mut options = string_list(raw, "options")?;
    options.dedup();
    if options.is_empty() {
        return Err(invalid("no options"));
    }
    options.truncate(MAX_OPTIONS);
    Ok(options)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BracketClass {
    Command,
    Content,
}

pub fn parse_bracket_class(raw: &[u8]) -> Result<BracketClass, ProviderError> {
    let text = strip_fence(utf8(raw)?);
    let word = match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(obj)) => obj
            .get("class")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| invalid("missing class"))?,
        Ok(Value::String(s)) => s,
        _ => text.to_owned(),
    };
    match word.trim().to_ascii_lowercase().as_str() {
        "command" => Ok(BracketClass::Command),
        "content" => Ok(BracketClass::Content),
        other => Err(invalid(format!("unknown bracket class {other:?}"))),
    }
}

/// A bracketed passage found in the text, in character offsets. `start` is
/// the opening bracket and `end` is one past the closing one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bracketed {
    pub start: usize,
    pub end: usize,
    pub inner: String,
}

/// Non-nested `[...]` spans with non-blank content.
pub fn find_brackets(text: &str) -> Vec<Bracketed> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    let mut inner = String::new();
    for (i, c) in text.chars().enumerate() {
        match (c, open) {
            ('[', _) => {
                open = Some(i);
                inner.clear();
            }
            (']', Some(start)) => {
                if !inner.trim().is_empty() {
                    out.push(Bracketed {
                        start,
                        end: i + 1,
                        inner: std::mem::take(&mut inner),
                    });
                }
                open = None;
            }
            ('\n', Some(_)) => open = None,
            (c, Some(_)) => inner.push(c),
            _ => {}
        }
    }
    out
}

// ---- scripted ----------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
struct RuleMatch {
    kind: Option<PromptKind>,
    variant: Option<Variant>,
    #[serde(default)]
    contains: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum FixtureFile {
    Digest { digest: String, response: Value },
    Rule { r#match: RuleMatch, response: Value },
}

#[derive(Debug, Clone)]
struct Rule {
    kind: Option<PromptKind>,
    variant: Option<Variant>,
    contains: Vec<String>,
    response: Vec<u8>,
}

impl Rule {
    fn matches(&self, prompt: &Prompt) -> bool {
        self.kind.is_none_or(|k| k == prompt.kind)
            && self.variant.is_none_or(|v| v == prompt.variant)
            && self.contains.iter().all(|s| prompt.text.contains(s.as_str()))
    }
}

/// A JSON string response is returned verbatim; anything else is
/// serialized, so fixtures can script malformed output too.
fn response_bytes(v: Value) -> Vec<u8> {
    match v {
        Value::String(s) => s.into_bytes(),
        other => other.to_string().into_bytes(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("cannot read fixture {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad fixture {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

/// Deterministic provider keyed on prompt digests, with ordered fallback
/// rules matched on prompt kind, variant and contained text.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    by_digest: HashMap<String, Vec<u8>>,
    rules: Vec<Rule>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_digest(mut self, digest: impl Into<String>, response: impl Into<Vec<u8>>) -> Self {
        self.by_digest.insert(digest.into(), response.into());
        self
    }

    pub fn with_rule(
        mut self,
        kind: Option<PromptKind>,
        variant: Option<Variant>,
        contains: &[&str],
        response: impl Into<Vec<u8>>,
    ) -> Self {
        self.rules.push(Rule {
            kind,
            variant,
            contains: contains.iter().map(|s| s.to_string()).collect(),
            response: response.into(),
        });
        self
    }

    /// Load every `*.json` file in `dir`, in file-name order. A file holds
    /// one fixture object or an array of them.
    pub fn from_dir(dir: &Path) -> Result<Self, FixtureError> {
        let io = |path: &Path, source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut provider = ScriptedProvider::new();
        for path in paths {
            let bytes = std::fs::read(&path).map_err(|e| io(&path, e))?;
            let parse = |source| FixtureError::Parse {
                path: path.display().to_string(),
                source,
            };
            let value: Value = serde_json::from_slice(&bytes).map_err(parse)?;
            let items = match value {
                Value::Array(items) => items,
                one => vec![one],
            };
            for item in items {
                match serde_json::from_value(item).map_err(parse)? {
                    FixtureFile::Digest { digest, response } => {
                        provider.by_digest.insert(digest, response_bytes(response));
                    }
                    FixtureFile::Rule { r#match, response } => provider.rules.push(Rule {
                        kind: r#match.kind,
                        variant: r#match.variant,
                        contains: r#match.contains,
                        response: response_bytes(response),
                    }),
                }
            }
        }
        Ok(provider)
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, prompt: &Prompt) -> Result<Vec<u8>, ProviderError> {
        let digest = prompt.digest();
        if let Some(r) = self.by_digest.get(&digest) {
            return Ok(r.clone());
        }
        self.rules
            .iter()
            .find(|r| r.matches(prompt))
            .map(|r| r.response.clone())
            .ok_or(ProviderError::Unscripted {
                kind: prompt.kind,
                digest,
            })
    }
}

/// Running tally of provider answers that failed to parse.
#[derive(Debug, Default)]
pub struct OutputStats {
    calls: AtomicU64,
    invalid: AtomicU64,
}

impl OutputStats {
    pub fn record<T>(&self, result: &Result<T, ProviderError>) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if let Err(ProviderError::InvalidProviderOutput(why)) = result {
            let n = self.invalid.fetch_add(1, Ordering::Relaxed) + 1;
            log::warn!(
                "invalid provider output ({why}); {n} of {} calls so far",
                self.calls.load(Ordering::Relaxed)
            );
        }
    }

    pub fn invalid_rate(&self) -> Option<f64> {
        let calls = self.calls.load(Ordering::Relaxed);
        (calls > 0).then(|| self.invalid.load(Ordering::Relaxed) as f64 / calls as f64)
    }
}

// ---- remote ------------------------------------------------------------

#[cfg(feature = "remote")]
pub use remote::{RemoteConfig, RemoteProvider};

#[cfg(feature = "remote")]
mod remote {
    use std::time::Duration;

    use serde_json::{json, Value};

    use super::{Provider, ProviderError};
    use crate::prompt::Prompt;

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct RemoteConfig {
        /// Full chat-completions URL.
        pub endpoint: String,
        pub api_key: Option<String>,
        pub model: String,
        pub timeout: Duration,
    }

    impl RemoteConfig {
        /// Reads `REDLINE_PROVIDER_URL`, `REDLINE_PROVIDER_KEY`,
        /// `REDLINE_PROVIDER_MODEL` and `REDLINE_PROVIDER_TIMEOUT_SECS`.
        pub fn from_env() -> Option<Self> {
            let endpoint = std::env::var("REDLINE_PROVIDER_URL").ok()?;
            let timeout = std::env::var("REDLINE_PROVIDER_TIMEOUT_SECS")
                .ok()
                .and_then(|s| s.parse().ok())
                .unwrap_or(60);
            Some(RemoteConfig {
                endpoint,
                api_key: std::env::var("REDLINE_PROVIDER_KEY").ok(),
                model: std::env::var("REDLINE_PROVIDER_MODEL").unwrap_or_else(|_| "gpt-4".into()),
                timeout: Duration::from_secs(timeout),
            })
        }
    }

    pub struct RemoteProvider {
        config: RemoteConfig,
        client: reqwest::blocking::Client,
    }

    impl RemoteProvider {
        pub fn new(config: RemoteConfig) -> Result<Self, ProviderError> {
            let client = reqwest::blocking::Client::builder()
                .timeout(config.timeout)
                .build()
                .map_err(|e| ProviderError::TransportFailure(e.to_string()))?;
            Ok(RemoteProvider { config, client })
        }
    }

    impl Provider for RemoteProvider {
        fn complete(&self, prompt: &Prompt) -> Result<Vec<u8>, ProviderError> {
            let body = json!({
                "model": self.config.model,
                "messages": [{"role": "user", "content": prompt.text}],
            });
            let mut req = self.client.post(&self.config.endpoint).json(&body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            let started = std::time::Instant::now();
            let resp = req
                .send()
                .map_err(|e| ProviderError::TransportFailure(e.to_string()))?;
            let status = resp.status();
            if !status.is_success() {
                return Err(ProviderError::TransportFailure(format!("HTTP {status}")));
            }
            let v: Value = resp
                .json()
                .map_err(|e| ProviderError::InvalidProviderOutput(e.to_string()))?;
            log::info!("{} prompt answered in {:?}", prompt.kind, started.elapsed());
            v.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(|s| s.as_bytes().to_vec())
                .ok_or_else(|| {
                    ProviderError::InvalidProviderOutput("no choices[0].message.content".into())
                })
        }
    }
}
