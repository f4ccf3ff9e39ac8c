//! The executable edit language: wire format, validation and binding of
//! edits to exact occurrences in a document.
//!
//! A payload is a JSON array of objects carrying `original_text`,
//! `replace_text`, `component`, and the optional `replace_all` / `new_info`
//! flags. Flags are accepted as native booleans or as the quoted `"0"`/`"1"`
//! strings language models tend to emit.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("payload is not a JSON edit list: {0}")]
    PayloadMalformed(String),
    #[error("edit {index}: {reason}")]
    SchemaViolation { index: usize, reason: String },
}

/// The four edit-suggesting components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Marker,
    Chat,
    Comment,
    Brainstorm,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Marker,
        Component::Chat,
        Component::Comment,
        Component::Brainstorm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Marker => "marker",
            Component::Chat => "chat",
            Component::Comment => "comment",
            Component::Brainstorm => "brainstorm",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A base component plus an optional free-form subcomponent, written
/// `marker_TYPO` on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ComponentTag {
    pub base: Component,
    pub sub: Option<String>,
}

impl ComponentTag {
    pub fn new(base: Component) -> Self {
        ComponentTag { base, sub: None }
    }

    pub fn with_sub(base: Component, sub: impl Into<String>) -> Self {
        ComponentTag {
            base,
            sub: Some(sub.into()),
        }
    }
}

impl From<Component> for ComponentTag {
    fn from(base: Component) -> Self {
        ComponentTag::new(base)
    }
}

impl fmt::Display for ComponentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sub {
            Some(sub) => write!(f, "{}_{}", self.base, sub),
            None => write!(f, "{}", self.base),
        }
    }
}

impl FromStr for ComponentTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, sub) = match s.split_once('_') {
            Some((head, sub)) => (head, Some(sub)),
            None => (s, None),
        };
        let base = Component::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(head))
            .ok_or_else(|| format!("unknown component {s:?}"))?;
        match sub {
            Some("") => Err(format!("empty subcomponent in {s:?}")),
            Some(sub) => Ok(ComponentTag::with_sub(base, sub)),
            None => Ok(ComponentTag::new(base)),
        }
    }
}

impl Serialize for ComponentTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComponentTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// One suggested replacement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutableEdit {
    pub original_text: String,
    pub replace_text: String,
    pub component: ComponentTag,
    pub replace_all: bool,
    pub new_info: bool,
}

impl ExecutableEdit {
    pub fn new(
        original_text: impl Into<String>,
        replace_text: impl Into<String>,
        component: impl Into<ComponentTag>,
    ) -> Self {
        ExecutableEdit {
            original_text: original_text.into(),
            replace_text: replace_text.into(),
            component: component.into(),
            replace_all: false,
            new_info: false,
        }
    }

    pub fn replace_all(mut self, on: bool) -> Self {
        self.replace_all = on;
        self
    }

    pub fn new_info(mut self, on: bool) -> Self {
        self.new_info = on;
        self
    }

    /// Validate one JSON object against the edit schema.
    pub fn from_json(value: &Value) -> Result<Self, String> {
        let edit = Self::from_json_lenient(value)?;
        if edit.original_text.is_empty() {
            return Err("original_text is empty".into());
        }
        Ok(edit)
    }

    // Stored records keep whatever the engine accepted, including edits
    // with an empty original that were discarded on submission.
    fn from_json_lenient(value: &Value) -> Result<Self, String> {
        let obj = value.as_object().ok_or("edit is not a JSON object")?;
        let original_text = required_str(obj, "original_text")?;
        let replace_text = required_str(obj, "replace_text")?;
        let component = required_str(obj, "component")?.parse()?;
        Ok(ExecutableEdit {
            original_text,
            replace_text,
            component,
            replace_all: optional_flag(obj, "replace_all")?,
            new_info: optional_flag(obj, "new_info")?,
        })
    }

    pub fn to_json(&self, style: FlagStyle) -> Value {
        let flag = |b: bool| match style {
            FlagStyle::Quoted => Value::from(if b { "1" } else { "0" }),
            FlagStyle::Bool => Value::from(b),
        };
        let mut obj = Map::new();
        obj.insert("original_text".into(), self.original_text.clone().into());
        obj.insert("replace_text".into(), self.replace_text.clone().into());
        obj.insert("component".into(), self.component.to_string().into());
        obj.insert("replace_all".into(), flag(self.replace_all));
        obj.insert("new_info".into(), flag(self.new_info));
        Value::Object(obj)
    }
}

fn required_str(obj: &Map<String, Value>, key: &str) -> Result<String, String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(format!("{key} must be a string, got {other}")),
        None => Err(format!("missing key {key}")),
    }
}

fn optional_flag(obj: &Map<String, Value>, key: &str) -> Result<bool, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(false),
        Some(Value::Bool(b)) => Ok(*b),
        Some(Value::String(s)) => match s.trim() {
            "0" | "false" => Ok(false),
            "1" | "true" => Ok(true),
            _ => Err(format!("{key} must be 0 or 1, got {s:?}")),
        },
        Some(Value::Number(n)) => match n.as_u64() {
            Some(0) => Ok(false),
            Some(1) => Ok(true),
            _ => Err(format!("{key} must be 0 or 1, got {n}")),
        },
        Some(other) => Err(format!("{key} must be a flag, got {other}")),
    }
}

/// How boolean flags are written when serializing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlagStyle {
    /// `"0"` / `"1"`, as in the reference wire examples.
    #[default]
    Quoted,
    Bool,
}

impl Serialize for ExecutableEdit {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json(FlagStyle::Quoted).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ExecutableEdit {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        ExecutableEdit::from_json_lenient(&value).map_err(D::Error::custom)
    }
}

/// Strip a surrounding markdown code fence, if any.
pub(crate) fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

fn payload_items(raw: &[u8]) -> Result<Vec<Value>, PayloadError> {
    let text = std::str::from_utf8(raw)
        .map_err(|e| PayloadError::PayloadMalformed(format!("not UTF-8: {e}")))?;
    let value: Value = serde_json::from_str(strip_fence(text))
        .map_err(|e| PayloadError::PayloadMalformed(e.to_string()))?;
    match value {
        Value::Array(items) => Ok(items),
        obj @ Value::Object(_) if obj.get("original_text").is_some() => Ok(vec![obj]),
        other => Err(PayloadError::PayloadMalformed(format!(
            "expected an array of edits, got {}",
            json_kind(&other)
        ))),
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Parse a full payload. The first schema violation fails the whole
/// payload; use [`validate_payload`] for per-item results.
pub fn parse_edit_payload(raw: &[u8]) -> Result<Vec<ExecutableEdit>, PayloadError> {
    payload_items(raw)?
        .iter()
        .enumerate()
        .map(|(index, item)| {
            ExecutableEdit::from_json(item)
                .map_err(|reason| PayloadError::SchemaViolation { index, reason })
        })
        .collect()
}

/// Per-item validation. Fails only when the payload as a whole is malformed.
pub fn validate_payload(
    raw: &[u8],
) -> Result<Vec<Result<ExecutableEdit, PayloadError>>, PayloadError> {
    Ok(payload_items(raw)?
        .iter()
        .enumerate()
        .map(|(index, item)| {
            ExecutableEdit::from_json(item)
                .map_err(|reason| PayloadError::SchemaViolation { index, reason })
        })
        .collect())
}

pub fn serialize_edits(edits: &[ExecutableEdit], style: FlagStyle) -> String {
    let items: Vec<Value> = edits.iter().map(|e| e.to_json(style)).collect();
    serde_json::to_string(&items).expect("edit JSON is always serializable")
}

/// The current text of a document and its version counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentText {
    pub content: String,
    pub version_id: u64,
}

impl DocumentText {
    pub fn new(content: impl Into<String>) -> Self {
        DocumentText {
            content: content.into(),
            version_id: 0,
        }
    }

    pub fn char_len(&self) -> usize {
        text::char_len(&self.content)
    }

    pub fn slice(&self, span: &OccurrenceSpan) -> Option<&str> {
        text::char_slice(&self.content, span.start, span.end)
    }
}

/// A half-open range of scalar offsets in one document version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OccurrenceSpan {
    pub start: usize,
    pub end: usize,
    pub version_id: u64,
}

impl OccurrenceSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &OccurrenceSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Every exact occurrence of `edit.original_text`, left to right,
/// non-overlapping and leftmost-greedy.
pub fn locate_occurrences(doc: &DocumentText, edit: &ExecutableEdit) -> Vec<OccurrenceSpan> {
    find_all(&doc.content, &edit.original_text)
        .into_iter()
        .map(|(start, end)| OccurrenceSpan {
            start,
            end,
            version_id: doc.version_id,
        })
        .collect()
}

/// Scalar-offset ranges of the non-overlapping occurrences of `needle`.
pub(crate) fn find_all(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    if needle.is_empty() {
        return Vec::new();
    }
    let needle_chars = text::char_len(needle);
    let mut out = Vec::new();
    // match_indices yields byte offsets in increasing order; convert them
    // while walking the haystack once.
    let mut chars_before = 0;
    let mut last_byte = 0;
    for (byte, _) in haystack.match_indices(needle) {
        chars_before += text::char_len(&haystack[last_byte..byte]);
        last_byte = byte;
        out.push((chars_before, chars_before + needle_chars));
    }
    out
}

/// Bind an edit to the document: nothing when the original text is absent,
/// every occurrence when `replace_all` is set, otherwise the first one.
pub fn expand_edit(
    doc: &DocumentText,
    edit: &ExecutableEdit,
) -> Vec<(ExecutableEdit, OccurrenceSpan)> {
    let mut spans = locate_occurrences(doc, edit);
    if !edit.replace_all {
        spans.truncate(1);
    }
    spans.into_iter().map(|span| (edit.clone(), span)).collect()
}
