//! One document's session: suggestions, conversations, markers,
//! verifications, and the event log that rebuilds all of it.
//!
//! Commands never mutate state directly. They emit [`SessionEvent`]s, and
//! every event goes through [`Session::apply_event`], the same fold replay
//! uses. Emitted events collect in an outbox the caller drains and persists,
//! including events emitted by a command that then fails (an accept that
//! turns out to be stale still records the implicit dismissal).
//!
//! Commands that need a provider run in two phases: [`Session::begin`]
//! returns the prompt to send, and [`Session::finish`] folds the raw answer
//! in against whatever the document looks like by then.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::align::levenshtein;
use crate::edit::{Component, ComponentTag, ExecutableEdit, OccurrenceSpan};
use crate::ids::{BrainstormId, CommentId, MarkerId, SuggestionId, Timestamp, VerificationId};
use crate::prompt::{choose_prompt_variant, Author, Message, PerturbMode, Prompt, PromptError, PromptInput, PromptKind, TemplateSet, Variant};
use crate::provenance::ProvenanceSnapshot;
use crate::provider::{self, BracketClass, Provider, ProviderError};
use crate::suggestion::{
    default_markers, Change, DismissReason, MarkerDef, Status, SubmitOptions, SuggestionError, SuggestionManager,
    SuggestionRecord, SuggestionSource, UnderlineStyle, STUDY_PASTE_CAP,
};
use crate::text::{self, Splice};
use crate::verify::{self, AuditSpan, DetectionCounts, Label, VerificationRecord, VerificationStats, VerifyError};

pub const DEFAULT_SAMPLE_PERIOD_MS: u64 = 5_000;
pub const DEFAULT_SNAPSHOT_DEBOUNCE_MS: u64 = 5_000;
pub const STUDY_TIME_LIMIT_MS: u64 = 5 * 60 * 1_000;
pub const STUDY_TIME_WARNING: &str = "Your time for this task is up. Please finish your last edit.";

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Suggestion(#[from] SuggestionError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("the document is in audit mode and cannot be edited")]
    ReadOnly,
    #[error("unknown {0}")]
    NotFound(String),
    #[error("comment {0} is resolved")]
    ThreadResolved(CommentId),
    #[error("brainstorm {0} is closed")]
    BrainstormClosed(BrainstormId),
    #[error("option {index} out of range for {len} options")]
    OptionOutOfRange { index: usize, len: usize },
    #[error("a marker named {0:?} already exists")]
    DuplicateMarker(String),
    #[error("range {start}..{end} is not a non-empty bracketed passage")]
    NotBracketed { start: usize, end: usize },
    #[error("range {start}..{end} is empty or outside a document of {len} characters")]
    BadSelection { start: usize, end: usize, len: usize },
    #[error("event log does not reproduce the session: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Edit,
    Audit,
}

fn default_debounce() -> u64 {
    DEFAULT_SNAPSHOT_DEBOUNCE_MS
}

/// Per-document behavior fixed at creation and recorded in the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settings {
    #[serde(default)]
    pub study: bool,
    #[serde(default)]
    pub perturb: PerturbMode,
    #[serde(default = "default_debounce")]
    pub snapshot_debounce_ms: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            study: false,
            perturb: PerturbMode::Disabled,
            snapshot_debounce_ms: DEFAULT_SNAPSHOT_DEBOUNCE_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentThread {
    pub id: CommentId,
    /// Anchor; follows the text as the document changes.
    pub span: OccurrenceSpan,
    pub selection: String,
    pub messages: Vec<Message>,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Brainstorm {
    pub id: BrainstormId,
    pub span: OccurrenceSpan,
    pub selection: String,
    pub options: Vec<String>,
    pub chosen: Option<usize>,
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum ThreadRef {
    Chat,
    Comment(CommentId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MarkerOp {
    Created(MarkerDef),
    Updated(MarkerDef),
    Deleted { id: MarkerId },
}

/// Content at one snapshot, for the edit-distance series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub at: Timestamp,
    pub version_id: u64,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    DocumentCreated { template: String, settings: Settings },
    ManualEdit(Change),
    SuggestionsSubmitted(Change),
    Accepted(Change),
    Dismissed(Change),
    ImplicitlyDismissed(Change),
    Discarded(Change),
    VerificationStarted(VerificationRecord),
    QueryVisited { verification: VerificationId, index: usize },
    LabelAssigned { verification: VerificationId, label: Label },
    /// Remaining unlabeled verifications become NotEnoughTime.
    AuditClosed { verifications: Vec<VerificationId> },
    Snapshot(ProvenanceSnapshot),
    ModeSwitched { mode: Mode },
    MarkerCrud(MarkerOp),
    ConversationMessage {
        thread: ThreadRef,
        message: Message,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variant: Option<Variant>,
    },
    CommentOpened { id: CommentId, span: OccurrenceSpan, selection: String },
    CommentResolved { id: CommentId },
    BrainstormOpened { id: BrainstormId, span: OccurrenceSpan, selection: String, options: Vec<String> },
    BrainstormClosed { id: BrainstormId, chosen: Option<usize> },
}

impl EventKind {
    fn from_change(change: Change) -> Self {
        match change {
            Change::Submitted { .. } => EventKind::SuggestionsSubmitted(change),
            Change::Discarded { .. } => EventKind::Discarded(change),
            Change::Dismissed { .. } => EventKind::Dismissed(change),
            Change::ContentEdited { .. } => EventKind::ManualEdit(change),
            Change::Accepted { .. } => EventKind::Accepted(change),
            Change::ImplicitlyDismissed { .. } => EventKind::ImplicitlyDismissed(change),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::DocumentCreated { .. } => "document_created",
            EventKind::ManualEdit(_) => "manual_edit",
            EventKind::SuggestionsSubmitted(_) => "suggestions_submitted",
            EventKind::Accepted(_) => "accepted",
            EventKind::Dismissed(_) => "dismissed",
            EventKind::ImplicitlyDismissed(_) => "implicitly_dismissed",
            EventKind::Discarded(_) => "discarded",
            EventKind::VerificationStarted(_) => "verification_started",
            EventKind::QueryVisited { .. } => "query_visited",
            EventKind::LabelAssigned { .. } => "label_assigned",
            EventKind::AuditClosed { .. } => "audit_closed",
            EventKind::Snapshot(_) => "snapshot",
            EventKind::ModeSwitched { .. } => "mode_switched",
            EventKind::MarkerCrud(_) => "marker_crud",
            EventKind::ConversationMessage { .. } => "conversation_message",
            EventKind::CommentOpened { .. } => "comment_opened",
            EventKind::CommentResolved { .. } => "comment_resolved",
            EventKind::BrainstormOpened { .. } => "brainstorm_opened",
            EventKind::BrainstormClosed { .. } => "brainstorm_closed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerPatch {
    pub name: Option<String>,
    pub underline_style: Option<UnderlineStyle>,
    pub color: Option<String>,
    pub description: Option<String>,
    pub visible: Option<bool>,
}

fn default_visible() -> bool {
    true
}

/// Everything an author or auditor can ask of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    ManualEdit { start: usize, end: usize, replacement: String },
    /// Replace the whole content; changes are recovered by alignment.
    SetContent { content: String },
    /// Submit edits directly, bypassing any provider.
    Submit {
        edits: Vec<ExecutableEdit>,
        #[serde(default)]
        inaccurate: Vec<usize>,
    },
    Accept { suggestion: SuggestionId },
    Dismiss { suggestion: SuggestionId },
    AcceptAll {
        #[serde(default)]
        component: Option<Component>,
    },
    DismissAll {
        #[serde(default)]
        component: Option<Component>,
    },
    Chat { message: String },
    OpenComment {
        start: usize,
        end: usize,
        #[serde(default)]
        message: Option<String>,
    },
    CommentMessage { comment: CommentId, message: String },
    ResolveComment { comment: CommentId },
    Brainstorm { start: usize, end: usize },
    ChooseOption { brainstorm: BrainstormId, index: usize },
    CloseBrainstorm { brainstorm: BrainstormId },
    CreateMarker {
        name: String,
        underline_style: UnderlineStyle,
        color: String,
        #[serde(default)]
        description: Option<String>,
        #[serde(default = "default_visible")]
        visible: bool,
    },
    UpdateMarker {
        marker: MarkerId,
        #[serde(flatten)]
        patch: MarkerPatch,
    },
    DeleteMarker { marker: MarkerId },
    RefreshMarkers {
        #[serde(default)]
        marker: Option<MarkerId>,
    },
    Verify { suggestion: SuggestionId },
    Visit { verification: VerificationId, index: usize },
    Label { verification: VerificationId, label: Label },
    /// Label straight from the audit view, without generating queries.
    LabelSuggestion { suggestion: SuggestionId, label: Label },
    SwitchMode { mode: Mode },
    CloseAudit,
    Bracket { start: usize, end: usize },
    /// Let time pass; flushes a due snapshot.
    Tick,
}

impl Command {
    fn edits_document(&self) -> bool {
        !matches!(
            self,
            Command::Verify { .. }
                | Command::Visit { .. }
                | Command::Label { .. }
                | Command::LabelSuggestion { .. }
                | Command::SwitchMode { .. }
                | Command::CloseAudit
                | Command::Tick
        )
    }

    /// The component whose provider a command talks to, if any.
    pub fn provider_lane(&self) -> Option<PromptKind> {
        match self {
            Command::Chat { .. } => Some(PromptKind::Chat),
            Command::OpenComment { message: Some(_), .. } | Command::CommentMessage { .. } => {
                Some(PromptKind::Comment)
            }
            Command::Brainstorm { .. } => Some(PromptKind::Brainstorm),
            Command::RefreshMarkers { .. } => Some(PromptKind::Marker),
            Command::Verify { .. } => Some(PromptKind::Verify),
            Command::Bracket { .. } => Some(PromptKind::Bracket),
            _ => None,
        }
    }
}

/// What a finished command reports back.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Outcome {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub suggestions: Vec<SuggestionId>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub discarded: Vec<SuggestionId>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub accepted: Vec<SuggestionId>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dismissed: Vec<SuggestionId>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comment: Option<CommentId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub brainstorm: Option<BrainstormId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marker: Option<MarkerId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bracket: Option<BracketClass>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Work waiting on a provider answer.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingCall {
    pub prompt: Prompt,
    then: Continuation,
    outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
enum Continuation {
    ChatReply { message: String, variant: Variant },
    CommentReply { comment: CommentId, message: String },
    Brainstorm { span: OccurrenceSpan, selection: String },
    Markers { markers: Vec<MarkerId> },
    Verify { suggestion: SuggestionId },
    Bracket { start: usize, end: usize, inner: String },
}

#[derive(Debug)]
pub enum Step {
    Done(Outcome),
    Call(PendingCall),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub template: String,
    pub settings: Settings,
    pub created_at: Timestamp,
    pub manager: SuggestionManager,
    pub markers: BTreeMap<MarkerId, MarkerDef>,
    pub chat: Vec<Message>,
    /// Prompt variant used for each answered chat turn.
    pub chat_variants: Vec<Variant>,
    pub comments: BTreeMap<CommentId, CommentThread>,
    pub brainstorms: BTreeMap<BrainstormId, Brainstorm>,
    pub verifications: BTreeMap<VerificationId, VerificationRecord>,
    pub mode: Mode,
    pub history: Vec<HistoryPoint>,
    pub last_seq: u64,
    pub last_at: Timestamp,
    next_marker: u64,
    next_comment: u64,
    next_brainstorm: u64,
    next_verification: u64,
    /// Time of the last manual edit not yet covered by a snapshot.
    unsnapshotted_edit: Option<Timestamp>,
    #[serde(skip)]
    outbox: Vec<SessionEvent>,
}

fn in_range(len: usize, start: usize, end: usize) -> Result<(), SessionError> {
    if start < end && end <= len {
        Ok(())
    } else {
        Err(SessionError::BadSelection { start, end, len })
    }
}

fn shift(span: &mut OccurrenceSpan, splice: &Splice) {
    span.start = splice.map_start(span.start);
    span.end = splice.map_end(span.end).max(span.start);
}

impl Session {
    fn empty() -> Self {
        Session {
            template: String::new(),
            settings: Settings::default(),
            created_at: Timestamp(0),
            manager: SuggestionManager::new(""),
            markers: BTreeMap::new(),
            chat: Vec::new(),
            chat_variants: Vec::new(),
            comments: BTreeMap::new(),
            brainstorms: BTreeMap::new(),
            verifications: BTreeMap::new(),
            mode: Mode::Edit,
            history: Vec::new(),
            last_seq: 0,
            last_at: Timestamp(0),
            next_marker: 1,
            next_comment: 1,
            next_brainstorm: 1,
            next_verification: 1,
            unsnapshotted_edit: None,
            outbox: Vec::new(),
        }
    }

    /// A new session over `template`; its creation event waits in the outbox.
    pub fn create(template: impl Into<String>, settings: Settings, now: Timestamp) -> Self {
        let mut s = Session::empty();
        s.emit(
            EventKind::DocumentCreated {
                template: template.into(),
                settings,
            },
            now,
        )
        .expect("creation applies to an empty session");
        s
    }

    /// Rebuild a session by folding its event log.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a SessionEvent>) -> Result<Self, SessionError> {
        let mut s = Session::empty();
        for ev in events {
            s.apply_event(ev)?;
        }
        if s.last_seq == 0 {
            return Err(SessionError::Replay("empty event log".into()));
        }
        Ok(s)
    }

    pub fn content(&self) -> &str {
        &self.manager.doc.content
    }

    pub fn take_events(&mut self) -> Vec<SessionEvent> {
        std::mem::take(&mut self.outbox)
    }

    pub fn pending_events(&self) -> &[SessionEvent] {
        &self.outbox
    }

    pub fn suggestion(&self, id: SuggestionId) -> Option<&SuggestionRecord> {
        self.manager.get(id)
    }

    pub fn label_of(&self, id: SuggestionId) -> Label {
        self.verification_for(id).map(|v| v.label).unwrap_or_default()
    }

    pub fn verification_for(&self, id: SuggestionId) -> Option<&VerificationRecord> {
        self.verifications.values().find(|v| v.suggestion_id == id)
    }

    fn stamp(&self, now: Timestamp) -> Timestamp {
        now.max(self.last_at)
    }

    // ---- the fold -------------------------------------------------------

    pub fn apply_event(&mut self, ev: &SessionEvent) -> Result<(), SessionError> {
        if ev.seq != self.last_seq + 1 {
            return Err(SessionError::Replay(format!("expected seq {}, found {}", self.last_seq + 1, ev.seq)));
        }
        if ev.at < self.last_at {
            return Err(SessionError::Replay(format!("event {} goes back in time", ev.seq)));
        }
        if self.last_seq == 0 && !matches!(ev.kind, EventKind::DocumentCreated { .. }) {
            return Err(SessionError::Replay("log does not start with document creation".into()));
        }
        let at = ev.at;
        match &ev.kind {
            EventKind::DocumentCreated { template, settings } => {
                if self.last_seq != 0 {
                    return Err(SessionError::Replay("document created twice".into()));
                }
                self.template.clone_from(template);
                self.settings = settings.clone();
                self.created_at = at;
                self.manager = SuggestionManager::new(template.clone());
                if settings.study {
                    self.manager.paste_cap = Some(STUDY_PASTE_CAP);
                }
                for m in default_markers() {
                    self.next_marker = self.next_marker.max(m.id.0 + 1);
                    self.markers.insert(m.id, m);
                }
                self.history.push(HistoryPoint {
                    at,
                    version_id: 0,
                    content: template.clone(),
                });
            }
            EventKind::ManualEdit(change)
            | EventKind::SuggestionsSubmitted(change)
            | EventKind::Accepted(change)
            | EventKind::Dismissed(change)
            | EventKind::ImplicitlyDismissed(change)
            | EventKind::Discarded(change) => self.apply_change(change, at)?,
            EventKind::VerificationStarted(record) => {
                if self.manager.get(record.suggestion_id).is_none() {
                    return Err(SessionError::Replay(format!("verification of unknown {}", record.suggestion_id)));
                }
                self.next_verification = self.next_verification.max(record.id.0 + 1);
                self.verifications.insert(record.id, record.clone());
            }
            EventKind::QueryVisited { verification, index } => {
                self.verification_mut(*verification)?.record_visit(*index)?;
            }
            EventKind::LabelAssigned { verification, label } => {
                let v = self.verification_mut(*verification)?;
                v.assign_label(*label, at)?;
                let sid = v.suggestion_id;
                self.manager.set_verification(sid, *label);
            }
            EventKind::AuditClosed { verifications } => {
                for id in verifications {
                    let v = self.verification_mut(*id)?;
                    v.assign_label(Label::NotEnoughTime, at)?;
                    let sid = v.suggestion_id;
                    self.manager.set_verification(sid, Label::NotEnoughTime);
                }
            }
            EventKind::Snapshot(snap) => {
                if *snap != self.manager.provenance {
                    return Err(SessionError::Replay(format!("snapshot at seq {} disagrees with the fold", ev.seq)));
                }
                self.history.push(HistoryPoint {
                    at,
                    version_id: snap.version_id,
                    content: snap.content.clone(),
                });
                self.unsnapshotted_edit = None;
            }
            EventKind::ModeSwitched { mode } => self.mode = *mode,
            EventKind::MarkerCrud(op) => match op {
                MarkerOp::Created(def) | MarkerOp::Updated(def) => {
                    self.next_marker = self.next_marker.max(def.id.0 + 1);
                    self.markers.insert(def.id, def.clone());
                }
                MarkerOp::Deleted { id } => {
                    self.markers
                        .remove(id)
                        .ok_or_else(|| SessionError::NotFound(id.to_string()))?;
                }
            },
            EventKind::ConversationMessage { thread, message, variant } => match thread {
                ThreadRef::Chat => {
                    self.chat.push(message.clone());
                    if let Some(v) = variant {
                        self.chat_variants.push(*v);
                    }
                }
                ThreadRef::Comment(id) => {
                    let t = self.comment_mut(*id)?;
                    if t.resolved {
                        return Err(SessionError::ThreadResolved(*id));
                    }
                    t.messages.push(message.clone());
                }
            },
            EventKind::CommentOpened { id, span, selection } => {
                self.next_comment = self.next_comment.max(id.0 + 1);
                self.comments.insert(
                    *id,
                    CommentThread {
                        id: *id,
                        span: *span,
                        selection: selection.clone(),
                        messages: Vec::new(),
                        resolved: false,
                    },
                );
            }
            EventKind::CommentResolved { id } => self.comment_mut(*id)?.resolved = true,
            EventKind::BrainstormOpened { id, span, selection, options } => {
                self.next_brainstorm = self.next_brainstorm.max(id.0 + 1);
                self.brainstorms.insert(
                    *id,
                    Brainstorm {
                        id: *id,
                        span: *span,
                        selection: selection.clone(),
                        options: options.clone(),
                        chosen: None,
                        closed: false,
                    },
                );
            }
            EventKind::BrainstormClosed { id, chosen } => {
                let b = self
                    .brainstorms
                    .get_mut(id)
                    .ok_or_else(|| SessionError::NotFound(id.to_string()))?;
                b.chosen = *chosen;
                b.closed = true;
            }
        }
        self.last_seq = ev.seq;
        self.last_at = at;
        Ok(())
    }

    fn apply_change(&mut self, change: &Change, at: Timestamp) -> Result<(), SessionError> {
        // anchors of comments and brainstorms follow the text
        let splices: Vec<Splice> = match change {
            Change::ContentEdited { splices, .. } => splices.clone(),
            Change::Accepted { id, .. } => {
                let r = self.manager.get(*id).ok_or(SuggestionError::NotFound(*id))?;
                let span = r.span.ok_or(SuggestionError::StaleSuggestion(*id))?;
                vec![Splice::new(span.start, span.end, &r.edit.replace_text)]
            }
            _ => Vec::new(),
        };
        self.manager.apply(change, at)?;
        let version_id = self.manager.doc.version_id;
        for sp in &splices {
            for t in self.comments.values_mut() {
                shift(&mut t.span, sp);
                t.span.version_id = version_id;
            }
            for b in self.brainstorms.values_mut() {
                shift(&mut b.span, sp);
                b.span.version_id = version_id;
            }
        }
        if matches!(change, Change::ContentEdited { .. }) {
            self.unsnapshotted_edit = Some(at);
        }
        Ok(())
    }

    fn verification_mut(&mut self, id: VerificationId) -> Result<&mut VerificationRecord, SessionError> {
        self.verifications
            .get_mut(&id)
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    fn comment_mut(&mut self, id: CommentId) -> Result<&mut CommentThread, SessionError> {
        self.comments
            .get_mut(&id)
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    fn emit(&mut self, kind: EventKind, at: Timestamp) -> Result<(), SessionError> {
        let ev = SessionEvent {
            seq: self.last_seq + 1,
            at: self.stamp(at),
            kind,
        };
        self.apply_event(&ev)?;
        self.outbox.push(ev);
        Ok(())
    }

    fn emit_changes(&mut self, changes: Vec<Change>, at: Timestamp) -> Result<(), SessionError> {
        for c in changes {
            self.emit(EventKind::from_change(c), at)?;
        }
        Ok(())
    }

    fn snapshot(&mut self, at: Timestamp) -> Result<(), SessionError> {
        let snap = self.manager.provenance.clone();
        self.emit(EventKind::Snapshot(snap), at)
    }

    fn flush_due_snapshot(&mut self, now: Timestamp) -> Result<(), SessionError> {
        if let Some(edited) = self.unsnapshotted_edit {
            if self.stamp(now).millis_since(edited) >= self.settings.snapshot_debounce_ms {
                self.snapshot(now)?;
            }
        }
        Ok(())
    }

    /// The study-mode time warning, once the allotted time has passed.
    pub fn time_warning(&self, now: Timestamp) -> Option<&'static str> {
        (self.settings.study && self.stamp(now).millis_since(self.created_at) >= STUDY_TIME_LIMIT_MS)
            .then_some(STUDY_TIME_WARNING)
    }

    // ---- commands -------------------------------------------------------

    /// Run a command to completion, calling `provider` as needed.
    pub fn execute(
        &mut self,
        cmd: Command,
        provider: &dyn Provider,
        templates: &TemplateSet,
        now: Timestamp,
    ) -> Result<Outcome, SessionError> {
        let mut step = self.begin(cmd, templates, now)?;
        loop {
            match step {
                Step::Done(outcome) => return Ok(outcome),
                Step::Call(call) => {
                    let raw = provider.complete(&call.prompt);
                    step = self.finish(call, raw, templates, now)?;
                }
            }
        }
    }

    pub fn begin(&mut self, cmd: Command, templates: &TemplateSet, now: Timestamp) -> Result<Step, SessionError> {
        if self.mode == Mode::Audit && cmd.edits_document() {
            return Err(SessionError::ReadOnly);
        }
        self.flush_due_snapshot(now)?;
        let mut out = Outcome::default();
        if let Some(w) = self.time_warning(now) {
            out.warnings.push(w.to_owned());
        }
        match cmd {
            Command::ManualEdit { start, end, replacement } => {
                let changes = self.manager.plan_manual_edit(start, end, &replacement)?;
                out.dismissed = implicitly_dismissed(&changes);
                self.emit_changes(changes, now)?;
            }
            Command::SetContent { content } => {
                let changes = self.manager.plan_sync(&content);
                if let (Some(cap), Some(Change::ContentEdited { splices, .. })) =
                    (self.manager.paste_cap, changes.first())
                {
                    let inserted: usize = splices.iter().map(Splice::inserted_len).sum();
                    if inserted > cap {
                        return Err(SuggestionError::PasteRejected { len: inserted, cap }.into());
                    }
                }
                out.dismissed = implicitly_dismissed(&changes);
                self.emit_changes(changes, now)?;
            }
            Command::Submit { edits, inaccurate } => {
                for (i, edit) in edits.iter().enumerate() {
                    let opts = SubmitOptions {
                        inaccurate: if inaccurate.contains(&i) { vec![0] } else { Vec::new() },
                        ..Default::default()
                    };
                    self.submit(std::slice::from_ref(edit), &edit.component.clone(), &opts, now, &mut out)?;
                }
            }
            Command::Accept { suggestion } => {
                self.accept(suggestion, now)?;
                out.accepted.push(suggestion);
            }
            Command::Dismiss { suggestion } => {
                let changes = self.manager.plan_dismiss(&[suggestion], DismissReason::User)?;
                self.emit_changes(changes, now)?;
                out.dismissed.push(suggestion);
            }
            Command::AcceptAll { component } => {
                let filter = |r: &SuggestionRecord| component.is_none_or(|c| r.origin.base == c);
                let mut tried = Vec::new();
                while let Some(id) = self.manager.next_in_document_order(filter, &tried) {
                    tried.push(id);
                    if self.accept(id, now).is_ok() {
                        out.accepted.push(id);
                    }
                }
            }
            Command::DismissAll { component } => {
                let ids: Vec<_> = self
                    .manager
                    .pending()
                    .filter(|r| component.is_none_or(|c| r.origin.base == c))
                    .map(|r| r.id)
                    .collect();
                let changes = self.manager.plan_dismiss(&ids, DismissReason::DismissAll)?;
                self.emit_changes(changes, now)?;
                out.dismissed = ids;
            }
            Command::Chat { message } => {
                let variant = choose_prompt_variant(self.settings.perturb, self.chat_variants.len() as u64);
                let mut conversation = self.chat.clone();
                conversation.push(Message {
                    author: Author::User,
                    text: message.clone(),
                });
                let prompt = templates.assemble(
                    PromptKind::Chat,
                    variant,
                    &PromptInput {
                        document: self.content(),
                        conversation: &conversation,
                        ..Default::default()
                    },
                )?;
                return Ok(self.call(prompt, Continuation::ChatReply { message, variant }, out));
            }
            Command::OpenComment { start, end, message } => {
                let len = self.manager.doc.char_len();
                in_range(len, start, end)?;
                let id = CommentId(self.next_comment);
                let selection = text::char_slice(self.content(), start, end).unwrap_or_default().to_owned();
                let span = OccurrenceSpan {
                    start,
                    end,
                    version_id: self.manager.doc.version_id,
                };
                self.emit(EventKind::CommentOpened { id, span, selection }, now)?;
                out.comment = Some(id);
                if let Some(message) = message {
                    return self.begin_comment(id, message, templates, out);
                }
            }
            Command::CommentMessage { comment, message } => {
                out.comment = Some(comment);
                return self.begin_comment(comment, message, templates, out);
            }
            Command::ResolveComment { comment } => {
                let t = self
                    .comments
                    .get(&comment)
                    .ok_or_else(|| SessionError::NotFound(comment.to_string()))?;
                if t.resolved {
                    return Err(SessionError::ThreadResolved(comment));
                }
                let ids: Vec<_> = self
                    .manager
                    .pending()
                    .filter(|r| r.source == Some(SuggestionSource::Comment(comment)))
                    .map(|r| r.id)
                    .collect();
                self.emit(EventKind::CommentResolved { id: comment }, now)?;
                let changes = self.manager.plan_dismiss(&ids, DismissReason::CommentResolved)?;
                self.emit_changes(changes, now)?;
                out.comment = Some(comment);
                out.dismissed = ids;
            }
            Command::Brainstorm { start, end } => {
                let len = self.manager.doc.char_len();
                in_range(len, start, end)?;
                let selection = text::char_slice(self.content(), start, end).unwrap_or_default().to_owned();
                let shown = selection
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .unwrap_or(&selection);
                let prompt = templates.assemble(
                    PromptKind::Brainstorm,
                    Variant::Standard,
                    &PromptInput {
                        document: self.content(),
                        selection: Some(shown),
                        ..Default::default()
                    },
                )?;
                let span = OccurrenceSpan {
                    start,
                    end,
                    version_id: self.manager.doc.version_id,
                };
                return Ok(self.call(prompt, Continuation::Brainstorm { span, selection }, out));
            }
            Command::ChooseOption { brainstorm, index } => {
                let b = self
                    .brainstorms
                    .get(&brainstorm)
                    .ok_or_else(|| SessionError::NotFound(brainstorm.to_string()))?
                    .clone();
                if b.closed {
                    return Err(SessionError::BrainstormClosed(brainstorm));
                }
                let option = b.options.get(index).ok_or(SessionError::OptionOutOfRange {
                    index,
                    len: b.options.len(),
                })?;
                let edit = ExecutableEdit::new(b.selection.clone(), option.clone(), Component::Brainstorm);
                let opts = SubmitOptions {
                    source: Some(SuggestionSource::Brainstorm(brainstorm)),
                    bind_to: Some(b.span),
                    ..Default::default()
                };
                out.brainstorm = Some(brainstorm);
                self.submit(&[edit], &ComponentTag::new(Component::Brainstorm), &opts, now, &mut out)?;
                let Some(&id) = out.suggestions.first() else {
                    let id = out.discarded[0];
                    return Err(SuggestionError::StaleSuggestion(id).into());
                };
                self.accept(id, now)?;
                out.accepted.push(id);
                self.emit(
                    EventKind::BrainstormClosed {
                        id: brainstorm,
                        chosen: Some(index),
                    },
                    now,
                )?;
            }
            Command::CloseBrainstorm { brainstorm } => {
                let b = self
                    .brainstorms
                    .get(&brainstorm)
                    .ok_or_else(|| SessionError::NotFound(brainstorm.to_string()))?;
                if b.closed {
                    return Err(SessionError::BrainstormClosed(brainstorm));
                }
                self.emit(EventKind::BrainstormClosed { id: brainstorm, chosen: None }, now)?;
                out.brainstorm = Some(brainstorm);
            }
            Command::CreateMarker {
                name,
                underline_style,
                color,
                description,
                visible,
            } => {
                self.check_marker_name(&name, None)?;
                let def = MarkerDef {
                    id: MarkerId(self.next_marker),
                    name,
                    underline_style,
                    color,
                    description,
                    visible,
                };
                out.marker = Some(def.id);
                self.emit(EventKind::MarkerCrud(MarkerOp::Created(def)), now)?;
            }
            Command::UpdateMarker { marker, patch } => {
                let mut def = self
                    .markers
                    .get(&marker)
                    .ok_or_else(|| SessionError::NotFound(marker.to_string()))?
                    .clone();
                if let Some(name) = patch.name {
                    self.check_marker_name(&name, Some(marker))?;
                    def.name = name;
                }
                if let Some(s) = patch.underline_style {
                    def.underline_style = s;
                }
                if let Some(c) = patch.color {
                    def.color = c;
                }
                if let Some(d) = patch.description {
                    def.description = Some(d);
                }
                if let Some(v) = patch.visible {
                    def.visible = v;
                }
                out.marker = Some(marker);
                self.emit(EventKind::MarkerCrud(MarkerOp::Updated(def)), now)?;
            }
            Command::DeleteMarker { marker } => {
                if !self.markers.contains_key(&marker) {
                    return Err(SessionError::NotFound(marker.to_string()));
                }
                let ids: Vec<_> = self
                    .manager
                    .pending()
                    .filter(|r| r.source == Some(SuggestionSource::Marker(marker)))
                    .map(|r| r.id)
                    .collect();
                let changes = self.manager.plan_dismiss(&ids, DismissReason::MarkerDeleted)?;
                self.emit_changes(changes, now)?;
                self.emit(EventKind::MarkerCrud(MarkerOp::Deleted { id: marker }), now)?;
                out.marker = Some(marker);
                out.dismissed = ids;
            }
            Command::RefreshMarkers { marker } => {
                let markers: Vec<MarkerDef> = match marker {
                    Some(id) => vec![self
                        .markers
                        .get(&id)
                        .ok_or_else(|| SessionError::NotFound(id.to_string()))?
                        .clone()],
                    None => self.markers.values().filter(|m| m.visible).cloned().collect(),
                };
                if markers.is_empty() || self.content().trim().is_empty() {
                    return Ok(Step::Done(out));
                }
                // a refresh of one hidden marker still names it in the prompt
                let listed: Vec<MarkerDef> = markers
                    .iter()
                    .cloned()
                    .map(|mut m| {
                        m.visible = true;
                        m
                    })
                    .collect();
                let prompt = templates.assemble(
                    PromptKind::Marker,
                    Variant::Standard,
                    &PromptInput {
                        document: self.content(),
                        markers: &listed,
                        ..Default::default()
                    },
                )?;
                let ids = markers.iter().map(|m| m.id).collect();
                return Ok(self.call(prompt, Continuation::Markers { markers: ids }, out));
            }
            Command::Verify { suggestion } => {
                let record = self
                    .manager
                    .get(suggestion)
                    .ok_or(SuggestionError::NotFound(suggestion))?;
                if let Some(v) = self.verification_for(suggestion) {
                    out.verification = Some(v.id);
                    return Ok(Step::Done(out));
                }
                if !verify::can_verify(record, &self.manager.provenance) {
                    return Err(VerifyError::NotVerifiable(suggestion).into());
                }
                let edit = record.edit.clone();
                let prompt = templates.assemble(
                    PromptKind::Verify,
                    Variant::Standard,
                    &PromptInput {
                        document: self.content(),
                        edit: Some(&edit),
                        ..Default::default()
                    },
                )?;
                return Ok(self.call(prompt, Continuation::Verify { suggestion }, out));
            }
            Command::Visit { verification, index } => {
                let v = self
                    .verifications
                    .get(&verification)
                    .ok_or_else(|| SessionError::NotFound(verification.to_string()))?;
                if index >= v.queries.len() {
                    return Err(VerifyError::IndexOutOfRange {
                        index,
                        len: v.queries.len(),
                    }
                    .into());
                }
                self.emit(EventKind::QueryVisited { verification, index }, now)?;
                out.verification = Some(verification);
            }
            Command::Label { verification, label } => {
                if !self.verifications.contains_key(&verification) {
                    return Err(SessionError::NotFound(verification.to_string()));
                }
                if label == Label::Unlabeled {
                    return Err(VerifyError::InvalidLabel(label.to_string()).into());
                }
                self.emit(EventKind::LabelAssigned { verification, label }, now)?;
                out.verification = Some(verification);
            }
            Command::LabelSuggestion { suggestion, label } => {
                if label == Label::Unlabeled {
                    return Err(VerifyError::InvalidLabel(label.to_string()).into());
                }
                let verification = match self.verification_for(suggestion) {
                    Some(v) => v.id,
                    None => {
                        let record = self
                            .manager
                            .get(suggestion)
                            .ok_or(SuggestionError::NotFound(suggestion))?;
                        if !verify::can_verify(record, &self.manager.provenance) {
                            return Err(VerifyError::NotVerifiable(suggestion).into());
                        }
                        let id = VerificationId(self.next_verification);
                        let v = VerificationRecord::new(id, suggestion, Vec::new(), self.stamp(now));
                        self.emit(EventKind::VerificationStarted(v), now)?;
                        id
                    }
                };
                self.emit(EventKind::LabelAssigned { verification, label }, now)?;
                out.verification = Some(verification);
            }
            Command::SwitchMode { mode } => {
                if mode != self.mode {
                    self.emit(EventKind::ModeSwitched { mode }, now)?;
                }
            }
            Command::CloseAudit => {
                let ids: Vec<_> = self
                    .verifications
                    .values()
                    .filter(|v| v.label == Label::Unlabeled)
                    .map(|v| v.id)
                    .collect();
                self.emit(EventKind::AuditClosed { verifications: ids }, now)?;
            }
            Command::Bracket { start, end } => {
                let len = self.manager.doc.char_len();
                in_range(len, start, end)?;
                let passage = text::char_slice(self.content(), start, end).unwrap_or_default();
                let inner = passage
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .filter(|s| !s.trim().is_empty())
                    .ok_or(SessionError::NotBracketed { start, end })?
                    .to_owned();
                let prompt = templates.assemble(
                    PromptKind::Bracket,
                    Variant::Standard,
                    &PromptInput {
                        document: self.content(),
                        selection: Some(&inner),
                        ..Default::default()
                    },
                )?;
                return Ok(self.call(prompt, Continuation::Bracket { start, end, inner }, out));
            }
            Command::Tick => {}
        }
        Ok(Step::Done(out))
    }

    fn call(&self, prompt: Prompt, then: Continuation, outcome: Outcome) -> Step {
        Step::Call(PendingCall { prompt, then, outcome })
    }

    fn begin_comment(
        &mut self,
        comment: CommentId,
        message: String,
        templates: &TemplateSet,
        out: Outcome,
    ) -> Result<Step, SessionError> {
        let t = self
            .comments
            .get(&comment)
            .ok_or_else(|| SessionError::NotFound(comment.to_string()))?;
        if t.resolved {
            return Err(SessionError::ThreadResolved(comment));
        }
        let mut conversation = t.messages.clone();
        conversation.push(Message {
            author: Author::User,
            text: message.clone(),
        });
        let prompt = templates.assemble(
            PromptKind::Comment,
            Variant::Standard,
            &PromptInput {
                document: self.content(),
                conversation: &conversation,
                selection: Some(&t.selection),
                ..Default::default()
            },
        )?;
        Ok(self.call(prompt, Continuation::CommentReply { comment, message }, out))
    }

    fn check_marker_name(&self, name: &str, except: Option<MarkerId>) -> Result<(), SessionError> {
        let clash = self
            .markers
            .values()
            .any(|m| Some(m.id) != except && m.name.eq_ignore_ascii_case(name));
        if clash || name.trim().is_empty() {
            return Err(SessionError::DuplicateMarker(name.to_owned()));
        }
        Ok(())
    }

    fn accept(&mut self, id: SuggestionId, now: Timestamp) -> Result<(), SessionError> {
        match self.manager.plan_accept(id) {
            Ok(changes) => {
                self.emit_changes(changes, now)?;
                self.snapshot(now)
            }
            Err(SuggestionError::StaleSuggestion(id)) => {
                if self.manager.get(id).is_some_and(SuggestionRecord::is_pending) {
                    self.emit(EventKind::ImplicitlyDismissed(Change::ImplicitlyDismissed { ids: vec![id] }), now)?;
                }
                Err(SuggestionError::StaleSuggestion(id).into())
            }
            Err(e) => Err(e.into()),
        }
    }

    fn submit(
        &mut self,
        edits: &[ExecutableEdit],
        origin: &ComponentTag,
        opts: &SubmitOptions,
        now: Timestamp,
        out: &mut Outcome,
    ) -> Result<(), SessionError> {
        let changes = self.manager.plan_submit(edits, origin, opts, self.stamp(now));
        for c in &changes {
            match c {
                Change::Submitted { records } => out
                    .suggestions
                    .extend(records.iter().filter(|r| r.is_pending()).map(|r| r.id)),
                Change::Discarded { records } => out.discarded.extend(records.iter().map(|r| r.id)),
                Change::Dismissed { ids, .. } => out.dismissed.extend(ids),
                _ => {}
            }
        }
        self.emit_changes(changes, now)
    }

    /// Fold a provider answer into the session. Provider failures leave the
    /// session untouched.
    pub fn finish(
        &mut self,
        call: PendingCall,
        raw: Result<Vec<u8>, ProviderError>,
        templates: &TemplateSet,
        now: Timestamp,
    ) -> Result<Step, SessionError> {
        let raw = raw?;
        let mut out = call.outcome;
        let system = |text: String| Message {
            author: Author::System,
            text,
        };
        let user = |text: String| Message {
            author: Author::User,
            text,
        };
        match call.then {
            Continuation::ChatReply { message, variant } => {
                let reply = provider::parse_reply(&raw)?;
                if self.mode == Mode::Audit {
                    return Err(SessionError::ReadOnly);
                }
                self.emit(
                    EventKind::ConversationMessage {
                        thread: ThreadRef::Chat,
                        message: user(message),
                        variant: None,
                    },
                    now,
                )?;
                self.emit(
                    EventKind::ConversationMessage {
                        thread: ThreadRef::Chat,
                        message: system(reply.reply_text.clone()),
                        variant: Some(variant),
                    },
                    now,
                )?;
                let opts = SubmitOptions {
                    source: Some(SuggestionSource::Chat),
                    inaccurate: reply.inaccurate,
                    bind_to: None,
                };
                self.submit(&reply.edits, &ComponentTag::new(Component::Chat), &opts, now, &mut out)?;
                out.reply = Some(reply.reply_text);
            }
            Continuation::CommentReply { comment, message } => {
                let reply = provider::parse_reply(&raw)?;
                if self.comments.get(&comment).is_none_or(|t| t.resolved) {
                    return Err(SessionError::ThreadResolved(comment));
                }
                let thread = ThreadRef::Comment(comment);
                self.emit(
                    EventKind::ConversationMessage {
                        thread,
                        message: user(message),
                        variant: None,
                    },
                    now,
                )?;
                self.emit(
                    EventKind::ConversationMessage {
                        thread,
                        message: system(reply.reply_text.clone()),
                        variant: None,
                    },
                    now,
                )?;
                let opts = SubmitOptions {
                    source: Some(SuggestionSource::Comment(comment)),
                    inaccurate: reply.inaccurate,
                    bind_to: None,
                };
                self.submit(&reply.edits, &ComponentTag::new(Component::Comment), &opts, now, &mut out)?;
                out.reply = Some(reply.reply_text);
            }
            Continuation::Brainstorm { span, selection } => {
                let options = provider::parse_options(&raw)?;
                let id = BrainstormId(self.next_brainstorm);
                self.emit(
                    EventKind::BrainstormOpened {
                        id,
                        span,
                        selection,
                        options: options.clone(),
                    },
                    now,
                )?;
                out.brainstorm = Some(id);
                out.options = options;
            }
            Continuation::Markers { markers } => {
                let (edits, inaccurate) = provider::parse_edit_list(&raw)?;
                let mut groups: BTreeMap<Option<MarkerId>, (Vec<ExecutableEdit>, Vec<usize>)> = BTreeMap::new();
                for (i, edit) in edits.into_iter().enumerate() {
                    let marker = edit.component.sub.as_deref().and_then(|name| {
                        markers
                            .iter()
                            .filter_map(|id| self.markers.get(id))
                            .find(|m| m.name.eq_ignore_ascii_case(name))
                            .map(|m| m.id)
                    });
                    let Some(marker) = marker else {
                        log::info!("dropping edit for unrequested marker {}", edit.component);
                        continue;
                    };
                    if self.already_pending(&edit, marker) {
                        continue;
                    }
                    let group = groups.entry(Some(marker)).or_default();
                    if inaccurate.contains(&i) {
                        group.1.push(group.0.len());
                    }
                    group.0.push(edit);
                }
                for (marker, (edits, inaccurate)) in groups {
                    let Some(def) = marker.and_then(|id| self.markers.get(&id)).cloned() else {
                        continue;
                    };
                    let opts = SubmitOptions {
                        source: Some(SuggestionSource::Marker(def.id)),
                        inaccurate,
                        bind_to: None,
                    };
                    self.submit(&edits, &def.origin(), &opts, now, &mut out)?;
                }
            }
            Continuation::Verify { suggestion } => {
                let queries = provider::parse_queries(&raw)?;
                if let Some(v) = self.verification_for(suggestion) {
                    out.verification = Some(v.id);
                    return Ok(Step::Done(out));
                }
                let id = VerificationId(self.next_verification);
                let v = VerificationRecord::new(id, suggestion, queries, self.stamp(now));
                self.emit(EventKind::VerificationStarted(v), now)?;
                out.verification = Some(id);
            }
            Continuation::Bracket { start, end, inner } => {
                let class = provider::parse_bracket_class(&raw)?;
                out.bracket = Some(class);
                // the passage may have moved while the provider was thinking
                let passage = format!("[{inner}]");
                let (start, end) = if text::char_slice(self.content(), start, end) == Some(passage.as_str()) {
                    (start, end)
                } else {
                    match crate::edit::find_all(self.content(), &passage).first() {
                        Some(&found) => found,
                        None => return Ok(Step::Done(out)),
                    }
                };
                let next = match class {
                    BracketClass::Command => Command::OpenComment {
                        start,
                        end,
                        message: Some(inner),
                    },
                    BracketClass::Content => Command::Brainstorm { start, end },
                };
                let bracket = out.bracket;
                return match self.begin(next, templates, now)? {
                    Step::Done(mut o) => {
                        o.bracket = bracket;
                        Ok(Step::Done(o))
                    }
                    Step::Call(mut c) => {
                        c.outcome.bracket = bracket;
                        Ok(Step::Call(c))
                    }
                };
            }
        }
        Ok(Step::Done(out))
    }

    fn already_pending(&self, edit: &ExecutableEdit, marker: MarkerId) -> bool {
        self.manager.pending().any(|r| {
            r.source == Some(SuggestionSource::Marker(marker))
                && r.edit.original_text == edit.original_text
                && r.edit.replace_text == edit.replace_text
        })
    }

    // ---- analytics ------------------------------------------------------

    pub fn audit_view(&self) -> verify::AuditView {
        let labels = verify::labels_by_suggestion(self.verifications.values());
        verify::build_audit_view(&self.manager.provenance, &labels)
    }

    pub fn metrics(&self) -> Metrics {
        let view = self.audit_view();
        let by_id: BTreeMap<_, _> = self.manager.records().map(|r| (r.id, r)).collect();
        let detection = verify::detection_counts(&view, &by_id);
        let mut counts = SuggestionCounts::default();
        for r in self.manager.records() {
            counts.total += 1;
            match r.status {
                Status::Pending => counts.pending += 1,
                Status::Accepted => counts.accepted += 1,
                Status::Dismissed => counts.dismissed += 1,
                Status::ImplicitlyDismissed => counts.implicitly_dismissed += 1,
                Status::Discarded => counts.discarded += 1,
            }
            if r.inaccurate {
                counts.inaccurate += 1;
            }
        }
        Metrics {
            prevented: verify::metric_prevented(self.manager.records(), &self.manager.provenance),
            detected: detection.percentage(),
            detection,
            verification: verify::verification_stats(self.verifications.values()),
            suggestions: counts,
            standard_turns: self.chat_variants.iter().filter(|v| **v == Variant::Standard).count(),
            perturbed_turns: self.chat_variants.iter().filter(|v| **v == Variant::Perturbed).count(),
        }
    }

    pub fn audit_report(&self) -> AuditReport {
        let view = self.audit_view();
        AuditReport {
            version_id: view.version_id,
            content: view.content,
            spans: view.spans,
            verifications: self.verifications.values().cloned().collect(),
            metrics: self.metrics(),
        }
    }

    /// `(elapsed seconds, character edit distance from the template)` every
    /// `period_ms`, read off the snapshot stream.
    pub fn edit_distance_series(&self, period_ms: u64) -> Vec<(f64, usize)> {
        let period = period_ms.max(1);
        let end = self.last_at.millis_since(self.created_at);
        let mut cache: Vec<Option<usize>> = vec![None; self.history.len()];
        let mut out = Vec::new();
        let mut idx = 0;
        let mut t = 0;
        loop {
            let at = Timestamp(self.created_at.0 + t);
            while idx + 1 < self.history.len() && self.history[idx + 1].at <= at {
                idx += 1;
            }
            let d = *cache[idx].get_or_insert_with(|| levenshtein(&self.template, &self.history[idx].content));
            out.push((t as f64 / 1000.0, d));
            if t >= end {
                break;
            }
            t += period;
        }
        out
    }
}

fn implicitly_dismissed(changes: &[Change]) -> Vec<SuggestionId> {
    changes
        .iter()
        .flat_map(|c| match c {
            Change::ImplicitlyDismissed { ids } => ids.clone(),
            _ => Vec::new(),
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionCounts {
    pub total: usize,
    pub pending: usize,
    pub accepted: usize,
    pub dismissed: usize,
    pub implicitly_dismissed: usize,
    pub discarded: usize,
    pub inaccurate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub prevented: Option<f64>,
    pub detected: Option<f64>,
    pub detection: DetectionCounts,
    pub verification: VerificationStats,
    pub suggestions: SuggestionCounts,
    pub standard_turns: usize,
    pub perturbed_turns: usize,
}

/// The audit export shared by the CLI and the HTTP service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub version_id: u64,
    pub content: String,
    pub spans: Vec<AuditSpan>,
    pub verifications: Vec<VerificationRecord>,
    pub metrics: Metrics,
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("version {}\n", self.version_id);
        if self.spans.is_empty() {
            s.push_str("no system-generated spans\n");
        }
        for span in &self.spans {
            s.push_str(&format!(
                "{:>5}..{:<5} {:<18} {:<4} {:?}\n",
                span.start,
                span.end,
                span.highlight_class.as_str(),
                span.edit_id.to_string(),
                span.text
            ));
        }
        let pct = |v: Option<f64>| v.map_or("N/A".to_owned(), |p| format!("{p:.1}%"));
        s.push_str(&format!("prevented: {}\n", pct(self.metrics.prevented)));
        s.push_str(&format!("detected: {}\n", pct(self.metrics.detected)));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::ScriptedProvider;

    fn t(s: u64) -> Timestamp {
        Timestamp(1_000_000 + s * 1000)
    }

    fn run(s: &mut Session, p: &ScriptedProvider, cmd: Command, at: Timestamp) -> Result<Outcome, SessionError> {
        s.execute(cmd, p, &TemplateSet::default(), at)
    }

    fn replayed(s: &mut Session, log: &mut Vec<SessionEvent>) -> Session {
        log.extend(s.take_events());
        Session::replay(log.iter()).unwrap()
    }

    #[test]
    fn create_and_replay() {
        let mut s = Session::create("Hello", Settings::default(), t(0));
        let mut log = Vec::new();
        let p = ScriptedProvider::new();
        run(&mut s, &p, Command::ManualEdit { start: 5, end: 5, replacement: "!".into() }, t(1)).unwrap();
        assert_eq!(s.content(), "Hello!");
        assert_eq!(replayed(&mut s, &mut log), s);
        assert_eq!(log[1].kind.name(), "manual_edit");
    }

    #[test]
    fn event_json_shape() {
        let mut s = Session::create("x", Settings::default(), t(0));
        let ev = &s.take_events()[0];
        let json = serde_json::to_value(ev).unwrap();
        assert_eq!(json["seq"], 1);
        assert_eq!(json["kind"], "document_created");
        assert_eq!(json["payload"]["template"], "x");
        let back: SessionEvent = serde_json::from_value(json).unwrap();
        assert_eq!(&back, ev);
    }

    #[test]
    fn timestamps_are_monotone() {
        let mut s = Session::create("abc", Settings::default(), t(10));
        let p = ScriptedProvider::new();
        run(&mut s, &p, Command::ManualEdit { start: 0, end: 0, replacement: "x".into() }, t(5)).unwrap();
        let evs = s.take_events();
        assert!(evs.windows(2).all(|w| w[0].at <= w[1].at && w[0].seq < w[1].seq));
    }

    #[test]
    fn chat_round_trip_with_perturbed_alternation() {
        let p = ScriptedProvider::new()
            .with_rule(
                Some(PromptKind::Chat),
                Some(Variant::Standard),
                &[],
                r#"{"reply": "ok", "edits": [{"original_text": "trip", "replace_text": "journey", "component": "chat"}]}"#,
            )
            .with_rule(
                Some(PromptKind::Chat),
                Some(Variant::Perturbed),
                &[],
                r#"{"reply": "ok", "edits": [{"original_text": "Paris", "replace_text": "Lyon", "component": "chat", "new_info": "1"}], "ground_truth_inaccurate": [0]}"#,
            );
        let settings = Settings {
            perturb: PerturbMode::Alternate,
            ..Default::default()
        };
        let mut s = Session::create("a trip to Paris", settings, t(0));
        let o = run(&mut s, &p, Command::Chat { message: "improve".into() }, t(1)).unwrap();
        assert_eq!(o.reply.as_deref(), Some("ok"));
        assert_eq!(o.suggestions.len(), 1);
        let o = run(&mut s, &p, Command::Chat { message: "again".into() }, t(2)).unwrap();
        let id = o.suggestions[0];
        assert!(s.suggestion(id).unwrap().inaccurate);
        assert_eq!(s.chat_variants, [Variant::Standard, Variant::Perturbed]);
        assert_eq!(s.chat.len(), 4);
    }

    #[test]
    fn provider_failure_changes_nothing() {
        let p = ScriptedProvider::new().with_rule(None, None, &[], "garbage");
        let mut s = Session::create("text", Settings::default(), t(0));
        s.take_events();
        let err = run(&mut s, &p, Command::Chat { message: "hi".into() }, t(1)).unwrap_err();
        assert!(matches!(err, SessionError::Provider(ProviderError::InvalidProviderOutput(_))));
        assert!(s.take_events().is_empty());
        assert!(s.chat.is_empty());
    }

    #[test]
    fn stale_accept_records_implicit_dismissal() {
        let p = ScriptedProvider::new();
        let mut s = Session::create("alpha beta", Settings::default(), t(0));
        let edit = ExecutableEdit::new("beta", "gamma", Component::Chat);
        let id = run(&mut s, &p, Command::Submit { edits: vec![edit], inaccurate: vec![] }, t(1))
            .unwrap()
            .suggestions[0];
        // simulate a client that never saw the manual edit
        let mut stale = s.clone();
        s.take_events();
        run(&mut s, &p, Command::ManualEdit { start: 6, end: 10, replacement: "".into() }, t(2)).unwrap();
        assert_eq!(s.suggestion(id).unwrap().status, Status::ImplicitlyDismissed);
        let err = run(&mut s, &p, Command::Accept { suggestion: id }, t(3)).unwrap_err();
        assert!(matches!(err, SessionError::Suggestion(SuggestionError::StaleSuggestion(_))));
        // a pending-but-stale record is retired by the accept attempt itself
        stale.take_events();
        stale.manager.doc.content = "alpha ".into();
        stale.manager.provenance = ProvenanceSnapshot::user(0, "alpha ");
        assert!(run(&mut stale, &p, Command::Accept { suggestion: id }, t(3)).is_err());
        assert_eq!(stale.take_events()[0].kind.name(), "implicitly_dismissed");
    }

    #[test]
    fn accept_is_not_repeated() {
        let p = ScriptedProvider::new();
        let mut s = Session::create("a b", Settings::default(), t(0));
        let edit = ExecutableEdit::new("b", "c", Component::Chat);
        let id = run(&mut s, &p, Command::Submit { edits: vec![edit], inaccurate: vec![] }, t(1))
            .unwrap()
            .suggestions[0];
        run(&mut s, &p, Command::Accept { suggestion: id }, t(2)).unwrap();
        assert!(run(&mut s, &p, Command::Accept { suggestion: id }, t(3)).is_err());
        assert_eq!(s.content(), "a c");
    }

    #[test]
    fn comment_flow_and_resolve() {
        let p = ScriptedProvider::new().with_rule(
            Some(PromptKind::Comment),
            None,
            &["Selected passage:\nvery big"],
            r#"{"reply": "try this", "edits": [{"original_text": "very big", "replace_text": "huge", "component": "comment"}]}"#,
        );
        let mut s = Session::create("a very big dog", Settings::default(), t(0));
        let o = run(
            &mut s,
            &p,
            Command::OpenComment { start: 2, end: 10, message: Some("shorter".into()) },
            t(1),
        )
        .unwrap();
        let c = o.comment.unwrap();
        assert_eq!(o.suggestions.len(), 1);
        assert_eq!(s.comments[&c].messages.len(), 2);
        let o = run(&mut s, &p, Command::ResolveComment { comment: c }, t(2)).unwrap();
        assert_eq!(o.dismissed.len(), 1);
        assert!(matches!(
            run(&mut s, &p, Command::CommentMessage { comment: c, message: "more".into() }, t(3)),
            Err(SessionError::ThreadResolved(_))
        ));
    }

    #[test]
    fn brainstorm_choose_option() {
        let p = ScriptedProvider::new().with_rule(
            Some(PromptKind::Brainstorm),
            None,
            &["very pretty"],
            r#"["stunning", "lovely", "picturesque"]"#,
        );
        let mut s = Session::create("Egypt is a very pretty place", Settings::default(), t(0));
        let o = run(&mut s, &p, Command::Brainstorm { start: 11, end: 22 }, t(1)).unwrap();
        assert_eq!(o.options.len(), 3);
        let b = o.brainstorm.unwrap();
        run(&mut s, &p, Command::ChooseOption { brainstorm: b, index: 2 }, t(2)).unwrap();
        assert_eq!(s.content(), "Egypt is a picturesque place");
        assert!(s.brainstorms[&b].closed);
    }

    #[test]
    fn bracket_dispatch() {
        let p = ScriptedProvider::new()
            .with_rule(Some(PromptKind::Bracket), None, &["Bracketed text:\nadd more detail here"], r#"{"class": "command"}"#)
            .with_rule(Some(PromptKind::Bracket), None, &["Bracketed text:\nvery pretty"], r#"{"class": "content"}"#)
            .with_rule(Some(PromptKind::Comment), None, &[], r#"{"reply": "sure", "edits": []}"#)
            .with_rule(Some(PromptKind::Brainstorm), None, &[], r#"["gorgeous", "striking", "scenic"]"#);
        let mut s = Session::create("Egypt is a [very pretty] place. [add more detail here]", Settings::default(), t(0));
        let o = run(&mut s, &p, Command::Bracket { start: 11, end: 24 }, t(1)).unwrap();
        assert_eq!(o.bracket, Some(BracketClass::Content));
        assert_eq!(o.options.len(), 3);
        let o = run(&mut s, &p, Command::Bracket { start: 32, end: 54 }, t(2)).unwrap();
        assert_eq!(o.bracket, Some(BracketClass::Command));
        let c = o.comment.unwrap();
        assert_eq!(s.comments[&c].messages[0].text, "add more detail here");
        assert!(matches!(
            run(&mut s, &p, Command::Bracket { start: 0, end: 5 }, t(3)),
            Err(SessionError::NotBracketed { .. })
        ));
    }

    #[test]
    fn marker_refresh_and_delete() {
        let p = ScriptedProvider::new().with_rule(
            Some(PromptKind::Marker),
            None,
            &[],
            r#"[{"original_text": "teh", "replace_text": "the", "component": "marker_Typos"},
                {"original_text": "hey", "replace_text": "Dear", "component": "marker_Unknown"}]"#,
        );
        let mut s = Session::create("hey, teh end", Settings::default(), t(0));
        let o = run(&mut s, &p, Command::RefreshMarkers { marker: None }, t(1)).unwrap();
        assert_eq!(o.suggestions.len(), 1);
        let r = s.suggestion(o.suggestions[0]).unwrap();
        assert_eq!(r.origin.to_string(), "marker_Typos");
        // a second refresh does not duplicate the pending suggestion
        let again = run(&mut s, &p, Command::RefreshMarkers { marker: None }, t(2)).unwrap();
        assert!(again.suggestions.is_empty());
        let o = run(&mut s, &p, Command::DeleteMarker { marker: MarkerId(1) }, t(3)).unwrap();
        assert_eq!(o.dismissed.len(), 1);
        assert!(!s.markers.contains_key(&MarkerId(1)));
    }

    #[test]
    fn marker_crud() {
        let p = ScriptedProvider::new();
        let mut s = Session::create("x", Settings::default(), t(0));
        let cmd = |name: &str| Command::CreateMarker {
            name: name.into(),
            underline_style: UnderlineStyle::Dashed,
            color: "#00ff00".into(),
            description: Some("Keep it short.".into()),
            visible: true,
        };
        let id = run(&mut s, &p, cmd("Concise"), t(1)).unwrap().marker.unwrap();
        assert_eq!(id, MarkerId(4));
        assert!(matches!(run(&mut s, &p, cmd("typos"), t(1)), Err(SessionError::DuplicateMarker(_))));
        let patch = MarkerPatch {
            visible: Some(false),
            ..Default::default()
        };
        run(&mut s, &p, Command::UpdateMarker { marker: id, patch }, t(2)).unwrap();
        assert!(!s.markers[&id].visible);
    }

    #[test]
    fn verify_and_label() {
        let p = ScriptedProvider::new()
            .with_rule(Some(PromptKind::Verify), None, &["New York"], r#"["where was sushi invented", "sushi origin"]"#);
        let mut s = Session::create("Sushi is great.", Settings::default(), t(0));
        let edit = ExecutableEdit::new("great.", "great, and was invented in New York.", Component::Chat).new_info(true);
        let id = run(&mut s, &p, Command::Submit { edits: vec![edit], inaccurate: vec![0] }, t(1))
            .unwrap()
            .suggestions[0];
        let v = run(&mut s, &p, Command::Verify { suggestion: id }, t(2)).unwrap().verification.unwrap();
        assert_eq!(s.verifications[&v].queries[0], "where was sushi invented");
        // idempotent
        let again = run(&mut s, &p, Command::Verify { suggestion: id }, t(3)).unwrap();
        assert_eq!(again.verification, Some(v));
        run(&mut s, &p, Command::Visit { verification: v, index: 1 }, t(4)).unwrap();
        assert!(run(&mut s, &p, Command::Visit { verification: v, index: 2 }, t(4)).is_err());
        run(&mut s, &p, Command::Label { verification: v, label: Label::Incorrect }, t(5)).unwrap();
        assert_eq!(s.suggestion(id).unwrap().verification, Some(Label::Incorrect));
    }

    #[test]
    fn audit_mode_is_read_only_and_close_marks_unlabeled() {
        let p = ScriptedProvider::new().with_rule(Some(PromptKind::Verify), None, &[], r#"["q"]"#);
        let mut s = Session::create("a b", Settings::default(), t(0));
        let edit = ExecutableEdit::new("b", "b in 1999", Component::Chat).new_info(true);
        let id = run(&mut s, &p, Command::Submit { edits: vec![edit], inaccurate: vec![] }, t(1))
            .unwrap()
            .suggestions[0];
        run(&mut s, &p, Command::Accept { suggestion: id }, t(2)).unwrap();
        run(&mut s, &p, Command::SwitchMode { mode: Mode::Audit }, t(3)).unwrap();
        assert!(matches!(
            run(&mut s, &p, Command::ManualEdit { start: 0, end: 1, replacement: "z".into() }, t(4)),
            Err(SessionError::ReadOnly)
        ));
        let v = run(&mut s, &p, Command::Verify { suggestion: id }, t(4)).unwrap().verification.unwrap();
        run(&mut s, &p, Command::CloseAudit, t(5)).unwrap();
        assert_eq!(s.verifications[&v].label, Label::NotEnoughTime);
        run(&mut s, &p, Command::SwitchMode { mode: Mode::Edit }, t(6)).unwrap();
        assert_eq!(s.label_of(id), Label::NotEnoughTime);
    }

    #[test]
    fn direct_label_without_queries() {
        let p = ScriptedProvider::new();
        let mut s = Session::create("a b", Settings::default(), t(0));
        let edit = ExecutableEdit::new("b", "c", Component::Chat);
        let id = run(&mut s, &p, Command::Submit { edits: vec![edit], inaccurate: vec![] }, t(1))
            .unwrap()
            .suggestions[0];
        run(&mut s, &p, Command::Accept { suggestion: id }, t(2)).unwrap();
        let v = run(&mut s, &p, Command::LabelSuggestion { suggestion: id, label: Label::Verified }, t(3))
            .unwrap()
            .verification
            .unwrap();
        assert!(!s.verifications[&v].queries_opened);
        let view = s.audit_view();
        assert_eq!(view.spans[0].highlight_class, verify::HighlightClass::Verified);
    }

    #[test]
    fn snapshots_debounce_manual_edits() {
        let p = ScriptedProvider::new();
        let mut s = Session::create("abc", Settings::default(), t(0));
        run(&mut s, &p, Command::ManualEdit { start: 3, end: 3, replacement: "d".into() }, t(1)).unwrap();
        run(&mut s, &p, Command::Tick, t(3)).unwrap();
        assert_eq!(s.history.len(), 1);
        run(&mut s, &p, Command::Tick, t(6)).unwrap();
        assert_eq!(s.history.len(), 2);
        let series = s.edit_distance_series(DEFAULT_SAMPLE_PERIOD_MS);
        assert_eq!(series, vec![(0.0, 0), (5.0, 0), (10.0, 1)]);
    }

    #[test]
    fn series_follows_snapshots() {
        let p = ScriptedProvider::new();
        let mut s = Session::create("abc", Settings::default(), t(0));
        run(&mut s, &p, Command::ManualEdit { start: 0, end: 0, replacement: "x".into() }, t(10)).unwrap();
        run(&mut s, &p, Command::ManualEdit { start: 0, end: 1, replacement: "".into() }, t(20)).unwrap();
        run(&mut s, &p, Command::Tick, t(30)).unwrap();
        let series = s.edit_distance_series(5_000);
        // the insert is snapshotted when the delete arrives, the delete on the tick
        let d: Vec<usize> = series.iter().map(|&(_, d)| d).collect();
        assert_eq!(d, [0, 0, 0, 0, 1, 1, 0]);
    }

    #[test]
    fn study_mode_caps_pastes_and_warns() {
        let p = ScriptedProvider::new();
        let settings = Settings {
            study: true,
            ..Default::default()
        };
        let mut s = Session::create("", settings, t(0));
        let long = "x".repeat(60);
        assert!(run(&mut s, &p, Command::ManualEdit { start: 0, end: 0, replacement: long.clone() }, t(1)).is_err());
        assert!(run(&mut s, &p, Command::SetContent { content: long }, t(1)).is_err());
        let o = run(&mut s, &p, Command::Tick, t(301)).unwrap();
        assert_eq!(o.warnings, [STUDY_TIME_WARNING]);
    }

    #[test]
    fn replay_rejects_gaps_and_tampering() {
        let p = ScriptedProvider::new();
        let mut s = Session::create("abc", Settings::default(), t(0));
        run(&mut s, &p, Command::ManualEdit { start: 0, end: 1, replacement: "".into() }, t(1)).unwrap();
        run(&mut s, &p, Command::Tick, t(10)).unwrap();
        let mut log = s.take_events();
        assert!(Session::replay(log[1..].iter()).is_err());
        if let EventKind::Snapshot(snap) = &mut log[2].kind {
            snap.content = "zzz".into();
        }
        assert!(Session::replay(log.iter()).is_err());
        assert!(Session::replay([].iter()).is_err());
    }

    #[test]
    fn report_text() {
        let s = Session::create("all user", Settings::default(), t(0));
        let text = s.audit_report().to_text();
        assert!(text.contains("no system-generated spans"));
        assert!(text.contains("prevented: N/A"));
    }
}
