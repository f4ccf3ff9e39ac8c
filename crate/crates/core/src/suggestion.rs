//! Suggestion lifecycle for one document.
//!
//! The manager owns the document text, its live provenance and every
//! suggestion ever bound to it. Each operation is split into a planning step
//! that inspects the current state and returns [`Change`] facts, and an
//! apply step that folds those facts into the state. The session layer
//! records the facts as events, so replaying them reproduces the state
//! without re-running any planning logic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::align;
use crate::edit::{expand_edit, find_all, Component, ComponentTag, DocumentText, ExecutableEdit, OccurrenceSpan};
use crate::ids::{BrainstormId, CommentId, MarkerId, SuggestionId, Timestamp};
use crate::provenance::{CharProvenance, ProvenanceError, ProvenanceSnapshot};
use crate::text::{self, Splice};
use crate::verify::Label;

/// Longest paste accepted while study mode is on.
pub const STUDY_PASTE_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SuggestionError {
    #[error("unknown suggestion {0}")]
    NotFound(SuggestionId),
    #[error("suggestion {id} is {status:?}, not pending")]
    NotPending { id: SuggestionId, status: Status },
    #[error("suggestion {0} no longer applies to the current document")]
    StaleSuggestion(SuggestionId),
    #[error("range {start}..{end} is outside a document of {len} characters")]
    RangeOutOfBounds { start: usize, end: usize, len: usize },
    #[error("pasting {len} characters exceeds the limit of {cap}")]
    PasteRejected { len: usize, cap: usize },
    #[error(transparent)]
    Provenance(#[from] ProvenanceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Accepted,
    Dismissed,
    ImplicitlyDismissed,
    Discarded,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Pending
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DismissReason {
    User,
    /// A newer suggestion overlapping this one replaced it.
    Superseded,
    DismissAll,
    CommentResolved,
    MarkerDeleted,
}

/// Which conversation or tool produced a suggestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum SuggestionSource {
    Chat,
    Comment(CommentId),
    Marker(MarkerId),
    Brainstorm(BrainstormId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionRecord {
    pub id: SuggestionId,
    pub edit: ExecutableEdit,
    /// Bound occurrence; absent for discarded edits.
    pub span: Option<OccurrenceSpan>,
    pub origin: ComponentTag,
    pub status: Status,
    pub created_at: Timestamp,
    pub resolved_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dismiss_reason: Option<DismissReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SuggestionSource>,
    #[serde(default)]
    pub verification: Option<Label>,
    /// Ground-truth inaccuracy mark supplied by scripted providers.
    #[serde(default)]
    pub inaccurate: bool,
}

impl SuggestionRecord {
    pub fn is_pending(&self) -> bool {
        self.status == Status::Pending
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnderlineStyle {
    Solid,
    Dotted,
    Dashed,
    Wavy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerDef {
    pub id: MarkerId,
    pub name: String,
    pub underline_style: UnderlineStyle,
    pub color: String,
    #[serde(default)]
    pub description: Option<String>,
    pub visible: bool,
}

impl MarkerDef {
    pub fn origin(&self) -> ComponentTag {
        ComponentTag::with_sub(Component::Marker, self.name.clone())
    }
}

/// The markers every new document starts with.
pub fn default_markers() -> Vec<MarkerDef> {
    let marker = |id, name: &str, style, color: &str, description: &str| MarkerDef {
        id: MarkerId(id),
        name: name.to_owned(),
        underline_style: style,
        color: color.to_owned(),
        description: Some(description.to_owned()),
        visible: true,
    };
    vec![
        marker(1, "Typos", UnderlineStyle::Wavy, "#d32f2f", "Fix spelling, grammar and punctuation mistakes."),
        marker(2, "Professional", UnderlineStyle::Solid, "#ef6c00", "Make the wording suitable for a business audience."),
        marker(3, "Formal", UnderlineStyle::Dotted, "#1565c0", "Raise the register: no slang, contractions or casual greetings."),
    ]
}

/// New span of a pending suggestion after a content change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rebind {
    pub id: SuggestionId,
    pub span: OccurrenceSpan,
}

/// One fact about the suggestion state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum Change {
    Submitted { records: Vec<SuggestionRecord> },
    Discarded { records: Vec<SuggestionRecord> },
    Dismissed { ids: Vec<SuggestionId>, reason: DismissReason },
    /// User-originated content change; splices apply in order.
    ContentEdited { splices: Vec<Splice>, rebound: Vec<Rebind> },
    Accepted { id: SuggestionId, rebound: Vec<Rebind> },
    ImplicitlyDismissed { ids: Vec<SuggestionId> },
}

/// A status change reported by [`SuggestionManager::revalidate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transition {
    ImplicitlyDismissed(SuggestionId),
    Rebound { id: SuggestionId, from: OccurrenceSpan, to: OccurrenceSpan },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionManager {
    pub doc: DocumentText,
    pub provenance: ProvenanceSnapshot,
    records: BTreeMap<SuggestionId, SuggestionRecord>,
    next_id: u64,
    /// Longest accepted manual insertion, when study mode is on.
    pub paste_cap: Option<usize>,
}

/// Extra data attached to a batch of submitted edits.
#[derive(Debug, Clone, Default)]
pub struct SubmitOptions {
    pub source: Option<SuggestionSource>,
    /// Indices of edits marked inaccurate by the provider fixture.
    pub inaccurate: Vec<usize>,
    /// Bind to this span instead of searching (brainstorm selections).
    pub bind_to: Option<OccurrenceSpan>,
}

fn touches(splice: &Splice, span: &OccurrenceSpan) -> bool {
    if splice.start == splice.end {
        span.start < splice.start && splice.start < span.end
    } else {
        splice.start < span.end && span.start < splice.end
    }
}

impl SuggestionManager {
    pub fn new(content: impl Into<String>) -> Self {
        let doc = DocumentText::new(content);
        SuggestionManager {
            provenance: ProvenanceSnapshot::user(doc.version_id, doc.content.clone()),
            doc,
            records: BTreeMap::new(),
            next_id: 1,
            paste_cap: None,
        }
    }

    pub fn get(&self, id: SuggestionId) -> Option<&SuggestionRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &SuggestionRecord> {
        self.records.values()
    }

    pub fn pending(&self) -> impl Iterator<Item = &SuggestionRecord> {
        self.records.values().filter(|r| r.is_pending())
    }

    pub(crate) fn set_verification(&mut self, id: SuggestionId, label: Label) {
        if let Some(r) = self.records.get_mut(&id) {
            r.verification = Some(label);
        }
    }

    fn record(&self, id: SuggestionId) -> Result<&SuggestionRecord, SuggestionError> {
        self.records.get(&id).ok_or(SuggestionError::NotFound(id))
    }

    // ---- planning -------------------------------------------------------

    pub fn plan_submit(
        &self,
        edits: &[ExecutableEdit],
        origin: &ComponentTag,
        opts: &SubmitOptions,
        at: Timestamp,
    ) -> Vec<Change> {
        let mut next = self.next_id;
        let mut pending: Vec<(SuggestionId, OccurrenceSpan)> = self
            .pending()
            .filter_map(|r| r.span.map(|s| (r.id, s)))
            .collect();
        let mut superseded = Vec::new();
        let mut created = Vec::new();
        let mut discarded = Vec::new();

        for (index, edit) in edits.iter().enumerate() {
            let mut record = |span: Option<OccurrenceSpan>, status| {
                let id = SuggestionId(next);
                next += 1;
                SuggestionRecord {
                    id,
                    edit: edit.clone(),
                    span,
                    origin: origin.clone(),
                    status,
                    created_at: at,
                    resolved_at: (status != Status::Pending).then_some(at),
                    dismiss_reason: None,
                    source: opts.source,
                    verification: None,
                    inaccurate: opts.inaccurate.contains(&index),
                }
            };
            let bound: Vec<OccurrenceSpan> = match opts.bind_to {
                Some(span) if self.doc.slice(&span) == Some(edit.original_text.as_str()) => {
                    vec![span]
                }
                _ => expand_edit(&self.doc, edit).into_iter().map(|(_, s)| s).collect(),
            };
            if bound.is_empty() {
                discarded.push(record(None, Status::Discarded));
                continue;
            }
            for span in bound {
                // newest wins: retire every older pending suggestion it overlaps
                pending.retain(|(old, old_span)| {
                    let hit = old_span.overlaps(&span);
                    if hit {
                        superseded.push(*old);
                    }
                    !hit
                });
                let r = record(Some(span), Status::Pending);
                pending.push((r.id, span));
                created.push(r);
            }
        }

        // a suggestion created and superseded within the same batch never
        // goes out as pending
        let (kept, replaced): (Vec<_>, Vec<_>) =
            created.into_iter().partition(|r| !superseded.contains(&r.id));
        superseded.retain(|id| !replaced.iter().any(|r| r.id == *id));

        let mut changes = Vec::new();
        if !superseded.is_empty() {
            changes.push(Change::Dismissed {
                ids: superseded,
                reason: DismissReason::Superseded,
            });
        }
        if !kept.is_empty() || !replaced.is_empty() {
            let mut records = kept;
            records.extend(replaced.into_iter().map(|mut r| {
                r.status = Status::Dismissed;
                r.resolved_at = Some(at);
                r.dismiss_reason = Some(DismissReason::Superseded);
                r
            }));
            records.sort_by_key(|r| r.id);
            changes.push(Change::Submitted { records });
        }
        if !discarded.is_empty() {
            changes.push(Change::Discarded { records: discarded });
        }
        changes
    }

    pub fn plan_manual_edit(
        &self,
        start: usize,
        end: usize,
        replacement: &str,
    ) -> Result<Vec<Change>, SuggestionError> {
        let len = self.doc.char_len();
        if start > end || end > len {
            return Err(SuggestionError::RangeOutOfBounds { start, end, len });
        }
        if let Some(cap) = self.paste_cap {
            let inserted = text::char_len(replacement);
            if inserted > cap {
                return Err(SuggestionError::PasteRejected { len: inserted, cap });
            }
        }
        Ok(self.plan_content(vec![Splice::new(start, end, replacement)]))
    }

    /// Replace the whole content, deriving the splices from the character
    /// alignment.
    pub fn plan_sync(&self, new_content: &str) -> Vec<Change> {
        let splices = align::splices_between(&self.doc.content, new_content);
        if splices.is_empty() {
            return Vec::new();
        }
        self.plan_content(splices)
    }

    fn plan_content(&self, splices: Vec<Splice>) -> Vec<Change> {
        let new_content = splices
            .iter()
            .try_fold(self.doc.content.clone(), |s, sp| sp.apply(&s))
            .expect("splices validated against the current content");
        let (rebound, dismissed) = self.plan_revalidation(&splices, None, &new_content);
        let mut changes = vec![Change::ContentEdited { splices, rebound }];
        if !dismissed.is_empty() {
            changes.push(Change::ImplicitlyDismissed { ids: dismissed });
        }
        changes
    }

    pub fn plan_accept(&self, id: SuggestionId) -> Result<Vec<Change>, SuggestionError> {
        let record = self.record(id)?;
        match record.status {
            Status::Pending => {}
            Status::ImplicitlyDismissed => return Err(SuggestionError::StaleSuggestion(id)),
            status => return Err(SuggestionError::NotPending { id, status }),
        }
        let span = record.span.ok_or(SuggestionError::StaleSuggestion(id))?;
        if self.doc.slice(&span) != Some(record.edit.original_text.as_str()) {
            return Err(SuggestionError::StaleSuggestion(id));
        }
        let splice = Splice::new(span.start, span.end, &record.edit.replace_text);
        let new_content = splice.apply(&self.doc.content).expect("span checked above");
        let (rebound, dismissed) =
            self.plan_revalidation(std::slice::from_ref(&splice), Some(id), &new_content);
        let mut changes = vec![Change::Accepted { id, rebound }];
        if !dismissed.is_empty() {
            changes.push(Change::ImplicitlyDismissed { ids: dismissed });
        }
        Ok(changes)
    }

    pub fn plan_dismiss(
        &self,
        ids: &[SuggestionId],
        reason: DismissReason,
    ) -> Result<Vec<Change>, SuggestionError> {
        for &id in ids {
            let r = self.record(id)?;
            if !r.is_pending() {
                return Err(SuggestionError::NotPending { id, status: r.status });
            }
        }
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        Ok(vec![Change::Dismissed {
            ids: ids.to_vec(),
            reason,
        }])
    }

    /// Where every pending suggestion lands once `splices` turn the current
    /// content into `new_content`. Spans the splices do not touch shift with
    /// the text; touched ones are re-bound to the first occurrence that stays
    /// disjoint from the other pending spans, or implicitly dismissed.
    pub fn plan_revalidation(
        &self,
        splices: &[Splice],
        exclude: Option<SuggestionId>,
        new_content: &str,
    ) -> (Vec<Rebind>, Vec<SuggestionId>) {
        let version_id = self.doc.version_id + 1;
        let mut kept: Vec<Rebind> = Vec::new();
        let mut touched = Vec::new();
        for r in self.pending().filter(|r| Some(r.id) != exclude) {
            let Some(mut span) = r.span else {
                touched.push(r);
                continue;
            };
            let mut hit = false;
            for sp in splices {
                if touches(sp, &span) {
                    hit = true;
                    break;
                }
                span.start = sp.map_start(span.start);
                span.end = sp.map_end(span.end);
            }
            if hit {
                touched.push(r);
            } else {
                span.version_id = version_id;
                kept.push(Rebind { id: r.id, span });
            }
        }
        let mut dismissed = Vec::new();
        for r in touched {
            let free = find_all(new_content, &r.edit.original_text)
                .into_iter()
                .map(|(start, end)| OccurrenceSpan { start, end, version_id })
                .find(|cand| kept.iter().all(|k| !k.span.overlaps(cand)));
            match free {
                Some(span) => kept.push(Rebind { id: r.id, span }),
                None => dismissed.push(r.id),
            }
        }
        kept.sort_by_key(|k| k.id);
        (kept, dismissed)
    }

    // ---- applying -------------------------------------------------------

    pub fn apply(&mut self, change: &Change, at: Timestamp) -> Result<(), SuggestionError> {
        match change {
            Change::Submitted { records } | Change::Discarded { records } => {
                for r in records {
                    self.next_id = self.next_id.max(r.id.0 + 1);
                    self.records.insert(r.id, r.clone());
                }
            }
            Change::Dismissed { ids, reason } => {
                for id in ids {
                    self.resolve(*id, Status::Dismissed, Some(*reason), at)?;
                }
            }
            Change::ImplicitlyDismissed { ids } => {
                for id in ids {
                    self.resolve(*id, Status::ImplicitlyDismissed, None, at)?;
                }
            }
            Change::ContentEdited { splices, rebound } => {
                for sp in splices {
                    self.splice(sp, CharProvenance::User)?;
                }
                self.bump_version();
                self.rebind(rebound);
            }
            Change::Accepted { id, rebound } => {
                let r = self.record(*id)?;
                let span = r.span.ok_or(SuggestionError::StaleSuggestion(*id))?;
                let splice = Splice::new(span.start, span.end, &r.edit.replace_text);
                let tag = CharProvenance::system(*id, r.edit.new_info);
                self.splice(&splice, tag)?;
                self.bump_version();
                self.resolve(*id, Status::Accepted, None, at)?;
                self.rebind(rebound);
            }
        }
        Ok(())
    }

    fn splice(&mut self, sp: &Splice, tag: CharProvenance) -> Result<(), SuggestionError> {
        let len = self.doc.char_len();
        if sp.start > sp.end || sp.end > len {
            return Err(SuggestionError::RangeOutOfBounds {
                start: sp.start,
                end: sp.end,
                len,
            });
        }
        self.provenance.apply_splice(sp, tag)?;
        self.doc.content.clone_from(&self.provenance.content);
        Ok(())
    }

    fn bump_version(&mut self) {
        self.doc.version_id += 1;
        self.provenance.version_id = self.doc.version_id;
    }

    fn rebind(&mut self, rebound: &[Rebind]) {
        for rb in rebound {
            if let Some(r) = self.records.get_mut(&rb.id) {
                r.span = Some(rb.span);
            }
        }
    }

    fn resolve(
        &mut self,
        id: SuggestionId,
        status: Status,
        reason: Option<DismissReason>,
        at: Timestamp,
    ) -> Result<(), SuggestionError> {
        let r = self.records.get_mut(&id).ok_or(SuggestionError::NotFound(id))?;
        if !r.is_pending() {
            return Err(SuggestionError::NotPending { id, status: r.status });
        }
        r.status = status;
        r.dismiss_reason = reason;
        r.resolved_at = Some(at);
        Ok(())
    }

    pub fn apply_all(&mut self, changes: &[Change], at: Timestamp) -> Result<(), SuggestionError> {
        for c in changes {
            self.apply(c, at)?;
        }
        Ok(())
    }

    // ---- direct operations ----------------------------------------------

    /// Bind and register a batch of edits; returns every record created,
    /// including discarded ones.
    pub fn submit_suggestions(
        &mut self,
        edits: &[ExecutableEdit],
        origin: &ComponentTag,
        opts: &SubmitOptions,
        at: Timestamp,
    ) -> Vec<SuggestionRecord> {
        let changes = self.plan_submit(edits, origin, opts, at);
        let mut ids: Vec<SuggestionId> = changes
            .iter()
            .flat_map(|c| match c {
                Change::Submitted { records } | Change::Discarded { records } => {
                    records.iter().map(|r| r.id).collect()
                }
                _ => Vec::new(),
            })
            .collect();
        ids.sort();
        self.apply_all(&changes, at).expect("planned against current state");
        ids.iter().map(|id| self.records[id].clone()).collect()
    }

    pub fn accept(&mut self, id: SuggestionId, at: Timestamp) -> Result<&DocumentText, SuggestionError> {
        match self.plan_accept(id) {
            Ok(changes) => {
                self.apply_all(&changes, at)?;
                Ok(&self.doc)
            }
            Err(SuggestionError::StaleSuggestion(id)) => {
                if self.record(id)?.is_pending() {
                    self.resolve(id, Status::ImplicitlyDismissed, None, at)?;
                }
                Err(SuggestionError::StaleSuggestion(id))
            }
            Err(e) => Err(e),
        }
    }

    pub fn dismiss(&mut self, id: SuggestionId, at: Timestamp) -> Result<&SuggestionRecord, SuggestionError> {
        let changes = self.plan_dismiss(&[id], DismissReason::User)?;
        self.apply_all(&changes, at)?;
        self.record(id)
    }

    /// Dismiss every pending suggestion matching `filter`.
    pub fn dismiss_all(
        &mut self,
        filter: impl Fn(&SuggestionRecord) -> bool,
        at: Timestamp,
    ) -> Vec<SuggestionId> {
        let ids: Vec<_> = self.pending().filter(|r| filter(r)).map(|r| r.id).collect();
        let changes = self
            .plan_dismiss(&ids, DismissReason::DismissAll)
            .expect("all ids pending");
        self.apply_all(&changes, at).expect("planned against current state");
        ids
    }

    /// Accept every pending suggestion matching `filter`, in document order.
    pub fn accept_all(
        &mut self,
        filter: impl Fn(&SuggestionRecord) -> bool,
        at: Timestamp,
    ) -> Vec<SuggestionId> {
        let mut accepted = Vec::new();
        while let Some(id) = self.next_in_document_order(&filter, &accepted) {
            if self.accept(id, at).is_ok() {
                accepted.push(id);
            }
        }
        accepted
    }

    pub fn next_in_document_order(
        &self,
        filter: impl Fn(&SuggestionRecord) -> bool,
        skip: &[SuggestionId],
    ) -> Option<SuggestionId> {
        self.pending()
            .filter(|r| filter(r) && !skip.contains(&r.id))
            .min_by_key(|r| (r.span.map(|s| s.start), r.id))
            .map(|r| r.id)
    }

    pub fn apply_manual_edit(
        &mut self,
        start: usize,
        end: usize,
        replacement: &str,
        at: Timestamp,
    ) -> Result<&DocumentText, SuggestionError> {
        let changes = self.plan_manual_edit(start, end, replacement)?;
        self.apply_all(&changes, at)?;
        Ok(&self.doc)
    }

    /// Re-check every pending suggestion against the current content.
    pub fn revalidate(&mut self, at: Timestamp) -> Vec<Transition> {
        let mut transitions = Vec::new();
        let mut kept: Vec<OccurrenceSpan> = Vec::new();
        let ids: Vec<_> = self.pending().map(|r| r.id).collect();
        let mut stale = Vec::new();
        for id in ids {
            let r = &self.records[&id];
            match r.span {
                Some(span) if self.doc.slice(&span) == Some(r.edit.original_text.as_str()) => {
                    kept.push(span)
                }
                _ => stale.push(id),
            }
        }
        for id in stale {
            let r = &self.records[&id];
            let free = find_all(&self.doc.content, &r.edit.original_text)
                .into_iter()
                .map(|(start, end)| OccurrenceSpan {
                    start,
                    end,
                    version_id: self.doc.version_id,
                })
                .find(|cand| kept.iter().all(|k| !k.overlaps(cand)));
            match free {
                Some(to) => {
                    let from = r.span.unwrap_or(to);
                    kept.push(to);
                    self.records.get_mut(&id).unwrap().span = Some(to);
                    transitions.push(Transition::Rebound { id, from, to });
                }
                None => {
                    self.resolve(id, Status::ImplicitlyDismissed, None, at).unwrap();
                    transitions.push(Transition::ImplicitlyDismissed(id));
                }
            }
        }
        transitions
    }

    /// Pairwise disjointness of pending spans and locatability of every
    /// pending original text.
    pub fn check_invariants(&self) -> Result<(), String> {
        let pending: Vec<_> = self.pending().collect();
        for (i, a) in pending.iter().enumerate() {
            let span = a.span.ok_or_else(|| format!("{} pending without span", a.id))?;
            if self.doc.slice(&span) != Some(a.edit.original_text.as_str()) {
                return Err(format!("{} bound to text that is not its original", a.id));
            }
            for b in &pending[i + 1..] {
                if b.span.is_some_and(|s| s.overlaps(&span)) {
                    return Err(format!("{} overlaps {}", a.id, b.id));
                }
            }
        }
        for r in self.records.values() {
            if r.resolved_at.is_some() != r.status.is_terminal() {
                return Err(format!("{} resolved_at inconsistent with {:?}", r.id, r.status));
            }
        }
        self.provenance.check().map_err(|e| e.to_string())?;
        if self.provenance.content != self.doc.content {
            return Err("provenance content diverged from document".into());
        }
        Ok(())
    }
}
