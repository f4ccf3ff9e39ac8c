//! Warn, verify and audit.
//!
//! Edits flagged as adding new information carry a warning and a Verify
//! action. Verifying asks the provider for search queries; the author visits
//! some of them and assigns a label. The audit view highlights every
//! system-originated span of the latest version, colored by new-information
//! flag and verification label.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ids::{SuggestionId, Timestamp, VerificationId};
use crate::provenance::{ProvenanceSnapshot, TracedSpan};
use crate::suggestion::{Status, SuggestionRecord};

/// Shown next to the Accept/Dismiss menu of edits that add information.
pub const NEW_INFO_WARNING: &str = "Edit contains new unverified information";

/// Upper bound on generated search queries per verification.
pub const MAX_QUERIES: usize = 6;

pub const DEFAULT_SEARCH_URL: &str = "https://duckduckgo.com/?q={query}";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("query index {index} out of range for {len} queries")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
    #[error("suggestion {0} does not introduce new information and is not in the document")]
    NotVerifiable(SuggestionId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Verified,
    Incorrect,
    NotSure,
    NotEnoughTime,
    #[default]
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Verified => "verified",
            Label::Incorrect => "incorrect",
            Label::NotSure => "not_sure",
            Label::NotEnoughTime => "not_enough_time",
            Label::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = VerifyError;

    /// Labels a person can assign; `unlabeled` is not one of them.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        match norm.as_str() {
            "verified" => Ok(Label::Verified),
            "incorrect" => Ok(Label::Incorrect),
            "notsure" => Ok(Label::NotSure),
            "notenoughtime" => Ok(Label::NotEnoughTime),
            _ => Err(VerifyError::InvalidLabel(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighlightClass {
    NewInfoUnlabeled,
    NoNewInfo,
    Verified,
    Incorrect,
    NotSure,
}

impl HighlightClass {
    pub fn of(new_info: bool, label: Label) -> Self {
        match label {
            Label::Verified => HighlightClass::Verified,
            Label::Incorrect => HighlightClass::Incorrect,
            Label::NotSure => HighlightClass::NotSure,
            Label::NotEnoughTime | Label::Unlabeled if new_info => HighlightClass::NewInfoUnlabeled,
            Label::NotEnoughTime | Label::Unlabeled => HighlightClass::NoNewInfo,
        }
    }

    pub fn color(self) -> &'static str {
        match self {
            HighlightClass::NewInfoUnlabeled => "yellow",
            HighlightClass::NoNewInfo => "grey",
            HighlightClass::Verified => "green",
            HighlightClass::Incorrect => "red",
            HighlightClass::NotSure => "orange",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HighlightClass::NewInfoUnlabeled => "new_info_unlabeled",
            HighlightClass::NoNewInfo => "no_new_info",
            HighlightClass::Verified => "verified",
            HighlightClass::Incorrect => "incorrect",
            HighlightClass::NotSure => "not_sure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub id: VerificationId,
    pub suggestion_id: SuggestionId,
    pub initiated_at: Timestamp,
    pub queries: Vec<String>,
    pub visited: BTreeSet<usize>,
    pub label: Label,
    pub labeled_at: Option<Timestamp>,
    /// False when the label was assigned without generating queries.
    pub queries_opened: bool,
}

impl VerificationRecord {
    pub fn new(
        id: VerificationId,
        suggestion_id: SuggestionId,
        queries: Vec<String>,
        at: Timestamp,
    ) -> Self {
        VerificationRecord {
            id,
            suggestion_id,
            initiated_at: at,
            queries_opened: !queries.is_empty(),
            queries,
            visited: BTreeSet::new(),
            label: Label::Unlabeled,
            labeled_at: None,
        }
    }

    pub fn record_visit(&mut self, index: usize) -> Result<(), VerifyError> {
        if index >= self.queries.len() {
            return Err(VerifyError::IndexOutOfRange {
                index,
                len: self.queries.len(),
            });
        }
        self.visited.insert(index);
        Ok(())
    }

    pub fn assign_label(&mut self, label: Label, at: Timestamp) -> Result<(), VerifyError> {
        if label == Label::Unlabeled {
            return Err(VerifyError::InvalidLabel(label.to_string()));
        }
        self.label = label;
        self.labeled_at = Some(at);
        Ok(())
    }

    pub fn visited_fraction(&self) -> Option<f64> {
        (!self.queries.is_empty()).then(|| self.visited.len() as f64 / self.queries.len() as f64)
    }

    pub fn search_urls(&self, template: &str) -> Vec<String> {
        self.queries.iter().map(|q| search_url(template, q)).collect()
    }
}

/// Fill `{query}` in a search URL template with the form-encoded query.
pub fn search_url(template: &str, query: &str) -> String {
    let encoded: String = url::form_urlencoded::byte_serialize(query.as_bytes()).collect();
    template.replace("{query}", &encoded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MenuAction {
    Accept,
    Dismiss,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub text: String,
}

/// The warning for a pending suggestion, present iff it adds new information.
pub fn warn_check(record: &SuggestionRecord) -> Option<Warning> {
    (record.is_pending() && record.edit.new_info).then(|| Warning {
        text: NEW_INFO_WARNING.to_owned(),
    })
}

pub fn menu_actions(record: &SuggestionRecord) -> Vec<MenuAction> {
    let mut actions = vec![MenuAction::Accept, MenuAction::Dismiss];
    if record.edit.new_info {
        actions.push(MenuAction::Verify);
    }
    actions
}

/// Whether a verification may be started: new information at edit time, or
/// any system span still present at audit time.
pub fn can_verify(record: &SuggestionRecord, snapshot: &ProvenanceSnapshot) -> bool {
    (record.is_pending() && record.edit.new_info)
        || (record.status == Status::Accepted
            && snapshot.trace_spans().iter().any(|s| s.edit_id == record.id))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub edit_id: SuggestionId,
    pub new_info: bool,
    pub label: Label,
    pub highlight_class: HighlightClass,
}

/// Read-only rendering of the latest version with system content marked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditView {
    pub version_id: u64,
    pub content: String,
    pub spans: Vec<AuditSpan>,
}

/// Latest label per suggestion.
pub fn labels_by_suggestion<'a>(
    records: impl IntoIterator<Item = &'a VerificationRecord>,
) -> BTreeMap<SuggestionId, Label> {
    records
        .into_iter()
        .map(|r| (r.suggestion_id, r.label))
        .collect()
}

pub fn build_audit_view(
    snapshot: &ProvenanceSnapshot,
    labels: &BTreeMap<SuggestionId, Label>,
) -> AuditView {
    let chars: Vec<char> = snapshot.content.chars().collect();
    let spans = snapshot
        .trace_spans()
        .into_iter()
        .map(|TracedSpan { start, end, edit_id, new_info }| {
            let label = labels.get(&edit_id).copied().unwrap_or_default();
            AuditSpan {
                start,
                end,
                text: chars[start..end].iter().collect(),
                edit_id,
                new_info,
                label,
                highlight_class: HighlightClass::of(new_info, label),
            }
        })
        .collect();
    AuditView {
        version_id: snapshot.version_id,
        content: snapshot.content.clone(),
        spans,
    }
}

/// Share of ground-truth-inaccurate suggestions kept out of the document,
/// as a percentage. An edit counts as present while any character it
/// inserted survives; an accepted pure deletion counts as present.
pub fn metric_prevented<'a>(
    suggestions: impl IntoIterator<Item = &'a SuggestionRecord>,
    snapshot: &ProvenanceSnapshot,
) -> Option<f64> {
    let surviving: BTreeSet<SuggestionId> =
        snapshot.trace_spans().iter().map(|s| s.edit_id).collect();
    let mut suggested = 0usize;
    let mut present = 0usize;
    for r in suggestions {
        if !r.inaccurate || r.status == Status::Discarded {
            continue;
        }
        suggested += 1;
        let kept = if r.edit.replace_text.is_empty() {
            r.status == Status::Accepted
        } else {
            surviving.contains(&r.id)
        };
        if kept {
            present += 1;
        }
    }
    (suggested > 0).then(|| 100.0 * (suggested - present) as f64 / suggested as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub inaccurate_present: usize,
    pub detected: usize,
    /// Accurate edits labeled Incorrect.
    pub false_positives: usize,
}

impl DetectionCounts {
    pub fn percentage(&self) -> Option<f64> {
        (self.inaccurate_present > 0)
            .then(|| 100.0 * self.detected as f64 / self.inaccurate_present as f64)
    }
}

pub fn detection_counts(
    view: &AuditView,
    suggestions: &BTreeMap<SuggestionId, &SuggestionRecord>,
) -> DetectionCounts {
    let mut per_edit: BTreeMap<SuggestionId, Label> = BTreeMap::new();
    for span in &view.spans {
        per_edit.insert(span.edit_id, span.label);
    }
    let mut counts = DetectionCounts {
        inaccurate_present: 0,
        detected: 0,
        false_positives: 0,
    };
    for (id, label) in per_edit {
        let inaccurate = suggestions.get(&id).is_some_and(|r| r.inaccurate);
        match (inaccurate, label == Label::Incorrect) {
            (true, true) => {
                counts.inaccurate_present += 1;
                counts.detected += 1;
            }
            (true, false) => counts.inaccurate_present += 1,
            (false, true) => counts.false_positives += 1,
            (false, false) => {}
        }
    }
    counts
}

/// Share of inaccurate edits present in the audited document that were
/// labeled Incorrect, as a percentage.
pub fn metric_detected(
    view: &AuditView,
    suggestions: &BTreeMap<SuggestionId, &SuggestionRecord>,
) -> Option<f64> {
    detection_counts(view, suggestions).percentage()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationStats {
    pub count: usize,
    pub min_queries: Option<usize>,
    pub max_queries: Option<usize>,
    pub mean_queries: Option<f64>,
    /// Share of verifications where at least one query was visited.
    pub any_visited: Option<f64>,
    pub mean_visited: Option<f64>,
    pub mean_visited_fraction: Option<f64>,
    pub mean_seconds_to_label: Option<f64>,
    pub labeled_under_a_minute: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn verification_stats<'a>(
    records: impl IntoIterator<Item = &'a VerificationRecord>,
) -> VerificationStats {
    let with_queries: Vec<&VerificationRecord> =
        records.into_iter().filter(|r| r.queries_opened).collect();
    let queries: Vec<f64> = with_queries.iter().map(|r| r.queries.len() as f64).collect();
    let visited: Vec<f64> = with_queries.iter().map(|r| r.visited.len() as f64).collect();
    let fractions: Vec<f64> = with_queries.iter().filter_map(|r| r.visited_fraction()).collect();
    let durations: Vec<f64> = with_queries
        .iter()
        .filter(|r| !matches!(r.label, Label::Unlabeled | Label::NotEnoughTime))
        .filter_map(|r| r.labeled_at.map(|t| t.millis_since(r.initiated_at) as f64 / 1000.0))
        .collect();
    VerificationStats {
        count: with_queries.len(),
        min_queries: with_queries.iter().map(|r| r.queries.len()).min(),
        max_queries: with_queries.iter().map(|r| r.queries.len()).max(),
        mean_queries: mean(&queries),
        any_visited: mean(&visited.iter().map(|v| f64::from(u8::from(*v > 0.0))).collect::<Vec<_>>()),
        mean_visited: mean(&visited),
        mean_visited_fraction: mean(&fractions),
        mean_seconds_to_label: mean(&durations),
        labeled_under_a_minute: mean(
            &durations.iter().map(|d| f64::from(u8::from(*d < 60.0))).collect::<Vec<_>>(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edit::{Component, ComponentTag, ExecutableEdit};
    use crate::provenance::CharProvenance;
    use crate::text::Splice;

    fn record(id: u64, status: Status, new_info: bool, inaccurate: bool) -> SuggestionRecord {
        SuggestionRecord {
            id: SuggestionId(id),
            edit: ExecutableEdit::new("x", "fact", Component::Chat).new_info(new_info),
            span: None,
            origin: ComponentTag::new(Component::Chat),
            status,
            created_at: Timestamp(0),
            resolved_at: (status != Status::Pending).then_some(Timestamp(1)),
            dismiss_reason: None,
            source: None,
            verification: None,
            inaccurate,
        }
    }

    #[test]
    fn warning_only_for_new_info() {
        let r = record(1, Status::Pending, true, false);
        assert_eq!(warn_check(&r).unwrap().text, "Edit contains new unverified information");
        assert!(menu_actions(&r).contains(&MenuAction::Verify));
        let r = record(2, Status::Pending, false, false);
        assert!(warn_check(&r).is_none());
        assert_eq!(menu_actions(&r), vec![MenuAction::Accept, MenuAction::Dismiss]);
    }

    #[test]
    fn color_mapping_is_total() {
        let labels = [Label::Verified, Label::Incorrect, Label::NotSure, Label::NotEnoughTime, Label::Unlabeled];
        for new_info in [false, true] {
            for label in labels {
                let class = HighlightClass::of(new_info, label);
                assert_eq!(class, HighlightClass::of(new_info, label));
            }
        }
        assert_eq!(HighlightClass::of(true, Label::Unlabeled).color(), "yellow");
        assert_eq!(HighlightClass::of(false, Label::Unlabeled).color(), "grey");
        assert_eq!(HighlightClass::of(false, Label::Verified).color(), "green");
        assert_eq!(HighlightClass::of(true, Label::Incorrect).color(), "red");
        assert_eq!(HighlightClass::of(true, Label::NotSure).color(), "orange");
    }

    #[test]
    fn visits_and_labels() {
        let queries = vec!["a".into(), "b".into(), "c".into()];
        let mut v = VerificationRecord::new(VerificationId(1), SuggestionId(1), queries, Timestamp(0));
        v.record_visit(0).unwrap();
        v.record_visit(2).unwrap();
        v.record_visit(2).unwrap();
        assert!((v.visited_fraction().unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(v.record_visit(3), Err(VerifyError::IndexOutOfRange { index: 3, len: 3 }));
        assert!(v.labeled_at.is_none());
        v.assign_label(Label::Incorrect, Timestamp(44_000)).unwrap();
        assert_eq!(v.labeled_at, Some(Timestamp(44_000)));
        assert!(v.assign_label(Label::Unlabeled, Timestamp(1)).is_err());
        v.assign_label(Label::Verified, Timestamp(50_000)).unwrap();
        assert_eq!(v.label, Label::Verified);
    }

    #[test]
    fn label_parsing() {
        assert_eq!("Not Sure".parse::<Label>().unwrap(), Label::NotSure);
        assert_eq!("not_enough_time".parse::<Label>().unwrap(), Label::NotEnoughTime);
        assert_eq!("Verified".parse::<Label>().unwrap(), Label::Verified);
        assert!(matches!("maybe".parse::<Label>(), Err(VerifyError::InvalidLabel(_))));
        assert!("unlabeled".parse::<Label>().is_err());
    }

    #[test]
    fn search_urls_are_encoded() {
        assert_eq!(
            search_url(DEFAULT_SEARCH_URL, "where was sushi invented"),
            "https://duckduckgo.com/?q=where+was+sushi+invented"
        );
    }

    fn snapshot_with(edits: &[(u64, bool)]) -> ProvenanceSnapshot {
        let mut snap = ProvenanceSnapshot::user(0, "start");
        for &(id, new_info) in edits {
            let at = snap.len();
            snap.apply_splice(&Splice::new(at, at, " added"), CharProvenance::system(SuggestionId(id), new_info))
                .unwrap();
            snap.apply_splice(&Splice::new(at + 6, at + 6, " user"), CharProvenance::User)
                .unwrap();
        }
        snap
    }

    #[test]
    fn audit_view_examples() {
        let view = build_audit_view(&ProvenanceSnapshot::user(0, "all user"), &BTreeMap::new());
        assert!(view.spans.is_empty());

        let view = build_audit_view(&snapshot_with(&[(1, true)]), &BTreeMap::new());
        assert_eq!(view.spans.len(), 1);
        assert_eq!(view.spans[0].highlight_class, HighlightClass::NewInfoUnlabeled);
        assert_eq!(view.spans[0].text, " added");

        let labels = BTreeMap::from([(SuggestionId(1), Label::Verified)]);
        let view = build_audit_view(&snapshot_with(&[(1, false)]), &labels);
        assert_eq!(view.spans[0].highlight_class, HighlightClass::Verified);
    }

    #[test]
    fn prevented_worked_example() {
        // five inaccurate suggestions: three dismissed, two accepted and kept
        let snap = snapshot_with(&[(4, true), (5, true)]);
        let recs = vec![
            record(1, Status::Dismissed, true, true),
            record(2, Status::Dismissed, true, true),
            record(3, Status::Dismissed, true, true),
            record(4, Status::Accepted, true, true),
            record(5, Status::Accepted, true, true),
            record(6, Status::Accepted, false, false),
        ];
        assert_eq!(metric_prevented(&recs, &snap), Some(60.0));
    }

    #[test]
    fn prevented_edge_cases() {
        let snap = ProvenanceSnapshot::user(0, "x");
        assert_eq!(metric_prevented(&[record(1, Status::Accepted, false, false)], &snap), None);

        let snap = snapshot_with(&[(1, true), (2, true), (3, true), (4, true)]);
        let recs: Vec<_> = (1..=4).map(|i| record(i, Status::Accepted, true, true)).collect();
        assert_eq!(metric_prevented(&recs, &snap), Some(0.0));

        // accepted, then deleted by hand: prevented after all
        let snap = ProvenanceSnapshot::user(0, "x");
        assert_eq!(metric_prevented(&[record(1, Status::Accepted, true, true)], &snap), Some(100.0));
    }

    #[test]
    fn detected_worked_example() {
        let snap = snapshot_with(&[(1, true), (2, true), (3, true), (4, true), (5, false)]);
        let recs: Vec<_> = (1..=5).map(|i| record(i, Status::Accepted, true, i <= 4)).collect();
        let by_id: BTreeMap<_, _> = recs.iter().map(|r| (r.id, r)).collect();
        let mut labels = BTreeMap::new();
        for i in 1..=3 {
            labels.insert(SuggestionId(i), Label::Incorrect);
        }
        labels.insert(SuggestionId(4), Label::Verified);
        let view = build_audit_view(&snap, &labels);
        assert_eq!(metric_detected(&view, &by_id), Some(75.0));

        labels.insert(SuggestionId(4), Label::Incorrect);
        let view = build_audit_view(&snap, &labels);
        assert_eq!(metric_detected(&view, &by_id), Some(100.0));

        // accurate content labeled Incorrect is a false positive only
        labels.insert(SuggestionId(5), Label::Incorrect);
        let view = build_audit_view(&snap, &labels);
        let counts = detection_counts(&view, &by_id);
        assert_eq!(counts.percentage(), Some(100.0));
        assert_eq!(counts.false_positives, 1);

        let empty = build_audit_view(&ProvenanceSnapshot::user(0, "x"), &BTreeMap::new());
        assert_eq!(metric_detected(&empty, &by_id), None);
    }

    #[test]
    fn stats() {
        let mut a = VerificationRecord::new(VerificationId(1), SuggestionId(1), vec!["q".into(); 3], Timestamp(0));
        a.record_visit(0).unwrap();
        a.record_visit(1).unwrap();
        a.assign_label(Label::Verified, Timestamp(30_000)).unwrap();
        let mut b = VerificationRecord::new(VerificationId(2), SuggestionId(2), vec!["q".into()], Timestamp(0));
        b.assign_label(Label::Incorrect, Timestamp(90_000)).unwrap();
        let s = verification_stats([&a, &b]);
        assert_eq!(s.count, 2);
        assert_eq!((s.min_queries, s.max_queries), (Some(1), Some(3)));
        assert_eq!(s.mean_queries, Some(2.0));
        assert_eq!(s.any_visited, Some(0.5));
        assert_eq!(s.mean_seconds_to_label, Some(60.0));
        assert_eq!(s.labeled_under_a_minute, Some(0.5));
    }
}
