//! Per-character provenance.
//!
//! Every character of a document is tagged either user-originated or
//! system-originated (linked to the accepted suggestion that inserted it).
//! Tags follow characters through exact splices when the triggering command
//! is known, and through a character-level Levenshtein alignment when only
//! the new content is known ([`advance_snapshot`]).

use serde::{Deserialize, Serialize};

use crate::align::{edit_script, Step};
use crate::ids::SuggestionId;
use crate::text::{self, Splice};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProvenanceError {
    #[error("provenance length {tags} does not match content length {content}")]
    LengthMismatch { tags: usize, content: usize },
    #[error("range {start}..{end} is outside a document of {len} characters")]
    OutOfRange { start: usize, end: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum CharProvenance {
    User,
    System { edit_id: SuggestionId, new_info: bool },
}

impl CharProvenance {
    pub fn system(edit_id: SuggestionId, new_info: bool) -> Self {
        CharProvenance::System { edit_id, new_info }
    }

    pub fn is_system(&self) -> bool {
        matches!(self, CharProvenance::System { .. })
    }
}

/// Run of identical tags, the persisted form of a tag vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRun {
    pub len: usize,
    #[serde(flatten)]
    pub tag: CharProvenance,
}

pub fn encode_runs(tags: &[CharProvenance]) -> Vec<TagRun> {
    let mut runs: Vec<TagRun> = Vec::new();
    for tag in tags {
        match runs.last_mut() {
            Some(run) if run.tag == *tag => run.len += 1,
            _ => runs.push(TagRun { len: 1, tag: *tag }),
        }
    }
    runs
}

pub fn decode_runs(runs: &[TagRun]) -> Vec<CharProvenance> {
    runs.iter()
        .flat_map(|r| std::iter::repeat_n(r.tag, r.len))
        .collect()
}

/// Content of one document version together with its character tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StoredSnapshot", into = "StoredSnapshot")]
pub struct ProvenanceSnapshot {
    pub version_id: u64,
    pub content: String,
    pub tags: Vec<CharProvenance>,
}

#[derive(Serialize, Deserialize)]
struct StoredSnapshot {
    version_id: u64,
    content: String,
    tags: Vec<TagRun>,
}

impl From<ProvenanceSnapshot> for StoredSnapshot {
    fn from(s: ProvenanceSnapshot) -> Self {
        StoredSnapshot {
            tags: encode_runs(&s.tags),
            version_id: s.version_id,
            content: s.content,
        }
    }
}

impl TryFrom<StoredSnapshot> for ProvenanceSnapshot {
    type Error = ProvenanceError;

    fn try_from(s: StoredSnapshot) -> Result<Self, Self::Error> {
        let snap = ProvenanceSnapshot {
            tags: decode_runs(&s.tags),
            version_id: s.version_id,
            content: s.content,
        };
        snap.check()?;
        Ok(snap)
    }
}

/// A maximal run of system characters linked to one accepted edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracedSpan {
    pub start: usize,
    pub end: usize,
    pub edit_id: SuggestionId,
    pub new_info: bool,
}

impl ProvenanceSnapshot {
    /// A document whose every character is user-originated.
    pub fn user(version_id: u64, content: impl Into<String>) -> Self {
        let content = content.into();
        let tags = vec![CharProvenance::User; text::char_len(&content)];
        ProvenanceSnapshot {
            version_id,
            content,
            tags,
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn check(&self) -> Result<(), ProvenanceError> {
        let content = text::char_len(&self.content);
        if content == self.tags.len() {
            Ok(())
        } else {
            Err(ProvenanceError::LengthMismatch {
                tags: self.tags.len(),
                content,
            })
        }
    }

    /// Apply a splice whose inserted characters all receive `tag`.
    pub fn apply_splice(
        &mut self,
        splice: &Splice,
        tag: CharProvenance,
    ) -> Result<(), ProvenanceError> {
        let len = self.tags.len();
        let next = splice.apply(&self.content).filter(|_| splice.end <= len).ok_or(
            ProvenanceError::OutOfRange {
                start: splice.start,
                end: splice.end,
                len,
            },
        )?;
        self.content = next;
        self.tags.splice(
            splice.start..splice.end,
            std::iter::repeat_n(tag, splice.inserted_len()),
        );
        Ok(())
    }

    /// Retag exactly the characters in `[start, end)`.
    pub fn tag_insertion(
        &mut self,
        start: usize,
        end: usize,
        tag: CharProvenance,
    ) -> Result<(), ProvenanceError> {
        self.check()?;
        if start > end || end > self.tags.len() {
            return Err(ProvenanceError::OutOfRange {
                start,
                end,
                len: self.tags.len(),
            });
        }
        self.tags[start..end].fill(tag);
        Ok(())
    }

    pub fn trace_spans(&self) -> Vec<TracedSpan> {
        trace_spans(&self.tags)
    }
}

/// Carry tags from `prev` to `new_content` through the character alignment:
/// characters in equal runs keep their tag, inserted characters are
/// user-originated, deleted ones drop out. The version is bumped by one.
pub fn advance_snapshot(prev: &ProvenanceSnapshot, new_content: &str) -> ProvenanceSnapshot {
    let a: Vec<char> = prev.content.chars().collect();
    let b: Vec<char> = new_content.chars().collect();
    let mut tags = Vec::with_capacity(b.len());
    let mut i = 0;
    for step in edit_script(&a, &b) {
        match step {
            Step::Equal => {
                tags.push(prev.tags[i]);
                i += 1;
            }
            Step::Delete => i += 1,
            Step::Insert => tags.push(CharProvenance::User),
        }
    }
    ProvenanceSnapshot {
        version_id: prev.version_id + 1,
        content: new_content.to_owned(),
        tags,
    }
}

pub fn trace_spans(tags: &[CharProvenance]) -> Vec<TracedSpan> {
    let mut spans: Vec<TracedSpan> = Vec::new();
    for (pos, tag) in tags.iter().enumerate() {
        let CharProvenance::System { edit_id, new_info } = *tag else {
            continue;
        };
        match spans.last_mut() {
            Some(last) if last.end == pos && last.edit_id == edit_id => last.end += 1,
            _ => spans.push(TracedSpan {
                start: pos,
                end: pos + 1,
                edit_id,
                new_info,
            }),
        }
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    const S1: SuggestionId = SuggestionId(1);
    const S2: SuggestionId = SuggestionId(2);

    /// Explicit tagged-character array mutated in lockstep with each edit.
    #[derive(Clone)]
    struct Oracle(Vec<(char, Option<SuggestionId>)>);

    impl Oracle {
        fn new(s: &str) -> Self {
            Oracle(s.chars().map(|c| (c, None)).collect())
        }
        fn edit(&mut self, start: usize, end: usize, text: &str, by: Option<SuggestionId>) {
            self.0.splice(start..end, text.chars().map(|c| (c, by)));
        }
        fn content(&self) -> String {
            self.0.iter().map(|(c, _)| c).collect()
        }
        fn spans(&self) -> Vec<(usize, usize, SuggestionId)> {
            let mut out: Vec<(usize, usize, SuggestionId)> = Vec::new();
            for (i, (_, by)) in self.0.iter().enumerate() {
                if let Some(id) = by {
                    match out.last_mut() {
                        Some(last) if last.1 == i && last.2 == *id => last.1 += 1,
                        _ => out.push((i, i + 1, *id)),
                    }
                }
            }
            out
        }
    }

    fn spans(s: &ProvenanceSnapshot) -> Vec<(usize, usize, SuggestionId)> {
        s.trace_spans().iter().map(|t| (t.start, t.end, t.edit_id)).collect()
    }

    #[test]
    fn accept_tags_inserted_characters() {
        let mut snap = ProvenanceSnapshot::user(0, "a trip Paris");
        snap.apply_splice(&Splice::new(6, 6, " to"), CharProvenance::system(S1, false))
            .unwrap();
        assert_eq!(snap.content, "a trip to Paris");
        let system: Vec<_> = snap.tags.iter().filter(|t| t.is_system()).collect();
        assert_eq!(system.len(), 3);
        assert_eq!(spans(&snap), vec![(6, 9, S1)]);
    }

    #[test]
    fn manual_typing_is_user() {
        let mut snap = ProvenanceSnapshot::user(0, "hi");
        snap.apply_splice(&Splice::new(2, 2, "!"), CharProvenance::User).unwrap();
        assert_eq!(snap.tags, vec![CharProvenance::User; 3]);
    }

    #[test]
    fn deletion_only_accept_adds_no_tags() {
        let mut snap = ProvenanceSnapshot::user(0, "very very good");
        snap.apply_splice(&Splice::new(0, 5, ""), CharProvenance::system(S1, false))
            .unwrap();
        assert!(snap.trace_spans().is_empty());
    }

    #[test]
    fn tag_insertion_bounds() {
        let mut snap = ProvenanceSnapshot::user(0, "abc");
        assert!(snap.tag_insertion(1, 3, CharProvenance::system(S1, true)).is_ok());
        assert_eq!(spans(&snap), vec![(1, 3, S1)]);
        assert!(matches!(
            snap.tag_insertion(2, 4, CharProvenance::User),
            Err(ProvenanceError::OutOfRange { .. })
        ));
        snap.tags.pop();
        assert!(matches!(
            snap.tag_insertion(0, 1, CharProvenance::User),
            Err(ProvenanceError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn unchanged_content_keeps_tags() {
        let mut snap = ProvenanceSnapshot::user(4, "abc");
        snap.tags[1] = CharProvenance::system(S1, false);
        let next = advance_snapshot(&snap, "abc");
        assert_eq!(next.tags, snap.tags);
        assert_eq!(next.version_id, 5);
    }

    #[test]
    fn system_text_survives_insertion_before_it() {
        let base = "Visit Paris. ";
        let mut oracle = Oracle::new(base);
        let mut snap = ProvenanceSnapshot::user(0, base);
        let at = text::char_len(base);
        oracle.edit(at, at, "Eiffel Tower", Some(S1));
        snap.apply_splice(&Splice::new(at, at, "Eiffel Tower"), CharProvenance::system(S1, true))
            .unwrap();

        let insert = "It is lovely in spring. ";
        oracle.edit(13, 13, insert, None);
        let next = advance_snapshot(&snap, &oracle.content());
        assert_eq!(spans(&next), oracle.spans());
        assert_eq!(spans(&next), vec![(37, 49, S1)]);
    }

    #[test]
    fn retyped_character_becomes_user() {
        let mut oracle = Oracle::new("The ");
        oracle.edit(4, 4, "Eiffel Tower", Some(S1));
        let mut snap = ProvenanceSnapshot::user(0, "The ");
        snap.apply_splice(&Splice::new(4, 4, "Eiffel Tower"), CharProvenance::system(S1, false))
            .unwrap();
        // replace "f" at 6 with "F"
        oracle.edit(6, 7, "F", None);
        let next = advance_snapshot(&snap, &oracle.content());
        assert_eq!(spans(&next), oracle.spans());
        assert_eq!(spans(&next), vec![(4, 6, S1), (7, 16, S1)]);
    }

    #[test]
    fn trace_examples() {
        assert!(ProvenanceSnapshot::user(0, "all mine").trace_spans().is_empty());

        let mut snap = ProvenanceSnapshot::user(0, "ab");
        snap.apply_splice(&Splice::new(1, 1, "XX"), CharProvenance::system(S1, false)).unwrap();
        snap.apply_splice(&Splice::new(4, 4, "YY"), CharProvenance::system(S2, true)).unwrap();
        assert_eq!(snap.content, "aXXbYY");
        let traced = snap.trace_spans();
        assert_eq!(traced.len(), 2);
        assert!(traced[1].new_info);

        let mut snap = ProvenanceSnapshot::user(0, "");
        snap.apply_splice(&Splice::new(0, 0, "abcd"), CharProvenance::system(S1, false)).unwrap();
        snap.apply_splice(&Splice::new(2, 2, "u"), CharProvenance::User).unwrap();
        assert_eq!(spans(&snap), vec![(0, 2, S1), (3, 5, S1)]);
    }

    #[test]
    fn adjacent_edits_stay_separate() {
        let mut snap = ProvenanceSnapshot::user(0, "");
        snap.apply_splice(&Splice::new(0, 0, "ab"), CharProvenance::system(S1, false)).unwrap();
        snap.apply_splice(&Splice::new(2, 2, "cd"), CharProvenance::system(S2, false)).unwrap();
        assert_eq!(spans(&snap), vec![(0, 2, S1), (2, 4, S2)]);
    }

    #[test]
    fn serialized_form_is_run_length_encoded() {
        let mut snap = ProvenanceSnapshot::user(3, "hello");
        snap.tags[3] = CharProvenance::system(S1, true);
        snap.tags[4] = CharProvenance::system(S1, true);
        let json = serde_json::to_value(&snap).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "version_id": 3,
                "content": "hello",
                "tags": [
                    {"len": 3, "origin": "user"},
                    {"len": 2, "origin": "system", "edit_id": "s1", "new_info": true}
                ]
            })
        );
        let back: ProvenanceSnapshot = serde_json::from_value(json).unwrap();
        assert_eq!(back, snap);

        let bad = serde_json::json!({"version_id": 0, "content": "hi", "tags": [{"len": 1, "origin": "user"}]});
        assert!(serde_json::from_value::<ProvenanceSnapshot>(bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        struct Op {
            at: usize,
            del: usize,
            text: String,
            system: bool,
        }

        fn op() -> impl Strategy<Value = Op> {
            (0usize..64, 0usize..6, "[a-e]{0,5}", any::<bool>())
                .prop_map(|(at, del, text, system)| Op { at, del, text, system })
        }

        proptest! {
            // With characters that never repeat, the alignment of a splice is
            // unique, so alignment-based advancement must agree with exact
            // tracking.
            #[test]
            fn alignment_agrees_with_oracle_on_distinct_chars(ops in proptest::collection::vec(op(), 1..20)) {
                let mut fresh = ('\u{4e00}'..).step_by(1);
                let base: String = (&mut fresh).take(10).collect();
                let mut oracle = Oracle::new(&base);
                let mut snap = ProvenanceSnapshot::user(0, &base);
                for (k, op) in ops.iter().enumerate() {
                    let len = oracle.0.len();
                    let start = op.at % (len + 1);
                    let end = (start + op.del).min(len);
                    let text: String = (&mut fresh).take(op.text.chars().count()).collect();
                    let id = SuggestionId(k as u64 + 1);
                    if op.system {
                        oracle.edit(start, end, &text, Some(id));
                        snap.apply_splice(&Splice::new(start, end, &text), CharProvenance::system(id, false)).unwrap();
                    } else {
                        oracle.edit(start, end, &text, None);
                        snap = advance_snapshot(&snap, &oracle.content());
                    }
                    prop_assert_eq!(spans(&snap), oracle.spans());
                    prop_assert!(snap.check().is_ok());
                }
            }

            #[test]
            fn run_encoding_roundtrips(bits in proptest::collection::vec(0u8..3, 0..50)) {
                let tags: Vec<_> = bits.iter().map(|b| match b {
                    0 => CharProvenance::User,
                    1 => CharProvenance::system(S1, false),
                    _ => CharProvenance::system(S2, true),
                }).collect();
                prop_assert_eq!(decode_runs(&encode_runs(&tags)), tags);
            }
        }
    }
}
