//! Levenshtein alignment at word and character granularity.
//!
//! Both granularities share one dynamic program with unit costs for
//! insertion, deletion and substitution. A substitution is always reported
//! as a deletion followed by an insertion. When several alignments are
//! optimal the backtrace prefers, in order: match, delete, insert,
//! substitute. Within each gap between equal runs, deletions are emitted
//! before insertions.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Equal,
    Insert,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Word,
    Character,
}

/// A maximal run of one operation.
///
/// Word spans keep the whitespace that precedes each token, so the texts of
/// the equal and delete spans concatenate to the source exactly.
/// [`AlignmentSpan::display_text`] drops that whitespace for rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentSpan {
    pub op: Op,
    pub text: String,
    pub granularity: Granularity,
}

impl AlignmentSpan {
    pub fn display_text(&self) -> &str {
        match self.granularity {
            Granularity::Word => self.text.trim(),
            Granularity::Character => &self.text,
        }
    }
}

/// One step of an element-wise edit script.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    Equal,
    Delete,
    Insert,
}

/// Minimal unit-cost edit script between two sequences, canonicalized so
/// each gap lists its deletions before its insertions.
pub(crate) fn edit_script<T: PartialEq>(a: &[T], b: &[T]) -> Vec<Step> {
    // Common prefix and suffix never change the optimal cost.
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let (a_mid, b_mid) = (&a[prefix..], &b[prefix..]);
    let suffix = a_mid
        .iter()
        .rev()
        .zip(b_mid.iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let a_mid = &a_mid[..a_mid.len() - suffix];
    let b_mid = &b_mid[..b_mid.len() - suffix];

    let mut steps = vec![Step::Equal; prefix];
    steps.extend(dp_script(a_mid, b_mid));
    steps.extend(std::iter::repeat_n(Step::Equal, suffix));
    canonicalize(steps)
}

fn dp_script<T: PartialEq>(a: &[T], b: &[T]) -> Vec<Step> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        let mut steps = vec![Step::Delete; n];
        steps.extend(std::iter::repeat_n(Step::Insert, m));
        return steps;
    }
    let w = m + 1;
    let mut d = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        d[j] = j as u32;
    }
    for i in 1..=n {
        d[i * w] = i as u32;
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + u32::from(a[i - 1] != b[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }

    let mut rev = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 && a[i - 1] == b[j - 1] && here == d[(i - 1) * w + j - 1] {
            rev.push(Step::Equal);
            i -= 1;
            j -= 1;
        } else if i > 0 && here == d[(i - 1) * w + j] + 1 {
            rev.push(Step::Delete);
            i -= 1;
        } else if j > 0 && here == d[i * w + j - 1] + 1 {
            rev.push(Step::Insert);
            j -= 1;
        } else {
            rev.push(Step::Insert);
            rev.push(Step::Delete);
            i -= 1;
            j -= 1;
        }
    }
    rev.reverse();
    rev
}

/// Reorder each gap between equal steps to deletes-then-inserts.
fn canonicalize(steps: Vec<Step>) -> Vec<Step> {
    let mut out = Vec::with_capacity(steps.len());
    let (mut dels, mut ins) = (0, 0);
    let flush = |out: &mut Vec<Step>, dels: &mut usize, ins: &mut usize| {
        out.extend(std::iter::repeat_n(Step::Delete, *dels));
        out.extend(std::iter::repeat_n(Step::Insert, *ins));
        *dels = 0;
        *ins = 0;
    };
    for step in steps {
        match step {
            Step::Delete => dels += 1,
            Step::Insert => ins += 1,
            Step::Equal => {
                flush(&mut out, &mut dels, &mut ins);
                out.push(Step::Equal);
            }
        }
    }
    flush(&mut out, &mut dels, &mut ins);
    out
}

/// Split on whitespace; each token carries the whitespace before it, and
/// trailing whitespace rides on the last token.
fn tokenize(s: &str) -> Vec<&str> {
    // cut where whitespace begins after a word, if another word follows
    let mut cuts = Vec::new();
    let mut pending_cut = None;
    let mut prev_ws = true;
    for (i, c) in s.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws {
            pending_cut = Some(i);
        } else if !ws && prev_ws {
            if let Some(cut) = pending_cut.take() {
                cuts.push(cut);
            }
        }
        prev_ws = ws;
    }
    if s.is_empty() {
        return Vec::new();
    }
    let mut tokens = Vec::with_capacity(cuts.len() + 1);
    let mut begin = 0;
    for cut in cuts {
        tokens.push(&s[begin..cut]);
        begin = cut;
    }
    tokens.push(&s[begin..]);
    tokens
}

fn spans_from_steps<T: AsRef<str>>(
    a: &[T],
    b: &[T],
    steps: &[Step],
    granularity: Granularity,
) -> Vec<AlignmentSpan> {
    let mut spans: Vec<AlignmentSpan> = Vec::new();
    let (mut i, mut j) = (0, 0);
    for step in steps {
        let (op, piece) = match step {
            Step::Equal => {
                i += 1;
                j += 1;
                (Op::Equal, a[i - 1].as_ref())
            }
            Step::Delete => {
                i += 1;
                (Op::Delete, a[i - 1].as_ref())
            }
            Step::Insert => {
                j += 1;
                (Op::Insert, b[j - 1].as_ref())
            }
        };
        match spans.last_mut() {
            Some(last) if last.op == op => last.text.push_str(piece),
            _ => spans.push(AlignmentSpan {
                op,
                text: piece.to_owned(),
                granularity,
            }),
        }
    }
    spans
}

pub fn word_align(source: &str, target: &str) -> Vec<AlignmentSpan> {
    let a = tokenize(source);
    let b = tokenize(target);
    let steps = edit_script(&a, &b);
    spans_from_steps(&a, &b, &steps, Granularity::Word)
}

pub fn char_align(source: &str, target: &str) -> Vec<AlignmentSpan> {
    let a: Vec<char> = source.chars().collect();
    let b: Vec<char> = target.chars().collect();
    let steps = edit_script(&a, &b);
    let mut buf = [0u8; 4];
    let a_s: Vec<String> = a.iter().map(|c| c.encode_utf8(&mut buf).to_owned()).collect();
    let b_s: Vec<String> = b.iter().map(|c| c.encode_utf8(&mut buf).to_owned()).collect();
    spans_from_steps(&a_s, &b_s, &steps, Granularity::Character)
}

/// Character-level Levenshtein distance (two-row DP after trimming the
/// common prefix and suffix).
pub fn levenshtein(source: &str, target: &str) -> usize {
    let a: Vec<char> = source.chars().collect();
    let b: Vec<char> = target.chars().collect();
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);
    if a.is_empty() || b.is_empty() {
        return a.len().max(b.len());
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(ca != cb))
                .min(prev[j + 1] + 1)
                .min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit cost implied by a span list: each gap between equal runs costs the
/// larger of its deleted and inserted lengths, since substitutions pair up.
pub fn implied_cost(spans: &[AlignmentSpan]) -> usize {
    let unit = |s: &AlignmentSpan| match s.granularity {
        Granularity::Character => s.text.chars().count(),
        Granularity::Word => tokenize(&s.text).len(),
    };
    let mut total = 0;
    let (mut dels, mut ins) = (0, 0);
    for span in spans {
        match span.op {
            Op::Delete => dels += unit(span),
            Op::Insert => ins += unit(span),
            Op::Equal => {
                total += dels.max(ins);
                dels = 0;
                ins = 0;
            }
        }
    }
    total + dels.max(ins)
}

pub fn source_text(spans: &[AlignmentSpan]) -> String {
    spans
        .iter()
        .filter(|s| s.op != Op::Insert)
        .map(|s| s.text.as_str())
        .collect()
}

pub fn target_text(spans: &[AlignmentSpan]) -> String {
    spans
        .iter()
        .filter(|s| s.op != Op::Delete)
        .map(|s| s.text.as_str())
        .collect()
}

/// The character alignment of `old` to `new` as splices in `old`
/// coordinates, rightmost first so they can be applied in order.
pub fn splices_between(old: &str, new: &str) -> Vec<crate::text::Splice> {
    let a: Vec<char> = old.chars().collect();
    let b: Vec<char> = new.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut gap: Option<(usize, usize, String)> = None;
    for step in edit_script(&a, &b) {
        match step {
            Step::Equal => {
                if let Some((start, end, text)) = gap.take() {
                    out.push(crate::text::Splice::new(start, end, text));
                }
                i += 1;
                j += 1;
            }
            Step::Delete => {
                gap.get_or_insert_with(|| (i, i, String::new())).1 = i + 1;
                i += 1;
            }
            Step::Insert => {
                gap.get_or_insert_with(|| (i, i, String::new())).2.push(b[j]);
                j += 1;
            }
        }
    }
    if let Some((start, end, text)) = gap {
        out.push(crate::text::Splice::new(start, end, text));
    }
    out.reverse();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayStyle {
    Plain,
    Strike,
    Insert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayInstruction {
    pub style: DisplayStyle,
    pub text: String,
}

/// Display script for a suggestion: plain text for equal runs,
/// strike-through for deletions, highlight for insertions. The inline view
/// embeds it in the text; the hover view shows it in an overlay.
pub fn render_alignment(spans: &[AlignmentSpan]) -> Vec<DisplayInstruction> {
    spans
        .iter()
        .filter(|s| !s.display_text().is_empty())
        .map(|s| DisplayInstruction {
            style: match s.op {
                Op::Equal => DisplayStyle::Plain,
                Op::Delete => DisplayStyle::Strike,
                Op::Insert => DisplayStyle::Insert,
            },
            text: s.display_text().to_owned(),
        })
        .collect()
}

/// Terminal rendering: `[-deleted-]` and `{+inserted+}`.
pub fn render_text(script: &[DisplayInstruction]) -> String {
    script
        .iter()
        .map(|ins| match ins.style {
            DisplayStyle::Plain => ins.text.clone(),
            DisplayStyle::Strike => format!("[-{}-]", ins.text),
            DisplayStyle::Insert => format!("{{+{}+}}", ins.text),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ops(spans: &[AlignmentSpan]) -> Vec<(Op, &str)> {
        spans.iter().map(|s| (s.op, s.display_text())).collect()
    }

    /// Textbook full-matrix Levenshtein, kept separate from the
    /// implementation above.
    fn oracle(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in t.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            t[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let c = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                t[i][j] = (t[i - 1][j - 1] + c).min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
            }
        }
        t[a.len()][b.len()]
    }

    #[test]
    fn paris_word_alignment() {
        let spans = word_align("Lets plan a trip too Paris.", "Let's plan a trip to Paris.");
        assert_eq!(
            ops(&spans),
            vec![
                (Op::Delete, "Lets"),
                (Op::Insert, "Let's"),
                (Op::Equal, "plan a trip"),
                (Op::Delete, "too"),
                (Op::Insert, "to"),
                (Op::Equal, "Paris."),
            ]
        );
    }

    #[test]
    fn word_identity_and_substitution() {
        assert_eq!(ops(&word_align("same text", "same text")), vec![(Op::Equal, "same text")]);
        assert_eq!(
            ops(&word_align("big red dog", "big blue dog")),
            vec![
                (Op::Equal, "big"),
                (Op::Delete, "red"),
                (Op::Insert, "blue"),
                (Op::Equal, "dog"),
            ]
        );
    }

    #[test]
    fn word_reconstruction_keeps_whitespace() {
        let (a, b) = ("  one  two\tthree ", "one two  four\n");
        let spans = word_align(a, b);
        assert_eq!(source_text(&spans), a);
        assert_eq!(target_text(&spans), b);
    }

    #[test]
    fn char_examples() {
        assert_eq!(ops(&char_align("abc", "abc")), vec![(Op::Equal, "abc")]);
        assert_eq!(
            ops(&char_align("abc", "abXc")),
            vec![(Op::Equal, "ab"), (Op::Insert, "X"), (Op::Equal, "c")]
        );
        assert_eq!(ops(&char_align("", "hi")), vec![(Op::Insert, "hi")]);
        assert!(char_align("", "").is_empty());
    }

    #[test]
    fn substitution_is_delete_then_insert() {
        assert_eq!(
            ops(&char_align("cat", "cut")),
            vec![(Op::Equal, "c"), (Op::Delete, "a"), (Op::Insert, "u"), (Op::Equal, "t")]
        );
    }

    #[test]
    fn render_paris() {
        let script =
            render_alignment(&word_align("Lets plan a trip too Paris.", "Let's plan a trip to Paris."));
        let got: Vec<_> = script.iter().map(|i| (i.style, i.text.as_str())).collect();
        assert_eq!(
            got,
            vec![
                (DisplayStyle::Strike, "Lets"),
                (DisplayStyle::Insert, "Let's"),
                (DisplayStyle::Plain, "plan a trip"),
                (DisplayStyle::Strike, "too"),
                (DisplayStyle::Insert, "to"),
                (DisplayStyle::Plain, "Paris."),
            ]
        );
        assert_eq!(render_text(&script), "[-Lets-] {+Let's+} plan a trip [-too-] {+to+} Paris.");
    }

    #[test]
    fn render_trivial() {
        let plain = render_alignment(&word_align("hello", "hello"));
        assert_eq!(plain.len(), 1);
        assert_eq!(plain[0].style, DisplayStyle::Plain);
        let ins = render_alignment(&word_align("", "brand new"));
        assert_eq!(ins.len(), 1);
        assert_eq!(ins[0].style, DisplayStyle::Insert);
        assert_eq!(ins[0].text, "brand new");
    }

    #[test]
    fn levenshtein_matches_oracle_on_known_pairs() {
        for (a, b, d) in [("kitten", "sitting", 3), ("", "abc", 3), ("flaw", "lawn", 2), ("abc", "abc", 0)] {
            assert_eq!(levenshtein(a, b), d);
            assert_eq!(oracle(a, b), d);
            assert_eq!(implied_cost(&char_align(a, b)), d);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn char_align_is_optimal_and_reconstructs(a in "[abc]{0,30}", b in "[abc]{0,30}") {
                let spans = char_align(&a, &b);
                prop_assert_eq!(implied_cost(&spans), oracle(&a, &b));
                prop_assert_eq!(levenshtein(&a, &b), oracle(&a, &b));
                prop_assert_eq!(source_text(&spans), a.clone());
                prop_assert_eq!(target_text(&spans), b.clone());
                for w in spans.windows(2) {
                    prop_assert_ne!(w[0].op, w[1].op);
                }
            }

            #[test]
            fn splices_rebuild_target(a in "[abc]{0,20}", b in "[abc]{0,20}") {
                let mut cur = a.clone();
                for sp in splices_between(&a, &b) {
                    cur = sp.apply(&cur).unwrap();
                }
                prop_assert_eq!(cur, b);
            }

            #[test]
            fn word_align_reconstructs(a in "[ab ]{0,20}", b in "[ab ]{0,20}") {
                let spans = word_align(&a, &b);
                prop_assert_eq!(source_text(&spans), a.clone());
                prop_assert_eq!(target_text(&spans), b.clone());
                prop_assert_eq!(word_align(&a, &b), spans);
            }
        }
    }
}
