//! Helpers for working in Unicode scalar offsets.

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte offset of the `char_idx`-th scalar value; `s.len()` when `char_idx`
/// equals the character length. Returns `None` past the end.
pub fn byte_offset(s: &str, char_idx: usize) -> Option<usize> {
    if char_idx == 0 {
        return Some(0);
    }
    let mut seen = 0;
    for (byte, _) in s.char_indices() {
        if seen == char_idx {
            return Some(byte);
        }
        seen += 1;
    }
    (seen == char_idx).then_some(s.len())
}

/// Slice `s` by scalar offsets `[start, end)`.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_offset(s, start)?;
    let b1 = b0 + byte_offset(&s[b0..], end - start)?;
    Some(&s[b0..b1])
}

/// Replace scalar range `[start, end)` of `s` with `replacement`.
pub fn splice(s: &str, start: usize, end: usize, replacement: &str) -> Option<String> {
    if start > end {
        return None;
    }
    let b0 = byte_offset(s, start)?;
    let b1 = b0 + byte_offset(&s[b0..], end - start)?;
    let mut out = String::with_capacity(s.len() - (b1 - b0) + replacement.len());
    out.push_str(&s[..b0]);
    out.push_str(replacement);
    out.push_str(&s[b1..]);
    Some(out)
}

/// Replacement of scalar range `[start, end)` by `replacement`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Splice {
    pub start: usize,
    pub end: usize,
    pub replacement: String,
}

impl Splice {
    pub fn new(start: usize, end: usize, replacement: impl Into<String>) -> Self {
        Splice {
            start,
            end,
            replacement: replacement.into(),
        }
    }

    pub fn inserted_len(&self) -> usize {
        char_len(&self.replacement)
    }

    /// Change in document length caused by this splice.
    pub fn delta(&self) -> isize {
        self.inserted_len() as isize - (self.end - self.start) as isize
    }

    pub fn apply(&self, s: &str) -> Option<String> {
        splice(s, self.start, self.end, &self.replacement)
    }

    /// Where the start of a range lands after the splice. Text inserted at
    /// the range start falls outside the range.
    pub fn map_start(&self, pos: usize) -> usize {
        if pos < self.start {
            pos
        } else if pos >= self.end {
            (pos as isize + self.delta()) as usize
        } else {
            self.start
        }
    }

    /// Where the (exclusive) end of a range lands after the splice. Text
    /// inserted at the range end falls outside the range.
    pub fn map_end(&self, pos: usize) -> usize {
        if pos <= self.start {
            pos
        } else if pos >= self.end {
            (pos as isize + self.delta()) as usize
        } else {
            self.start + self.inserted_len()
        }
    }
}
