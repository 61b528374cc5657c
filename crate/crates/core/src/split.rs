//! Rule-based sentence splitting.
//!
//! A boundary is a run of `.`, `!` or `?`, optionally followed by closing
//! quotes or brackets, then whitespace, then an uppercase letter or a digit
//! (possibly behind opening quotes or brackets).
//! A lone `.` after a known abbreviation is not a boundary.

use crate::fact::SourceText;
use std::ops::Range;

/// Lowercased, without the trailing dot.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "al", "approx", "ca", "cf", "co", "corp", "dept", "dr", "e.g", "eq", "est", "fig", "figs",
    "i.e", "inc", "jr", "ltd", "mr", "mrs", "ms", "no", "nos", "p", "pp", "prof", "ref", "refs",
    "sec", "sr", "st", "vol", "vs",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '\u{2019}', '\u{201D}', '\u{00BB}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '{', '\u{2018}', '\u{201C}', '\u{00AB}'];

pub trait SentenceSplitter: Send + Sync {
    /// Byte ranges of the sentences, in order, non-overlapping, each trimmed
    /// of surrounding whitespace. Bytes outside every range are whitespace.
    fn split(&self, text: &str) -> Vec<Range<usize>>;
}

#[derive(Debug, Clone)]
pub struct RuleSplitter {
    pub abbreviations: Vec<String>,
    /// Treat `X.` for a single letter X as an initial, not a boundary.
    pub single_letter_abbreviations: bool,
}

impl Default for RuleSplitter {
    fn default() -> Self {
        RuleSplitter {
            abbreviations: DEFAULT_ABBREVIATIONS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            single_letter_abbreviations: true,
        }
    }
}

impl RuleSplitter {
    fn is_abbreviation(&self, word: &str) -> bool {
        let word = word.trim_start_matches(OPENERS);
        let mut chars = word.chars();
        if self.single_letter_abbreviations {
            if let (Some(c), None) = (chars.next(), chars.next()) {
                if c.is_alphabetic() {
                    return true;
                }
            }
        }
        let lower = word.to_lowercase();
        self.abbreviations.contains(&lower)
    }
}

impl SentenceSplitter for RuleSplitter {
    fn split(&self, text: &str) -> Vec<Range<usize>> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let byte_at = |i: usize| chars.get(i).map_or(text.len(), |c| c.0);
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        let mut word_start = 0;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i].1;
            if c.is_whitespace() {
                i += 1;
                word_start = i;
                continue;
            }
            if start.is_none() {
                start = Some(i);
                word_start = i;
            }
            if !matches!(c, '.' | '!' | '?') {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?') {
                j += 1;
            }
            let lone_dot = j == i + 1 && c == '.';
            while j < chars.len() && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let mut m = k;
            while m < chars.len() && OPENERS.contains(&chars[m].1) {
                m += 1;
            }
            let boundary = k > j
                && m < chars.len()
                && (chars[m].1.is_uppercase() || chars[m].1.is_ascii_digit())
                && !(lone_dot && self.is_abbreviation(&text[byte_at(word_start)..byte_at(i)]));
            if boundary {
                out.push(byte_at(start.take().unwrap_or(i))..byte_at(j));
                word_start = k;
                i = k;
            } else {
                i = j;
            }
        }
        if let Some(s) = start {
            let end = text.trim_end().len();
            out.push(byte_at(s)..end);
        }
        out
    }
}

/// Splits `text` and numbers the sentences `{doc_id}:{index}`.
pub fn split_sentences(
    splitter: &dyn SentenceSplitter,
    doc_id: &str,
    text: &str,
) -> Vec<SourceText> {
    splitter
        .split(text)
        .into_iter()
        .enumerate()
        .map(|(i, r)| SourceText {
            id: format!("{doc_id}:{i}"),
            text: text[r].to_owned(),
        })
        .collect()
}
