//! Linearized fact syntax.
//!
//! ```text
//! sequence := fact (WS '$' WS fact)*
//! fact     := '[' '(' field '#' field '#' field ')' WS '|' WS field WS '|' WS
//!             '(' field '#' field '#' field ')' ']'
//! field    := WS text-without-reserved-chars WS
//! ```
//!
//! `WS` is zero or more ASCII spaces. Canonical output puts exactly one space
//! around `#`, `|` and `$` and none just inside the parentheses:
//! `[(m # l # t) | r | (m # l # t)]`.
//!
//! [`parse_strict`] accepts only inputs that match `sequence` end to end.
//! [`parse_lenient`] scans for every match of [`FACT_PATTERN`] and reports
//! whatever lies between matches.

use crate::fact::{
    is_reserved, sort_facts, trim_field, EntityAnnotation, FieldError, GeneratedFact, SourceText,
};
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const GRAMMAR_EBNF: &str = r##"sequence := fact (WS "$" WS fact)*
fact     := "[" "(" field "#" field "#" field ")" WS "|" WS field WS "|" WS "(" field "#" field "#" field ")" "]"
field    := WS text WS          (* text: one or more characters other than [ ] ( ) | # $ *)
WS       := " "*"##;

/// Single-fact extraction pattern used by [`parse_lenient`].
pub const FACT_PATTERN: &str = concat!(
    r"\[\(([^\[\]()|#$]*)#([^\[\]()|#$]*)#([^\[\]()|#$]*)\) *",
    r"\|([^\[\]()|#$]*)\| *",
    r"\(([^\[\]()|#$]*)#([^\[\]()|#$]*)#([^\[\]()|#$]*)\)\]"
);

static FACT_RE: Lazy<Regex> = Lazy::new(|| Regex::new(FACT_PATTERN).expect("valid fact pattern"));

/// A full target sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinearizedSequence(pub String);

impl LinearizedSequence {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LinearizedSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<String> for LinearizedSequence {
    fn from(s: String) -> Self {
        LinearizedSequence(s)
    }
}

impl From<&str> for LinearizedSequence {
    fn from(s: &str) -> Self {
        LinearizedSequence(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinearizeError {
    #[error("fact {index}: field `{field}` contains reserved character {ch:?}")]
    DelimiterInField {
        index: usize,
        field: &'static str,
        ch: char,
    },
    #[error("fact {index}: field `{field}` is empty")]
    EmptyField { index: usize, field: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected {expected}")]
    SyntaxError {
        offset: usize,
        expected: &'static str,
    },
    #[error("empty field at byte {offset}")]
    EmptyField { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match *self {
            ParseError::SyntaxError { offset, .. } | ParseError::EmptyField { offset } => offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSpan {
    pub start: usize,
    pub end: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    /// Facts extracted from the sequence.
    pub recovered_count: usize,
    /// Non-overlapping, ascending.
    pub skipped_spans: Vec<SkippedSpan>,
}

impl ParseDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.skipped_spans.is_empty()
    }
}

fn write_annotation(out: &mut String, a: &EntityAnnotation) {
    out.push('(');
    out.push_str(&a.mention);
    out.push_str(" # ");
    out.push_str(&a.label);
    out.push_str(" # ");
    out.push_str(&a.type_label);
    out.push(')');
}

/// Canonical form of a single fact, without reordering.
pub fn fact_to_string(fact: &GeneratedFact) -> String {
    let mut out = String::with_capacity(64);
    write_fact(&mut out, fact);
    out
}

fn write_fact(out: &mut String, fact: &GeneratedFact) {
    out.push('[');
    write_annotation(out, &fact.subject);
    out.push_str(" | ");
    out.push_str(&fact.relation);
    out.push_str(" | ");
    write_annotation(out, &fact.object);
    out.push(']');
}

/// Joins facts in the given order. Callers are responsible for validation.
pub(crate) fn join_facts(facts: &[GeneratedFact]) -> String {
    let mut out = String::new();
    for (i, fact) in facts.iter().enumerate() {
        if i > 0 {
            out.push_str(" $ ");
        }
        write_fact(&mut out, fact);
    }
    out
}

/// Sorts `facts` into appearance order for `text` and serializes them.
pub fn linearize(
    text: &SourceText,
    facts: &[GeneratedFact],
) -> Result<LinearizedSequence, LinearizeError> {
    for (index, fact) in facts.iter().enumerate() {
        fact.validate().map_err(|e| match e {
            FieldError::DelimiterInField { field, ch } => {
                LinearizeError::DelimiterInField { index, field, ch }
            }
            FieldError::EmptyField { field } => LinearizeError::EmptyField { index, field },
        })?;
    }
    Ok(LinearizedSequence(join_facts(&sort_facts(text, facts))))
}

struct Scanner<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Scanner {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn skip_spaces(&mut self) {
        while self.bytes.get(self.pos) == Some(&b' ') {
            self.pos += 1;
        }
    }

    fn expect(&mut self, byte: u8, expected: &'static str) -> Result<(), ParseError> {
        if self.bytes.get(self.pos) == Some(&byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError::SyntaxError {
                offset: self.pos,
                expected,
            })
        }
    }

    fn field(&mut self) -> Result<&'a str, ParseError> {
        let start = self.pos;
        // Reserved characters are ASCII, so byte scanning stays on char boundaries.
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii() && is_reserved(b as char) {
                break;
            }
            self.pos += 1;
        }
        let raw = &self.src[start..self.pos];
        let trimmed = trim_field(raw);
        if trimmed.is_empty() {
            return Err(ParseError::EmptyField { offset: start });
        }
        Ok(trimmed)
    }

    fn annotation(&mut self) -> Result<EntityAnnotation, ParseError> {
        self.expect(b'(', "'('")?;
        let mention = self.field()?;
        self.expect(b'#', "'#'")?;
        let label = self.field()?;
        self.expect(b'#', "'#'")?;
        let type_label = self.field()?;
        self.expect(b')', "')'")?;
        Ok(EntityAnnotation {
            mention: mention.to_owned(),
            label: label.to_owned(),
            type_label: type_label.to_owned(),
        })
    }

    fn fact(&mut self) -> Result<GeneratedFact, ParseError> {
        self.expect(b'[', "'['")?;
        let subject = self.annotation()?;
        self.skip_spaces();
        self.expect(b'|', "'|'")?;
        let relation = self.field()?;
        self.expect(b'|', "'|'")?;
        self.skip_spaces();
        let object = self.annotation()?;
        self.expect(b']', "']'")?;
        Ok(GeneratedFact {
            subject,
            relation: relation.to_owned(),
            object,
        })
    }
}

/// Parses a whole sequence, failing on the first deviation from the grammar.
///
/// Leading and trailing ASCII whitespace around the whole sequence is ignored.
pub fn parse_strict(seq: &str) -> Result<Vec<GeneratedFact>, ParseError> {
    let end = seq
        .trim_end_matches(|c: char| c.is_ascii_whitespace())
        .len();
    let mut sc = Scanner::new(&seq[..end]);
    while sc.bytes.get(sc.pos).is_some_and(u8::is_ascii_whitespace) {
        sc.pos += 1;
    }
    let mut facts = Vec::new();
    if sc.at_end() {
        return Ok(facts);
    }
    loop {
        facts.push(sc.fact()?);
        sc.skip_spaces();
        if sc.at_end() {
            return Ok(facts);
        }
        sc.expect(b'$', "'$' or end of input")?;
        sc.skip_spaces();
    }
}

#[derive(Clone, Copy)]
enum Gap {
    Leading,
    Middle,
    Trailing,
}

/// Classifies the text between matches. `None` means it is a legal separator.
fn gap_problem(gap: &str, at: Gap) -> Option<&'static str> {
    let ws_only = gap.bytes().all(|b| b.is_ascii_whitespace());
    match at {
        Gap::Leading | Gap::Trailing if ws_only => None,
        Gap::Middle if gap.trim_matches(' ') == "$" => None,
        Gap::Middle if ws_only => Some("missing-separator"),
        _ => Some("unparseable"),
    }
}

fn fact_from_captures(caps: &regex::Captures<'_>) -> Option<GeneratedFact> {
    let f = |i: usize| {
        let s = trim_field(caps.get(i).map_or("", |m| m.as_str()));
        (!s.is_empty()).then(|| s.to_owned())
    };
    Some(GeneratedFact {
        subject: EntityAnnotation {
            mention: f(1)?,
            label: f(2)?,
            type_label: f(3)?,
        },
        relation: f(4)?,
        object: EntityAnnotation {
            mention: f(5)?,
            label: f(6)?,
            type_label: f(7)?,
        },
    })
}

/// Extracts every well-formed fact in text order. Never fails.
pub fn parse_lenient(seq: &str) -> (Vec<GeneratedFact>, ParseDiagnostics) {
    let mut facts = Vec::new();
    let mut diag = ParseDiagnostics::default();
    let mut cursor = 0;
    let mut at = Gap::Leading;

    let skip = |diag: &mut ParseDiagnostics, start: usize, end: usize, reason: &str| {
        diag.skipped_spans.push(SkippedSpan {
            start,
            end,
            reason: reason.to_owned(),
        });
    };

    for caps in FACT_RE.captures_iter(seq) {
        let m = caps.get(0).expect("whole match");
        if let Some(reason) = gap_problem(&seq[cursor..m.start()], at) {
            skip(&mut diag, cursor, m.start(), reason);
        }
        match fact_from_captures(&caps) {
            Some(fact) => facts.push(fact),
            None => skip(&mut diag, m.start(), m.end(), "empty-field"),
        }
        cursor = m.end();
        at = Gap::Middle;
    }
    let tail = if matches!(at, Gap::Leading) {
        Gap::Leading
    } else {
        Gap::Trailing
    };
    if let Some(reason) = gap_problem(&seq[cursor..], tail) {
        skip(&mut diag, cursor, seq.len(), reason);
    }
    diag.recovered_count = facts.len();
    (facts, diag)
}
