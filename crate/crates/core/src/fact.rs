//! Fact data types, distinctness keys and appearance-order sorting.
//!
//! A [`GeneratedFact`] is the unit read from and written to the linearized
//! target syntax: a subject and an object [`EntityAnnotation`] joined by a
//! relation label. Every text field is trimmed of leading and trailing ASCII
//! whitespace at construction and must be free of the grammar's reserved
//! characters.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Characters with a structural role in the linearized syntax.
pub const RESERVED_CHARS: [char; 7] = ['[', ']', '(', ')', '|', '#', '$'];

pub fn is_reserved(c: char) -> bool {
    RESERVED_CHARS.contains(&c)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("field `{field}` is empty")]
    EmptyField { field: &'static str },
    #[error("field `{field}` contains reserved character {ch:?}")]
    DelimiterInField { field: &'static str, ch: char },
}

fn check_field(field: &'static str, value: &str) -> Result<(), FieldError> {
    if value
        .trim_matches(|c: char| c.is_ascii_whitespace())
        .is_empty()
    {
        return Err(FieldError::EmptyField { field });
    }
    if let Some(ch) = value.chars().find(|&c| is_reserved(c)) {
        return Err(FieldError::DelimiterInField { field, ch });
    }
    Ok(())
}

pub(crate) fn trim_field(value: &str) -> &str {
    value.trim_matches(|c: char| c.is_ascii_whitespace())
}

/// One endpoint of a fact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawAnnotation", into = "RawAnnotation")]
pub struct EntityAnnotation {
    /// Surface form as it appears in the sentence.
    pub mention: String,
    /// Canonical entity label.
    pub label: String,
    /// Entity-type label.
    pub type_label: String,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    mention: String,
    label: String,
    #[serde(rename = "type")]
    type_label: String,
}

impl TryFrom<RawAnnotation> for EntityAnnotation {
    type Error = FieldError;

    fn try_from(raw: RawAnnotation) -> Result<Self, Self::Error> {
        EntityAnnotation::new(&raw.mention, &raw.label, &raw.type_label)
    }
}

impl From<EntityAnnotation> for RawAnnotation {
    fn from(a: EntityAnnotation) -> Self {
        RawAnnotation {
            mention: a.mention,
            label: a.label,
            type_label: a.type_label,
        }
    }
}

impl EntityAnnotation {
    pub fn new(mention: &str, label: &str, type_label: &str) -> Result<Self, FieldError> {
        check_field("mention", mention)?;
        check_field("label", label)?;
        check_field("type", type_label)?;
        Ok(EntityAnnotation {
            mention: trim_field(mention).to_owned(),
            label: trim_field(label).to_owned(),
            type_label: trim_field(type_label).to_owned(),
        })
    }

    /// Re-checks the field invariants. Fields are public, so a value may have
    /// been mutated after construction.
    pub fn validate(&self) -> Result<(), FieldError> {
        check_field("mention", &self.mention)?;
        check_field("label", &self.label)?;
        check_field("type", &self.type_label)
    }
}

/// A `(subject, relation, object)` fact with full semantic annotations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawFact", into = "RawFact")]
pub struct GeneratedFact {
    pub subject: EntityAnnotation,
    pub relation: String,
    pub object: EntityAnnotation,
}

#[derive(Serialize, Deserialize)]
struct RawFact {
    subject: EntityAnnotation,
    relation: String,
    object: EntityAnnotation,
}

impl TryFrom<RawFact> for GeneratedFact {
    type Error = FieldError;

    fn try_from(raw: RawFact) -> Result<Self, Self::Error> {
        GeneratedFact::new(raw.subject, &raw.relation, raw.object)
    }
}

impl From<GeneratedFact> for RawFact {
    fn from(f: GeneratedFact) -> Self {
        RawFact {
            subject: f.subject,
            relation: f.relation,
            object: f.object,
        }
    }
}

impl GeneratedFact {
    pub fn new(
        subject: EntityAnnotation,
        relation: &str,
        object: EntityAnnotation,
    ) -> Result<Self, FieldError> {
        check_field("relation", relation)?;
        Ok(GeneratedFact {
            subject,
            relation: trim_field(relation).to_owned(),
            object,
        })
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        self.subject.validate()?;
        check_field("relation", &self.relation)?;
        self.object.validate()
    }
}

impl fmt::Display for GeneratedFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({} | {} | {})",
            self.subject.label, self.relation, self.object.label
        )
    }
}

/// Which fields decide whether two facts are the same fact.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    /// All seven fields, mentions included.
    #[default]
    Full,
    /// Subject label, relation, object label.
    TripleOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactKey {
    pub mode: KeyMode,
    pub key: Vec<String>,
}

pub fn fact_key(fact: &GeneratedFact, mode: KeyMode) -> FactKey {
    let t = |s: &str| trim_field(s).to_owned();
    let key = match mode {
        KeyMode::Full => vec![
            t(&fact.subject.mention),
            t(&fact.subject.label),
            t(&fact.subject.type_label),
            t(&fact.relation),
            t(&fact.object.mention),
            t(&fact.object.label),
            t(&fact.object.type_label),
        ],
        KeyMode::TripleOnly => vec![
            t(&fact.subject.label),
            t(&fact.relation),
            t(&fact.object.label),
        ],
    };
    FactKey { mode, key }
}

/// A sentence handed to the generator, with a caller-supplied identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceText {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("source text `{0}` is empty")]
pub struct EmptySourceText(pub String);

impl SourceText {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, EmptySourceText> {
        let id = id.into();
        let text = text.into();
        if text.is_empty() {
            return Err(EmptySourceText(id));
        }
        Ok(SourceText { id, text })
    }

    /// Byte offset of the first exact occurrence of `mention`.
    pub fn position_of(&self, mention: &str) -> Option<usize> {
        self.text.find(mention)
    }
}

/// Orders facts by where their subject mention first occurs in the text,
/// breaking ties by the object mention. Facts whose subject mention does not
/// occur go last, in input order.
pub fn sort_facts(text: &SourceText, facts: &[GeneratedFact]) -> Vec<GeneratedFact> {
    let mut keyed: Vec<((usize, usize), &GeneratedFact)> = facts
        .iter()
        .map(|f| {
            let key = match text.position_of(&f.subject.mention) {
                Some(s) => (s, text.position_of(&f.object.mention).unwrap_or(usize::MAX)),
                None => (usize::MAX, usize::MAX),
            };
            (key, f)
        })
        .collect();
    // stable
    keyed.sort_by_key(|(k, _)| *k);
    keyed.into_iter().map(|(_, f)| f.clone()).collect()
}
