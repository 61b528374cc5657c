//! Turns id-level text/triple alignments into full training targets.
//!
//! Input rows carry a text and triples given as surface forms plus Wikidata
//! ids. Each id is resolved to its label, each entity to its type label, and
//! the resulting facts are linearized into the canonical target sequence.
//! Rows that cannot be fully resolved go to a reject stream with a reason.

use crate::fact::{EntityAnnotation, GeneratedFact, SourceText};
use crate::grammar::linearize;
use crate::link::InverseMaps;
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedEntity {
    pub surface: String,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedTriple {
    pub subject: AlignedEntity,
    /// Property id.
    pub relation: String,
    pub object: AlignedEntity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub id: String,
    pub text: String,
    pub triples: Vec<AlignedTriple>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedRow {
    pub id: String,
    pub text: String,
    pub facts: Vec<GeneratedFact>,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Enrichment {
    Enriched(EnrichedRow),
    Rejected(RejectedRow),
}

#[derive(Debug, Error)]
pub enum EnrichError {
    #[error("line {line}: malformed row: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn annotate(e: &AlignedEntity, maps: &InverseMaps) -> Result<EntityAnnotation, &'static str> {
    let label = maps
        .entity_labels
        .get(&e.id)
        .ok_or("unresolved-entity-id")?;
    let type_id = maps
        .entity_types
        .get(&e.id)
        .ok_or("unresolved-entity-type")?;
    let type_label = maps.type_label(type_id).ok_or("unresolved-type-id")?;
    EntityAnnotation::new(&e.surface, label, type_label).map_err(|_| "invalid-field")
}

/// Resolves one row, or returns the reject reason.
pub fn enrich_row(row: &AlignmentRow, maps: &InverseMaps) -> Result<EnrichedRow, &'static str> {
    let source = SourceText::new(row.id.clone(), row.text.clone()).map_err(|_| "empty-text")?;
    let facts = row
        .triples
        .iter()
        .map(|t| {
            let subject = annotate(&t.subject, maps)?;
            let object = annotate(&t.object, maps)?;
            let relation = maps
                .relation_labels
                .get(&t.relation)
                .ok_or("unresolved-relation-id")?;
            GeneratedFact::new(subject, relation, object).map_err(|_| "invalid-field")
        })
        .collect::<Result<Vec<_>, _>>()?;
    let target = linearize(&source, &facts).map_err(|_| "invalid-field")?;
    Ok(EnrichedRow {
        id: row.id.clone(),
        text: row.text.clone(),
        facts: crate::fact::sort_facts(&source, &facts),
        target: target.0,
    })
}

/// Streams line-delimited JSON alignment rows. Blank lines are skipped; a row
/// that is not valid JSON for [`AlignmentRow`] is an error.
pub fn enrich_alignments<'a, R: BufRead + 'a>(
    reader: R,
    maps: &'a InverseMaps,
) -> impl Iterator<Item = Result<Enrichment, EnrichError>> + 'a {
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(EnrichError::Io(e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        let row: AlignmentRow = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                return Some(Err(EnrichError::MalformedRow {
                    line: line_no,
                    message: e.to_string(),
                }))
            }
        };
        Some(Ok(match enrich_row(&row, maps) {
            Ok(e) => Enrichment::Enriched(e),
            Err(reason) => Enrichment::Rejected(RejectedRow {
                line: line_no,
                id: row.id,
                reason: reason.to_owned(),
            }),
        }))
    })
}
