//! JSON and N-Triples output for linked, ranked facts.

use crate::fact::{EntityAnnotation, GeneratedFact};
use crate::link::{LinkKind, LinkedFact, Normalization};
use crate::rank::ScoredFact;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt::Write as _;
use thiserror::Error;

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
pub const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";

/// All facts extracted from one sentence, in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionDocument {
    pub sentence_id: String,
    pub sentence: String,
    pub facts: Vec<LinkedFact>,
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("invalid JSON document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid fact in document: {0}")]
    Field(#[from] crate::fact::FieldError),
    #[error("invalid IRI prefix `{0}`")]
    InvalidIri(String),
    #[error("`{id}` is not a valid {kind} id")]
    InvalidId { kind: LinkKind, id: String },
}

fn checked_id(kind: LinkKind, id: Option<String>) -> Result<Option<String>, EmitError> {
    match id {
        Some(id) if !kind.is_valid_id(&id) => Err(EmitError::InvalidId { kind, id }),
        id => Ok(id),
    }
}

#[derive(Serialize, Deserialize)]
struct JsonDocument {
    sentence_id: String,
    sentence: String,
    facts: Vec<JsonFact>,
}

#[derive(Serialize, Deserialize)]
struct JsonFact {
    score: f64,
    beam_count: usize,
    subject: JsonEntity,
    relation: JsonRelation,
    object: JsonEntity,
}

#[derive(Serialize, Deserialize)]
struct JsonEntity {
    mention: String,
    label: String,
    #[serde(rename = "type")]
    type_label: String,
    label_id: Option<String>,
    type_id: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct JsonRelation {
    label: String,
    id: Option<String>,
}

impl JsonEntity {
    fn new(a: &EntityAnnotation, label_id: &Option<String>, type_id: &Option<String>) -> Self {
        JsonEntity {
            mention: a.mention.clone(),
            label: a.label.clone(),
            type_label: a.type_label.clone(),
            label_id: label_id.clone(),
            type_id: type_id.clone(),
        }
    }
}

/// One compact JSON object, no trailing newline. Absent ids are `null`.
pub fn to_json(doc: &ExtractionDocument) -> String {
    let json = JsonDocument {
        sentence_id: doc.sentence_id.clone(),
        sentence: doc.sentence.clone(),
        facts: doc
            .facts
            .iter()
            .map(|lf| {
                let f = lf.generated();
                JsonFact {
                    score: lf.fact.score,
                    beam_count: lf.fact.beam_count,
                    subject: JsonEntity::new(&f.subject, &lf.subject_id, &lf.subject_type_id),
                    relation: JsonRelation {
                        label: f.relation.clone(),
                        id: lf.relation_id.clone(),
                    },
                    object: JsonEntity::new(&f.object, &lf.object_id, &lf.object_type_id),
                }
            })
            .collect(),
    };
    serde_json::to_string(&json).expect("document serializes")
}

pub fn from_json(text: &str) -> Result<ExtractionDocument, EmitError> {
    let json: JsonDocument = serde_json::from_str(text)?;
    let facts = json
        .facts
        .into_iter()
        .map(|jf| {
            let subject = EntityAnnotation::new(
                &jf.subject.mention,
                &jf.subject.label,
                &jf.subject.type_label,
            )?;
            let object =
                EntityAnnotation::new(&jf.object.mention, &jf.object.label, &jf.object.type_label)?;
            let fact = GeneratedFact::new(subject, &jf.relation.label, object)?;
            Ok(LinkedFact {
                fact: ScoredFact {
                    fact,
                    score: jf.score,
                    beam_count: jf.beam_count,
                },
                subject_id: checked_id(LinkKind::Entity, jf.subject.label_id)?,
                subject_type_id: checked_id(LinkKind::Type, jf.subject.type_id)?,
                relation_id: checked_id(LinkKind::Relation, jf.relation.id)?,
                object_id: checked_id(LinkKind::Entity, jf.object.label_id)?,
                object_type_id: checked_id(LinkKind::Type, jf.object.type_id)?,
            })
        })
        .collect::<Result<_, EmitError>>()?;
    Ok(ExtractionDocument {
        sentence_id: json.sentence_id,
        sentence: json.sentence,
        facts,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HashAlgorithm {
    #[default]
    Sha256,
}

/// How nodes and predicates are named in RDF output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IriPolicy {
    pub wikidata_entity_base: String,
    pub wikidata_property_base: String,
    /// Prefix for IRIs minted for labels with no Wikidata id.
    pub local_namespace: String,
    pub hash_algorithm: HashAlgorithm,
}

impl Default for IriPolicy {
    fn default() -> Self {
        IriPolicy {
            wikidata_entity_base: "http://www.wikidata.org/entity/".into(),
            wikidata_property_base: "http://www.wikidata.org/prop/direct/".into(),
            local_namespace: "http://example.org/kg/".into(),
            hash_algorithm: HashAlgorithm::Sha256,
        }
    }
}

fn iri_safe(s: &str) -> bool {
    s.contains(':')
        && s.chars().all(|c| {
            !(c <= ' ' || matches!(c, '<' | '>' | '"' | '{' | '}' | '|' | '^' | '`' | '\\'))
        })
}

impl IriPolicy {
    pub fn new(
        wikidata_entity_base: &str,
        wikidata_property_base: &str,
        local_namespace: &str,
    ) -> Result<Self, EmitError> {
        for base in [
            wikidata_entity_base,
            wikidata_property_base,
            local_namespace,
        ] {
            if !iri_safe(base) {
                return Err(EmitError::InvalidIri(base.to_owned()));
            }
        }
        Ok(IriPolicy {
            wikidata_entity_base: wikidata_entity_base.into(),
            wikidata_property_base: wikidata_property_base.into(),
            local_namespace: local_namespace.into(),
            hash_algorithm: HashAlgorithm::Sha256,
        })
    }

    /// Local IRI for a label with no Wikidata id: a hash of the normalized label.
    pub fn mint(&self, kind: LinkKind, label: &str) -> String {
        let normalized = Normalization::default().apply(label);
        let digest = match self.hash_algorithm {
            HashAlgorithm::Sha256 => Sha256::digest(normalized.as_bytes()),
        };
        let mut iri = format!("{}{}/", self.local_namespace, kind.as_str());
        for b in &digest[..16] {
            write!(iri, "{b:02x}").expect("write to string");
        }
        iri
    }

    fn node(&self, kind: LinkKind, id: &Option<String>, label: &str) -> String {
        match id {
            Some(id) if kind == LinkKind::Relation => {
                format!("{}{}", self.wikidata_property_base, id)
            }
            Some(id) => format!("{}{}", self.wikidata_entity_base, id),
            None => self.mint(kind, label),
        }
    }
}

/// Escapes a string for an N-Triples `STRING_LITERAL_QUOTE`.
pub fn escape_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 || c == '\u{7f}' => {
                write!(out, "\\u{:04X}", c as u32).expect("write to string");
            }
            c => out.push(c),
        }
    }
    out
}

/// N-Triples lines (without line terminators), duplicates removed, in first
/// emission order. Each fact contributes the relation triple, one `rdf:type`
/// triple per endpoint and `rdfs:label` triples for both entities and both
/// types.
pub fn to_ntriples(doc: &ExtractionDocument, policy: &IriPolicy) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut lines = Vec::new();
    let mut push = |line: String| {
        if seen.insert(line.clone()) {
            lines.push(line);
        }
    };
    for lf in &doc.facts {
        let f = lf.generated();
        let s = policy.node(LinkKind::Entity, &lf.subject_id, &f.subject.label);
        let st = policy.node(LinkKind::Type, &lf.subject_type_id, &f.subject.type_label);
        let r = policy.node(LinkKind::Relation, &lf.relation_id, &f.relation);
        let o = policy.node(LinkKind::Entity, &lf.object_id, &f.object.label);
        let ot = policy.node(LinkKind::Type, &lf.object_type_id, &f.object.type_label);

        push(format!("<{s}> <{r}> <{o}> ."));
        push(format!("<{s}> <{RDF_TYPE}> <{st}> ."));
        push(format!("<{o}> <{RDF_TYPE}> <{ot}> ."));
        for (node, label) in [
            (&s, &f.subject.label),
            (&st, &f.subject.type_label),
            (&o, &f.object.label),
            (&ot, &f.object.type_label),
        ] {
            push(format!(
                "<{node}> <{RDFS_LABEL}> \"{}\" .",
                escape_literal(label)
            ));
        }
    }
    lines
}
