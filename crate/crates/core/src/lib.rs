//! Deterministic core of an end-to-end knowledge generation and linking
//! toolkit.
//!
//! A sequence-to-sequence model (external to this crate) turns a sentence into
//! a linearized list of facts such as
//! `[(semantic web # Semantic Web # concept) | use | (inference rules # inference rule # concept)]`.
//! This crate parses and writes that syntax, ranks facts across beam
//! hypotheses, links labels to Wikidata identifiers, emits JSON and
//! N-Triples, and scores predictions against gold annotations.
//!
//! [`pipeline`] strings the stages together over a corpus, talking to the
//! model through [`generate`] (HTTP client or fixture replay).

pub mod emit;
pub mod enrich;
pub mod eval;
pub mod fact;
pub mod generate;
pub mod grammar;
pub mod link;
pub mod pipeline;
pub mod rank;
pub mod split;

pub use fact::{
    fact_key, sort_facts, EntityAnnotation, FactKey, GeneratedFact, KeyMode, SourceText,
};
pub use grammar::{linearize, parse_lenient, parse_strict, LinearizedSequence, ParseDiagnostics};
pub use rank::{rank_facts, rank_with, Aggregation, BeamHypothesis, RankConfig, ScoredFact};
