//! Beam aggregation.
//!
//! Every hypothesis returned by the generator is parsed, and each distinct
//! fact collects the scores of the hypotheses it occurs in. A fact that
//! repeats inside one hypothesis takes that hypothesis's score once.

use crate::fact::{fact_key, FactKey, GeneratedFact, KeyMode};
use crate::grammar::{
    parse_lenient, parse_strict, LinearizedSequence, ParseDiagnostics, SkippedSpan,
};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::HashMap;
use thiserror::Error;

/// One decoded sequence with its sequence-level score (NLL by convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    pub sequence: LinearizedSequence,
    pub score: f64,
}

impl BeamHypothesis {
    pub fn new(sequence: impl Into<LinearizedSequence>, score: f64) -> Self {
        BeamHypothesis {
            sequence: sequence.into(),
            score,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Sum of the hypothesis scores as given.
    #[default]
    SumRaw,
    /// Sum of `exp(-score)`, i.e. of sequence probabilities when scores are NLLs.
    SumExpNegative,
}

impl Aggregation {
    fn contribution(self, score: f64) -> f64 {
        match self {
            Aggregation::SumRaw => score,
            Aggregation::SumExpNegative => (-score).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    #[default]
    Lenient,
    Strict,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RankConfig {
    pub key_mode: KeyMode,
    pub aggregation: Aggregation,
    pub parse_mode: ParseMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFact {
    pub fact: GeneratedFact,
    pub score: f64,
    /// Number of hypotheses containing the fact.
    pub beam_count: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankError {
    #[error("no beam hypotheses to rank")]
    NoBeams,
    #[error("hypothesis {index} has non-finite score {score}")]
    NonFiniteScore { index: usize, score: f64 },
}

/// Ranked facts plus the parse diagnostics of each hypothesis, by beam index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ranking {
    pub facts: Vec<ScoredFact>,
    pub diagnostics: Vec<ParseDiagnostics>,
}

impl Ranking {
    pub fn skipped_span_count(&self) -> usize {
        self.diagnostics.iter().map(|d| d.skipped_spans.len()).sum()
    }
}

/// Parses one hypothesis according to `mode`. In strict mode a failing
/// sequence yields no facts and a single skipped span covering everything.
pub fn parse_hypothesis(seq: &str, mode: ParseMode) -> (Vec<GeneratedFact>, ParseDiagnostics) {
    match mode {
        ParseMode::Lenient => parse_lenient(seq),
        ParseMode::Strict => match parse_strict(seq) {
            Ok(facts) => {
                let diag = ParseDiagnostics {
                    recovered_count: facts.len(),
                    skipped_spans: Vec::new(),
                };
                (facts, diag)
            }
            Err(e) => (
                Vec::new(),
                ParseDiagnostics {
                    recovered_count: 0,
                    skipped_spans: vec![SkippedSpan {
                        start: 0,
                        end: seq.len(),
                        reason: e.to_string(),
                    }],
                },
            ),
        },
    }
}

/// Lenient parse, default key and aggregation settings aside.
pub fn rank_facts(
    beams: &[BeamHypothesis],
    key_mode: KeyMode,
    aggregation: Aggregation,
) -> Result<Ranking, RankError> {
    rank_with(
        beams,
        &RankConfig {
            key_mode,
            aggregation,
            parse_mode: ParseMode::Lenient,
        },
    )
}

struct Entry {
    fact: GeneratedFact,
    score: f64,
    beam_count: usize,
    first_beam: usize,
    first_pos: usize,
    last_beam: usize,
}

pub fn rank_with(beams: &[BeamHypothesis], cfg: &RankConfig) -> Result<Ranking, RankError> {
    if beams.is_empty() {
        return Err(RankError::NoBeams);
    }
    if let Some((index, b)) = beams.iter().enumerate().find(|(_, b)| !b.score.is_finite()) {
        return Err(RankError::NonFiniteScore {
            index,
            score: b.score,
        });
    }

    let mut entries: Vec<Entry> = Vec::new();
    let mut by_key: HashMap<FactKey, usize> = HashMap::new();
    let mut diagnostics = Vec::with_capacity(beams.len());

    // Scores accumulate in beam order so the sum is reproducible bit for bit.
    for (beam_idx, beam) in beams.iter().enumerate() {
        let (facts, diag) = parse_hypothesis(beam.sequence.as_str(), cfg.parse_mode);
        diagnostics.push(diag);
        let contribution = cfg.aggregation.contribution(beam.score);
        for (pos, fact) in facts.into_iter().enumerate() {
            let key = fact_key(&fact, cfg.key_mode);
            match by_key.get(&key) {
                Some(&i) => {
                    let e = &mut entries[i];
                    if e.last_beam != beam_idx {
                        e.score += contribution;
                        e.beam_count += 1;
                        e.last_beam = beam_idx;
                    }
                }
                None => {
                    by_key.insert(key, entries.len());
                    entries.push(Entry {
                        fact,
                        score: contribution,
                        beam_count: 1,
                        first_beam: beam_idx,
                        first_pos: pos,
                        last_beam: beam_idx,
                    });
                }
            }
        }
    }

    entries.sort_by(compare_entries);
    let facts = entries
        .into_iter()
        .map(|e| ScoredFact {
            fact: e.fact,
            score: e.score,
            beam_count: e.beam_count,
        })
        .collect();
    Ok(Ranking { facts, diagnostics })
}

fn compare_entries(a: &Entry, b: &Entry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.beam_count.cmp(&a.beam_count))
        .then(a.first_beam.cmp(&b.first_beam))
        .then(a.first_pos.cmp(&b.first_pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fact::tests::fact;
    use crate::grammar::join_facts;

    fn beam(facts: &[GeneratedFact], score: f64) -> BeamHypothesis {
        BeamHypothesis::new(join_facts(facts), score)
    }

    #[test]
    fn sums_scores_across_beams() {
        let a = fact("a", "r", "b");
        let b = fact("c", "r", "d");
        let beams = [
            beam(std::slice::from_ref(&a), 0.9),
            beam(std::slice::from_ref(&b), 0.95),
            beam(std::slice::from_ref(&a), 0.7),
        ];
        let r = rank_facts(&beams, KeyMode::Full, Aggregation::SumRaw).unwrap();
        assert_eq!(r.facts.len(), 2);
        assert_eq!(r.facts[0].fact, a);
        assert!((r.facts[0].score - 1.6).abs() < 1e-12);
        assert_eq!(r.facts[0].beam_count, 2);
        assert_eq!(r.facts[1].fact, b);
        assert_eq!(r.facts[1].score, 0.95);
    }

    #[test]
    fn single_beam_identity() {
        let a = fact("a", "r", "b");
        let r = rank_facts(
            &[beam(std::slice::from_ref(&a), 2.5)],
            KeyMode::Full,
            Aggregation::SumRaw,
        )
        .unwrap();
        assert_eq!(
            r.facts,
            vec![ScoredFact {
                fact: a,
                score: 2.5,
                beam_count: 1
            }]
        );
    }

    #[test]
    fn duplicates_within_a_beam_count_once() {
        let a = fact("a", "r", "b");
        let r = rank_facts(
            &[beam(&[a.clone(), a.clone()], 1.0)],
            KeyMode::Full,
            Aggregation::SumRaw,
        )
        .unwrap();
        assert_eq!(r.facts[0].score, 1.0);
        assert_eq!(r.facts[0].beam_count, 1);
    }

    #[test]
    fn sum_exp_negative() {
        let a = fact("a", "r", "b");
        let b = fact("c", "r", "d");
        // Low NLL is the better sequence; it should win under probabilities.
        let beams = [
            beam(std::slice::from_ref(&a), 0.1),
            beam(std::slice::from_ref(&b), 3.0),
        ];
        let raw = rank_facts(&beams, KeyMode::Full, Aggregation::SumRaw).unwrap();
        assert_eq!(raw.facts[0].fact, b);
        let prob = rank_facts(&beams, KeyMode::Full, Aggregation::SumExpNegative).unwrap();
        assert_eq!(prob.facts[0].fact, a);
        assert_eq!(prob.facts[0].score, (-0.1f64).exp());
    }

    #[test]
    fn triple_only_merges_mentions() {
        let a = fact("a", "r", "b");
        let mut a2 = a.clone();
        a2.subject.mention = "the a".into();
        let beams = [
            beam(std::slice::from_ref(&a), 1.0),
            beam(&[a2.clone()], 1.0),
        ];
        let full = rank_facts(&beams, KeyMode::Full, Aggregation::SumRaw).unwrap();
        assert_eq!(full.facts.len(), 2);
        let triple = rank_facts(&beams, KeyMode::TripleOnly, Aggregation::SumRaw).unwrap();
        assert_eq!(triple.facts.len(), 1);
        assert_eq!(triple.facts[0].fact, a);
        assert_eq!(triple.facts[0].beam_count, 2);
    }

    #[test]
    fn tie_break_chain() {
        let a = fact("a", "r", "b");
        let b = fact("c", "r", "d");
        let c = fact("e", "r", "f");
        // b and c tie on score and count; b appears earlier within beam 0.
        let beams = [
            beam(&[b.clone(), c.clone()], 1.0),
            beam(std::slice::from_ref(&a), 1.0),
        ];
        let r = rank_facts(&beams, KeyMode::Full, Aggregation::SumRaw).unwrap();
        let order: Vec<_> = r.facts.iter().map(|s| s.fact.clone()).collect();
        assert_eq!(order, vec![b, c, a]);
    }

    #[test]
    fn errors_and_malformed_beams() {
        assert_eq!(
            rank_facts(&[], KeyMode::Full, Aggregation::SumRaw),
            Err(RankError::NoBeams)
        );
        assert!(matches!(
            rank_facts(
                &[BeamHypothesis::new("", f64::NAN)],
                KeyMode::Full,
                Aggregation::SumRaw
            ),
            Err(RankError::NonFiniteScore { index: 0, .. })
        ));
        let a = fact("a", "r", "b");
        let beams = [
            beam(std::slice::from_ref(&a), 1.0),
            BeamHypothesis::new("[(broken", 5.0),
        ];
        let r = rank_facts(&beams, KeyMode::Full, Aggregation::SumRaw).unwrap();
        assert_eq!(r.facts.len(), 1);
        assert_eq!(r.diagnostics[1].skipped_spans.len(), 1);

        let half = format!("{} $ [(x # y", join_facts(std::slice::from_ref(&a)));
        let cfg = RankConfig {
            parse_mode: ParseMode::Strict,
            ..RankConfig::default()
        };
        let r = rank_with(&[BeamHypothesis::new(half, 1.0)], &cfg).unwrap();
        assert!(r.facts.is_empty());
        assert_eq!(r.skipped_span_count(), 1);
    }
}
