//! Precision, recall and F1 over projections of fact sets.
//!
//! Each dimension projects a sentence's facts into a set of items compared by
//! exact string equality:
//!
//! | dim  | items per fact                              |
//! |------|---------------------------------------------|
//! | MD   | subject mention, object mention             |
//! | TYPE | subject type label, object type label       |
//! | EL   | subject label, object label                 |
//! | RN   | relation label                              |
//! | REL  | (subject label, relation label, object label) |
//!
//! Micro scores pool tp/fp/fn over all records. Macro REL averages per-relation
//! scores over the relations seen in gold or predictions.

use crate::fact::{fact_key, GeneratedFact, KeyMode};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    EmptyDataset,
    #[error("line {line}: {source}")]
    MalformedRecord {
        line: usize,
        source: serde_json::Error,
    },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawRecord")]
pub struct EvalRecord {
    pub sentence_id: String,
    pub gold: Vec<GeneratedFact>,
    pub predicted: Vec<GeneratedFact>,
}

#[derive(Deserialize)]
struct RawRecord {
    sentence_id: String,
    gold: Vec<GeneratedFact>,
    predicted: Vec<GeneratedFact>,
}

impl From<RawRecord> for EvalRecord {
    fn from(r: RawRecord) -> Self {
        EvalRecord::new(r.sentence_id, r.gold, r.predicted)
    }
}

fn dedup(facts: Vec<GeneratedFact>) -> Vec<GeneratedFact> {
    let mut seen = HashSet::new();
    facts
        .into_iter()
        .filter(|f| seen.insert(fact_key(f, KeyMode::Full)))
        .collect()
}

impl EvalRecord {
    /// Removes repeated facts (full key) from both sides.
    pub fn new(
        sentence_id: impl Into<String>,
        gold: Vec<GeneratedFact>,
        predicted: Vec<GeneratedFact>,
    ) -> Self {
        EvalRecord {
            sentence_id: sentence_id.into(),
            gold: dedup(gold),
            predicted: dedup(predicted),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Md,
    Type,
    El,
    Rn,
    Rel,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Md,
        Dimension::Type,
        Dimension::El,
        Dimension::Rn,
        Dimension::Rel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Md => "MD",
            Dimension::Type => "TYPE",
            Dimension::El => "EL",
            Dimension::Rn => "RN",
            Dimension::Rel => "REL",
        }
    }

    /// Items contributed by one fact.
    pub fn items(self, f: &GeneratedFact) -> Vec<Item> {
        let one = |s: &str| Item(vec![s.to_owned()]);
        match self {
            Dimension::Md => vec![one(&f.subject.mention), one(&f.object.mention)],
            Dimension::Type => vec![one(&f.subject.type_label), one(&f.object.type_label)],
            Dimension::El => vec![one(&f.subject.label), one(&f.object.label)],
            Dimension::Rn => vec![one(&f.relation)],
            Dimension::Rel => vec![Item(vec![
                f.subject.label.clone(),
                f.relation.clone(),
                f.object.label.clone(),
            ])],
        }
    }

    pub fn project(self, facts: &[GeneratedFact]) -> HashSet<Item> {
        facts.iter().flat_map(|f| self.items(f)).collect()
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown dimension `{s}`"))
    }
}

/// A projected item; one field for label-like dimensions, three for REL.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Item(pub Vec<String>);

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Prf {
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn add(&mut self, gold: &HashSet<Item>, pred: &HashSet<Item>) {
        let tp = gold.intersection(pred).count();
        self.tp += tp;
        self.fp += pred.len() - tp;
        self.fn_ += gold.len() - tp;
    }
}

pub fn score_micro(records: &[EvalRecord], dim: Dimension) -> Result<Prf, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut c = Counts::default();
    for r in records {
        c.add(&dim.project(&r.gold), &dim.project(&r.predicted));
    }
    Ok(Prf::from_counts(c.tp, c.fp, c.fn_))
}

/// Per-relation REL scores, keyed by relation label.
pub fn score_per_relation(records: &[EvalRecord]) -> Result<BTreeMap<String, Prf>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
    let by_relation = |items: HashSet<Item>| {
        let mut m: BTreeMap<String, HashSet<Item>> = BTreeMap::new();
        for item in items {
            m.entry(item.0[1].clone()).or_default().insert(item);
        }
        m
    };
    let empty = HashSet::new();
    for r in records {
        let gold = by_relation(Dimension::Rel.project(&r.gold));
        let pred = by_relation(Dimension::Rel.project(&r.predicted));
        let relations: HashSet<&String> = gold.keys().chain(pred.keys()).collect();
        for rel in relations {
            counts.entry(rel.clone()).or_default().add(
                gold.get(rel).unwrap_or(&empty),
                pred.get(rel).unwrap_or(&empty),
            );
        }
    }
    Ok(counts
        .into_iter()
        .map(|(rel, c)| (rel, Prf::from_counts(c.tp, c.fp, c.fn_)))
        .collect())
}

/// Unweighted mean of per-relation precision, recall and F1. The tp/fp/fn
/// fields hold the pooled counts.
pub fn score_macro_rel(records: &[EvalRecord]) -> Result<Prf, EvalError> {
    let per = score_per_relation(records)?;
    let n = per.len();
    let mut out = Prf::default();
    if n == 0 {
        return Ok(out);
    }
    for prf in per.values() {
        out.precision += prf.precision;
        out.recall += prf.recall;
        out.f1 += prf.f1;
        out.tp += prf.tp;
        out.fp += prf.fp;
        out.fn_ += prf.fn_;
    }
    out.precision /= n as f64;
    out.recall /= n as f64;
    out.f1 /= n as f64;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

/// All dimensions at once, laid out as MD-F1 TYPE-F1 EL-F1 RN-F1 REL-P REL-R
/// REL-F1 with a micro row and a REL-only macro row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub records: usize,
    pub micro: BTreeMap<&'static str, Prf>,
    pub macro_rel: Prf,
}

impl EvalReport {
    pub fn compute(records: &[EvalRecord]) -> Result<Self, EvalError> {
        let mut micro = BTreeMap::new();
        for dim in Dimension::ALL {
            micro.insert(dim.name(), score_micro(records, dim)?);
        }
        Ok(EvalReport {
            records: records.len(),
            micro,
            macro_rel: score_macro_rel(records)?,
        })
    }

    pub fn table(&self) -> String {
        let pct = |x: f64| format!("{:.2}", 100.0 * x);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "", "MD-F1", "TYPE-F1", "EL-F1", "RN-F1", "REL-P", "REL-R", "REL-F1"
        ));
        let m = |d: Dimension| self.micro[d.name()];
        let rel = m(Dimension::Rel);
        out.push_str(&format!(
            "{:<6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "Micro",
            pct(m(Dimension::Md).f1),
            pct(m(Dimension::Type).f1),
            pct(m(Dimension::El).f1),
            pct(m(Dimension::Rn).f1),
            pct(rel.precision),
            pct(rel.recall),
            pct(rel.f1)
        ));
        out.push_str(&format!(
            "{:<6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "Macro",
            "-",
            "-",
            "-",
            "-",
            pct(self.macro_rel.precision),
            pct(self.macro_rel.recall),
            pct(self.macro_rel.f1)
        ));
        out
    }
}

/// Reads line-delimited JSON records, skipping blank lines.
pub fn read_records<R: std::io::BufRead>(reader: R) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| EvalError::MalformedRecord {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}
