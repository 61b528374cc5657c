//! Batch driver: split, generate, parse, rank, link.
//!
//! Documents are processed in parallel chunks and handed to the sink in input
//! order. A failure inside one sentence is recorded and that sentence is
//! skipped; nothing else in the run is affected.

use crate::emit::ExtractionDocument;
use crate::generate::{GenerationRequest, Generator};
use crate::link::{LinkStore, LinkedFact};
use crate::rank::{rank_with, BeamHypothesis, RankConfig, RankError};
use crate::split::{split_sentences, SentenceSplitter};
use crate::FactKey;
use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub num_beams: usize,
    pub max_length: usize,
    pub batch_size: usize,
    /// Worker threads; documents in flight are bounded by a small multiple.
    pub workers: usize,
    pub rank: RankConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            num_beams: 5,
            max_length: 256,
            batch_size: 16,
            workers: 1,
            rank: RankConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_owned()));
        if self.num_beams == 0 {
            return bad("num_beams must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
    #[error("output error: {0}")]
    Sink(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Input,
    Generate,
    Rank,
    Link,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    /// Sentence id, or the document id for document-level failures.
    pub id: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub documents: usize,
    pub documents_failed: usize,
    pub sentences_in: usize,
    pub sentences_ok: usize,
    pub sentences_failed: usize,
    pub beams: usize,
    pub facts: usize,
    pub linked_ids: usize,
    pub null_ids: usize,
    /// Facts recovered from hypotheses that needed lenient recovery.
    pub parse_recoveries: usize,
    pub skipped_spans: usize,
    pub failures: Vec<Failure>,
}

impl RunSummary {
    fn absorb(&mut self, other: RunSummary) {
        self.documents += other.documents;
        self.documents_failed += other.documents_failed;
        self.sentences_in += other.sentences_in;
        self.sentences_ok += other.sentences_ok;
        self.sentences_failed += other.sentences_failed;
        self.beams += other.beams;
        self.facts += other.facts;
        self.linked_ids += other.linked_ids;
        self.null_ids += other.null_ids;
        self.parse_recoveries += other.parse_recoveries;
        self.skipped_spans += other.skipped_spans;
        self.failures.extend(other.failures);
    }

    /// 0 when everything succeeded, 1 when something was skipped.
    pub fn exit_code(&self) -> i32 {
        if self.sentences_failed == 0 && self.documents_failed == 0 {
            0
        } else {
            1
        }
    }
}

/// Output of one document, in sentence order.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentResult {
    pub doc_id: String,
    pub extractions: Vec<ExtractionDocument>,
    pub summary: RunSummary,
}

pub struct Pipeline<'a> {
    cfg: PipelineConfig,
    generator: &'a dyn Generator,
    store: &'a LinkStore,
    splitter: &'a dyn SentenceSplitter,
    pool: rayon::ThreadPool,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        cfg: PipelineConfig,
        generator: &'a dyn Generator,
        store: &'a LinkStore,
        splitter: &'a dyn SentenceSplitter,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        Ok(Pipeline {
            cfg,
            generator,
            store,
            splitter,
            pool,
        })
    }

    /// Runs every document through the pipeline, calling `sink` once per
    /// document in input order.
    pub fn run<I, F>(&self, docs: I, mut sink: F) -> Result<RunSummary, PipelineError>
    where
        I: IntoIterator<Item = CorpusDocument>,
        F: FnMut(&DocumentResult) -> io::Result<()>,
    {
        let mut total = RunSummary::default();
        let mut seen = HashSet::new();
        let mut docs = docs.into_iter().peekable();
        let chunk_len = self.cfg.workers * 4;
        while docs.peek().is_some() {
            let chunk: Vec<(CorpusDocument, bool)> = docs
                .by_ref()
                .take(chunk_len)
                .map(|d| {
                    let fresh = seen.insert(d.doc_id.clone());
                    (d, fresh)
                })
                .collect();
            let results: Vec<DocumentResult> = self.pool.install(|| {
                chunk
                    .par_iter()
                    .map(|(doc, fresh)| {
                        if *fresh {
                            self.process_document(doc)
                        } else {
                            duplicate(doc)
                        }
                    })
                    .collect()
            });
            for r in results {
                sink(&r)?;
                total.absorb(r.summary);
            }
        }
        Ok(total)
    }

    /// Collects every document's output.
    pub fn run_collect<I>(
        &self,
        docs: I,
    ) -> Result<(Vec<ExtractionDocument>, RunSummary), PipelineError>
    where
        I: IntoIterator<Item = CorpusDocument>,
    {
        let mut out = Vec::new();
        let summary = self.run(docs, |r| {
            out.extend(r.extractions.iter().cloned());
            Ok(())
        })?;
        Ok((out, summary))
    }

    pub fn process_document(&self, doc: &CorpusDocument) -> DocumentResult {
        let sentences = split_sentences(self.splitter, &doc.doc_id, &doc.text);
        let mut summary = RunSummary {
            documents: 1,
            sentences_in: sentences.len(),
            ..RunSummary::default()
        };
        let mut extractions = Vec::with_capacity(sentences.len());
        for batch in sentences.chunks(self.cfg.batch_size) {
            let texts: Vec<String> = batch.iter().map(|s| s.text.clone()).collect();
            let beams = self.generate_batch(&texts);
            for (sentence, beams) in batch.iter().zip(beams) {
                let outcome = beams
                    .map_err(|m| (Stage::Generate, m))
                    .and_then(|b| self.extract(&sentence.id, &sentence.text, &b, &mut summary));
                match outcome {
                    Ok(doc) => {
                        summary.sentences_ok += 1;
                        extractions.push(doc);
                    }
                    Err((stage, message)) => {
                        warn!("{}: {stage:?} failed: {message}", sentence.id);
                        summary.sentences_failed += 1;
                        summary.failures.push(Failure {
                            id: sentence.id.clone(),
                            stage,
                            message,
                        });
                    }
                }
            }
        }
        DocumentResult {
            doc_id: doc.doc_id.clone(),
            extractions,
            summary,
        }
    }

    /// One result per sentence. A failed batch is retried sentence by
    /// sentence so a single bad input cannot sink its neighbours.
    fn generate_batch(&self, texts: &[String]) -> Vec<Result<Vec<BeamHypothesis>, String>> {
        let call = |sentences: Vec<String>| {
            let req = GenerationRequest::new(sentences, self.cfg.num_beams, self.cfg.max_length)?;
            self.generator.generate(&req).map(|r| r.into_nll().results)
        };
        match call(texts.to_vec()) {
            Ok(results) => results.into_iter().map(Ok).collect(),
            Err(e) if texts.len() == 1 => vec![Err(e.to_string())],
            Err(e) => {
                debug!(
                    "batch of {} failed ({e}); retrying per sentence",
                    texts.len()
                );
                texts
                    .iter()
                    .map(|t| match call(vec![t.clone()]) {
                        Ok(mut r) => Ok(r.pop().unwrap_or_default()),
                        Err(e) => Err(e.to_string()),
                    })
                    .collect()
            }
        }
    }

    fn extract(
        &self,
        id: &str,
        sentence: &str,
        beams: &[BeamHypothesis],
        summary: &mut RunSummary,
    ) -> Result<ExtractionDocument, (Stage, String)> {
        let ranking = match rank_with(beams, &self.cfg.rank) {
            Ok(r) => r,
            Err(RankError::NoBeams) => Default::default(),
            Err(e) => return Err((Stage::Rank, e.to_string())),
        };
        let facts = ranking
            .facts
            .into_iter()
            .map(|f| self.store.link_fact(&f))
            .collect::<Result<Vec<LinkedFact>, _>>()
            .map_err(|e| (Stage::Link, e.to_string()))?;

        summary.beams += beams.len();
        summary.facts += facts.len();
        for f in &facts {
            let linked = f.linked_count();
            summary.linked_ids += linked;
            summary.null_ids += f.ids().len() - linked;
        }
        for d in ranking.diagnostics.iter().filter(|d| !d.is_clean()) {
            summary.parse_recoveries += d.recovered_count;
            summary.skipped_spans += d.skipped_spans.len();
        }
        Ok(ExtractionDocument {
            sentence_id: id.to_owned(),
            sentence: sentence.to_owned(),
            facts,
        })
    }
}

fn duplicate(doc: &CorpusDocument) -> DocumentResult {
    warn!("duplicate document id {:?}; skipped", doc.doc_id);
    DocumentResult {
        doc_id: doc.doc_id.clone(),
        extractions: Vec::new(),
        summary: RunSummary {
            documents: 1,
            documents_failed: 1,
            failures: vec![Failure {
                id: doc.doc_id.clone(),
                stage: Stage::Input,
                message: "duplicate document id".into(),
            }],
            ..RunSummary::default()
        },
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Documents from a `.jsonl` file, a single text file, or a directory of
/// `.txt` files (sorted by name, id = file stem).
pub fn load_corpus(
    path: &Path,
) -> Result<Box<dyn Iterator<Item = Result<CorpusDocument, CorpusError>>>, CorpusError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| CorpusError::Io { path: p, source }
    };
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        return Ok(Box::new(files.into_iter().map(move |p| text_document(&p))));
    }
    if path.extension().is_some_and(|x| x == "jsonl") {
        let file = File::open(path).map_err(io_err(path))?;
        let path = path.to_path_buf();
        let lines = BufReader::new(file).lines().enumerate();
        return Ok(Box::new(lines.filter_map(move |(i, line)| {
            let line = match line {
                Ok(l) => l,
                Err(source) => {
                    return Some(Err(CorpusError::Io {
                        path: path.clone(),
                        source,
                    }))
                }
            };
            if line.trim().is_empty() {
                return None;
            }
            Some(
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                }),
            )
        })));
    }
    Ok(Box::new(std::iter::once(text_document(path))))
}

fn text_document(path: &Path) -> Result<CorpusDocument, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(CorpusDocument { doc_id, text })
}

/// Frequency tables over emitted documents: (label, count) sorted by count
/// descending, then label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FrequencyReport {
    pub types: Vec<(String, usize)>,
    pub entities: Vec<(String, usize)>,
    pub relations: Vec<(String, usize)>,
    /// Distinct entity labels per type label.
    pub entities_per_type: Vec<(String, usize)>,
}

impl FrequencyReport {
    pub fn compute<'d>(docs: impl IntoIterator<Item = &'d ExtractionDocument>) -> Self {
        use std::collections::{BTreeMap, BTreeSet};
        let mut types = BTreeMap::<String, usize>::new();
        let mut entities = BTreeMap::<String, usize>::new();
        let mut relations = BTreeMap::<String, usize>::new();
        let mut per_type = BTreeMap::<String, BTreeSet<String>>::new();
        let mut seen = HashSet::<FactKey>::new();
        for doc in docs {
            seen.clear();
            for f in &doc.facts {
                let g = f.generated();
                if !seen.insert(crate::fact_key(g, crate::KeyMode::TripleOnly)) {
                    continue;
                }
                *relations.entry(g.relation.clone()).or_default() += 1;
                for e in [&g.subject, &g.object] {
                    *types.entry(e.type_label.clone()).or_default() += 1;
                    *entities.entry(e.label.clone()).or_default() += 1;
                    per_type
                        .entry(e.type_label.clone())
                        .or_default()
                        .insert(e.label.clone());
                }
            }
        }
        let sorted = |m: BTreeMap<String, usize>| {
            let mut v: Vec<_> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v
        };
        FrequencyReport {
            types: sorted(types),
            entities: sorted(entities),
            relations: sorted(relations),
            entities_per_type: sorted(per_type.into_iter().map(|(k, v)| (k, v.len())).collect()),
        }
    }

    /// Plain-text rendering, at most `top` rows per table.
    pub fn render(&self, top: usize) -> String {
        let mut out = String::new();
        for (title, rows) in [
            ("types", &self.types),
            ("entities", &self.entities),
            ("relations", &self.relations),
            ("entities per type", &self.entities_per_type),
        ] {
            out.push_str(&format!("# {title}\n"));
            for (label, n) in rows.iter().take(top) {
                out.push_str(&format!("{n:>8}  {label}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{Fixture, MockGenerator, ScoreKind};
    use crate::link::{build_store, LinkKind, LinkRecord, Normalization};
    use crate::split::RuleSplitter;
    use std::collections::BTreeMap;

    fn store(dir: &Path) -> LinkStore {
        let recs = [
            (LinkKind::Entity, "Berlin", "Q64"),
            (LinkKind::Entity, "Germany", "Q183"),
            (LinkKind::Type, "city", "Q515"),
            (LinkKind::Relation, "country", "P17"),
        ]
        .map(|(k, l, i)| Ok(LinkRecord::new(k, l, i).unwrap()));
        build_store(recs, &dir.join("s.redb"), Normalization::default())
            .unwrap()
            .0
    }

    fn fixture(entries: &[(&str, &[(&str, f64)])]) -> MockGenerator {
        let results: BTreeMap<_, _> = entries
            .iter()
            .map(|(s, hyps)| {
                (
                    s.to_string(),
                    hyps.iter()
                        .map(|(q, sc)| BeamHypothesis::new(*q, *sc))
                        .collect(),
                )
            })
            .collect();
        MockGenerator::new(Fixture {
            score_kind: ScoreKind::Nll,
            results,
        })
    }

    const GOOD: &str = "[(Berlin # Berlin # city) | country | (Germany # Germany # country)]";

    #[test]
    fn empty_document_gives_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let st = store(dir.path());
        let splitter = RuleSplitter::default();
        let generator = fixture(&[]);
        let p = Pipeline::new(PipelineConfig::default(), &generator, &st, &splitter).unwrap();
        let (out, summary) = p
            .run_collect([CorpusDocument {
                doc_id: "d".into(),
                text: "   ".into(),
            }])
            .unwrap();
        assert!(out.is_empty());
        assert_eq!(
            summary,
            RunSummary {
                documents: 1,
                ..RunSummary::default()
            }
        );
    }

    #[test]
    fn malformed_beam_is_recovered() {
        let dir = tempfile::tempdir().unwrap();
        let st = store(dir.path());
        let splitter = RuleSplitter::default();
        let broken = format!("{GOOD} $ [(x # y | r");
        let generator = fixture(&[(
            "Berlin is in Germany.",
            &[(GOOD, 0.1), (&broken, 0.2), (GOOD, 0.3)],
        )]);
        let p = Pipeline::new(PipelineConfig::default(), &generator, &st, &splitter).unwrap();
        let (out, s) = p
            .run_collect([CorpusDocument {
                doc_id: "d".into(),
                text: "Berlin is in Germany.".into(),
            }])
            .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].sentence_id, "d:0");
        assert_eq!(out[0].facts.len(), 1);
        assert_eq!(out[0].facts[0].fact.beam_count, 3);
        let (_, diag) = crate::grammar::parse_lenient(&broken);
        assert_eq!(s.parse_recoveries, diag.recovered_count);
        assert_eq!(s.skipped_spans, diag.skipped_spans.len());
        assert_eq!((s.beams, s.facts), (3, 1));
        // Germany has no type in the store ("country" is a relation label only).
        assert_eq!((s.linked_ids, s.null_ids), (4, 1));
    }

    #[test]
    fn failures_are_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let st = store(dir.path());
        let splitter = RuleSplitter::default();
        let mut generator = fixture(&[
            ("Berlin is in Germany.", &[(GOOD, 0.1)]),
            ("Nan here.", &[(GOOD, f64::NAN)]),
        ]);
        generator.fallback_empty = false;
        let cfg = PipelineConfig {
            batch_size: 3,
            workers: 2,
            ..PipelineConfig::default()
        };
        let p = Pipeline::new(cfg, &generator, &st, &splitter).unwrap();
        let docs = vec![
            CorpusDocument {
                doc_id: "a".into(),
                text: "Berlin is in Germany. Unknown sentence. Nan here.".into(),
            },
            CorpusDocument {
                doc_id: "a".into(),
                text: "Berlin is in Germany.".into(),
            },
            CorpusDocument {
                doc_id: "b".into(),
                text: "Berlin is in Germany.".into(),
            },
        ];
        let (out, s) = p.run_collect(docs).unwrap();
        let ids: Vec<_> = out.iter().map(|d| d.sentence_id.as_str()).collect();
        assert_eq!(ids, ["a:0", "b:0"]);
        assert_eq!(s.sentences_in, s.sentences_ok + s.sentences_failed);
        assert_eq!(
            (s.sentences_in, s.sentences_failed, s.documents_failed),
            (4, 2, 1)
        );
        let stages: Vec<_> = s
            .failures
            .iter()
            .map(|f| (f.id.as_str(), f.stage))
            .collect();
        assert_eq!(
            stages,
            [
                ("a:1", Stage::Generate),
                ("a:2", Stage::Rank),
                ("a", Stage::Input)
            ]
        );
        assert_eq!(s.exit_code(), 1);
    }

    #[test]
    fn config_validation() {
        let bad = PipelineConfig {
            batch_size: 0,
            ..PipelineConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(PipelineError::InvalidConfig(_))
        ));
    }
}
