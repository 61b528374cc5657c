//! Label-to-ID lookup tables for Wikidata entities, types and relations.
//!
//! Records are ingested from a TSV file (`kind<TAB>label<TAB>id`) into a
//! single-file embedded key-value store with one table per kind. The first
//! record for a normalized label wins; later records with a different id are
//! counted as collisions. After the build the store is opened read-only and
//! can be shared between threads.

use crate::fact::GeneratedFact;
use crate::rank::ScoredFact;
use redb::{
    Database, ReadOnlyDatabase, ReadOnlyTable, ReadableDatabase, ReadableTable, TableDefinition,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

const ENTITY_TABLE: TableDefinition<&str, &str> = TableDefinition::new("entity");
const TYPE_TABLE: TableDefinition<&str, &str> = TableDefinition::new("type");
const RELATION_TABLE: TableDefinition<&str, &str> = TableDefinition::new("relation");
const META_TABLE: TableDefinition<&str, &str> = TableDefinition::new("meta");

const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("storage error: {0}")]
    Storage(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn storage(e: impl fmt::Display) -> LinkError {
    LinkError::Storage(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Entity,
    Type,
    Relation,
}

impl LinkKind {
    pub const ALL: [LinkKind; 3] = [LinkKind::Entity, LinkKind::Type, LinkKind::Relation];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::Entity => "entity",
            LinkKind::Type => "type",
            LinkKind::Relation => "relation",
        }
    }

    fn id_prefix(self) -> char {
        match self {
            LinkKind::Entity | LinkKind::Type => 'Q',
            LinkKind::Relation => 'P',
        }
    }

    /// `Q[0-9]+` for entities and types, `P[0-9]+` for relations.
    pub fn is_valid_id(self, id: &str) -> bool {
        let mut chars = id.chars();
        chars.next() == Some(self.id_prefix())
            && !chars.as_str().is_empty()
            && chars.all(|c| c.is_ascii_digit())
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "entity" => Ok(LinkKind::Entity),
            "type" => Ok(LinkKind::Type),
            "relation" => Ok(LinkKind::Relation),
            other => Err(format!("unknown kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub kind: LinkKind,
    pub label: String,
    pub id: String,
}

impl LinkRecord {
    pub fn new(kind: LinkKind, label: &str, id: &str) -> Result<Self, String> {
        if label.trim().is_empty() {
            return Err("empty label".into());
        }
        if !kind.is_valid_id(id) {
            return Err(format!("`{id}` is not a valid {kind} id"));
        }
        Ok(LinkRecord {
            kind,
            label: label.to_owned(),
            id: id.to_owned(),
        })
    }
}

/// Reads `kind<TAB>label<TAB>id` lines. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn read_tsv<R: BufRead>(reader: R) -> impl Iterator<Item = Result<LinkRecord, LinkError>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(LinkError::Io(e))),
        };
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            return None;
        }
        let malformed = |reason: String| LinkError::MalformedRecord {
            line: line_no,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Some(Err(malformed(format!(
                "expected 3 columns, found {}",
                cols.len()
            ))));
        }
        let record = cols[0]
            .parse::<LinkKind>()
            .and_then(|kind| LinkRecord::new(kind, cols[1], cols[2].trim()))
            .map_err(malformed);
        Some(record)
    })
}

/// How labels are normalized before they are stored or looked up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    pub case_insensitive: bool,
}

impl Normalization {
    /// Trim, NFC, and lowercase when case-insensitive.
    pub fn apply(&self, label: &str) -> String {
        let nfc: String = label.trim().nfc().collect();
        if self.case_insensitive {
            nfc.to_lowercase()
        } else {
            nfc
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub records: usize,
    pub entities: usize,
    pub types: usize,
    pub relations: usize,
    /// Repeated label with a different id; the first id was kept.
    pub collisions: usize,
    /// Repeated label with the same id.
    pub duplicates: usize,
}

impl BuildReport {
    pub fn entries(&self) -> usize {
        self.entities + self.types + self.relations
    }
}

/// Read-only label→id store.
pub struct LinkStore {
    path: PathBuf,
    normalization: Normalization,
    tables: [ReadOnlyTable<&'static str, &'static str>; 3],
    _db: ReadOnlyDatabase,
}

impl fmt::Debug for LinkStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinkStore")
            .field("path", &self.path)
            .field("normalization", &self.normalization)
            .finish_non_exhaustive()
    }
}

/// Ingests `records` into a fresh store at `path`, replacing any existing file.
pub fn build_store<I>(
    records: I,
    path: &Path,
    normalization: Normalization,
) -> Result<(LinkStore, BuildReport), LinkError>
where
    I: IntoIterator<Item = Result<LinkRecord, LinkError>>,
{
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    let mut report = BuildReport::default();
    {
        let db = Database::create(path).map_err(storage)?;
        let txn = db.begin_write().map_err(storage)?;
        {
            let mut tables = [
                txn.open_table(ENTITY_TABLE).map_err(storage)?,
                txn.open_table(TYPE_TABLE).map_err(storage)?,
                txn.open_table(RELATION_TABLE).map_err(storage)?,
            ];
            for record in records {
                let record = record?;
                report.records += 1;
                let key = normalization.apply(&record.label);
                let table = &mut tables[record.kind as usize];
                let existing = table
                    .get(key.as_str())
                    .map_err(storage)?
                    .map(|g| g.value().to_owned());
                match existing {
                    Some(id) if id == record.id => report.duplicates += 1,
                    Some(_) => report.collisions += 1,
                    None => {
                        table
                            .insert(key.as_str(), record.id.as_str())
                            .map_err(storage)?;
                        match record.kind {
                            LinkKind::Entity => report.entities += 1,
                            LinkKind::Type => report.types += 1,
                            LinkKind::Relation => report.relations += 1,
                        }
                    }
                }
            }
            let mut meta = txn.open_table(META_TABLE).map_err(storage)?;
            meta.insert("format_version", FORMAT_VERSION)
                .map_err(storage)?;
            meta.insert(
                "case_insensitive",
                if normalization.case_insensitive {
                    "true"
                } else {
                    "false"
                },
            )
            .map_err(storage)?;
        }
        txn.commit().map_err(storage)?;
    }
    Ok((LinkStore::open(path)?, report))
}

impl LinkStore {
    pub fn open(path: &Path) -> Result<Self, LinkError> {
        if !path.is_file() {
            return Err(LinkError::Storage(format!(
                "no link store at {}",
                path.display()
            )));
        }
        let db = ReadOnlyDatabase::open(path).map_err(storage)?;
        let txn = db.begin_read().map_err(storage)?;
        let meta = txn.open_table(META_TABLE).map_err(storage)?;
        let version = meta
            .get("format_version")
            .map_err(storage)?
            .map(|g| g.value().to_owned());
        if version.as_deref() != Some(FORMAT_VERSION) {
            return Err(LinkError::Storage(format!(
                "unsupported store format {version:?}"
            )));
        }
        let case_insensitive = meta
            .get("case_insensitive")
            .map_err(storage)?
            .is_some_and(|g| g.value() == "true");
        let tables = [
            txn.open_table(ENTITY_TABLE).map_err(storage)?,
            txn.open_table(TYPE_TABLE).map_err(storage)?,
            txn.open_table(RELATION_TABLE).map_err(storage)?,
        ];
        Ok(LinkStore {
            path: path.to_owned(),
            normalization: Normalization { case_insensitive },
            tables,
            _db: db,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn lookup(&self, kind: LinkKind, label: &str) -> Result<Option<String>, LinkError> {
        let key = self.normalization.apply(label);
        Ok(self.tables[kind as usize]
            .get(key.as_str())
            .map_err(storage)?
            .map(|g| g.value().to_owned()))
    }

    pub fn len(&self, kind: LinkKind) -> Result<u64, LinkError> {
        use redb::ReadableTableMetadata;
        self.tables[kind as usize].len().map_err(storage)
    }

    /// All `(normalized label, id)` pairs of one kind, in label order.
    pub fn entries(&self, kind: LinkKind) -> Result<Vec<(String, String)>, LinkError> {
        self.tables[kind as usize]
            .iter()
            .map_err(storage)?
            .map(|item| {
                let (k, v) = item.map_err(storage)?;
                Ok((k.value().to_owned(), v.value().to_owned()))
            })
            .collect()
    }

    pub fn link_fact(&self, fact: &ScoredFact) -> Result<LinkedFact, LinkError> {
        let f = &fact.fact;
        Ok(LinkedFact {
            subject_id: self.lookup(LinkKind::Entity, &f.subject.label)?,
            subject_type_id: self.lookup(LinkKind::Type, &f.subject.type_label)?,
            relation_id: self.lookup(LinkKind::Relation, &f.relation)?,
            object_id: self.lookup(LinkKind::Entity, &f.object.label)?,
            object_type_id: self.lookup(LinkKind::Type, &f.object.type_label)?,
            fact: fact.clone(),
        })
    }
}

pub fn lookup(store: &LinkStore, kind: LinkKind, label: &str) -> Result<Option<String>, LinkError> {
    store.lookup(kind, label)
}

pub fn link_fact(store: &LinkStore, fact: &ScoredFact) -> Result<LinkedFact, LinkError> {
    store.link_fact(fact)
}

/// A ranked fact with whatever Wikidata ids its labels resolved to.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkedFact {
    pub fact: ScoredFact,
    pub subject_id: Option<String>,
    pub subject_type_id: Option<String>,
    pub relation_id: Option<String>,
    pub object_id: Option<String>,
    pub object_type_id: Option<String>,
}

impl LinkedFact {
    pub fn unlinked(fact: ScoredFact) -> Self {
        LinkedFact {
            fact,
            subject_id: None,
            subject_type_id: None,
            relation_id: None,
            object_id: None,
            object_type_id: None,
        }
    }

    pub fn generated(&self) -> &GeneratedFact {
        &self.fact.fact
    }

    pub fn ids(&self) -> [Option<&str>; 5] {
        [
            self.subject_id.as_deref(),
            self.subject_type_id.as_deref(),
            self.relation_id.as_deref(),
            self.object_id.as_deref(),
            self.object_type_id.as_deref(),
        ]
    }

    pub fn linked_count(&self) -> usize {
        self.ids().iter().filter(|id| id.is_some()).count()
    }
}

/// id→label maps derived from a store, used to resolve aligned dataset rows.
#[derive(Debug, Clone, Default)]
pub struct InverseMaps {
    pub entity_labels: HashMap<String, String>,
    pub type_labels: HashMap<String, String>,
    pub relation_labels: HashMap<String, String>,
    /// Entity id → type id (Wikidata "instance of").
    pub entity_types: HashMap<String, String>,
}

impl InverseMaps {
    /// Inverts the store's tables; when several labels share an id the first
    /// label in key order is kept. Labels come back normalized.
    pub fn from_store(
        store: &LinkStore,
        entity_types: HashMap<String, String>,
    ) -> Result<Self, LinkError> {
        let invert = |kind| -> Result<HashMap<String, String>, LinkError> {
            let mut map = HashMap::new();
            for (label, id) in store.entries(kind)? {
                map.entry(id).or_insert(label);
            }
            Ok(map)
        };
        Ok(InverseMaps {
            entity_labels: invert(LinkKind::Entity)?,
            type_labels: invert(LinkKind::Type)?,
            relation_labels: invert(LinkKind::Relation)?,
            entity_types,
        })
    }

    /// Type label for an id: the type table first, then the entity table,
    /// since Wikidata classes are items too.
    pub fn type_label(&self, type_id: &str) -> Option<&str> {
        self.type_labels
            .get(type_id)
            .or_else(|| self.entity_labels.get(type_id))
            .map(String::as_str)
    }
}

/// Reads `entity_id<TAB>type_id` lines.
pub fn read_type_assignments<R: BufRead>(reader: R) -> Result<HashMap<String, String>, LinkError> {
    let mut map = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.trim_end_matches('\r').split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(e), Some(t), None)
                if LinkKind::Entity.is_valid_id(e) && LinkKind::Type.is_valid_id(t) =>
            {
                map.entry(e.to_owned()).or_insert_with(|| t.to_owned());
            }
            _ => {
                return Err(LinkError::MalformedRecord {
                    line: i + 1,
                    reason: "expected `entity_id<TAB>type_id`".into(),
                })
            }
        }
    }
    Ok(map)
}
