//! Document and search-log ingestion, trim-at-click labeling, temporal folds.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Country code assigned to documents that carry none.
pub const UNKNOWN_COUNTRY: &str = "UNK";

pub const FOLD_COUNT: usize = 10;
pub const TRAIN_FRACTION: f64 = 0.75;
pub const MIN_GROUPS_FOR_SPLIT: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub recipe_id: u64,
    pub title: String,
    pub description: String,
    pub ingredients: Vec<String>,
    pub country: String,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    docs: Vec<DocumentRecord>,
    index: HashMap<u64, usize>,
}

impl Corpus {
    /// Build a corpus; a repeated `recipe_id` replaces the earlier record.
    pub fn from_records(records: impl IntoIterator<Item = DocumentRecord>) -> Self {
        let mut corpus = Corpus::default();
        for r in records {
            corpus.insert(r);
        }
        corpus
    }

    /// Returns the replaced record, if any.
    pub fn insert(&mut self, record: DocumentRecord) -> Option<DocumentRecord> {
        match self.index.get(&record.recipe_id) {
            Some(&i) => Some(std::mem::replace(&mut self.docs[i], record)),
            None => {
                self.index.insert(record.recipe_id, self.docs.len());
                self.docs.push(record);
                None
            }
        }
    }

    pub fn get(&self, recipe_id: u64) -> Option<&DocumentRecord> {
        self.index.get(&recipe_id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, recipe_id: u64) -> bool {
        self.index.contains_key(&recipe_id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DocumentRecord> {
        self.docs.iter()
    }
}

/// One line of the reject/warning log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub kind: IncidentKind,
    /// Line number for documents, event id (0-based data row) for search events.
    pub id: u64,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncidentKind {
    RejectedDocument,
    DuplicateDocument,
    RejectedEvent,
    PositionMismatch,
    MissingClickedDocument,
}

impl fmt::Display for Incident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (label, unit) = match self.kind {
            IncidentKind::RejectedDocument => ("rejected-document", "line"),
            IncidentKind::DuplicateDocument => ("duplicate-document", "line"),
            IncidentKind::RejectedEvent => ("rejected-event", "event"),
            IncidentKind::PositionMismatch => ("position-mismatch", "event"),
            IncidentKind::MissingClickedDocument => ("missing-clicked-document", "event"),
        };
        write!(f, "{label} {unit}={} {}", self.id, self.message)
    }
}

pub fn write_incidents<W: Write>(mut w: W, incidents: &[Incident]) -> Result<()> {
    for i in incidents {
        writeln!(w, "{i}")?;
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct ParsedCorpus {
    pub corpus: Corpus,
    pub rejected: usize,
    pub incidents: Vec<Incident>,
}

#[derive(Deserialize)]
struct RawDocument {
    recipe_id: Option<u64>,
    title: Option<String>,
    description: Option<String>,
    ingredients: Option<Vec<String>>,
    country: Option<String>,
}

/// Parse JSON Lines document records.
///
/// Records without `recipe_id` or `title` are rejected and counted; lines that
/// are not JSON objects abort with the offending line number.
pub fn parse_documents<R: BufRead>(reader: R) -> Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let (recipe_id, title) = match (raw.recipe_id, raw.title) {
            (Some(id), Some(title)) => (id, title),
            (id, _) => {
                out.rejected += 1;
                let missing = if id.is_none() { "recipe_id" } else { "title" };
                out.incidents.push(Incident {
                    kind: IncidentKind::RejectedDocument,
                    id: line_no,
                    message: format!("missing {missing}"),
                });
                continue;
            }
        };
        let country = raw
            .country
            .filter(|c| !c.trim().is_empty())
            .unwrap_or_else(|| UNKNOWN_COUNTRY.to_string());
        let record = DocumentRecord {
            recipe_id,
            title,
            description: raw.description.unwrap_or_default(),
            ingredients: raw.ingredients.unwrap_or_default(),
            country,
        };
        if out.corpus.insert(record).is_some() {
            log::warn!(
                "duplicate recipe_id {recipe_id} at line {line_no}; keeping the later record"
            );
            out.incidents.push(Incident {
                kind: IncidentKind::DuplicateDocument,
                id: line_no,
                message: format!("recipe_id {recipe_id} replaced by later record"),
            });
        }
    }
    Ok(out)
}

pub fn write_documents<W: Write>(mut w: W, docs: &[DocumentRecord]) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchEvent {
    /// 0-based data row in the source log.
    pub event_id: u64,
    pub session_id: u64,
    pub query: String,
    pub page: u32,
    pub recipe_id: u64,
    /// 1-based rank of the click within `fetched_recipe_ids`.
    pub position: usize,
    pub fetched_recipe_ids: Vec<u64>,
    pub total_hits: u64,
    /// Epoch milliseconds; the row index when the log has no timestamp column.
    pub timestamp: i64,
}

#[derive(Deserialize)]
struct RawEvent {
    session_id: u64,
    query: String,
    page: u32,
    recipe_id: u64,
    position: i64,
    fetched_recipe_ids: String,
    total_hits: u64,
    #[serde(default)]
    timestamp: Option<i64>,
}

pub const LOG_HEADER: [&str; 8] = [
    "session_id",
    "query",
    "page",
    "recipe_id",
    "position",
    "fetched_recipe_ids",
    "total_hits",
    "timestamp",
];

#[derive(Debug, Default)]
pub struct ParsedLog {
    pub events: Vec<SearchEvent>,
    pub rejected: usize,
    pub incidents: Vec<Incident>,
}

/// Parse the CSV search log.
///
/// When the header has no `timestamp` column, row order stands in for time.
/// Rows whose `position` or fetched list is unusable are rejected and counted.
pub fn parse_search_log<R: Read>(reader: R) -> Result<ParsedLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = ParsedLog::default();
    for (row, rec) in rdr.deserialize::<RawEvent>().enumerate() {
        let event_id = row as u64;
        let raw = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(event_id + 2, |p| p.line()),
            message: e.to_string(),
        })?;
        let mut reject = |message: String| {
            out.rejected += 1;
            out.incidents.push(Incident {
                kind: IncidentKind::RejectedEvent,
                id: event_id,
                message,
            });
        };
        let fetched: std::result::Result<Vec<u64>, _> = raw
            .fetched_recipe_ids
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse::<u64>)
            .collect();
        let fetched = match fetched {
            Ok(f) if !f.is_empty() => f,
            Ok(_) => {
                reject("empty fetched_recipe_ids".into());
                continue;
            }
            Err(e) => {
                reject(format!("bad fetched_recipe_ids: {e}"));
                continue;
            }
        };
        if raw.position < 1 || raw.position as usize > fetched.len() {
            reject(format!(
                "position {} outside fetched list of length {}",
                raw.position,
                fetched.len()
            ));
            continue;
        }
        out.events.push(SearchEvent {
            event_id,
            session_id: raw.session_id,
            query: raw.query,
            page: raw.page,
            recipe_id: raw.recipe_id,
            position: raw.position as usize,
            fetched_recipe_ids: fetched,
            total_hits: raw.total_hits,
            timestamp: raw.timestamp.unwrap_or(row as i64),
        });
    }
    Ok(out)
}

pub fn write_search_log<W: Write>(w: W, events: &[SearchEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(LOG_HEADER)?;
    for e in events {
        let fetched = e
            .fetched_recipe_ids
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        wtr.write_record([
            e.session_id.to_string(),
            e.query.clone(),
            e.page.to_string(),
            e.recipe_id.to_string(),
            e.position.to_string(),
            fetched,
            e.total_hits.to_string(),
            e.timestamp.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// A query with its trimmed candidate list; the clicked document is last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryGroup {
    pub query: String,
    pub documents: Vec<u64>,
    pub labels: Vec<u8>,
    pub event_id: u64,
    pub timestamp: i64,
}

impl QueryGroup {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn is_single_doc(&self) -> bool {
        self.documents.len() < 2
    }

    pub fn positive_index(&self) -> Option<usize> {
        self.labels.iter().position(|&l| l == 1)
    }
}

#[derive(Debug, Default)]
pub struct GroupBuild {
    pub groups: Vec<QueryGroup>,
    pub rejected: usize,
    pub dropped_missing_click: usize,
    pub incidents: Vec<Incident>,
}

/// Trim each event's fetched list at the clicked position and label it.
pub fn build_query_groups(events: &[SearchEvent], corpus: &Corpus) -> GroupBuild {
    let mut out = GroupBuild::default();
    for e in events {
        if e.position < 1 || e.position > e.fetched_recipe_ids.len() {
            out.rejected += 1;
            out.incidents.push(Incident {
                kind: IncidentKind::RejectedEvent,
                id: e.event_id,
                message: format!(
                    "position {} outside fetched list of length {}",
                    e.position,
                    e.fetched_recipe_ids.len()
                ),
            });
            continue;
        }
        let trimmed = &e.fetched_recipe_ids[..e.position];
        let clicked = trimmed[trimmed.len() - 1];
        if clicked != e.recipe_id {
            log::warn!(
                "event {}: recipe at position {} is {clicked}, event names {}; trusting position",
                e.event_id,
                e.position,
                e.recipe_id
            );
            out.incidents.push(Incident {
                kind: IncidentKind::PositionMismatch,
                id: e.event_id,
                message: format!("position names {clicked}, event names {}", e.recipe_id),
            });
        }
        if !corpus.contains(clicked) {
            out.dropped_missing_click += 1;
            out.incidents.push(Incident {
                kind: IncidentKind::MissingClickedDocument,
                id: e.event_id,
                message: format!("clicked recipe {clicked} not in corpus"),
            });
            continue;
        }
        let mut documents: Vec<u64> = trimmed[..trimmed.len() - 1]
            .iter()
            .copied()
            .filter(|id| corpus.contains(*id))
            .collect();
        documents.push(clicked);
        let mut labels = vec![0u8; documents.len()];
        labels[documents.len() - 1] = 1;
        out.groups.push(QueryGroup {
            query: e.query.clone(),
            documents,
            labels,
            event_id: e.event_id,
            timestamp: e.timestamp,
        });
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<QueryGroup>,
    pub validation: Vec<QueryGroup>,
}

impl Fold {
    fn timestamp_range(&self) -> Option<(i64, i64)> {
        let first = self.train.first().or(self.validation.first())?;
        let last = self.validation.last().or(self.train.last())?;
        Some((first.timestamp, last.timestamp))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldSet {
    pub folds: Vec<Fold>,
}

/// Sort by time, cut into ten contiguous blocks, and split each block 75/25.
pub fn temporal_split(groups: &[QueryGroup]) -> Result<FoldSet> {
    if groups.len() < MIN_GROUPS_FOR_SPLIT {
        return Err(Error::Config(format!(
            "{} query groups is too few for {FOLD_COUNT} temporal folds (need at least {MIN_GROUPS_FOR_SPLIT})",
            groups.len()
        )));
    }
    let mut sorted = groups.to_vec();
    sorted.sort_by_key(|g| (g.timestamp, g.event_id));

    let n = sorted.len();
    let (base, extra) = (n / FOLD_COUNT, n % FOLD_COUNT);
    let mut folds = Vec::with_capacity(FOLD_COUNT);
    let mut rest = sorted.into_iter();
    for f in 0..FOLD_COUNT {
        let size = base + usize::from(f < extra);
        let block: Vec<QueryGroup> = rest.by_ref().take(size).collect();
        let n_train = (TRAIN_FRACTION * size as f64).ceil() as usize;
        let mut train = block;
        let validation = train.split_off(n_train);
        folds.push(Fold { train, validation });
    }
    Ok(FoldSet { folds })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub groups: usize,
    pub single_doc_groups: usize,
    pub documents: usize,
    pub positives: usize,
    pub rejected_documents: usize,
    pub rejected_events: usize,
    pub dropped_missing_click: usize,
    /// First and last timestamp of each fold, in fold order.
    pub fold_boundaries: Vec<(i64, i64)>,
    pub fold_sizes: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RejectCounts {
    pub documents: usize,
    pub events: usize,
    pub missing_click: usize,
}

pub fn pipeline_stats(
    groups: &[QueryGroup],
    folds: Option<&FoldSet>,
    rejects: RejectCounts,
) -> PipelineStats {
    let mut stats = PipelineStats {
        groups: groups.len(),
        rejected_documents: rejects.documents,
        rejected_events: rejects.events,
        dropped_missing_click: rejects.missing_click,
        ..PipelineStats::default()
    };
    for g in groups {
        stats.documents += g.documents.len();
        stats.positives += g.labels.iter().filter(|&&l| l == 1).count();
        stats.single_doc_groups += usize::from(g.is_single_doc());
    }
    if let Some(fs) = folds {
        stats.fold_boundaries = fs.folds.iter().filter_map(Fold::timestamp_range).collect();
        stats.fold_sizes = fs
            .folds
            .iter()
            .map(|f| (f.train.len(), f.validation.len()))
            .collect();
    }
    stats
}
