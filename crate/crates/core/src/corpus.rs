//! Multi-rater rating datasets: data model, TSV ingestion and validation.
//!
//! A [`RatingDataset`] holds every rating of one language pair. Items are
//! `(document, system)` pairs; each item is rated segment by segment by every
//! rater of the document's bucket. Ingestion accepts a tab-separated file with
//! a header row and a configurable [`ColumnMapping`], materializes segment
//! scores through a [`WeightTable`], and checks the structural invariants
//! (complete ratings, consistent buckets, matching precomputed scores).
//!
//! Identifiers are interned: documents, systems, raters and buckets are
//! addressed by dense indices into the dataset's sorted id lists.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, KvDocument};
use crate::scoring::{segment_score, WeightTable};

/// Tolerance for precomputed vs recomputed segment scores.
pub const SCORE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: invalid {column} value `{value}`")]
    InvalidValue {
        line: usize,
        column: String,
        value: String,
    },
    #[error("incomplete ratings: doc `{doc}`, system `{system}`, rater `{rater}`: {detail}")]
    IncompleteRatings {
        doc: String,
        system: String,
        rater: String,
        detail: String,
    },
    #[error("inconsistent buckets: {0}")]
    InconsistentBuckets(String),
    #[error("line {line}: score mismatch for doc `{doc}` seg {seg} system `{system}` rater `{rater}`: given {given}, computed {computed}")]
    ScoreMismatch {
        line: usize,
        doc: String,
        seg: usize,
        system: String,
        rater: String,
        given: f64,
        computed: f64,
    },
    #[error("line {line}: span {start}..{end} outside target of length {len}")]
    InvalidSpan {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("empty dataset")]
    Empty,
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Major,
    Minor,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Major => "Major",
            Severity::Minor => "Minor",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "major" => Ok(Severity::Major),
            "minor" => Ok(Severity::Minor),
            other => Err(format!("unknown severity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnnotation {
    /// Slash-separated label path, e.g. `Accuracy/Mistranslation`.
    pub category: String,
    pub severity: Severity,
    /// Character range `[start, end)` within the target segment.
    pub span: Option<(usize, usize)>,
}

impl ErrorAnnotation {
    pub fn new(severity: Severity, category: impl Into<String>) -> Self {
        ErrorAnnotation {
            category: category.into(),
            severity,
            span: None,
        }
    }
}

/// One rater's judgement of one segment of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRating {
    pub annotations: Vec<ErrorAnnotation>,
    /// MQM points, lower is better.
    pub score: f64,
    pub target_text: Option<String>,
}

/// One rater's ratings for every segment of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRating {
    pub rater: usize,
    pub segments: Vec<SegmentRating>,
}

impl ItemRating {
    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().map(|s| s.score)
    }

    /// Number of marked errors, ignoring severity.
    pub fn error_count(&self) -> u32 {
        self.segments.iter().map(|s| s.annotations.len() as u32).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub n_segments: usize,
    pub bucket: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub id: String,
    /// Document indices, ascending.
    pub docs: Vec<usize>,
    /// Rater indices, ascending.
    pub raters: Vec<usize>,
}

/// All annotations for one language pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    pub language_pair: String,
    documents: Vec<Document>,
    systems: Vec<String>,
    raters: Vec<String>,
    buckets: Vec<Bucket>,
    /// Indexed by `doc * n_systems + system`; inner order follows the bucket's rater order.
    items: Vec<Vec<ItemRating>>,
}

impl RatingDataset {
    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn systems(&self) -> &[String] {
        &self.systems
    }

    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// All ratings of item `(doc, system)`, in bucket rater order.
    pub fn item_ratings(&self, doc: usize, system: usize) -> &[ItemRating] {
        &self.items[doc * self.systems.len() + system]
    }

    /// The rating of `(doc, system)` by `rater`, if that rater is in the doc's bucket.
    pub fn rating(&self, doc: usize, system: usize, rater: usize) -> Option<&ItemRating> {
        self.item_ratings(doc, system).iter().find(|r| r.rater == rater)
    }

    pub fn rater_index(&self, id: &str) -> Option<usize> {
        self.raters.iter().position(|r| r == id)
    }

    pub fn system_index(&self, id: &str) -> Option<usize> {
        self.systems.iter().position(|s| s == id)
    }

    pub fn total_segments(&self) -> usize {
        self.documents.iter().map(|d| d.n_segments).sum()
    }

    pub fn stats(&self) -> DatasetStats {
        stats(self)
    }

    /// Reads and validates a dataset; returns the first violation on failure.
    pub fn ingest(
        path: &Path,
        mapping: &ColumnMapping,
        weights: &WeightTable,
    ) -> Result<RatingDataset, CorpusError> {
        ingest(path, mapping, weights)
    }

    /// Builds a dataset from already-parsed rows, enforcing every invariant.
    pub fn from_rows(
        rows: Vec<RatingRow>,
        weights: &WeightTable,
        language_pair: Option<&str>,
    ) -> Result<RatingDataset, CorpusError> {
        let report = assemble(rows, weights, language_pair);
        report.into_result()
    }

    /// Writes the canonical TSV form.
    pub fn write_tsv<W: Write>(&self, out: W) -> Result<(), CorpusError> {
        write_tsv(self, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub n_documents: usize,
    pub n_segments: usize,
    pub min_segments_per_doc: usize,
    pub max_segments_per_doc: usize,
    pub n_raters: usize,
    pub n_systems: usize,
    pub n_item_ratings: usize,
    /// `(bucket_id, n_docs)` in bucket order.
    pub bucket_doc_counts: Vec<(String, usize)>,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "documents          {}", self.n_documents)?;
        writeln!(f, "segments           {}", self.n_segments)?;
        writeln!(f, "min segments/doc   {}", self.min_segments_per_doc)?;
        writeln!(f, "max segments/doc   {}", self.max_segments_per_doc)?;
        writeln!(f, "unique raters      {}", self.n_raters)?;
        writeln!(f, "systems            {}", self.n_systems)?;
        writeln!(f, "item ratings       {}", self.n_item_ratings)?;
        write!(f, "buckets            {}", self.bucket_doc_counts.len())
    }
}

pub fn stats(ds: &RatingDataset) -> DatasetStats {
    let seg_counts = ds.documents.iter().map(|d| d.n_segments);
    DatasetStats {
        n_documents: ds.documents.len(),
        n_segments: ds.total_segments(),
        min_segments_per_doc: seg_counts.clone().min().unwrap_or(0),
        max_segments_per_doc: seg_counts.max().unwrap_or(0),
        n_raters: ds.raters.len(),
        n_systems: ds.systems.len(),
        n_item_ratings: ds.items.iter().map(Vec::len).sum(),
        bucket_doc_counts: ds
            .buckets
            .iter()
            .map(|b| (b.id.clone(), b.docs.len()))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketLayout {
    pub bucket_id: String,
    pub rater_ids: Vec<String>,
    pub n_docs: usize,
}

/// One entry per bucket, ordered by bucket id.
pub fn bucket_layout(ds: &RatingDataset) -> Vec<BucketLayout> {
    ds.buckets
        .iter()
        .map(|b| BucketLayout {
            bucket_id: b.id.clone(),
            rater_ids: b.raters.iter().map(|&r| ds.raters[r].clone()).collect(),
            n_docs: b.docs.len(),
        })
        .collect()
}

/// Orders ids so that embedded integers compare numerically (`doc2 < doc10`).
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let mut ai = a.chars().peekable();
    let mut bi = b.chars().peekable();
    loop {
        match (ai.peek().copied(), bi.peek().copied()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let mut na = String::new();
                while let Some(c) = ai.peek().copied().filter(char::is_ascii_digit) {
                    na.push(c);
                    ai.next();
                }
                let mut nb = String::new();
                while let Some(c) = bi.peek().copied().filter(char::is_ascii_digit) {
                    nb.push(c);
                    bi.next();
                }
                let ta = na.trim_start_matches('0');
                let tb = nb.trim_start_matches('0');
                let ord = ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb));
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(&y);
                }
                ai.next();
                bi.next();
            }
        }
    }
}

fn sorted_natural(set: BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = set.into_iter().collect();
    v.sort_by(|a, b| natural_cmp(a, b));
    v
}

// ---------------------------------------------------------------------------
// Column mapping

/// Maps logical fields onto the columns of an input file.
///
/// Loaded from a flat key-value file; keys are the canonical column names,
/// values the header names in the file. `severity.<raw> = major|minor|none`
/// adds severity aliases, `seg_index_base = 1` accepts 1-based segment
/// indices and `language_pair = <name>` sets the pair when no column holds it.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMapping {
    pub lang_pair: Option<String>,
    pub bucket_id: Option<String>,
    pub doc_id: String,
    pub seg_index: String,
    pub system_id: String,
    pub rater_id: String,
    pub severity: Option<String>,
    pub category: Option<String>,
    pub score: Option<String>,
    pub target_text: Option<String>,
    pub span_start: Option<String>,
    pub span_end: Option<String>,
    /// Raw severity value -> severity (`None` marks a no-error row).
    pub severity_aliases: BTreeMap<String, Option<Severity>>,
    pub seg_index_base: usize,
    pub language_pair: Option<String>,
    /// When false, optional columns absent from the header are silently skipped.
    pub strict: bool,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        let s = |x: &str| Some(x.to_string());
        let mut severity_aliases = BTreeMap::new();
        for raw in ["no-error", "none", "neutral"] {
            severity_aliases.insert(raw.to_string(), None);
        }
        ColumnMapping {
            lang_pair: s("lang_pair"),
            bucket_id: s("bucket_id"),
            doc_id: "doc_id".into(),
            seg_index: "seg_index".into(),
            system_id: "system_id".into(),
            rater_id: "rater_id".into(),
            severity: s("severity"),
            category: s("category"),
            score: s("score"),
            target_text: s("target_text"),
            span_start: s("span_start"),
            span_end: s("span_end"),
            severity_aliases,
            seg_index_base: 0,
            language_pair: None,
            strict: false,
        }
    }
}

impl ColumnMapping {
    /// Parses a mapping file. Columns not mentioned keep no mapping, except
    /// the four required ones which default to their canonical names.
    pub fn from_kv(doc: &KvDocument) -> Result<Self, ConfigError> {
        let root = doc.root();
        let mut m = ColumnMapping {
            lang_pair: None,
            bucket_id: None,
            severity: None,
            category: None,
            score: None,
            target_text: None,
            span_start: None,
            span_end: None,
            strict: true,
            ..ColumnMapping::default()
        };
        for entry in &root.entries {
            let key = entry.key.as_str();
            let value = entry.value.clone();
            let opt = (!value.is_empty()).then(|| value.clone());
            if let Some(raw) = key.strip_prefix("severity.") {
                let sev = match value.to_ascii_lowercase().as_str() {
                    "none" | "" => None,
                    other => Some(other.parse::<Severity>().map_err(|e| {
                        ConfigError::InvalidValue {
                            section: root.label(),
                            key: key.to_string(),
                            message: e,
                        }
                    })?),
                };
                m.severity_aliases.insert(raw.to_ascii_lowercase(), sev);
                continue;
            }
            match key {
                "lang_pair" => m.lang_pair = opt,
                "bucket_id" => m.bucket_id = opt,
                "doc_id" => m.doc_id = value,
                "seg_index" => m.seg_index = value,
                "system_id" => m.system_id = value,
                "rater_id" => m.rater_id = value,
                "severity" => m.severity = opt,
                "category" => m.category = opt,
                "score" => m.score = opt,
                "target_text" => m.target_text = opt,
                "span_start" => m.span_start = opt,
                "span_end" => m.span_end = opt,
                "language_pair" => m.language_pair = opt,
                "seg_index_base" => {
                    m.seg_index_base = root.parse::<usize>("seg_index_base")?.unwrap_or(0);
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        section: root.label(),
                        key: key.to_string(),
                    })
                }
            }
        }
        let has_annotations = m.severity.is_some() && m.category.is_some();
        if !has_annotations && m.score.is_none() {
            return Err(ConfigError::MissingKey {
                section: root.label(),
                key: "severity+category or score".into(),
            });
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_kv(&KvDocument::read(path)?)
    }
}

// ---------------------------------------------------------------------------
// Rows and assembly

/// One parsed input row: a single error annotation, or a no-error marker.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingRow {
    pub line: usize,
    pub lang_pair: Option<String>,
    pub bucket_id: Option<String>,
    pub doc_id: String,
    pub seg_index: usize,
    pub system_id: String,
    pub rater_id: String,
    pub annotation: Option<ErrorAnnotation>,
    pub score: Option<f64>,
    pub target_text: Option<String>,
}

/// All violations found while validating one input.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<CorpusError>,
    pub dataset: Option<RatingDataset>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty() && self.dataset.is_some()
    }

    pub fn into_result(self) -> Result<RatingDataset, CorpusError> {
        match (self.violations.into_iter().next(), self.dataset) {
            (Some(e), _) => Err(e),
            (None, Some(ds)) => Ok(ds),
            (None, None) => Err(CorpusError::Empty),
        }
    }
}

#[derive(Default)]
struct PendingRating {
    line: usize,
    annotations: Vec<ErrorAnnotation>,
    score: Option<f64>,
    target_text: Option<String>,
}

/// Reads `path` and returns the first violation, or the dataset.
pub fn ingest(
    path: &Path,
    mapping: &ColumnMapping,
    weights: &WeightTable,
) -> Result<RatingDataset, CorpusError> {
    validate(path, mapping, weights).into_result()
}

/// Reads `path` and collects every violation.
pub fn validate(path: &Path, mapping: &ColumnMapping, weights: &WeightTable) -> ValidationReport {
    match std::fs::File::open(path) {
        Ok(f) => validate_reader(f, mapping, weights),
        Err(e) => ValidationReport {
            violations: vec![CorpusError::Io(format!("{}: {e}", path.display()))],
            dataset: None,
        },
    }
}

pub fn validate_reader<R: Read>(
    input: R,
    mapping: &ColumnMapping,
    weights: &WeightTable,
) -> ValidationReport {
    match parse_rows(input, mapping) {
        Ok((rows, mut violations)) => {
            if !violations.is_empty() {
                return ValidationReport {
                    violations: std::mem::take(&mut violations),
                    dataset: None,
                };
            }
            assemble(rows, weights, mapping.language_pair.as_deref())
        }
        Err(e) => ValidationReport {
            violations: vec![e],
            dataset: None,
        },
    }
}

struct ColumnIndex {
    lang_pair: Option<usize>,
    bucket_id: Option<usize>,
    doc_id: usize,
    seg_index: usize,
    system_id: usize,
    rater_id: usize,
    severity: Option<usize>,
    category: Option<usize>,
    score: Option<usize>,
    target_text: Option<usize>,
    span_start: Option<usize>,
    span_end: Option<usize>,
}

fn resolve_columns(header: &csv::StringRecord, m: &ColumnMapping) -> Result<ColumnIndex, CorpusError> {
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let required = |name: &str| find(name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()));
    let optional = |name: &Option<String>| -> Result<Option<usize>, CorpusError> {
        match name {
            None => Ok(None),
            Some(n) => match find(n) {
                Some(i) => Ok(Some(i)),
                None if m.strict => Err(CorpusError::MissingColumn(n.clone())),
                None => Ok(None),
            },
        }
    };
    let idx = ColumnIndex {
        lang_pair: optional(&m.lang_pair)?,
        bucket_id: optional(&m.bucket_id)?,
        doc_id: required(&m.doc_id)?,
        seg_index: required(&m.seg_index)?,
        system_id: required(&m.system_id)?,
        rater_id: required(&m.rater_id)?,
        severity: optional(&m.severity)?,
        category: optional(&m.category)?,
        score: optional(&m.score)?,
        target_text: optional(&m.target_text)?,
        span_start: optional(&m.span_start)?,
        span_end: optional(&m.span_end)?,
    };
    if idx.score.is_none() {
        if idx.severity.is_none() {
            return Err(CorpusError::MissingColumn(
                m.severity.clone().unwrap_or_else(|| "severity".into()),
            ));
        }
        if idx.category.is_none() {
            return Err(CorpusError::MissingColumn(
                m.category.clone().unwrap_or_else(|| "category".into()),
            ));
        }
    }
    Ok(idx)
}

fn parse_rows<R: Read>(
    input: R,
    mapping: &ColumnMapping,
) -> Result<(Vec<RatingRow>, Vec<CorpusError>), CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| CorpusError::Io(e.to_string()))?
        .clone();
    let cols = resolve_columns(&header, mapping)?;

    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::Io(e.to_string()))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        match parse_row(&record, line, &cols, mapping) {
            Ok(Some(row)) => rows.push(row),
            Ok(None) => {}
            Err(e) => violations.push(e),
        }
    }
    Ok((rows, violations))
}

fn parse_row(
    record: &csv::StringRecord,
    line: usize,
    cols: &ColumnIndex,
    mapping: &ColumnMapping,
) -> Result<Option<RatingRow>, CorpusError> {
    if record.iter().all(|f| f.trim().is_empty()) {
        return Ok(None);
    }
    let get = |i: usize| record.get(i).unwrap_or("").trim();
    let get_opt = |i: Option<usize>| i.map(get).filter(|s| !s.is_empty());
    let invalid = |column: &str, value: &str| CorpusError::InvalidValue {
        line,
        column: column.to_string(),
        value: value.to_string(),
    };
    let non_empty = |i: usize, column: &str| -> Result<String, CorpusError> {
        let v = get(i);
        if v.is_empty() {
            Err(invalid(column, v))
        } else {
            Ok(v.to_string())
        }
    };

    let doc_id = non_empty(cols.doc_id, "doc_id")?;
    let system_id = non_empty(cols.system_id, "system_id")?;
    let rater_id = non_empty(cols.rater_id, "rater_id")?;
    let raw_seg = get(cols.seg_index);
    let seg_index = raw_seg
        .parse::<usize>()
        .ok()
        .and_then(|s| s.checked_sub(mapping.seg_index_base))
        .ok_or_else(|| invalid("seg_index", raw_seg))?;

    let severity = match get_opt(cols.severity) {
        None => None,
        Some(raw) => match mapping.severity_aliases.get(&raw.to_ascii_lowercase()) {
            Some(alias) => *alias,
            None => Some(raw.parse::<Severity>().map_err(|_| invalid("severity", raw))?),
        },
    };
    let span = match (get_opt(cols.span_start), get_opt(cols.span_end)) {
        (None, None) => None,
        (Some(s), Some(e)) => {
            let s = s.parse::<usize>().map_err(|_| invalid("span_start", s))?;
            let e = e.parse::<usize>().map_err(|_| invalid("span_end", e))?;
            if s > e {
                return Err(CorpusError::InvalidSpan {
                    line,
                    start: s,
                    end: e,
                    len: 0,
                });
            }
            Some((s, e))
        }
        (Some(v), None) => return Err(invalid("span_end", v)),
        (None, Some(v)) => return Err(invalid("span_start", v)),
    };
    let annotation = severity.map(|severity| ErrorAnnotation {
        category: get_opt(cols.category).unwrap_or("").to_string(),
        severity,
        span,
    });
    let score = match get_opt(cols.score) {
        None => None,
        Some(raw) => {
            let v = raw.parse::<f64>().map_err(|_| invalid("score", raw))?;
            if !v.is_finite() || v < 0.0 {
                return Err(invalid("score", raw));
            }
            Some(v)
        }
    };
    Ok(Some(RatingRow {
        line,
        lang_pair: get_opt(cols.lang_pair).map(str::to_string),
        bucket_id: get_opt(cols.bucket_id).map(str::to_string),
        doc_id,
        seg_index,
        system_id,
        rater_id,
        annotation,
        score,
        target_text: cols
            .target_text
            .and_then(|i| record.get(i))
            .filter(|s| !s.is_empty())
            .map(str::to_string),
    }))
}

type RatingKey = (usize, usize, usize, usize); // (doc, seg, system, rater)

/// Turns rows into a validated dataset, collecting every violation.
pub fn assemble(
    rows: Vec<RatingRow>,
    weights: &WeightTable,
    language_pair: Option<&str>,
) -> ValidationReport {
    let mut violations = Vec::new();
    if rows.is_empty() {
        return ValidationReport {
            violations: vec![CorpusError::Empty],
            dataset: None,
        };
    }

    let lang_pairs: BTreeSet<String> = rows.iter().filter_map(|r| r.lang_pair.clone()).collect();
    if lang_pairs.len() > 1 {
        let line = rows
            .iter()
            .find(|r| r.lang_pair.as_ref() != lang_pairs.iter().next())
            .map(|r| r.line)
            .unwrap_or(0);
        violations.push(CorpusError::InvalidValue {
            line,
            column: "lang_pair".into(),
            value: lang_pairs.iter().cloned().collect::<Vec<_>>().join(","),
        });
    }
    let language_pair = lang_pairs
        .iter()
        .next()
        .cloned()
        .or_else(|| language_pair.map(str::to_string))
        .unwrap_or_else(|| "unknown".to_string());

    let doc_ids = sorted_natural(rows.iter().map(|r| r.doc_id.clone()).collect());
    let systems = sorted_natural(rows.iter().map(|r| r.system_id.clone()).collect());
    let raters = sorted_natural(rows.iter().map(|r| r.rater_id.clone()).collect());
    let doc_ix: HashMap<&str, usize> = doc_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let sys_ix: HashMap<&str, usize> = systems.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let rater_ix: HashMap<&str, usize> = raters.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    // Group rows into segment ratings.
    let mut pending: BTreeMap<RatingKey, PendingRating> = BTreeMap::new();
    let mut doc_raters: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); doc_ids.len()];
    let mut doc_bucket_ids: Vec<BTreeSet<String>> = vec![BTreeSet::new(); doc_ids.len()];
    let mut doc_max_seg: Vec<usize> = vec![0; doc_ids.len()];
    for row in rows {
        let d = doc_ix[row.doc_id.as_str()];
        let s = sys_ix[row.system_id.as_str()];
        let r = rater_ix[row.rater_id.as_str()];
        doc_raters[d].insert(r);
        if let Some(b) = &row.bucket_id {
            doc_bucket_ids[d].insert(b.clone());
        }
        doc_max_seg[d] = doc_max_seg[d].max(row.seg_index);
        let entry = pending.entry((d, row.seg_index, s, r)).or_insert_with(|| PendingRating {
            line: row.line,
            ..PendingRating::default()
        });
        if let Some(score) = row.score {
            match entry.score {
                Some(prev) if (prev - score).abs() > SCORE_TOLERANCE => {
                    violations.push(CorpusError::ScoreMismatch {
                        line: row.line,
                        doc: row.doc_id.clone(),
                        seg: row.seg_index,
                        system: row.system_id.clone(),
                        rater: row.rater_id.clone(),
                        given: score,
                        computed: prev,
                    });
                }
                _ => entry.score = Some(score),
            }
        }
        if entry.target_text.is_none() {
            entry.target_text = row.target_text.clone();
        }
        if let Some(a) = row.annotation {
            if let (Some((start, end)), Some(text)) = (a.span, &entry.target_text) {
                let len = text.chars().count();
                if end > len {
                    violations.push(CorpusError::InvalidSpan {
                        line: row.line,
                        start,
                        end,
                        len,
                    });
                }
            }
            entry.annotations.push(a);
        }
    }

    // Buckets.
    let explicit = doc_bucket_ids.iter().any(|b| !b.is_empty());
    let mut bucket_of_doc: Vec<String> = vec![String::new(); doc_ids.len()];
    if explicit {
        for (d, ids) in doc_bucket_ids.iter().enumerate() {
            match ids.len() {
                1 => bucket_of_doc[d] = ids.iter().next().unwrap().clone(),
                0 => violations.push(CorpusError::InconsistentBuckets(format!(
                    "doc `{}` has no bucket id",
                    doc_ids[d]
                ))),
                _ => violations.push(CorpusError::InconsistentBuckets(format!(
                    "doc `{}` appears in buckets {}",
                    doc_ids[d],
                    ids.iter().cloned().collect::<Vec<_>>().join(",")
                ))),
            }
        }
    } else {
        for (d, rs) in doc_raters.iter().enumerate() {
            bucket_of_doc[d] = rs.iter().map(|&r| raters[r].as_str()).collect::<Vec<_>>().join("+");
        }
        // A rater set strictly contained in another signals missing ratings.
        let sets: BTreeSet<&BTreeSet<usize>> = doc_raters.iter().collect();
        for a in &sets {
            for b in &sets {
                if a.len() < b.len() && a.is_subset(b) {
                    violations.push(CorpusError::InconsistentBuckets(format!(
                        "rater set {{{}}} is a strict subset of {{{}}}",
                        a.iter().map(|&r| raters[r].as_str()).collect::<Vec<_>>().join(","),
                        b.iter().map(|&r| raters[r].as_str()).collect::<Vec<_>>().join(","),
                    )));
                }
            }
        }
    }
    let bucket_ids = sorted_natural(bucket_of_doc.iter().filter(|b| !b.is_empty()).cloned().collect());
    let mut buckets: Vec<Bucket> = bucket_ids
        .iter()
        .map(|id| Bucket {
            id: id.clone(),
            docs: Vec::new(),
            raters: Vec::new(),
        })
        .collect();
    let bucket_ix: HashMap<&str, usize> = bucket_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut documents = Vec::with_capacity(doc_ids.len());
    for (d, id) in doc_ids.iter().enumerate() {
        let b = bucket_ix.get(bucket_of_doc[d].as_str()).copied().unwrap_or(0);
        if !buckets.is_empty() {
            buckets[b].docs.push(d);
        }
        documents.push(Document {
            id: id.clone(),
            n_segments: doc_max_seg[d] + 1,
            bucket: b,
        });
    }
    for bucket in &mut buckets {
        let set: BTreeSet<usize> = bucket.docs.iter().flat_map(|&d| doc_raters[d].iter().copied()).collect();
        bucket.raters = set.into_iter().collect();
    }
    let mut seen_sets: BTreeMap<&[usize], &str> = BTreeMap::new();
    for bucket in &buckets {
        if let Some(other) = seen_sets.insert(&bucket.raters, &bucket.id) {
            violations.push(CorpusError::InconsistentBuckets(format!(
                "buckets `{}` and `{}` share the same rater set",
                other, bucket.id
            )));
        }
    }
    if buckets.is_empty() {
        violations.push(CorpusError::Empty);
    }

    // Items: every bucket rater rates every segment of every system.
    let n_sys = systems.len();
    let mut items: Vec<Vec<ItemRating>> = Vec::with_capacity(documents.len() * n_sys);
    for doc in &documents {
        let d = doc_ix[doc.id.as_str()];
        let bucket_raters: &[usize] = buckets.get(doc.bucket).map(|b| &b.raters[..]).unwrap_or(&[]);
        for (s, system) in systems.iter().enumerate() {
            let mut ratings = Vec::with_capacity(bucket_raters.len());
            for &r in bucket_raters {
                let mut segments = Vec::with_capacity(doc.n_segments);
                let mut missing = Vec::new();
                for seg in 0..doc.n_segments {
                    match pending.remove(&(d, seg, s, r)) {
                        Some(p) => {
                            let computed = segment_score(&p.annotations, weights);
                            let score = match p.score {
                                Some(given) if !p.annotations.is_empty() => {
                                    if (given - computed).abs() > SCORE_TOLERANCE {
                                        violations.push(CorpusError::ScoreMismatch {
                                            line: p.line,
                                            doc: doc.id.clone(),
                                            seg,
                                            system: system.clone(),
                                            rater: raters[r].clone(),
                                            given,
                                            computed,
                                        });
                                    }
                                    computed
                                }
                                Some(given) => given,
                                None => computed,
                            };
                            segments.push(SegmentRating {
                                annotations: p.annotations,
                                score,
                                target_text: p.target_text,
                            });
                        }
                        None => missing.push(seg),
                    }
                }
                if !missing.is_empty() {
                    let detail = if missing.len() == doc.n_segments {
                        "no ratings".to_string()
                    } else {
                        format!(
                            "missing segments {}",
                            missing.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")
                        )
                    };
                    violations.push(CorpusError::IncompleteRatings {
                        doc: doc.id.clone(),
                        system: systems[s].clone(),
                        rater: raters[r].clone(),
                        detail,
                    });
                }
                ratings.push(ItemRating { rater: r, segments });
            }
            items.push(ratings);
        }
    }

    let dataset = violations.is_empty().then_some(RatingDataset {
        language_pair,
        documents,
        systems,
        raters,
        buckets,
        items,
    });
    ValidationReport { violations, dataset }
}

// ---------------------------------------------------------------------------
// Export

fn format_score(x: f64) -> String {
    format!("{x}")
}

pub fn write_tsv<W: Write>(ds: &RatingDataset, out: W) -> Result<(), CorpusError> {
    let io = |e: std::io::Error| CorpusError::Io(e.to_string());
    let mut out = std::io::BufWriter::new(out);
    let any_span = ds.items.iter().flatten().flat_map(|i| &i.segments).any(|s| s.annotations.iter().any(|a| a.span.is_some()));
    let any_text = ds.items.iter().flatten().flat_map(|i| &i.segments).any(|s| s.target_text.is_some());

    let mut header = vec![
        "lang_pair", "bucket_id", "doc_id", "seg_index", "system_id", "rater_id", "severity", "category", "score",
    ];
    if any_span {
        header.extend(["span_start", "span_end"]);
    }
    if any_text {
        header.push("target_text");
    }
    writeln!(out, "{}", header.join("\t")).map_err(io)?;

    for (d, doc) in ds.documents.iter().enumerate() {
        let bucket = &ds.buckets[doc.bucket].id;
        for seg in 0..doc.n_segments {
            for (s, system) in ds.systems.iter().enumerate() {
                for rating in ds.item_ratings(d, s) {
                    let sr = &rating.segments[seg];
                    let rater = &ds.raters[rating.rater];
                    let prefix = format!(
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        ds.language_pair, bucket, doc.id, seg, system, rater
                    );
                    let text = sr.target_text.as_deref().unwrap_or("");
                    let mut emit = |sev: &str, cat: &str, span: Option<(usize, usize)>| -> std::io::Result<()> {
                        write!(out, "{prefix}\t{sev}\t{cat}\t{}", format_score(sr.score))?;
                        if any_span {
                            match span {
                                Some((a, b)) => write!(out, "\t{a}\t{b}")?,
                                None => write!(out, "\t\t")?,
                            }
                        }
                        if any_text {
                            write!(out, "\t{text}")?;
                        }
                        writeln!(out)
                    };
                    if sr.annotations.is_empty() {
                        emit("", "", None).map_err(io)?;
                    } else {
                        for a in &sr.annotations {
                            emit(a.severity.as_str(), &a.category, a.span).map_err(io)?;
                        }
                    }
                }
            }
        }
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "lang_pair\tdoc_id\tseg_index\tsystem_id\trater_id\tseverity\tcategory\tscore\n";

    /// 2 docs x 2 systems x 3 raters, one segment per doc.
    fn tiny_fixture() -> String {
        let mut s = String::from(HEADER);
        for doc in ["d1", "d2"] {
            for sys in ["sysA", "sysB"] {
                for rater in ["r1", "r2", "r3"] {
                    if doc == "d1" && sys == "sysA" && rater == "r1" {
                        s.push_str(&format!("en-de\t{doc}\t0\t{sys}\t{rater}\tMajor\tAccuracy/Mistranslation\t\n"));
                        s.push_str(&format!("en-de\t{doc}\t0\t{sys}\t{rater}\tMinor\tFluency/Grammar\t\n"));
                    } else {
                        s.push_str(&format!("en-de\t{doc}\t0\t{sys}\t{rater}\t\t\t\n"));
                    }
                }
            }
        }
        s
    }

    fn load(text: &str) -> ValidationReport {
        validate_reader(text.as_bytes(), &ColumnMapping::default(), &WeightTable::default())
    }

    #[test]
    fn tiny_fixture_ingests() {
        let ds = load(&tiny_fixture()).into_result().unwrap();
        let st = ds.stats();
        assert_eq!(st.n_documents, 2);
        assert_eq!(st.n_systems, 2);
        assert_eq!(st.n_raters, 3);
        assert_eq!(st.n_item_ratings, 12);
        assert_eq!(ds.buckets().len(), 1);
        assert_eq!(ds.item_ratings(0, 0)[0].segments[0].score, 6.0);
        assert_eq!(ds.item_ratings(0, 0)[0].error_count(), 2);
        assert_eq!(ds.language_pair, "en-de");
    }

    #[test]
    fn critical_severity_is_rejected() {
        let text = tiny_fixture().replacen("Major", "Critical", 1);
        let report = load(&text);
        assert!(!report.is_valid());
        assert!(matches!(
            &report.violations[0],
            CorpusError::InvalidValue { column, value, line: 2 } if column == "severity" && value == "Critical"
        ));
    }

    #[test]
    fn missing_rater_rating_is_incomplete() {
        let text: String = tiny_fixture()
            .lines()
            .filter(|l| !l.contains("d2\t0\tsysB\tr3"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = load(&text).into_result().unwrap_err();
        assert_eq!(
            err,
            CorpusError::IncompleteRatings {
                doc: "d2".into(),
                system: "sysB".into(),
                rater: "r3".into(),
                detail: "no ratings".into()
            }
        );
    }

    #[test]
    fn missing_column_detected() {
        let text = tiny_fixture().replace("rater_id", "annotator");
        assert_eq!(load(&text).into_result().unwrap_err(), CorpusError::MissingColumn("rater_id".into()));
    }

    #[test]
    fn score_mismatch_detected() {
        let text = tiny_fixture().replacen("Accuracy/Mistranslation\t", "Accuracy/Mistranslation\t4.0", 1);
        let err = load(&text).into_result().unwrap_err();
        assert!(matches!(err, CorpusError::ScoreMismatch { given, computed, .. } if given == 4.0 && computed == 6.0));
    }

    #[test]
    fn explicit_buckets_with_shared_rater_sets_rejected() {
        let mut s = String::from("doc_id\tbucket_id\tseg_index\tsystem_id\trater_id\tseverity\tcategory\n");
        for (doc, bucket) in [("d1", "1"), ("d2", "2")] {
            for rater in ["a", "b"] {
                s.push_str(&format!("{doc}\t{bucket}\t0\tX\t{rater}\t\t\n"));
            }
        }
        let err = load(&s).into_result().unwrap_err();
        assert!(matches!(err, CorpusError::InconsistentBuckets(_)));
    }

    #[test]
    fn inferred_buckets_from_rater_sets() {
        let mut s = String::from("doc_id\tseg_index\tsystem_id\trater_id\tseverity\tcategory\n");
        for (doc, raters) in [("d1", ["a", "b"]), ("d2", ["b", "c"]), ("d3", ["a", "b"])] {
            for rater in raters {
                s.push_str(&format!("{doc}\t0\tX\t{rater}\t\t\n"));
            }
        }
        let ds = load(&s).into_result().unwrap();
        let layout = bucket_layout(&ds);
        assert_eq!(layout.len(), 2);
        assert_eq!(layout[0].bucket_id, "a+b");
        assert_eq!(layout[0].n_docs, 2);
        assert_eq!(layout[1].rater_ids, vec!["b".to_string(), "c".to_string()]);
    }

    #[test]
    fn span_outside_target_rejected() {
        let s = "doc_id\tseg_index\tsystem_id\trater_id\tseverity\tcategory\tspan_start\tspan_end\ttarget_text\n\
                 d1\t0\tX\ta\tMinor\tFluency\t2\t9\tshort\n";
        let err = load(s).into_result().unwrap_err();
        assert!(matches!(err, CorpusError::InvalidSpan { end: 9, len: 5, .. }));
    }

    #[test]
    fn mapping_file_renames_columns() {
        let doc: KvDocument = "doc_id = doc\nseg_index = seg\nsystem_id = sys\nrater_id = rater\n\
                               severity = sev\ncategory = cat\nseg_index_base = 1\nseverity.no-error = none\n"
            .parse()
            .unwrap();
        let m = ColumnMapping::from_kv(&doc).unwrap();
        let s = "doc\tseg\tsys\trater\tsev\tcat\nD\t1\tX\ta\tno-error\t\nD\t1\tY\ta\tmajor\tAccuracy\n";
        let ds = validate_reader(s.as_bytes(), &m, &WeightTable::default()).into_result().unwrap();
        assert_eq!(ds.documents()[0].n_segments, 1);
        assert_eq!(ds.item_ratings(0, 1)[0].segments[0].score, 5.0);
        assert_eq!(ds.item_ratings(0, 0)[0].segments[0].score, 0.0);
    }

    #[test]
    fn strict_mapping_requires_named_columns() {
        let doc: KvDocument = "score = mqm".parse().unwrap();
        let m = ColumnMapping::from_kv(&doc).unwrap();
        let s = "doc_id\tseg_index\tsystem_id\trater_id\tscore\nD\t0\tX\ta\t1\n";
        let err = validate_reader(s.as_bytes(), &m, &WeightTable::default()).into_result().unwrap_err();
        assert_eq!(err, CorpusError::MissingColumn("mqm".into()));
    }

    #[test]
    fn natural_order() {
        let mut v = vec!["doc10", "doc2", "doc1", "a"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, vec!["a", "doc1", "doc2", "doc10"]);
    }

    #[test]
    fn export_reingest_round_trip() {
        let ds = load(&tiny_fixture()).into_result().unwrap();
        let mut buf = Vec::new();
        ds.write_tsv(&mut buf).unwrap();
        let again = load(std::str::from_utf8(&buf).unwrap()).into_result().unwrap();
        // Explicit bucket column now names the inferred bucket.
        assert_eq!(again, ds);
    }
}
