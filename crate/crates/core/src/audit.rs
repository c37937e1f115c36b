//! Human-labelled accuracy bookkeeping over generation records.
//!
//! Labels live in a tab-separated file with the header
//! `record_id, category, item_index, verdict, note`. Reports give, per
//! category, the labelled total, the number correct and the percentage,
//! either pooled over all labels or as the mean of per-study percentages.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GenerationKind, GenerationRecord, ParsedPayload, RecordId};

pub const DEFAULT_STUDY_KEY: &str = "study";
pub const LABEL_HEADER: [&str; 5] = ["record_id", "category", "item_index", "verdict", "note"];

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("label for record {record}: {reason}")]
    DanglingLabel { record: RecordId, reason: String },
    #[error("record {record} has no '{key}' tag, required in macro mode")]
    MissingStudyKey { record: RecordId, key: String },
    #[error("duplicate label for record {record}, {category}, item {item:?}")]
    DuplicateLabel {
        record: RecordId,
        category: AuditCategory,
        item: Option<usize>,
    },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unreadable generation log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditCategory {
    EventOccurrence,
    EventYear,
    Description,
    Relationship,
}

impl AuditCategory {
    pub const ALL: [AuditCategory; 4] = [
        AuditCategory::EventOccurrence,
        AuditCategory::EventYear,
        AuditCategory::Description,
        AuditCategory::Relationship,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuditCategory::EventOccurrence => "event_occurrence",
            AuditCategory::EventYear => "event_year",
            AuditCategory::Description => "description",
            AuditCategory::Relationship => "relationship",
        }
    }

    /// Accepts snake_case or CamelCase spellings.
    pub fn parse(token: &str) -> Option<Self> {
        let norm: String = token
            .trim()
            .chars()
            .filter(|c| *c != '_' && *c != '-' && *c != ' ')
            .flat_map(char::to_lowercase)
            .collect();
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().replace('_', "") == norm)
    }

    /// Labels of this category address one event of an Events record.
    pub fn per_event(self) -> bool {
        matches!(
            self,
            AuditCategory::EventOccurrence | AuditCategory::EventYear
        )
    }

    fn accepts(self, kind: GenerationKind) -> bool {
        match self {
            AuditCategory::EventOccurrence | AuditCategory::EventYear => {
                kind == GenerationKind::Events
            }
            AuditCategory::Description => {
                matches!(kind, GenerationKind::Explain | GenerationKind::Questions)
            }
            AuditCategory::Relationship => kind == GenerationKind::Relationship,
        }
    }
}

impl std::fmt::Display for AuditCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Incorrect => "incorrect",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token.trim().to_ascii_lowercase().as_str() {
            "correct" => Some(Verdict::Correct),
            "incorrect" => Some(Verdict::Incorrect),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLabel {
    pub record_id: RecordId,
    pub category: AuditCategory,
    /// Index into the record's parsed items; required for per-event categories.
    pub item_index: Option<usize>,
    pub verdict: Verdict,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMode {
    #[default]
    Pooled,
    /// Mean of per-study percentages.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: AuditCategory,
    pub total: u64,
    pub correct: u64,
    /// Percentage in tenths, rounded half-up; `None` when nothing was labelled.
    pub percent_tenths: Option<u64>,
    /// Studies contributing to a macro mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub studies: Option<usize>,
}

impl CategoryRow {
    /// One decimal place, or "n/a".
    pub fn percent_label(&self) -> String {
        match self.percent_tenths {
            Some(t) => format!("{}.{}", t / 10, t % 10),
            None => "n/a".to_string(),
        }
    }

    pub fn percent(&self) -> Option<f64> {
        self.percent_tenths.map(|t| t as f64 / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mode: AuditMode,
    pub rows: Vec<CategoryRow>,
}

impl AuditReport {
    pub fn row(&self, category: AuditCategory) -> &CategoryRow {
        self.rows
            .iter()
            .find(|r| r.category == category)
            .expect("every category has a row")
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:>7} {:>8} {:>9}",
            "category", "total", "correct", "accuracy"
        );
        for r in &self.rows {
            let pct = match r.percent_tenths {
                Some(_) => format!("{}%", r.percent_label()),
                None => "n/a".into(),
            };
            let _ = writeln!(
                out,
                "{:<18} {:>7} {:>8} {:>9}",
                r.category.as_str(),
                r.total,
                r.correct,
                pct
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// round_half_up(1000 * num / den) for a nonnegative fraction.
fn tenths_half_up(num: u128, den: u128) -> u64 {
    ((2000 * num + den) / (2 * den)) as u64
}

/// Exact fraction sum with reduction.
#[derive(Clone, Copy)]
struct Frac {
    num: u128,
    den: u128,
}

impl Frac {
    fn zero() -> Self {
        Frac { num: 0, den: 1 }
    }

    fn add(self, num: u128, den: u128) -> Self {
        let n = self.num * den + num * self.den;
        let d = self.den * den;
        let g = gcd(n, d).max(1);
        Frac {
            num: n / g,
            den: d / g,
        }
    }
}

fn item_count(record: &GenerationRecord) -> Option<usize> {
    match record.parsed.as_ref()? {
        ParsedPayload::Events { events } => Some(events.len()),
        ParsedPayload::Questions { questions } => Some(questions.len()),
        ParsedPayload::Explain { .. }
        | ParsedPayload::Relationship { .. }
        | ParsedPayload::Image { .. } => Some(1),
    }
}

/// Checks that every label refers to an existing record and item and that
/// no (record, category, item) is labelled twice.
pub fn validate_labels<'a>(
    log: &'a [GenerationRecord],
    labels: &[AuditLabel],
) -> Result<Vec<&'a GenerationRecord>, AuditError> {
    let by_id: BTreeMap<&RecordId, &GenerationRecord> = log.iter().map(|r| (&r.id, r)).collect();
    let mut seen = HashSet::new();
    let mut resolved = Vec::with_capacity(labels.len());
    for l in labels {
        let dangling = |reason: String| AuditError::DanglingLabel {
            record: l.record_id.clone(),
            reason,
        };
        let rec = by_id
            .get(&l.record_id)
            .ok_or_else(|| dangling("record not in log".into()))?;
        if !l.category.accepts(rec.kind) {
            return Err(dangling(format!(
                "category {} does not apply to a {} record",
                l.category, rec.kind
            )));
        }
        let count =
            item_count(rec).ok_or_else(|| dangling("record has no parsed output".into()))?;
        match l.item_index {
            None if l.category.per_event() => {
                return Err(dangling(format!(
                    "category {} needs an item index",
                    l.category
                )))
            }
            Some(i) if i >= count => {
                return Err(dangling(format!(
                    "item {i} out of range (record has {count})"
                )))
            }
            _ => {}
        }
        if !seen.insert((&l.record_id, l.category, l.item_index)) {
            return Err(AuditError::DuplicateLabel {
                record: l.record_id.clone(),
                category: l.category,
                item: l.item_index,
            });
        }
        resolved.push(*rec);
    }
    Ok(resolved)
}

pub fn audit_report(
    log: &[GenerationRecord],
    labels: &[AuditLabel],
    mode: AuditMode,
    study_key: Option<&str>,
) -> Result<AuditReport, AuditError> {
    let records = validate_labels(log, labels)?;
    let key = study_key.unwrap_or(DEFAULT_STUDY_KEY);

    // category -> study -> (total, correct); pooled mode uses one study.
    let mut counts: BTreeMap<AuditCategory, BTreeMap<&str, (u64, u64)>> = BTreeMap::new();
    for (label, rec) in labels.iter().zip(records) {
        let study = match mode {
            AuditMode::Pooled => "",
            AuditMode::Macro => rec.tags.get(key).map(String::as_str).ok_or_else(|| {
                AuditError::MissingStudyKey {
                    record: rec.id.clone(),
                    key: key.to_string(),
                }
            })?,
        };
        let entry = counts
            .entry(label.category)
            .or_default()
            .entry(study)
            .or_default();
        entry.0 += 1;
        if label.verdict == Verdict::Correct {
            entry.1 += 1;
        }
    }

    let rows = AuditCategory::ALL
        .into_iter()
        .map(|category| {
            let studies = counts.remove(&category).unwrap_or_default();
            let total: u64 = studies.values().map(|s| s.0).sum();
            let correct: u64 = studies.values().map(|s| s.1).sum();
            let (percent_tenths, n_studies) = match mode {
                AuditMode::Pooled => (
                    (total > 0).then(|| tenths_half_up(correct as u128, total as u128)),
                    None,
                ),
                AuditMode::Macro => {
                    let k = studies.len() as u128;
                    let sum = studies
                        .values()
                        .fold(Frac::zero(), |acc, (t, c)| acc.add(*c as u128, *t as u128));
                    (
                        (k > 0).then(|| tenths_half_up(sum.num, sum.den * k)),
                        Some(studies.len()),
                    )
                }
            };
            CategoryRow {
                category,
                total,
                correct,
                percent_tenths,
                studies: n_studies,
            }
        })
        .collect();
    Ok(AuditReport { mode, rows })
}

/// Reads a labels table. The header row is optional; blank lines are skipped.
pub fn read_labels<R: Read>(reader: R) -> Result<Vec<AuditLabel>, AuditError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| AuditError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(i as u64 + 1, |p| p.line());
        let err = |message: String| AuditError::Parse { line, message };
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if i == 0 && row.get(0).map(str::trim) == Some(LABEL_HEADER[0]) {
            continue;
        }
        if row.len() < 4 || row.len() > 5 {
            return Err(err(format!("expected 4 or 5 fields, found {}", row.len())));
        }
        let record_id = row[0].trim();
        if record_id.is_empty() {
            return Err(err("empty record_id".into()));
        }
        let category = AuditCategory::parse(&row[1])
            .ok_or_else(|| err(format!("unknown category '{}'", &row[1])))?;
        let item_index = match row[2].trim() {
            "" | "-" => None,
            s => Some(
                s.parse::<usize>()
                    .map_err(|_| err(format!("bad item_index '{s}'")))?,
            ),
        };
        if category.per_event() && item_index.is_none() {
            return Err(err(format!("category {category} needs an item_index")));
        }
        let verdict =
            Verdict::parse(&row[3]).ok_or_else(|| err(format!("bad verdict '{}'", &row[3])))?;
        let note = row
            .get(4)
            .map(|n| unescape(n.trim_end_matches('\r')))
            .filter(|n| !n.is_empty());
        out.push(AuditLabel {
            record_id: RecordId::from(record_id),
            category,
            item_index,
            verdict,
            note,
        });
    }
    Ok(out)
}

pub fn write_labels<W: Write>(writer: W, labels: &[AuditLabel]) -> Result<(), AuditError> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(writer);
    let io = |e: csv::Error| AuditError::Io {
        path: PathBuf::from("<labels>"),
        source: std::io::Error::other(e),
    };
    wtr.write_record(LABEL_HEADER).map_err(io)?;
    for l in labels {
        let item = l.item_index.map(|i| i.to_string()).unwrap_or_default();
        let note = l.note.as_deref().map(escape).unwrap_or_default();
        wtr.write_record([
            l.record_id.as_str(),
            l.category.as_str(),
            item.as_str(),
            l.verdict.as_str(),
            note.as_str(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|source| AuditError::Io {
        path: PathBuf::from("<labels>"),
        source,
    })
}

/// Tabs and newlines in notes are stored as `\t` / `\n`.
fn escape(note: &str) -> String {
    note.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
        .replace('\r', "\\r")
}

fn unescape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

pub fn load_labels(path: &Path) -> Result<Vec<AuditLabel>, AuditError> {
    let f = std::fs::File::open(path).map_err(|source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_labels(f)
}

pub fn save_labels(path: &Path, labels: &[AuditLabel]) -> Result<(), AuditError> {
    let f = std::fs::File::create(path).map_err(|source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_labels(f, labels)
}

/// Parses a generation log: a session document (its `records`), a JSON
/// array of records, or one record per line.
pub fn parse_log(text: &str) -> Result<Vec<GenerationRecord>, AuditError> {
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(trimmed) {
        let records = match value {
            serde_json::Value::Object(mut obj) => obj
                .remove("records")
                .ok_or_else(|| AuditError::Log("object without a 'records' field".into()))?,
            v @ serde_json::Value::Array(_) => v,
            _ => return Err(AuditError::Log("expected an object or array".into())),
        };
        return serde_json::from_value(records).map_err(|e| AuditError::Log(e.to_string()));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| AuditError::Log(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn load_log(path: &Path) -> Result<Vec<GenerationRecord>, AuditError> {
    let text = std::fs::read_to_string(path).map_err(|source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_log(&text)
}
