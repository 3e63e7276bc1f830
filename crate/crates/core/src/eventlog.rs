//! Event-log and dataset parsing, plus the arrow-separated variant text
//! format used in prompts and model answers.
//!
//! Two on-disk formats are understood:
//!
//! - `VariantCsv`: header `variant_id,activities,label`, one labeled variant
//!   per row, activities joined with ` -> `.
//! - `RawEventCsv`: header `case_id,activity,timestamp` with RFC 3339
//!   timestamps. Events are grouped by case, ordered by time, and identical
//!   traces are collapsed into one unlabeled (normal) variant. This schema is
//!   a minimal assumption about what a raw log looks like.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical separator on the wire.
pub const ARROW: &str = "->";
/// Accepted on input as an alternative to [`ARROW`].
pub const UNICODE_ARROW: &str = "→";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EventLogError {
    #[error("invalid activity name {0:?}")]
    InvalidActivity(String),
    #[error("a variant needs at least one activity")]
    EmptyVariant,
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("duplicate variant id {id} (line {line})")]
    DuplicateId { id: u64, line: u64 },
    #[error("io: {0}")]
    Io(String),
}

impl EventLogError {
    fn parse(line: u64, reason: impl Into<String>) -> Self {
        EventLogError::Parse {
            line,
            reason: reason.into(),
        }
    }
}

/// A single activity label, e.g. `Activity Q`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Activity(String);

impl Activity {
    pub fn new(name: impl Into<String>) -> Result<Self, EventLogError> {
        let name = name.into();
        if name.is_empty()
            || name.contains('\n')
            || name.contains('\r')
            || name.contains(ARROW)
            || name.contains(UNICODE_ARROW)
        {
            return Err(EventLogError::InvalidActivity(name));
        }
        Ok(Activity(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Activity {
    type Error = EventLogError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Activity::new(value)
    }
}

impl From<Activity> for String {
    fn from(a: Activity) -> String {
        a.0
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An ordered, non-empty sequence of activities.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Activity>", into = "Vec<Activity>")]
pub struct Variant(Vec<Activity>);

impl Variant {
    pub fn new(activities: Vec<Activity>) -> Result<Self, EventLogError> {
        if activities.is_empty() {
            return Err(EventLogError::EmptyVariant);
        }
        Ok(Variant(activities))
    }

    /// Convenience constructor from string labels.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, EventLogError> {
        let activities = names
            .iter()
            .map(|n| Activity::new(n.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Variant::new(activities)
    }

    pub fn activities(&self) -> &[Activity] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Activities joined by `sep`.
    pub fn join(&self, sep: &str) -> String {
        let mut out = String::new();
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                out.push_str(sep);
            }
            out.push_str(a.as_str());
        }
        out
    }
}

impl TryFrom<Vec<Activity>> for Variant {
    type Error = EventLogError;
    fn try_from(value: Vec<Activity>) -> Result<Self, Self::Error> {
        Variant::new(value)
    }
}

impl From<Variant> for Vec<Activity> {
    fn from(v: Variant) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Rework,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Rework => "rework",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Label::Normal),
            "rework" => Ok(Label::Rework),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledVariant {
    pub id: u64,
    pub variant: Variant,
    pub label: Label,
}

impl LabeledVariant {
    pub fn new(id: u64, variant: Variant, label: Label) -> Self {
        LabeledVariant { id, variant, label }
    }
}

/// Items in presentation order, with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDataset {
    items: Vec<LabeledVariant>,
    pub provenance: String,
}

impl LabeledDataset {
    pub fn new(
        items: Vec<LabeledVariant>,
        provenance: impl Into<String>,
    ) -> Result<Self, EventLogError> {
        let mut seen = HashSet::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if !seen.insert(item.id) {
                return Err(EventLogError::DuplicateId {
                    id: item.id,
                    line: i as u64 + 1,
                });
            }
        }
        Ok(LabeledDataset {
            items,
            provenance: provenance.into(),
        })
    }

    pub fn items(&self) -> &[LabeledVariant] {
        &self.items
    }

    pub fn into_items(self) -> Vec<LabeledVariant> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&LabeledVariant> {
        self.items.iter().find(|lv| lv.id == id)
    }

    pub fn count(&self, label: Label) -> usize {
        self.items.iter().filter(|lv| lv.label == label).count()
    }

    /// Splits into (normals, anomalies), preserving relative order.
    pub fn partition(&self) -> (Vec<LabeledVariant>, Vec<LabeledVariant>) {
        self.items
            .iter()
            .cloned()
            .partition(|lv| lv.label == Label::Normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    VariantCsv,
    RawEventCsv,
}

/// `"<id># A -> B -> C"`.
pub fn format_variant(lv: &LabeledVariant) -> String {
    format!("{}# {}", lv.id, lv.variant.join(" -> "))
}

/// Splits on `->` or `→`, trimming each token.
fn split_activities(text: &str) -> Result<Vec<Activity>, String> {
    let normalized;
    let text = if text.contains(UNICODE_ARROW) {
        normalized = text.replace(UNICODE_ARROW, ARROW);
        normalized.as_str()
    } else {
        text
    };
    text.split(ARROW)
        .map(|tok| {
            let tok = tok.trim();
            if tok.is_empty() {
                Err("empty activity".to_string())
            } else {
                Activity::new(tok).map_err(|e| e.to_string())
            }
        })
        .collect()
}

/// Inverse of [`format_variant`]. Also accepts bare tokens (`1# A->B`).
pub fn parse_variant_line(line: &str) -> Result<(u64, Vec<Activity>), EventLogError> {
    let (id_part, rest) = line
        .split_once('#')
        .ok_or_else(|| EventLogError::parse(1, "missing '#' separator"))?;
    let id_part = id_part.trim();
    if id_part.is_empty() || !id_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(EventLogError::parse(
            1,
            format!("non-numeric variant id {id_part:?}"),
        ));
    }
    let id: u64 = id_part
        .parse()
        .map_err(|_| EventLogError::parse(1, format!("variant id out of range {id_part:?}")))?;
    let activities = split_activities(rest).map_err(|r| EventLogError::parse(1, r))?;
    Ok((id, activities))
}

/// Reads a dataset from UTF-8 bytes.
pub fn parse_dataset<R: Read>(
    mut source: R,
    format: DatasetFormat,
    provenance: &str,
) -> Result<LabeledDataset, EventLogError> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| EventLogError::Io(e.to_string()))?;
    match format {
        DatasetFormat::VariantCsv => parse_variant_csv(&text, provenance),
        DatasetFormat::RawEventCsv => parse_raw_event_csv(&text, provenance),
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn check_header(
    rdr: &mut csv::Reader<&[u8]>,
    expected: &[&str],
) -> Result<(), EventLogError> {
    let header = rdr
        .headers()
        .map_err(|e| EventLogError::parse(1, e.to_string()))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(EventLogError::parse(
            1,
            format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn record_line(rec: &csv::StringRecord, fallback: u64) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(fallback)
}

fn parse_variant_csv(text: &str, provenance: &str) -> Result<LabeledDataset, EventLogError> {
    let mut rdr = csv_reader(text);
    check_header(&mut rdr, &["variant_id", "activities", "label"])?;
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
            EventLogError::parse(line, e.to_string())
        })?;
        let line = record_line(&rec, i as u64 + 2);
        if rec.len() != 3 {
            return Err(EventLogError::parse(
                line,
                format!("expected 3 columns, found {}", rec.len()),
            ));
        }
        let id_text = rec[0].trim();
        let id: u64 = id_text
            .parse()
            .map_err(|_| EventLogError::parse(line, format!("non-integer variant_id {id_text:?}")))?;
        let activities =
            split_activities(&rec[1]).map_err(|r| EventLogError::parse(line, r))?;
        let label: Label = rec[2]
            .trim()
            .parse()
            .map_err(|r: String| EventLogError::parse(line, r))?;
        if !seen.insert(id) {
            return Err(EventLogError::DuplicateId { id, line });
        }
        let variant = Variant::new(activities).map_err(|e| EventLogError::parse(line, e.to_string()))?;
        items.push(LabeledVariant::new(id, variant, label));
    }
    LabeledDataset::new(items, provenance)
}

fn parse_raw_event_csv(text: &str, provenance: &str) -> Result<LabeledDataset, EventLogError> {
    struct Event {
        time: DateTime<FixedOffset>,
        row: usize,
        activity: Activity,
    }

    let mut rdr = csv_reader(text);
    check_header(&mut rdr, &["case_id", "activity", "timestamp"])?;
    let mut case_order: Vec<String> = Vec::new();
    let mut cases: HashMap<String, Vec<Event>> = HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(row as u64 + 2);
            EventLogError::parse(line, e.to_string())
        })?;
        let line = record_line(&rec, row as u64 + 2);
        if rec.len() != 3 {
            return Err(EventLogError::parse(
                line,
                format!("expected 3 columns, found {}", rec.len()),
            ));
        }
        let case = rec[0].trim().to_string();
        if case.is_empty() {
            return Err(EventLogError::parse(line, "empty case_id"));
        }
        let name = rec[1].trim();
        if name.is_empty() {
            return Err(EventLogError::parse(line, "empty activity"));
        }
        let activity = Activity::new(name).map_err(|e| EventLogError::parse(line, e.to_string()))?;
        let time = DateTime::parse_from_rfc3339(rec[2].trim())
            .map_err(|e| EventLogError::parse(line, format!("bad timestamp: {e}")))?;
        let events = cases.entry(case.clone()).or_insert_with(|| {
            case_order.push(case);
            Vec::new()
        });
        events.push(Event { time, row, activity });
    }

    let mut seen: HashSet<Vec<Activity>> = HashSet::new();
    let mut items = Vec::new();
    for case in case_order {
        let mut events = cases.remove(&case).unwrap_or_default();
        events.sort_by(|a, b| a.time.cmp(&b.time).then(a.row.cmp(&b.row)));
        let trace: Vec<Activity> = events.into_iter().map(|e| e.activity).collect();
        if seen.insert(trace.clone()) {
            let id = items.len() as u64 + 1;
            items.push(LabeledVariant::new(id, Variant::new(trace)?, Label::Normal));
        }
    }
    LabeledDataset::new(items, provenance)
}

/// Writes `VariantCsv`. Output is byte-stable for a given dataset.
pub fn write_variant_csv<W: Write>(ds: &LabeledDataset, out: W) -> Result<(), EventLogError> {
    write_variant_rows(ds.items(), out)
}

pub fn write_variant_rows<W: Write>(items: &[LabeledVariant], out: W) -> Result<(), EventLogError> {
    let io = |e: csv::Error| EventLogError::Io(e.to_string());
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    wtr.write_record(["variant_id", "activities", "label"]).map_err(io)?;
    for lv in items {
        wtr.write_record([
            lv.id.to_string(),
            lv.variant.join(" -> "),
            lv.label.as_str().to_string(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| EventLogError::Io(e.to_string()))
}
