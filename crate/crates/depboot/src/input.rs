//! Streaming readers for CSV (RFC 4180, header required) and JSONL
//! observation files.
//!
//! Rows that fail validation are skipped and counted; structural IO errors
//! abort. Callers check [`IngestStats::check`] once the stream ends.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use depboot_core::Observation;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

/// Malformed rows above this share of all rows fail the ingest.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;
const KEPT_EXAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl`/`.ndjson`/`.json` mean JSONL; anything else is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown format `{other}` (expected csv or jsonl)")),
        }
    }
}

/// One wire-format observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub user_id: String,
    pub item_id: String,
    pub condition: Option<u8>,
    pub outcome: f64,
    /// Opaque day label; ISO dates sort correctly as strings.
    pub day: Option<String>,
}

impl Record {
    /// Converts to an observation, failing if the condition is absent.
    pub fn into_observation(self) -> Option<Observation> {
        let condition = self.condition?;
        Some(Observation::new(self.user_id, self.item_id, condition, self.outcome))
    }

    /// Converts to an observation, using `default` when the condition is
    /// absent.
    pub fn into_observation_or(self, default: u8) -> Observation {
        let d = self.condition.unwrap_or(default);
        self.into_observation_as(d)
    }

    /// Converts to an observation with the condition replaced.
    pub fn into_observation_as(self, condition: u8) -> Observation {
        Observation::new(self.user_id, self.item_id, condition, self.outcome)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    /// Rows accepted.
    pub rows: u64,
    pub malformed: u64,
    /// The first few malformed rows with their reasons.
    pub malformed_examples: Vec<String>,
}

impl IngestStats {
    fn reject(&mut self, line: u64, reason: impl std::fmt::Display) {
        self.malformed += 1;
        if self.malformed_examples.len() < KEPT_EXAMPLES {
            self.malformed_examples.push(format!("row {line}: {reason}"));
        }
    }

    /// Adds the counts of another input.
    pub fn absorb(&mut self, other: &IngestStats) {
        self.rows += other.rows;
        self.malformed += other.malformed;
        for e in &other.malformed_examples {
            if self.malformed_examples.len() < KEPT_EXAMPLES {
                self.malformed_examples.push(e.clone());
            }
        }
    }

    /// Fails when no row was accepted or too many rows were malformed.
    pub fn check(&self) -> AppResult<()> {
        let total = self.rows + self.malformed;
        if self.malformed as f64 > MAX_MALFORMED_FRACTION * total as f64 {
            return Err(AppError::Input(format!(
                "{} of {} rows are malformed (limit {}%); first: {}",
                self.malformed,
                total,
                MAX_MALFORMED_FRACTION * 100.0,
                self.malformed_examples.join("; ")
            )));
        }
        if self.rows == 0 {
            return Err(AppError::Input("no observations".into()));
        }
        Ok(())
    }
}

struct CsvColumns {
    user: usize,
    item: usize,
    outcome: usize,
    condition: Option<usize>,
    day: Option<usize>,
}

enum Source {
    Csv {
        reader: csv::Reader<Box<dyn Read>>,
        record: csv::StringRecord,
        cols: CsvColumns,
    },
    Jsonl {
        lines: BufReader<Box<dyn Read>>,
        buf: String,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonId {
    Text(String),
    Unsigned(u64),
    Signed(i64),
}

impl JsonId {
    fn into_string(self) -> String {
        match self {
            JsonId::Text(s) => s,
            JsonId::Unsigned(v) => v.to_string(),
            JsonId::Signed(v) => v.to_string(),
        }
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    user_id: JsonId,
    item_id: JsonId,
    #[serde(default)]
    condition: Option<u8>,
    outcome: f64,
    #[serde(default)]
    day: Option<String>,
}

/// Pull-based reader over one input.
pub struct RecordReader {
    source: Source,
    stats: IngestStats,
    line: u64,
    has_condition: bool,
}

impl std::fmt::Debug for RecordReader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecordReader")
            .field("stats", &self.stats)
            .field("line", &self.line)
            .finish()
    }
}

fn parse_condition(s: &str) -> Result<Option<u8>, String> {
    match s.trim() {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(format!("condition must be 0 or 1, got `{other}`")),
    }
}

fn check_fields(user: &str, item: &str, outcome: f64) -> Result<(), String> {
    if user.is_empty() {
        return Err("missing user_id".into());
    }
    if item.is_empty() {
        return Err("missing item_id".into());
    }
    if !outcome.is_finite() {
        return Err(format!("outcome is not finite: {outcome}"));
    }
    Ok(())
}

impl RecordReader {
    /// Opens a file, or stdin for `-`. The format defaults to the extension.
    pub fn open(path: &Path, format: Option<Format>) -> AppResult<Self> {
        let format = format.unwrap_or_else(|| Format::from_path(path));
        let inner: Box<dyn Read> = if path.as_os_str() == "-" {
            Box::new(io::stdin())
        } else {
            let f = File::open(path).map_err(|e| AppError::io(format!("cannot open {}", path.display()), e))?;
            Box::new(f)
        };
        Self::from_reader(inner, format)
    }

    pub fn from_reader(inner: Box<dyn Read>, format: Format) -> AppResult<Self> {
        let source = match format {
            Format::Jsonl => Source::Jsonl {
                lines: BufReader::with_capacity(1 << 16, inner),
                buf: String::new(),
            },
            Format::Csv => {
                let mut reader = csv::ReaderBuilder::new()
                    .has_headers(true)
                    .flexible(true)
                    .from_reader(inner);
                let headers = reader
                    .headers()
                    .map_err(|e| AppError::Input(format!("cannot read CSV header: {e}")))?
                    .clone();
                let find = |name: &str| headers.iter().position(|h| h.trim() == name);
                let need = |name: &str| find(name).ok_or_else(|| AppError::Input(format!("CSV header lacks `{name}`")));
                let cols = CsvColumns {
                    user: need("user_id")?,
                    item: need("item_id")?,
                    outcome: need("outcome")?,
                    condition: find("condition"),
                    day: find("day"),
                };
                Source::Csv {
                    reader,
                    record: csv::StringRecord::new(),
                    cols,
                }
            }
        };
        let has_condition = match &source {
            Source::Csv { cols, .. } => cols.condition.is_some(),
            Source::Jsonl { .. } => true,
        };
        Ok(RecordReader {
            source,
            stats: IngestStats::default(),
            line: 0,
            has_condition,
        })
    }

    /// False for CSV inputs whose header has no `condition` column.
    pub fn has_condition_column(&self) -> bool {
        self.has_condition
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn into_stats(self) -> IngestStats {
        self.stats
    }

    /// Marks an accepted record as malformed after the fact, e.g. when a
    /// command needs a field the row lacks.
    pub fn reject_last(&mut self, reason: &str) {
        self.stats.rows -= 1;
        self.stats.reject(self.line, reason);
    }

    /// Next valid record; malformed rows are counted and skipped.
    pub fn next_record(&mut self) -> AppResult<Option<Record>> {
        loop {
            self.line += 1;
            let parsed = match &mut self.source {
                Source::Csv { reader, record, cols } => match reader.read_record(record) {
                    Ok(false) => return Ok(None),
                    Ok(true) => Self::parse_csv(record, cols),
                    Err(e) => match e.kind() {
                        csv::ErrorKind::Io(_) => return Err(AppError::Input(format!("read failed: {e}"))),
                        _ => Err(e.to_string()),
                    },
                },
                Source::Jsonl { lines, buf } => {
                    buf.clear();
                    match lines.read_line(buf) {
                        Ok(0) => return Ok(None),
                        Ok(_) => {
                            if buf.trim().is_empty() {
                                self.line -= 1;
                                continue;
                            }
                            Self::parse_json(buf)
                        }
                        Err(e) if e.kind() == io::ErrorKind::InvalidData => Err(format!("invalid UTF-8: {e}")),
                        Err(e) => return Err(AppError::io("read failed", e)),
                    }
                }
            };
            match parsed {
                Ok(rec) => {
                    self.stats.rows += 1;
                    return Ok(Some(rec));
                }
                Err(reason) => self.stats.reject(self.line, reason),
            }
        }
    }

    fn parse_csv(record: &csv::StringRecord, cols: &CsvColumns) -> Result<Record, String> {
        let field = |i: usize| record.get(i).unwrap_or("");
        let user = field(cols.user);
        let item = field(cols.item);
        let outcome_text = field(cols.outcome).trim();
        if outcome_text.is_empty() {
            return Err("missing outcome".into());
        }
        let outcome: f64 = outcome_text
            .parse()
            .map_err(|_| format!("bad outcome `{outcome_text}`"))?;
        check_fields(user, item, outcome)?;
        let condition = match cols.condition {
            Some(i) => parse_condition(field(i))?,
            None => None,
        };
        let day = cols.day.map(field).filter(|d| !d.is_empty()).map(str::to_owned);
        Ok(Record {
            user_id: user.to_owned(),
            item_id: item.to_owned(),
            condition,
            outcome,
            day,
        })
    }

    fn parse_json(line: &str) -> Result<Record, String> {
        let r: JsonRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let (user, item) = (r.user_id.into_string(), r.item_id.into_string());
        check_fields(&user, &item, r.outcome)?;
        if let Some(c) = r.condition {
            if c > 1 {
                return Err(format!("condition must be 0 or 1, got {c}"));
            }
        }
        Ok(Record {
            user_id: user,
            item_id: item,
            condition: r.condition,
            outcome: r.outcome,
            day: r.day.filter(|d| !d.is_empty()),
        })
    }
}

impl Iterator for RecordReader {
    type Item = AppResult<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

/// Reads every valid record of several inputs in order.
pub fn read_all(paths: &[impl AsRef<Path>], format: Option<Format>) -> AppResult<(Vec<Record>, IngestStats)> {
    let mut out = Vec::new();
    let mut stats = IngestStats::default();
    for p in paths {
        let mut reader = RecordReader::open(p.as_ref(), format)?;
        while let Some(rec) = reader.next_record()? {
            out.push(rec);
        }
        stats.absorb(reader.stats());
    }
    Ok((out, stats))
}
