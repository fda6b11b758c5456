//! Loading, subsampling, and writing record sets (CSV and JSONL).

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    canonicalize_race, format_date, parse_iso_date, parse_mmddyyyy, validate_iso3, FieldKind, Gender, Iso3Mode,
    NameRecord, RaceRemapTable, TruthLabels,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("cannot sample {requested} records from a set of {available}")]
    SampleTooLarge { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateFormat {
    #[default]
    Mmddyyyy,
    Iso8601,
}

/// Which input columns feed which record fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    /// Row id column; when absent the 1-based data row number is used.
    pub id: Option<String>,
    pub full_name: Option<String>,
    pub first_name: Option<String>,
    pub last_name: Option<String>,
    pub gender: Option<String>,
    pub race: Option<String>,
    pub birth_date: Option<String>,
    pub nationality: Option<String>,
    pub age: Option<String>,
    pub date_format: DateFormat,
    /// Keep only the first row for each full name.
    pub dedupe_on_full_name: bool,
    /// Value for `NameRecord::source`.
    pub source: Option<String>,
}

impl ColumnMapping {
    /// Mapping matching the layout written by [`write_records`].
    pub fn canonical() -> Self {
        ColumnMapping {
            id: Some("id".into()),
            full_name: Some("full_name".into()),
            gender: Some("gender".into()),
            race: Some("race".into()),
            birth_date: Some("birth_date".into()),
            nationality: Some("nationality".into()),
            age: Some("age".into()),
            ..Default::default()
        }
    }

    fn truth_columns(&self) -> Vec<(FieldKind, &str)> {
        [
            (FieldKind::Gender, &self.gender),
            (FieldKind::Race, &self.race),
            (FieldKind::BirthDate, &self.birth_date),
            (FieldKind::Nationality, &self.nationality),
            (FieldKind::Age, &self.age),
        ]
        .into_iter()
        .filter_map(|(k, c)| c.as_deref().map(|c| (k, c)))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordSet {
    pub records: Vec<NameRecord>,
    /// Truth fields the source declares.
    pub schema: BTreeSet<FieldKind>,
}

impl RecordSet {
    pub fn new(records: Vec<NameRecord>, schema: BTreeSet<FieldKind>) -> Self {
        Self { records, schema }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, NameRecord> {
        self.records.iter()
    }

    pub fn get(&self, id: &str) -> Option<&NameRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Same schema, filtered records.
    pub fn filtered(&self, mut keep: impl FnMut(&NameRecord) -> bool) -> RecordSet {
        RecordSet { records: self.records.iter().filter(|r| keep(r)).cloned().collect(), schema: self.schema.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowWarning {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped_empty_names: usize,
    pub dropped_duplicates: usize,
    pub warnings: Vec<RowWarning>,
}

/// Loads a CSV (header required) or JSONL file, chosen by extension.
pub fn load_records(
    path: &Path,
    mapping: &ColumnMapping,
    remap: &RaceRemapTable,
) -> Result<(RecordSet, LoadReport), IngestError> {
    let display = path.display().to_string();
    let io_err = |source| IngestError::Io { path: display.clone(), source };
    let schema_err = |message: String| IngestError::Schema { path: display.clone(), message };

    if mapping.full_name.is_none() && (mapping.first_name.is_none() || mapping.last_name.is_none()) {
        return Err(schema_err("mapping needs a full_name column or both first_name and last_name".into()));
    }

    let is_jsonl = matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("jsonl" | "ndjson")
    );
    let rows: Vec<Row> = if is_jsonl {
        read_jsonl_rows(path).map_err(io_err)?
    } else {
        read_csv_rows(path, mapping).map_err(|e| match e {
            CsvFailure::Io(e) => io_err(e),
            CsvFailure::Schema(m) => schema_err(m),
        })?
    };

    let mut builder = Builder::new(mapping, remap);
    for (idx, row) in rows.into_iter().enumerate() {
        builder.push(idx + 1, row).map_err(schema_err)?;
    }
    Ok(builder.finish())
}

enum Row {
    Csv { headers: std::sync::Arc<Vec<String>>, values: Vec<String> },
    Json(serde_json::Map<String, serde_json::Value>),
}

impl Row {
    /// `None` when the column does not exist in this row.
    fn get(&self, column: &str) -> Option<String> {
        match self {
            Row::Csv { headers, values } => {
                headers.iter().position(|h| h == column).map(|i| values.get(i).cloned().unwrap_or_default())
            }
            // Absent keys read as empty values in JSONL.
            Row::Json(map) => Some(match map.get(column) {
                Some(serde_json::Value::String(s)) => s.clone(),
                None | Some(serde_json::Value::Null) => String::new(),
                Some(other) => other.to_string(),
            }),
        }
    }
}

enum CsvFailure {
    Io(std::io::Error),
    Schema(String),
}

fn read_csv_rows(path: &Path, mapping: &ColumnMapping) -> Result<Vec<Row>, CsvFailure> {
    let file = File::open(path).map_err(CsvFailure::Io)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CsvFailure::Schema(e.to_string()))?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').to_string())
        .collect();

    let mut required: Vec<&str> = mapping.truth_columns().into_iter().map(|(_, c)| c).collect();
    required.extend(
        [&mapping.id, &mapping.full_name, &mapping.first_name, &mapping.last_name]
            .into_iter()
            .flatten()
            .map(String::as_str),
    );
    if let Some(missing) = required.iter().find(|c| !headers.iter().any(|h| h == *c)) {
        return Err(CsvFailure::Schema(format!("mapped column {missing:?} not in header")));
    }

    let headers = std::sync::Arc::new(headers);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CsvFailure::Schema(e.to_string()))?;
        rows.push(Row::Csv { headers: headers.clone(), values: rec.iter().map(str::to_string).collect() });
    }
    Ok(rows)
}

fn read_jsonl_rows(path: &Path) -> Result<Vec<Row>, std::io::Error> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        match value {
            serde_json::Value::Object(map) => rows.push(Row::Json(map)),
            _ => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("line {}: expected a JSON object", n + 1),
                ))
            }
        }
    }
    Ok(rows)
}

struct Builder<'a> {
    mapping: &'a ColumnMapping,
    remap: &'a RaceRemapTable,
    records: Vec<NameRecord>,
    ids: HashSet<String>,
    names: HashSet<String>,
    report: LoadReport,
}

impl<'a> Builder<'a> {
    fn new(mapping: &'a ColumnMapping, remap: &'a RaceRemapTable) -> Self {
        Self {
            mapping,
            remap,
            records: Vec::new(),
            ids: HashSet::new(),
            names: HashSet::new(),
            report: LoadReport::default(),
        }
    }

    fn warn(&mut self, row: usize, message: String) {
        self.report.warnings.push(RowWarning { row, message });
    }

    fn push(&mut self, row_no: usize, row: Row) -> Result<(), String> {
        self.report.rows_read += 1;
        let m = self.mapping;
        let column = |c: &str| row.get(c).ok_or_else(|| format!("row {row_no}: mapped column {c:?} missing"));

        let full_name = match &m.full_name {
            Some(c) => column(c)?.trim().to_string(),
            None => {
                let first = column(m.first_name.as_deref().unwrap_or_default())?;
                let last = column(m.last_name.as_deref().unwrap_or_default())?;
                [first.trim(), last.trim()].into_iter().filter(|p| !p.is_empty()).collect::<Vec<_>>().join(" ")
            }
        };
        if full_name.is_empty() {
            self.report.dropped_empty_names += 1;
            return Ok(());
        }

        let id = match &m.id {
            Some(c) => column(c)?.trim().to_string(),
            None => row_no.to_string(),
        };
        if id.is_empty() {
            self.warn(row_no, "empty id; row dropped".into());
            self.report.dropped_duplicates += 1;
            return Ok(());
        }
        if self.ids.contains(&id) {
            self.warn(row_no, format!("duplicate id {id:?}; row dropped"));
            self.report.dropped_duplicates += 1;
            return Ok(());
        }
        if m.dedupe_on_full_name && !self.names.insert(full_name.clone()) {
            self.report.dropped_duplicates += 1;
            return Ok(());
        }

        let mut truth = TruthLabels::default();
        for (kind, col) in m.truth_columns() {
            let raw = column(col)?;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let parsed = match kind {
                FieldKind::Gender => Gender::from_token(raw).map(|g| truth.gender = Some(g)),
                FieldKind::Race => canonicalize_race(raw, self.remap).ok().map(|r| truth.race5 = Some(r)),
                FieldKind::BirthDate => {
                    let date = match m.date_format {
                        DateFormat::Mmddyyyy => parse_mmddyyyy(raw),
                        DateFormat::Iso8601 => parse_iso_date(raw),
                    };
                    date.map(|d| truth.birth_date = Some(d))
                }
                FieldKind::Nationality => {
                    validate_iso3(raw, Iso3Mode::Pattern).then(|| truth.nationality = Some(raw.to_string()))
                }
                FieldKind::Age => raw.parse::<u32>().ok().map(|a| truth.age = Some(a)),
                FieldKind::CountryOfOrigin | FieldKind::Ethnicity => None,
            };
            if parsed.is_none() {
                self.warn(row_no, format!("{kind}: unparseable value {raw:?}; left unset"));
            }
        }

        self.ids.insert(id.clone());
        self.records.push(NameRecord { id, full_name, truth, source: m.source.clone().unwrap_or_default() });
        Ok(())
    }

    fn finish(self) -> (RecordSet, LoadReport) {
        let schema = self.mapping.truth_columns().into_iter().map(|(k, _)| k).collect();
        (RecordSet::new(self.records, schema), self.report)
    }
}

/// Uniform sample without replacement; relative order of the input is kept.
pub fn subsample(rs: &RecordSet, n: usize, seed: u64) -> Result<RecordSet, IngestError> {
    if n > rs.len() {
        return Err(IngestError::SampleTooLarge { requested: n, available: rs.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, rs.len(), n).into_vec();
    picked.sort_unstable();
    Ok(RecordSet { records: picked.into_iter().map(|i| rs.records[i].clone()).collect(), schema: rs.schema.clone() })
}

/// Writes the canonical CSV layout (`ColumnMapping::canonical()` reads it back).
pub fn write_records(rs: &RecordSet, path: &Path) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    write_records_to(rs, BufWriter::new(file)).map_err(io_err)
}

pub fn write_records_to<W: Write>(rs: &RecordSet, writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "full_name", "source", "gender", "race", "birth_date", "nationality", "age"])?;
    for r in &rs.records {
        let t = &r.truth;
        w.write_record([
            r.id.clone(),
            r.full_name.clone(),
            r.source.clone(),
            t.gender.map(|g| g.to_string()).unwrap_or_default(),
            t.race5.map(|x| x.to_string()).unwrap_or_default(),
            t.birth_date.map(format_date).unwrap_or_default(),
            t.nationality.clone().unwrap_or_default(),
            t.age.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()
}
