//! Strict parsing of fixed-format model responses.
//!
//! Line matching climbs a fixed leniency ladder and stops there: exact label,
//! then case-insensitive label, then the same after stripping leading
//! markdown bullets and asterisks. No free-prose salvage.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{parse_mmddyyyy, validate_iso3, FieldFormat, FieldKind, FieldValue, Gender, Iso3Mode};
use crate::gateway::{RawResponse, ResponseStatus};
use crate::prompting::FieldProfile;

pub const MAX_FREE_TEXT_CHARS: usize = 120;

/// Cells below this success rate are flagged in reports; matches the
/// "more than 80% failures" highlighting rule.
pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldStatus {
    Ok,
    Missing,
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseOptions {
    pub iso3_mode: Iso3Mode,
}

/// Parsed output of one model for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "PredictionWire", try_from = "PredictionWire")]
pub struct Prediction {
    pub record_id: String,
    pub model_id: String,
    pub response: ResponseStatus,
    /// Present exactly for fields whose status is `Ok`.
    pub values: BTreeMap<FieldKind, FieldValue>,
    pub field_status: BTreeMap<FieldKind, FieldStatus>,
}

impl Prediction {
    pub fn status(&self, field: FieldKind) -> Option<FieldStatus> {
        self.field_status.get(&field).copied()
    }

    pub fn value(&self, field: FieldKind) -> Option<&FieldValue> {
        self.values.get(&field)
    }

    pub fn label(&self, field: FieldKind) -> Option<String> {
        self.values.get(&field).map(FieldValue::label)
    }
}

#[derive(Serialize, Deserialize)]
struct PredictionWire {
    record_id: String,
    model_id: String,
    response: ResponseStatus,
    values: BTreeMap<FieldKind, String>,
    field_status: BTreeMap<FieldKind, FieldStatus>,
}

impl From<Prediction> for PredictionWire {
    fn from(p: Prediction) -> Self {
        Self {
            record_id: p.record_id,
            model_id: p.model_id,
            response: p.response,
            values: p.values.iter().map(|(k, v)| (*k, v.label())).collect(),
            field_status: p.field_status,
        }
    }
}

impl TryFrom<PredictionWire> for Prediction {
    type Error = String;

    fn try_from(w: PredictionWire) -> Result<Self, Self::Error> {
        let mut values = BTreeMap::new();
        for (k, v) in w.values {
            let parsed =
                FieldValue::from_label(k, &v).ok_or_else(|| format!("{}: invalid {k} value {v:?}", w.record_id))?;
            values.insert(k, parsed);
        }
        for (k, s) in &w.field_status {
            if (*s == FieldStatus::Ok) != values.contains_key(k) {
                return Err(format!("{}: status/value mismatch for {k}", w.record_id));
            }
        }
        if values.keys().any(|k| !w.field_status.contains_key(k)) {
            return Err(format!("{}: value without status", w.record_id));
        }
        Ok(Self {
            record_id: w.record_id,
            model_id: w.model_id,
            response: w.response,
            values,
            field_status: w.field_status,
        })
    }
}

fn strip_leading_markup(line: &str) -> &str {
    line.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '-' | '+' | '•' | '#' | '>'))
}

/// Value after `<label>:` when the line carries this label.
fn labeled_value<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let line = strip_leading_markup(line);
    let head = line.get(..label.len())?;
    if !head.eq_ignore_ascii_case(label) {
        return None;
    }
    let rest = line[label.len()..].trim_start_matches(|c: char| c == '*' || c.is_whitespace());
    let value = rest.strip_prefix(':')?;
    Some(value.trim_matches(|c: char| c == '*' || c.is_whitespace()))
}

/// Validates a raw field value against the field's format.
pub fn parse_field_value(field: FieldKind, raw: &str, opts: &ParseOptions) -> Option<FieldValue> {
    if raw.is_empty() {
        return None;
    }
    match field.format() {
        FieldFormat::Iso3 => validate_iso3(raw, opts.iso3_mode).then(|| FieldValue::Iso3(raw.to_string())),
        FieldFormat::MOrF => Gender::from_token(raw).map(FieldValue::Gender),
        FieldFormat::Race5Enum => raw.parse().ok().map(FieldValue::Race),
        FieldFormat::FreeText => {
            (raw.chars().count() <= MAX_FREE_TEXT_CHARS).then(|| FieldValue::Text(raw.to_string()))
        }
        FieldFormat::Mmddyyyy => parse_mmddyyyy(raw).map(FieldValue::Date),
        FieldFormat::IntegerYears => {
            if raw.bytes().all(|b| b.is_ascii_digit()) {
                raw.parse().ok().map(FieldValue::Age)
            } else {
                None
            }
        }
    }
}

/// Total: never fails, every profile field gets a status.
pub fn parse_response(raw: &RawResponse, profile: &FieldProfile, opts: &ParseOptions) -> Prediction {
    let mut values = BTreeMap::new();
    let mut field_status = BTreeMap::new();
    for &field in profile.fields() {
        let status = if raw.status != ResponseStatus::Ok {
            FieldStatus::Missing
        } else {
            match raw.text.lines().find_map(|l| labeled_value(l, field.label())) {
                None => FieldStatus::Missing,
                Some(v) => match parse_field_value(field, v, opts) {
                    Some(value) => {
                        values.insert(field, value);
                        FieldStatus::Ok
                    }
                    None => FieldStatus::Malformed,
                },
            }
        };
        field_status.insert(field, status);
    }
    Prediction {
        record_id: raw.record_id.clone(),
        model_id: raw.model_id.clone(),
        response: raw.status,
        values,
        field_status,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityVerdict {
    Valid,
    Invalid,
    Unparseable,
}

/// The whole response, stripped of whitespace and punctuation, must be the
/// single token VALID or INVALID (any case).
pub fn parse_validity_verdict(raw: &RawResponse) -> ValidityVerdict {
    if raw.status != ResponseStatus::Ok {
        return ValidityVerdict::Unparseable;
    }
    let token = raw.text.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    if token.eq_ignore_ascii_case("valid") {
        ValidityVerdict::Valid
    } else if token.eq_ignore_ascii_case("invalid") {
        ValidityVerdict::Invalid
    } else {
        ValidityVerdict::Unparseable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldParseStats {
    pub model_id: String,
    pub field: FieldKind,
    pub ok: usize,
    pub missing: usize,
    pub malformed: usize,
    /// `ok / (ok + missing + malformed)`; absent when there were no predictions.
    pub success_rate: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponseCounts {
    pub ok: usize,
    pub transport_error: usize,
    pub refusal_empty: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub flag_threshold: f64,
    pub models: Vec<String>,
    pub fields: Vec<FieldKind>,
    pub cells: Vec<FieldParseStats>,
    /// Transport failures and empty replies, kept apart from parse failures.
    pub responses: BTreeMap<String, ResponseCounts>,
}

impl ParseReport {
    pub fn cell(&self, model_id: &str, field: FieldKind) -> Option<&FieldParseStats> {
        self.cells.iter().find(|c| c.model_id == model_id && c.field == field)
    }

    pub fn success_rate(&self, model_id: &str, field: FieldKind) -> Option<f64> {
        self.cell(model_id, field).and_then(|c| c.success_rate)
    }

    /// Aligned text table: one row per model, one column per field; flagged
    /// cells carry a trailing `!`.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Model".to_string()];
        header.extend(self.fields.iter().map(|f| f.label().to_string()));
        let mut rows = vec![header];
        for m in &self.models {
            let mut row = vec![m.clone()];
            for &f in &self.fields {
                row.push(match self.cell(m, f) {
                    Some(FieldParseStats { success_rate: Some(r), flagged, .. }) => {
                        format!("{r:.2}{}", if *flagged { "!" } else { "" })
                    }
                    _ => "-".into(),
                });
            }
            rows.push(row);
        }
        render_table(&rows, &[])
    }
}

/// Per (model, field) parse-success accounting. Models listed in `models`
/// with no predictions get absent rates rather than zero.
pub fn parse_report(preds: &[Prediction], models: &[String], fields: &[FieldKind], flag_threshold: f64) -> ParseReport {
    let mut model_order: Vec<String> = models.to_vec();
    for p in preds {
        if !model_order.contains(&p.model_id) {
            model_order.push(p.model_id.clone());
        }
    }
    let mut field_order: Vec<FieldKind> = fields.to_vec();
    for p in preds {
        for f in p.field_status.keys() {
            if !field_order.contains(f) {
                field_order.push(*f);
            }
        }
    }

    let mut counts: BTreeMap<(String, FieldKind), [usize; 3]> = BTreeMap::new();
    let mut responses: BTreeMap<String, ResponseCounts> =
        model_order.iter().map(|m| (m.clone(), ResponseCounts::default())).collect();
    for p in preds {
        let rc = responses.entry(p.model_id.clone()).or_default();
        match p.response {
            ResponseStatus::Ok => rc.ok += 1,
            ResponseStatus::TransportError => rc.transport_error += 1,
            ResponseStatus::RefusalEmpty => rc.refusal_empty += 1,
        }
        for (f, s) in &p.field_status {
            let c = counts.entry((p.model_id.clone(), *f)).or_default();
            c[*s as usize] += 1;
        }
    }

    let mut cells = Vec::new();
    for m in &model_order {
        for &f in &field_order {
            let [ok, missing, malformed] = counts.get(&(m.clone(), f)).copied().unwrap_or_default();
            let total = ok + missing + malformed;
            let success_rate = (total > 0).then(|| ok as f64 / total as f64);
            cells.push(FieldParseStats {
                model_id: m.clone(),
                field: f,
                ok,
                missing,
                malformed,
                success_rate,
                flagged: success_rate.is_some_and(|r| r < flag_threshold),
            });
        }
    }
    ParseReport { flag_threshold, models: model_order, fields: field_order, cells, responses }
}

/// Left-aligned first column, right-aligned others; `rules` lists row
/// indices after which a horizontal rule is drawn (row 0 always gets one).
pub(crate) fn render_table(rows: &[Vec<String>], rules: &[usize]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let total: usize = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let mut line = String::new();
        for (c, w) in widths.iter().enumerate() {
            let cell = row.get(c).map(String::as_str).unwrap_or("");
            if c == 0 {
                let _ = write!(line, "{cell:<w$}");
            } else {
                let _ = write!(line, "  {cell:>w$}");
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
        if i == 0 || rules.contains(&i) {
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
