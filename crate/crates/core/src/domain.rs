//! Shared domain types: records, truth labels, label vocabularies, and the
//! canonicalization rules every other module relies on.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("invalid remap table: {0}")]
    BadRemapTable(String),
}

/// Self-reported gender. Binary on purpose: anything else is a parse failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
        }
    }

    /// Accepts `M`/`F` and the listed synonyms `male`/`female`, case-insensitively.
    pub fn from_token(token: &str) -> Option<Gender> {
        match token.to_ascii_lowercase().as_str() {
            "m" | "male" => Some(Gender::M),
            "f" | "female" => Some(Gender::F),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The five race classes used by prompts and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Race5 {
    Hispanic,
    WhiteNotHispanic,
    BlackNotHispanic,
    Other,
    AsianOrPacificIslander,
}

impl Race5 {
    pub const ALL: [Race5; 5] = [
        Race5::Hispanic,
        Race5::WhiteNotHispanic,
        Race5::BlackNotHispanic,
        Race5::Other,
        Race5::AsianOrPacificIslander,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Race5::Hispanic => "Hispanic",
            Race5::WhiteNotHispanic => "White, Not Hispanic",
            Race5::BlackNotHispanic => "Black, Not Hispanic",
            Race5::Other => "Other",
            Race5::AsianOrPacificIslander => "Asian Or Pacific Islander",
        }
    }
}

impl fmt::Display for Race5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Race5 {
    type Err = DomainError;

    /// Matches the canonical strings case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Race5::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| DomainError::UnknownLabel(s.to_string()))
    }
}

impl Serialize for Race5 {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Race5 {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps source-dataset race labels onto [`Race5`]. Lookups are case-insensitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaceRemapTable {
    entries: BTreeMap<String, Race5>,
}

const DEFAULT_RACE_REMAP: &str = include_str!("../data/race_remap_default.csv");

impl RaceRemapTable {
    /// The shipped table: the four named groups keep their class and every
    /// other Florida codebook label (names and numeric codes) becomes `Other`.
    pub fn default_table() -> Self {
        Self::from_csv_reader(DEFAULT_RACE_REMAP.as_bytes()).expect("bundled race remap table is well-formed")
    }

    /// Reads a `source_label,race5` CSV with a header row.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, DomainError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| DomainError::BadRemapTable(e.to_string()))?.clone();
        if headers.len() != 2 || &headers[0] != "source_label" || &headers[1] != "race5" {
            return Err(DomainError::BadRemapTable(format!(
                "expected header `source_label,race5`, found {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut entries = BTreeMap::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| DomainError::BadRemapTable(e.to_string()))?;
            let race: Race5 = row[1]
                .trim()
                .parse()
                .map_err(|_| DomainError::BadRemapTable(format!("row {}: unknown race5 {:?}", line + 2, &row[1])))?;
            entries.insert(row[0].trim().to_lowercase(), race);
        }
        // Canonical labels always map to themselves.
        for race in Race5::ALL {
            entries.entry(race.as_str().to_lowercase()).or_insert(race);
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, DomainError> {
        let file =
            std::fs::File::open(path).map_err(|e| DomainError::BadRemapTable(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    pub fn get(&self, raw_label: &str) -> Option<Race5> {
        self.entries.get(&raw_label.trim().to_lowercase()).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Default for RaceRemapTable {
    fn default() -> Self {
        Self::default_table()
    }
}

pub fn canonicalize_race(raw_label: &str, remap: &RaceRemapTable) -> Result<Race5, DomainError> {
    remap.get(raw_label).ok_or_else(|| DomainError::UnknownLabel(raw_label.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Iso3Mode {
    /// Three uppercase ASCII letters.
    #[default]
    Pattern,
    /// Pattern plus membership in the bundled ISO 3166-1 alpha-3 list.
    Strict,
}

const ISO3_CODES: &str = include_str!("../data/iso3166_alpha3.txt");

fn iso3_set() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| ISO3_CODES.split_whitespace().collect())
}

/// All officially assigned ISO 3166-1 alpha-3 codes, sorted.
pub fn iso3_codes() -> Vec<&'static str> {
    let mut codes: Vec<_> = iso3_set().iter().copied().collect();
    codes.sort_unstable();
    codes
}

pub fn validate_iso3(code: &str, mode: Iso3Mode) -> bool {
    let pattern = code.len() == 3 && code.bytes().all(|b| b.is_ascii_uppercase());
    match mode {
        Iso3Mode::Pattern => pattern,
        Iso3Mode::Strict => pattern && iso3_set().contains(code),
    }
}

/// Storage format of a demographic field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldFormat {
    Iso3,
    MOrF,
    Race5Enum,
    FreeText,
    Mmddyyyy,
    IntegerYears,
}

/// A demographic field a prompt can request. Each kind has a fixed format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    CountryOfOrigin,
    Nationality,
    Gender,
    Race,
    Ethnicity,
    BirthDate,
    Age,
}

impl FieldKind {
    pub const ALL: [FieldKind; 7] = [
        FieldKind::CountryOfOrigin,
        FieldKind::Nationality,
        FieldKind::Gender,
        FieldKind::Race,
        FieldKind::Ethnicity,
        FieldKind::BirthDate,
        FieldKind::Age,
    ];

    pub fn format(self) -> FieldFormat {
        match self {
            FieldKind::CountryOfOrigin | FieldKind::Nationality => FieldFormat::Iso3,
            FieldKind::Gender => FieldFormat::MOrF,
            FieldKind::Race => FieldFormat::Race5Enum,
            FieldKind::Ethnicity => FieldFormat::FreeText,
            FieldKind::BirthDate => FieldFormat::Mmddyyyy,
            FieldKind::Age => FieldFormat::IntegerYears,
        }
    }

    /// Line label used in the prompt's format block and by the parser.
    pub fn label(self) -> &'static str {
        match self {
            FieldKind::CountryOfOrigin => "Country of Origin",
            FieldKind::Nationality => "Nationality",
            FieldKind::Gender => "Gender",
            FieldKind::Race => "Race",
            FieldKind::Ethnicity => "Ethnicity",
            FieldKind::BirthDate => "Birth Date",
            FieldKind::Age => "Age",
        }
    }

    /// snake_case identifier used in files and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            FieldKind::CountryOfOrigin => "country_of_origin",
            FieldKind::Nationality => "nationality",
            FieldKind::Gender => "gender",
            FieldKind::Race => "race",
            FieldKind::Ethnicity => "ethnicity",
            FieldKind::BirthDate => "birth_date",
            FieldKind::Age => "age",
        }
    }

    /// Categorical fields with a closed (or code-list) label space.
    pub fn is_classification(self) -> bool {
        !matches!(self, FieldKind::BirthDate | FieldKind::Age | FieldKind::Ethnicity)
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for FieldKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        let alias = match norm.as_str() {
            "origin" | "country" => "country_of_origin",
            "birthdate" | "birth_year" | "dob" => "birth_date",
            "race5" => "race",
            other => other,
        };
        FieldKind::ALL.into_iter().find(|k| k.key() == alias).ok_or_else(|| DomainError::UnknownField(s.to_string()))
    }
}

/// A parsed, format-valid field value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FieldValue {
    Iso3(String),
    Gender(Gender),
    Race(Race5),
    Text(String),
    Date(NaiveDate),
    Age(u32),
}

pub const DATE_FORMAT: &str = "%m/%d/%Y";

impl FieldValue {
    /// Canonical string form: what gets written to files and compared in votes.
    pub fn label(&self) -> String {
        match self {
            FieldValue::Iso3(code) => code.clone(),
            FieldValue::Gender(g) => g.as_str().to_string(),
            FieldValue::Race(r) => r.as_str().to_string(),
            FieldValue::Text(t) => t.clone(),
            FieldValue::Date(d) => format_date(*d),
            FieldValue::Age(a) => a.to_string(),
        }
    }

    /// Inverse of [`FieldValue::label`] for the given field.
    pub fn from_label(kind: FieldKind, label: &str) -> Option<FieldValue> {
        match kind.format() {
            FieldFormat::Iso3 => validate_iso3(label, Iso3Mode::Pattern).then(|| FieldValue::Iso3(label.to_string())),
            FieldFormat::MOrF => match label {
                "M" => Some(FieldValue::Gender(Gender::M)),
                "F" => Some(FieldValue::Gender(Gender::F)),
                _ => None,
            },
            FieldFormat::Race5Enum => label.parse().ok().map(FieldValue::Race),
            FieldFormat::FreeText => Some(FieldValue::Text(label.to_string())),
            FieldFormat::Mmddyyyy => parse_mmddyyyy(label).map(FieldValue::Date),
            FieldFormat::IntegerYears => label.parse().ok().map(FieldValue::Age),
        }
    }

    pub fn birth_year(&self) -> Option<i32> {
        match self {
            FieldValue::Date(d) => Some(chrono::Datelike::year(d)),
            _ => None,
        }
    }
}

pub fn format_date(date: NaiveDate) -> String {
    date.format(DATE_FORMAT).to_string()
}

/// Strict `mm/dd/yyyy`: one or two digit month and day, exactly four year
/// digits, and a real Gregorian date.
pub fn parse_mmddyyyy(s: &str) -> Option<NaiveDate> {
    let mut parts = s.split('/');
    let (m, d, y) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let digits = |p: &str, lo: usize, hi: usize| (lo..=hi).contains(&p.len()) && p.bytes().all(|b| b.is_ascii_digit());
    if !digits(m, 1, 2) || !digits(d, 1, 2) || !digits(y, 4, 4) {
        return None;
    }
    NaiveDate::from_ymd_opt(y.parse().ok()?, m.parse().ok()?, d.parse().ok()?)
}

/// Strict ISO 8601 calendar date `yyyy-mm-dd`.
pub fn parse_iso_date(s: &str) -> Option<NaiveDate> {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return None;
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

/// Ground-truth demographics attached to a record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthLabels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race5: Option<Race5>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub birth_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nationality: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
}

impl TruthLabels {
    pub fn is_empty(&self) -> bool {
        *self == TruthLabels::default()
    }

    /// Truth label for a field in canonical label form, when one exists.
    pub fn label_for(&self, field: FieldKind) -> Option<String> {
        match field {
            FieldKind::Gender => self.gender.map(|g| g.as_str().to_string()),
            FieldKind::Race => self.race5.map(|r| r.as_str().to_string()),
            FieldKind::Nationality => self.nationality.clone(),
            FieldKind::BirthDate => self.birth_date.map(format_date),
            FieldKind::Age => self.age.map(|a| a.to_string()),
            FieldKind::CountryOfOrigin | FieldKind::Ethnicity => None,
        }
    }
}

/// One person row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameRecord {
    pub id: String,
    pub full_name: String,
    #[serde(default)]
    pub truth: TruthLabels,
    #[serde(default)]
    pub source: String,
}
