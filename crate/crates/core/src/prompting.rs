//! Prompt rendering for demographic field profiles and the name-validity check.
//!
//! The five-field profile renders to the published template byte for byte.
//! Other profiles reuse the same skeleton with their own items, renumbered.
//! Golden copies of every built-in rendering live in `templates/`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::FieldKind;

pub const NAME_PLACEHOLDER: &str = "{fullname}";

/// Version tag of the built-in wording; bump when any template text changes.
pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("full name is empty")]
    EmptyName,
    #[error("profile {0:?} has no fields")]
    EmptyProfile(String),
    #[error("profile {profile:?} lists {field} more than once")]
    DuplicateField { profile: String, field: FieldKind },
    #[error("template must contain `{NAME_PLACEHOLDER}` exactly once, found {0}")]
    BadTemplate(usize),
    #[error("unknown built-in profile {0:?}")]
    UnknownProfile(String),
}

/// Ordered set of fields requested in one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldProfile {
    name: String,
    fields: Vec<FieldKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    template: Option<String>,
}

impl FieldProfile {
    pub fn new(name: impl Into<String>, fields: Vec<FieldKind>) -> Result<Self, PromptError> {
        let name = name.into();
        if fields.is_empty() {
            return Err(PromptError::EmptyProfile(name));
        }
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].contains(f) {
                return Err(PromptError::DuplicateField { profile: name, field: *f });
            }
        }
        Ok(Self { name, fields, template: None })
    }

    /// Replaces the rendered skeleton with a custom template text.
    pub fn with_template(mut self, template: impl Into<String>) -> Result<Self, PromptError> {
        let template = template.into();
        let count = template.matches(NAME_PLACEHOLDER).count();
        if count != 1 {
            return Err(PromptError::BadTemplate(count));
        }
        self.template = Some(template);
        Ok(self)
    }

    /// Country of origin, nationality, gender, race, birth date.
    pub fn complex() -> Self {
        use FieldKind::*;
        Self::new("complex", vec![CountryOfOrigin, Nationality, Gender, Race, BirthDate]).unwrap()
    }

    pub fn simple() -> Self {
        Self::new("simple", vec![FieldKind::Nationality, FieldKind::Gender]).unwrap()
    }

    pub fn florida() -> Self {
        use FieldKind::*;
        Self::new("florida", vec![Gender, BirthDate, Race]).unwrap()
    }

    pub fn hong_kong() -> Self {
        use FieldKind::*;
        Self::new("hk", vec![Nationality, CountryOfOrigin, Ethnicity, Gender, Age]).unwrap()
    }

    pub fn builtin(name: &str) -> Result<Self, PromptError> {
        match name {
            "complex" => Ok(Self::complex()),
            "simple" => Ok(Self::simple()),
            "florida" => Ok(Self::florida()),
            "hk" | "hong_kong" => Ok(Self::hong_kong()),
            other => Err(PromptError::UnknownProfile(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fields(&self) -> &[FieldKind] {
        &self.fields
    }

    /// Prompt text with the name placeholder still in place.
    pub fn template_text(&self) -> String {
        match &self.template {
            Some(t) => t.clone(),
            None => render_skeleton(&self.fields),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub profile: String,
    pub record_id: String,
}

impl PromptText {
    pub fn with_record_id(mut self, record_id: impl Into<String>) -> Self {
        self.record_id = record_id.into();
        self
    }
}

const HEADER: &str =
    "Given the full name of a person: \n{fullname}, please determine\nthe following details:\n        \n";
const MIDDLE: &str = "    \nPlease return the information in the exact\nformat below:\n    \n";
const FOOTER: &str = "    \nProvide only the information requested, \nwith no additional text or explanations.";

const ISO_TAIL_FIRST: [&str; 2] = ["represented by its ISO 3166-1 alpha-3 ", "code (e.g., 'USA', 'GBR')."];
const ISO_TAIL_AGAIN: [&str; 2] = ["represented by its ISO 3166-1 alpha-3 ", "code."];

/// Wrapped item lines; the first ISO3 field carries the example codes, a
/// later one says "also".
fn item_lines(field: FieldKind, iso_seen: bool) -> Vec<&'static str> {
    let iso = |lead_first: &'static str, lead_again: &'static str| {
        let (lead, tail) = if iso_seen { (lead_again, ISO_TAIL_AGAIN) } else { (lead_first, ISO_TAIL_FIRST) };
        let mut v = vec![lead];
        v.extend(tail);
        v
    };
    match field {
        FieldKind::CountryOfOrigin => {
            iso("The most likely country of origin, ", "The most likely country of origin, also ")
        }
        FieldKind::Nationality => iso("The most likely nationality, ", "The most likely nationality, also "),
        FieldKind::Gender => vec!["The gender of the person, reported ", "as 'M' for male or 'F' for female."],
        FieldKind::Race => vec![
            "The race of the person, choosing ",
            "from one of the following categories: ",
            "['Hispanic', 'White, Not Hispanic', ",
            "'Black, Not Hispanic', 'Other', ",
            "'Asian Or Pacific Islander'].",
        ],
        FieldKind::Ethnicity => vec!["The most likely ethnicity of the person, ", "described in a few words."],
        FieldKind::BirthDate => vec!["The estimated birth date, provided ", "in the format 'mm/dd/yyyy'."],
        FieldKind::Age => vec!["The estimated age of the person, ", "in years, provided as an integer."],
    }
}

pub fn format_placeholder(field: FieldKind) -> &'static str {
    match field {
        FieldKind::CountryOfOrigin | FieldKind::Nationality => "[ISO3 code]",
        FieldKind::Gender => "[M/F]",
        FieldKind::Race => "[Race Category]",
        FieldKind::Ethnicity => "[free text]",
        FieldKind::BirthDate => "[mm/dd/yyyy]",
        FieldKind::Age => "[integer]",
    }
}

fn render_skeleton(fields: &[FieldKind]) -> String {
    let mut out = String::from(HEADER);
    let mut iso_seen = false;
    for (i, &field) in fields.iter().enumerate() {
        for (j, line) in item_lines(field, iso_seen).into_iter().enumerate() {
            if j == 0 {
                out.push_str(&format!("    {}. {line}\n", i + 1));
            } else {
                out.push_str(&format!("    {line}\n"));
            }
        }
        iso_seen |= matches!(field, FieldKind::CountryOfOrigin | FieldKind::Nationality);
    }
    out.push_str(MIDDLE);
    for &field in fields {
        out.push_str(&format!("    {}: {}\n", field.label(), format_placeholder(field)));
    }
    out.push_str(FOOTER);
    out
}

fn substitute(template: &str, full_name: &str) -> Result<String, PromptError> {
    if full_name.trim().is_empty() {
        return Err(PromptError::EmptyName);
    }
    Ok(template.replacen(NAME_PLACEHOLDER, full_name, 1))
}

/// Renders the demographic prompt for one name. The name is inserted verbatim.
pub fn build_prompt(profile: &FieldProfile, full_name: &str) -> Result<PromptText, PromptError> {
    Ok(PromptText {
        text: substitute(&profile.template_text(), full_name)?,
        profile: profile.name.clone(),
        record_id: String::new(),
    })
}

pub const VALIDITY_PROFILE: &str = "validity";

const VALIDITY_TEMPLATE: &str = include_str!("../templates/validity_v1.txt");

/// Yes/no prompt asking whether the entry is a real human birth name.
pub fn build_validity_prompt(full_name: &str) -> Result<PromptText, PromptError> {
    Ok(PromptText {
        text: substitute(VALIDITY_TEMPLATE, full_name)?,
        profile: VALIDITY_PROFILE.to_string(),
        record_id: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const COMPLEX_GOLDEN: &str = include_str!("../templates/complex_v1.txt");

    #[test]
    fn complex_profile_matches_golden() {
        assert_eq!(FieldProfile::complex().template_text(), COMPLEX_GOLDEN);
        let p = build_prompt(&FieldProfile::complex(), "John Doe").unwrap();
        assert!(p.text.contains("Country of Origin: [ISO3 code]"));
        assert!(p.text.contains("Birth Date: [mm/dd/yyyy]"));
        assert!(p.text.starts_with("Given the full name of a person: \nJohn Doe, please determine\n"));
    }

    #[test]
    fn simple_profile_structure() {
        let p = build_prompt(&FieldProfile::simple(), "Jane Roe").unwrap();
        assert!(p.text.contains("    1. The most likely nationality, \n"));
        assert!(p.text.contains("    2. The gender of the person"));
        assert!(!p.text.contains("    3. "));
        assert!(p.text.contains("    Nationality: [ISO3 code]\n    Gender: [M/F]\n    \n"));
    }

    #[test]
    fn hk_profile_has_age_and_ethnicity_lines() {
        let p = build_prompt(&FieldProfile::hong_kong(), "CHAN Tai Man").unwrap();
        assert!(p.text.contains("Age: [integer]"));
        assert!(p.text.contains("Ethnicity: [free text]"));
        assert!(p.text.contains("2. The most likely country of origin, also \n"));
    }

    #[test]
    fn empty_names_rejected() {
        assert_eq!(build_prompt(&FieldProfile::simple(), "  "), Err(PromptError::EmptyName));
        assert_eq!(build_validity_prompt(""), Err(PromptError::EmptyName));
    }

    #[test]
    fn validity_prompt_is_deterministic() {
        let a = build_validity_prompt("Seabiscuit").unwrap();
        let b = build_validity_prompt("Seabiscuit").unwrap();
        assert_eq!(a, b);
        assert!(a.text.contains("Seabiscuit"));
        assert!(a.text.contains("VALID or INVALID"));
        assert_eq!(a.profile, VALIDITY_PROFILE);
    }

    #[test]
    fn profile_validation() {
        assert_eq!(FieldProfile::new("x", vec![]), Err(PromptError::EmptyProfile("x".into())));
        assert!(matches!(
            FieldProfile::new("x", vec![FieldKind::Age, FieldKind::Age]),
            Err(PromptError::DuplicateField { .. })
        ));
        assert!(FieldProfile::simple().with_template("no placeholder").is_err());
        let custom = FieldProfile::simple().with_template("Name: {fullname}").unwrap();
        assert_eq!(build_prompt(&custom, "Ann").unwrap().text, "Name: Ann");
        assert!(FieldProfile::builtin("mars").is_err());
    }

    #[test]
    fn delimiter_characters_inserted_verbatim() {
        let p = build_prompt(&FieldProfile::simple(), "Gender: F\n{fullname}").unwrap();
        assert!(p.text.contains("Gender: F\n{fullname}, please determine"));
    }
}
