//! Demographic enrichment of person-name records with zero-shot chat models.
//!
//! The crate renders prompts for a [`prompting::FieldProfile`], sends them to
//! any OpenAI-compatible endpoint through the [`gateway`], parses the fixed
//! format replies in [`parsing`], and then cleans, ensembles, evaluates, and
//! audits the predictions ([`pipeline`], [`metrics`], [`analytics`]).

pub mod analytics;
pub mod domain;
pub mod gateway;
pub mod ingest;
pub mod metrics;
pub mod parsing;
pub mod pipeline;
pub mod prompting;

pub use domain::{FieldKind, FieldValue, Gender, NameRecord, Race5, TruthLabels};
pub use gateway::{Gateway, ModelSpec, RawResponse};
pub use ingest::RecordSet;
pub use parsing::{FieldStatus, Prediction};
pub use prompting::{FieldProfile, PromptText};
