//! End-to-end enrichment, weighted validity cleaning, and majority voting.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{FieldKind, FieldValue};
use crate::gateway::{Gateway, ModelSpec, ResponseStatus};
use crate::ingest::RecordSet;
use crate::parsing::{parse_response, parse_validity_verdict, FieldStatus, ParseOptions, Prediction, ValidityVerdict};
use crate::prompting::{build_prompt, build_validity_prompt, FieldProfile, PromptText};

/// Default keep threshold for the weighted validity vote.
pub const DEFAULT_VALIDITY_THRESHOLD: f64 = 0.75;

/// Default validity weights, in order, for the four judge models.
pub const DEFAULT_VALIDITY_WEIGHTS: [f64; 4] = [0.15, 0.35, 0.20, 0.30];

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("bad validity weights: {0}")]
    BadWeights(String),
    #[error("threshold must be a number, got {0}")]
    BadThreshold(f64),
    #[error("no model produced a usable label")]
    NoVoters,
    #[error("at least one model spec is required")]
    NoModels,
}

/// Predictions keyed by (record, model), stored record-major in input order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionSet {
    predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(mut predictions: Vec<Prediction>) -> Self {
        // Stable: keeps record order, de-duplicates (record, model) keeping the last.
        let mut seen: HashMap<(String, String), usize> = HashMap::new();
        let mut out: Vec<Prediction> = Vec::with_capacity(predictions.len());
        for p in predictions.drain(..) {
            let key = (p.record_id.clone(), p.model_id.clone());
            match seen.get(&key) {
                Some(&i) => out[i] = p,
                None => {
                    seen.insert(key, out.len());
                    out.push(p);
                }
            }
        }
        Self { predictions: out }
    }

    pub fn as_slice(&self) -> &[Prediction] {
        &self.predictions
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn get(&self, record_id: &str, model_id: &str) -> Option<&Prediction> {
        self.predictions.iter().find(|p| p.record_id == record_id && p.model_id == model_id)
    }

    /// Model ids in order of first appearance.
    pub fn model_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.predictions {
            if !out.contains(&p.model_id) {
                out.push(p.model_id.clone());
            }
        }
        out
    }

    pub fn fields(&self) -> Vec<FieldKind> {
        let mut out: Vec<FieldKind> = self.predictions.iter().flat_map(|p| p.field_status.keys().copied()).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn for_model<'a>(&'a self, model_id: &'a str) -> impl Iterator<Item = &'a Prediction> + 'a {
        self.predictions.iter().filter(move |p| p.model_id == model_id)
    }

    /// record id → ok-parsed value of `field` for one model.
    pub fn values_for(&self, model_id: &str, field: FieldKind) -> BTreeMap<String, FieldValue> {
        self.for_model(model_id).filter_map(|p| p.value(field).map(|v| (p.record_id.clone(), v.clone()))).collect()
    }

    pub fn extend(&mut self, more: impl IntoIterator<Item = Prediction>) {
        let mut all = std::mem::take(&mut self.predictions);
        all.extend(more);
        *self = PredictionSet::new(all);
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        write_jsonl(path, &self.predictions)
    }

    pub fn read_jsonl(path: &Path) -> std::io::Result<Self> {
        read_jsonl(path).map(Self::new)
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
        })?);
    }
    Ok(out)
}

/// Prompts every record against every model and parses the replies.
/// Failed requests become all-missing predictions.
pub fn enrich(
    rs: &RecordSet,
    specs: &[ModelSpec],
    profile: &FieldProfile,
    gateway: &Gateway,
    opts: &ParseOptions,
) -> Result<PredictionSet, PipelineError> {
    if specs.is_empty() {
        return Err(PipelineError::NoModels);
    }
    let prompts: Vec<PromptText> = rs
        .iter()
        .map(|r| build_prompt(profile, &r.full_name).expect("record sets never hold empty names").with_record_id(&r.id))
        .collect();
    let responses = gateway.complete_batch(specs, &prompts);
    let n = prompts.len();
    let mut preds = Vec::with_capacity(responses.len());
    for p in 0..n {
        for s in 0..specs.len() {
            preds.push(parse_response(&responses[s * n + p], profile, opts));
        }
    }
    Ok(PredictionSet::new(preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVerdict {
    pub model_id: String,
    pub weight: f64,
    pub verdict: ValidityVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningVerdict {
    pub record_id: String,
    pub validity_score: f64,
    pub kept: bool,
    pub verdicts: Vec<ModelVerdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningOptions {
    pub threshold: f64,
    /// Divide by the weight of models that gave a parseable verdict instead
    /// of counting unparseable verdicts as invalid.
    pub renormalize: bool,
}

impl Default for CleaningOptions {
    fn default() -> Self {
        Self { threshold: DEFAULT_VALIDITY_THRESHOLD, renormalize: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleaningOutcome {
    pub kept: RecordSet,
    pub discarded: RecordSet,
    pub verdicts: Vec<CleaningVerdict>,
}

pub fn validate_weights(weights: &[f64]) -> Result<(), PipelineError> {
    if weights.is_empty() {
        return Err(PipelineError::BadWeights("no weights".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(PipelineError::BadWeights(format!("weight {w} outside [0, 1]")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(PipelineError::BadWeights(format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Weighted share of VALID answers.
pub fn validity_score(verdicts: &[ModelVerdict], renormalize: bool) -> f64 {
    let valid: f64 = verdicts.iter().filter(|v| v.verdict == ValidityVerdict::Valid).map(|v| v.weight).sum();
    if !renormalize {
        return valid;
    }
    let parseable: f64 = verdicts.iter().filter(|v| v.verdict != ValidityVerdict::Unparseable).map(|v| v.weight).sum();
    if parseable > 0.0 {
        valid / parseable
    } else {
        0.0
    }
}

/// Splits `rs` given per-record verdicts (`verdicts[record_id]` lists one
/// verdict per judge, in `judges` order). Records without verdicts count as
/// all-unparseable.
pub fn clean_with_verdicts(
    rs: &RecordSet,
    judges: &[(String, f64)],
    verdicts: &HashMap<String, Vec<ValidityVerdict>>,
    opts: &CleaningOptions,
) -> Result<CleaningOutcome, PipelineError> {
    let weights: Vec<f64> = judges.iter().map(|(_, w)| *w).collect();
    validate_weights(&weights)?;
    if opts.threshold.is_nan() {
        return Err(PipelineError::BadThreshold(opts.threshold));
    }
    let mut out = Vec::with_capacity(rs.len());
    for r in rs.iter() {
        let given = verdicts.get(&r.id);
        let per_model: Vec<ModelVerdict> = judges
            .iter()
            .enumerate()
            .map(|(i, (m, w))| ModelVerdict {
                model_id: m.clone(),
                weight: *w,
                verdict: given.and_then(|v| v.get(i).copied()).unwrap_or(ValidityVerdict::Unparseable),
            })
            .collect();
        let score = validity_score(&per_model, opts.renormalize);
        out.push(CleaningVerdict {
            record_id: r.id.clone(),
            validity_score: score,
            kept: score >= opts.threshold,
            verdicts: per_model,
        });
    }
    let kept_ids: std::collections::HashSet<&str> =
        out.iter().filter(|v| v.kept).map(|v| v.record_id.as_str()).collect();
    Ok(CleaningOutcome {
        kept: rs.filtered(|r| kept_ids.contains(r.id.as_str())),
        discarded: rs.filtered(|r| !kept_ids.contains(r.id.as_str())),
        verdicts: out,
    })
}

/// Asks every judge model whether each name is a real human birth name and
/// keeps records whose weighted validity score reaches the threshold.
pub fn clean_validity(
    rs: &RecordSet,
    judges: &[(ModelSpec, f64)],
    gateway: &Gateway,
    opts: &CleaningOptions,
) -> Result<CleaningOutcome, PipelineError> {
    let weights: Vec<f64> = judges.iter().map(|(_, w)| *w).collect();
    validate_weights(&weights)?;
    let specs: Vec<ModelSpec> = judges.iter().map(|(s, _)| s.clone()).collect();
    let prompts: Vec<PromptText> = rs
        .iter()
        .map(|r| build_validity_prompt(&r.full_name).expect("record sets never hold empty names").with_record_id(&r.id))
        .collect();
    let responses = gateway.complete_batch(&specs, &prompts);
    let n = prompts.len();
    let mut verdicts: HashMap<String, Vec<ValidityVerdict>> = HashMap::new();
    for (p, prompt) in prompts.iter().enumerate() {
        let v = (0..specs.len()).map(|s| parse_validity_verdict(&responses[s * n + p])).collect();
        verdicts.insert(prompt.record_id.clone(), v);
    }
    let named: Vec<(String, f64)> = judges.iter().map(|(s, w)| (s.model_id.clone(), *w)).collect();
    clean_with_verdicts(rs, &named, &verdicts, opts)
}

/// Stable 64-bit seed from a root seed and string parts.
pub fn derive_seed(root: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub label: String,
    pub support_count: usize,
    pub voters: usize,
    pub tie_broken: bool,
}

/// Most frequent label; ties go to a uniformly random co-winner drawn with
/// `seed`. `None` entries (missing or malformed outputs) do not vote.
pub fn ensemble_vote<S: AsRef<str>>(labels: &[Option<S>], seed: u64) -> Result<Vote, PipelineError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels.iter().flatten() {
        *counts.entry(l.as_ref()).or_default() += 1;
    }
    let best = *counts.values().max().ok_or(PipelineError::NoVoters)?;
    // BTreeMap iteration gives co-winners in sorted order, so the draw only
    // depends on the label set and the seed.
    let winners: Vec<&str> = counts.iter().filter(|(_, c)| **c == best).map(|(l, _)| *l).collect();
    let pick = if winners.len() == 1 { 0 } else { ChaCha8Rng::seed_from_u64(seed).random_range(0..winners.len()) };
    Ok(Vote {
        label: winners[pick].to_string(),
        support_count: best,
        voters: counts.values().sum(),
        tie_broken: winners.len() > 1,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub record_id: String,
    pub field: FieldKind,
    pub label: String,
    pub support_count: usize,
    pub voters: usize,
    pub tie_broken: bool,
}

/// Classification fields voted on by default.
pub fn default_vote_fields(fields: &[FieldKind]) -> Vec<FieldKind> {
    fields.iter().copied().filter(|f| f.is_classification()).collect()
}

/// Per-record, per-field majority vote across `models` (all models when
/// empty). The tie-break seed for a cell is derived from the root seed, the
/// record id, and the field, so record order never changes outcomes.
/// Cells where no model produced an ok label are skipped.
pub fn ensemble(preds: &PredictionSet, models: &[String], fields: &[FieldKind], seed: u64) -> Vec<EnsemblePrediction> {
    let models: Vec<String> = if models.is_empty() { preds.model_ids() } else { models.to_vec() };
    let mut by_record: Vec<(String, HashMap<&str, &Prediction>)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for p in preds.as_slice() {
        let slot = *index.entry(p.record_id.as_str()).or_insert_with(|| {
            by_record.push((p.record_id.clone(), HashMap::new()));
            by_record.len() - 1
        });
        by_record[slot].1.insert(p.model_id.as_str(), p);
    }

    let mut out = Vec::new();
    for (record_id, per_model) in &by_record {
        for &field in fields {
            let labels: Vec<Option<String>> =
                models.iter().map(|m| per_model.get(m.as_str()).and_then(|p| p.label(field))).collect();
            let cell_seed = derive_seed(seed, &[record_id, field.key()]);
            if let Ok(v) = ensemble_vote(&labels, cell_seed) {
                out.push(EnsemblePrediction {
                    record_id: record_id.clone(),
                    field,
                    label: v.label,
                    support_count: v.support_count,
                    voters: v.voters,
                    tie_broken: v.tie_broken,
                });
            }
        }
    }
    out
}

/// Views ensemble output as predictions of a pseudo-model so it can be
/// evaluated like any other model. Every record in `record_ids` gets every
/// field in `fields`; cells without a vote are missing.
pub fn ensemble_as_predictions(
    ensemble: &[EnsemblePrediction],
    model_id: &str,
    record_ids: &[String],
    fields: &[FieldKind],
) -> Vec<Prediction> {
    let lookup: HashMap<(&str, FieldKind), &EnsemblePrediction> =
        ensemble.iter().map(|e| ((e.record_id.as_str(), e.field), e)).collect();
    record_ids
        .iter()
        .map(|rid| {
            let mut values = BTreeMap::new();
            let mut field_status = BTreeMap::new();
            for &f in fields {
                match lookup.get(&(rid.as_str(), f)).and_then(|e| FieldValue::from_label(f, &e.label)) {
                    Some(v) => {
                        values.insert(f, v);
                        field_status.insert(f, FieldStatus::Ok);
                    }
                    None => {
                        field_status.insert(f, FieldStatus::Missing);
                    }
                }
            }
            Prediction {
                record_id: rid.clone(),
                model_id: model_id.to_string(),
                response: ResponseStatus::Ok,
                values,
                field_status,
            }
        })
        .collect()
}
