//! Inter-model agreement, clustering of models, and bias diagnostics.

mod bias;
mod cluster;
mod embed;

pub use bias::{bias_report, bias_report_for, BiasReport, DEFAULT_COLLAPSE_THRESHOLD};
pub use cluster::{hierarchical_cluster, ClusterError, Dendrogram, Linkage, Merge};
pub use embed::{CachedEmbedder, EmbedError, Embedder, HashEmbedder, HttpEmbedder, HASH_EMBEDDING_DIM};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FieldKind, FieldValue};
use crate::pipeline::PredictionSet;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("the two models share no record with a usable prediction")]
    EmptyIntersection,
    #[error("correlation is undefined: {0}")]
    DegenerateVariance(String),
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("{field} is not supported by {what}")]
    UnsupportedField { field: FieldKind, what: &'static str },
}

impl From<EmbedError> for AnalyticsError {
    fn from(e: EmbedError) -> Self {
        AnalyticsError::EmbedderUnavailable(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementMetric {
    PairwiseAgreement,
    Pearson,
    EmbeddingCosine,
}

/// Fraction of shared records on which both label maps agree.
pub fn pairwise_agreement(a: &BTreeMap<String, String>, b: &BTreeMap<String, String>) -> Result<f64, AnalyticsError> {
    let mut shared = 0usize;
    let mut same = 0usize;
    for (id, la) in a {
        if let Some(lb) = b.get(id) {
            shared += 1;
            same += usize::from(la == lb);
        }
    }
    if shared == 0 {
        return Err(AnalyticsError::EmptyIntersection);
    }
    Ok(same as f64 / shared as f64)
}

/// Pearson correlation over shared records, accumulated in one pass.
pub fn age_correlation(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<f64, AnalyticsError> {
    let (mut n, mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (id, &x) in a {
        let Some(&y) = b.get(id) else { continue };
        n += 1.0;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if n < 2.0 {
        return Err(AnalyticsError::DegenerateVariance(format!("{n} shared records")));
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(AnalyticsError::DegenerateVariance("constant predictions".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean per-record cosine similarity of the embedded free-text answers.
pub fn ethnicity_similarity(
    a: &BTreeMap<String, String>,
    b: &BTreeMap<String, String>,
    embedder: &dyn Embedder,
) -> Result<f64, AnalyticsError> {
    let pairs: Vec<(&String, &String)> = a.iter().filter_map(|(id, ta)| b.get(id).map(|tb| (ta, tb))).collect();
    if pairs.is_empty() {
        return Err(AnalyticsError::EmptyIntersection);
    }
    let mut texts: Vec<String> = pairs.iter().flat_map(|(x, y)| [(*x).clone(), (*y).clone()]).collect();
    texts.sort();
    texts.dedup();
    let vectors = embedder.embed(&texts)?;
    let lookup: BTreeMap<&str, &Vec<f64>> = texts.iter().map(String::as_str).zip(&vectors).collect();
    let total: f64 = pairs.iter().map(|(x, y)| cosine(lookup[x.as_str()], lookup[y.as_str()])).sum();
    Ok(total / pairs.len() as f64)
}

/// Symmetric model-by-model matrix. Undefined cells are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub metric: AgreementMetric,
    pub field: FieldKind,
    pub model_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl AgreementMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.model_ids.iter().position(|m| m == a)?;
        let j = self.model_ids.iter().position(|m| m == b)?;
        Some(self.values[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for m in &self.model_ids {
            out.push(',');
            out.push_str(&csv_field(m));
        }
        out.push('\n');
        for (m, row) in self.model_ids.iter().zip(&self.values) {
            out.push_str(&csv_field(m));
            for v in row {
                out.push(',');
                if v.is_finite() {
                    let _ = write!(out, "{v:.6}");
                }
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fill_matrix<T>(
    metric: AgreementMetric,
    field: FieldKind,
    models: &[String],
    per_model: &[BTreeMap<String, T>],
    mut pair: impl FnMut(&BTreeMap<String, T>, &BTreeMap<String, T>) -> Result<f64, AnalyticsError>,
) -> Result<AgreementMatrix, AnalyticsError> {
    let n = models.len();
    let mut values = vec![vec![f64::NAN; n]; n];
    for i in 0..n {
        values[i][i] = if per_model[i].is_empty() { f64::NAN } else { 1.0 };
        for j in i + 1..n {
            let v = match pair(&per_model[i], &per_model[j]) {
                Ok(v) => v,
                Err(AnalyticsError::EmptyIntersection | AnalyticsError::DegenerateVariance(_)) => f64::NAN,
                Err(e) => return Err(e),
            };
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(AgreementMatrix { metric, field, model_ids: models.to_vec(), values })
}

fn labels(preds: &PredictionSet, model: &str, field: FieldKind) -> BTreeMap<String, String> {
    preds.values_for(model, field).into_iter().map(|(k, v)| (k, v.label())).collect()
}

fn numbers(preds: &PredictionSet, model: &str, field: FieldKind) -> BTreeMap<String, f64> {
    preds
        .values_for(model, field)
        .into_iter()
        .filter_map(|(k, v)| match v {
            FieldValue::Age(a) => Some((k, a as f64)),
            FieldValue::Date(_) => v.birth_year().map(|y| (k, y as f64)),
            _ => None,
        })
        .collect()
}

/// Pairwise label agreement between every pair of `models` on `field`.
pub fn agreement_matrix(preds: &PredictionSet, models: &[String], field: FieldKind) -> AgreementMatrix {
    let per: Vec<_> = models.iter().map(|m| labels(preds, m, field)).collect();
    fill_matrix(AgreementMetric::PairwiseAgreement, field, models, &per, pairwise_agreement)
        .expect("label agreement has no hard errors")
}

/// Pearson correlation of ages (or birth years) between every pair of models.
pub fn correlation_matrix(
    preds: &PredictionSet,
    models: &[String],
    field: FieldKind,
) -> Result<AgreementMatrix, AnalyticsError> {
    if !matches!(field, FieldKind::Age | FieldKind::BirthDate) {
        return Err(AnalyticsError::UnsupportedField { field, what: "correlation" });
    }
    let per: Vec<_> = models.iter().map(|m| numbers(preds, m, field)).collect();
    fill_matrix(AgreementMetric::Pearson, field, models, &per, age_correlation)
}

/// Mean embedding cosine similarity of free-text answers between models.
pub fn embedding_matrix(
    preds: &PredictionSet,
    models: &[String],
    field: FieldKind,
    embedder: &dyn Embedder,
) -> Result<AgreementMatrix, AnalyticsError> {
    let per: Vec<_> = models.iter().map(|m| labels(preds, m, field)).collect();
    fill_matrix(AgreementMetric::EmbeddingCosine, field, models, &per, |a, b| ethnicity_similarity(a, b, embedder))
}

/// The matrix appropriate for `field`: correlation for numbers, embedding
/// cosine for free text, label agreement otherwise.
pub fn matrix_for_field(
    preds: &PredictionSet,
    models: &[String],
    field: FieldKind,
    embedder: &dyn Embedder,
) -> Result<AgreementMatrix, AnalyticsError> {
    match field {
        FieldKind::Age | FieldKind::BirthDate => correlation_matrix(preds, models, field),
        FieldKind::Ethnicity => embedding_matrix(preds, models, field, embedder),
        _ => Ok(agreement_matrix(preds, models, field)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn num(xs: &[f64]) -> BTreeMap<String, f64> {
        xs.iter().enumerate().map(|(i, x)| (format!("{i:03}"), *x)).collect()
    }

    #[test]
    fn agreement_examples() {
        let a = lab(&[("1", "M"), ("2", "F"), ("3", "F"), ("4", "M"), ("5", "M")]);
        assert_eq!(pairwise_agreement(&a, &a), Ok(1.0));
        let b = lab(&[("1", "M"), ("2", "F"), ("3", "F"), ("4", "F"), ("9", "F")]);
        assert_eq!(pairwise_agreement(&a, &b), Ok(0.75));
        let c = lab(&[("1", "F"), ("2", "M")]);
        assert_eq!(pairwise_agreement(&a, &c), Ok(0.0));
        assert_eq!(pairwise_agreement(&a, &lab(&[("x", "M")])), Err(AnalyticsError::EmptyIntersection));
    }

    #[test]
    fn correlation_examples() {
        let a = num(&[20.0, 35.0, 41.0, 60.0]);
        assert!((age_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = num(&[80.0, 65.0, 59.0, 40.0]);
        assert!((age_correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(age_correlation(&a, &num(&[35.0; 4])), Err(AnalyticsError::DegenerateVariance(_))));
        assert!(age_correlation(&num(&[1.0]), &num(&[2.0])).is_err());
    }

    #[test]
    fn similarity_identity_and_csv() {
        let a = lab(&[("1", "Irish"), ("2", "Han Chinese")]);
        let e = HashEmbedder::new(7);
        assert!((ethnicity_similarity(&a, &a, &e).unwrap() - 1.0).abs() < 1e-12);

        let m = AgreementMatrix {
            metric: AgreementMetric::PairwiseAgreement,
            field: FieldKind::Gender,
            model_ids: vec!["a".into(), "b,c".into()],
            values: vec![vec![1.0, 0.5], vec![0.5, f64::NAN]],
        };
        assert_eq!(m.to_csv(), "model,a,\"b,c\"\na,1.000000,0.500000\n\"b,c\",0.500000,\n");
    }
}
