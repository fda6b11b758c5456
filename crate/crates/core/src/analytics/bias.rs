use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::domain::{FieldKind, FieldValue};
use crate::ingest::RecordSet;
use crate::pipeline::PredictionSet;

/// A model is reported as collapsed when one value holds at least this share.
pub const DEFAULT_COLLAPSE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub model_id: String,
    pub field: FieldKind,
    /// Year (birth dates) or age in years, to count.
    pub histogram: BTreeMap<i64, usize>,
    pub total: usize,
    pub top1_value: Option<i64>,
    pub top1_share: f64,
    /// Share of years divisible by 10, or ages divisible by 5.
    pub round_share: f64,
    pub distinct_count: usize,
    pub collapse_threshold: f64,
    pub collapsed: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth_histogram: Option<BTreeMap<i64, usize>>,
    /// mean(predicted) − mean(truth) over records having both.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_shift: Option<f64>,
}

impl BiasReport {
    /// `value,count[,truth_count]` rows covering every value seen on either side.
    pub fn histogram_csv(&self) -> String {
        let mut keys: Vec<i64> = self.histogram.keys().copied().collect();
        if let Some(t) = &self.truth_histogram {
            keys.extend(t.keys());
            keys.sort_unstable();
            keys.dedup();
        }
        let mut out =
            String::from(if self.truth_histogram.is_some() { "value,count,truth_count\n" } else { "value,count\n" });
        for k in keys {
            let c = self.histogram.get(&k).copied().unwrap_or(0);
            match &self.truth_histogram {
                Some(t) => out.push_str(&format!("{k},{c},{}\n", t.get(&k).copied().unwrap_or(0))),
                None => out.push_str(&format!("{k},{c}\n")),
            }
        }
        out
    }
}

fn round_step(field: FieldKind) -> i64 {
    if field == FieldKind::Age {
        5
    } else {
        10
    }
}

fn histogram(values: impl IntoIterator<Item = i64>) -> BTreeMap<i64, usize> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v).or_insert(0) += 1;
    }
    h
}

/// Distribution diagnostics for predicted years or ages. `pairs` optionally
/// lists (predicted, true) values of records carrying ground truth, and
/// `truth` the full ground-truth distribution to overlay.
pub fn bias_report(
    model_id: &str,
    field: FieldKind,
    values: &[i64],
    truth: Option<&[i64]>,
    pairs: &[(i64, i64)],
    collapse_threshold: f64,
) -> Result<BiasReport, AnalyticsError> {
    if !matches!(field, FieldKind::BirthDate | FieldKind::Age) {
        return Err(AnalyticsError::UnsupportedField { field, what: "bias reports" });
    }
    let hist = histogram(values.iter().copied());
    let total = values.len();
    // Lowest value wins ties for the top bin.
    let top = hist.iter().fold(None, |best: Option<(i64, usize)>, (&v, &c)| match best {
        Some((_, bc)) if bc >= c => best,
        _ => Some((v, c)),
    });
    let share = |count: usize| if total == 0 { 0.0 } else { count as f64 / total as f64 };
    let top1_share = share(top.map_or(0, |(_, c)| c));
    let step = round_step(field);
    let round = values.iter().filter(|v| v.rem_euclid(step) == 0).count();
    let mean_shift =
        (!pairs.is_empty()).then(|| pairs.iter().map(|(p, t)| (p - t) as f64).sum::<f64>() / pairs.len() as f64);
    Ok(BiasReport {
        model_id: model_id.to_string(),
        field,
        total,
        top1_value: top.map(|(v, _)| v),
        top1_share,
        round_share: share(round),
        distinct_count: hist.len(),
        collapse_threshold,
        collapsed: total > 0 && top1_share >= collapse_threshold,
        histogram: hist,
        truth_histogram: truth.map(|t| histogram(t.iter().copied())),
        mean_shift,
    })
}

fn as_int(v: &FieldValue) -> Option<i64> {
    match v {
        FieldValue::Age(a) => Some(*a as i64),
        FieldValue::Date(_) => v.birth_year().map(i64::from),
        _ => None,
    }
}

/// Bias report for one model's ok-parsed values, with the ground truth of
/// `records` overlaid when given.
pub fn bias_report_for(
    preds: &PredictionSet,
    model_id: &str,
    field: FieldKind,
    records: Option<&RecordSet>,
    collapse_threshold: f64,
) -> Result<BiasReport, AnalyticsError> {
    let predicted: BTreeMap<String, i64> =
        preds.values_for(model_id, field).iter().filter_map(|(k, v)| as_int(v).map(|x| (k.clone(), x))).collect();
    let values: Vec<i64> = predicted.values().copied().collect();
    let truth_of = |r: &crate::domain::NameRecord| -> Option<i64> {
        match field {
            FieldKind::BirthDate => r.truth.birth_date.map(|d| i64::from(chrono::Datelike::year(&d))),
            FieldKind::Age => r.truth.age.map(i64::from),
            _ => None,
        }
    };
    let (truth, pairs) = match records {
        Some(rs) => {
            let t: Vec<i64> = rs.iter().filter_map(truth_of).collect();
            let p: Vec<(i64, i64)> = rs.iter().filter_map(|r| Some((*predicted.get(&r.id)?, truth_of(r)?))).collect();
            (if t.is_empty() { None } else { Some(t) }, p)
        }
        None => (None, Vec::new()),
    };
    bias_report(model_id, field, &values, truth.as_deref(), &pairs, collapse_threshold)
}
