//! Stratified accuracy, birth-year MAE, and trivial baselines.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FieldKind, FieldValue, NameRecord};
use crate::ingest::RecordSet;
use crate::parsing::render_table;
use crate::pipeline::PredictionSet;

/// Below this share of parsed candidates a metric is reported as absent.
pub const DEFAULT_MIN_PARSE_SUCCESS: f64 = 0.20;

/// Stratum for records whose stratum label is unknown.
pub const UNKNOWN_STRATUM: &str = "Unknown";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no record carries a ground-truth {0}")]
    NoGroundTruth(FieldKind),
    #[error("{what} is not defined for {field}")]
    Unsupported { field: FieldKind, what: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Mae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    RandomShuffle,
    MostFrequent,
    AverageYear,
    AverageYearPerStratum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub min_parse_success: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { min_parse_success: DEFAULT_MIN_PARSE_SUCCESS }
    }
}

/// Named assignment of record ids to strata.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stratification {
    pub name: String,
    pub assignment: HashMap<String, String>,
}

impl Stratification {
    /// Strata from ground-truth labels of `field`.
    pub fn from_truth(records: &RecordSet, field: FieldKind) -> Self {
        let assignment = records.iter().filter_map(|r| r.truth.label_for(field).map(|l| (r.id.clone(), l))).collect();
        Self { name: field.label().to_string(), assignment }
    }

    /// Strata from one model's ok-parsed labels of `field`.
    pub fn from_predictions(preds: &PredictionSet, model_id: &str, field: FieldKind) -> Self {
        let assignment =
            preds.for_model(model_id).filter_map(|p| p.label(field).map(|l| (p.record_id.clone(), l))).collect();
        Self { name: format!("predicted {}", field.label()), assignment }
    }

    pub fn stratum_of(&self, record_id: &str) -> &str {
        self.assignment.get(record_id).map_or(UNKNOWN_STRATUM, String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumMetric {
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_shift: Option<f64>,
    pub evaluated_count: usize,
    pub discarded_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: FieldKind,
    pub model_id: String,
    pub metric: MetricKind,
    /// Overall accuracy or MAE; absent when nothing was evaluated or the
    /// parse rate fell below the suppression cutoff.
    pub value: Option<f64>,
    /// mean(predicted year) − mean(true year) over evaluated records.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_shift: Option<f64>,
    pub strata: BTreeMap<String, StratumMetric>,
    pub evaluated_count: usize,
    pub discarded_count: usize,
    pub suppressed: bool,
}

impl EvalReport {
    pub fn parse_success(&self) -> Option<f64> {
        let total = self.evaluated_count + self.discarded_count;
        (total > 0).then(|| self.evaluated_count as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Target {
    Label(String),
    Number(f64),
}

struct Item {
    stratum: String,
    pred: Option<Target>,
    truth: Target,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    evaluated: usize,
    discarded: usize,
    score: f64,
    diff: f64,
}

impl Tally {
    fn add(&mut self, pred: Option<&Target>, truth: &Target) {
        match (pred, truth) {
            (Some(Target::Label(p)), Target::Label(t)) => {
                self.evaluated += 1;
                if p == t {
                    self.score += 1.0;
                }
            }
            (Some(Target::Number(p)), Target::Number(t)) => {
                self.evaluated += 1;
                self.score += (p - t).abs();
                self.diff += p - t;
            }
            _ => self.discarded += 1,
        }
    }

    fn finish(&self, metric: MetricKind, suppressed: bool) -> StratumMetric {
        let usable = self.evaluated > 0 && !suppressed;
        let n = self.evaluated as f64;
        StratumMetric {
            value: usable.then(|| self.score / n),
            mean_shift: (usable && metric == MetricKind::Mae).then(|| self.diff / n),
            evaluated_count: self.evaluated,
            discarded_count: self.discarded,
        }
    }
}

fn score(task: FieldKind, model_id: &str, metric: MetricKind, items: &[Item], opts: &EvalOptions) -> EvalReport {
    let mut overall = Tally::default();
    let mut strata: BTreeMap<String, Tally> = BTreeMap::new();
    for it in items {
        overall.add(it.pred.as_ref(), &it.truth);
        strata.entry(it.stratum.clone()).or_default().add(it.pred.as_ref(), &it.truth);
    }
    let total = overall.evaluated + overall.discarded;
    let suppressed = total > 0 && (overall.evaluated as f64 / total as f64) < opts.min_parse_success;
    let o = overall.finish(metric, suppressed);
    EvalReport {
        task,
        model_id: model_id.to_string(),
        metric,
        value: o.value,
        mean_shift: o.mean_shift,
        strata: strata.into_iter().map(|(k, t)| (k, t.finish(metric, suppressed))).collect(),
        evaluated_count: overall.evaluated,
        discarded_count: overall.discarded,
        suppressed,
    }
}

fn numeric_field(field: FieldKind) -> bool {
    matches!(field, FieldKind::BirthDate | FieldKind::Age)
}

fn truth_target(r: &NameRecord, field: FieldKind, metric: MetricKind) -> Option<Target> {
    match metric {
        MetricKind::Accuracy => r.truth.label_for(field).map(Target::Label),
        MetricKind::Mae => match field {
            FieldKind::BirthDate => r.truth.birth_date.map(|d| Target::Number(chrono::Datelike::year(&d) as f64)),
            FieldKind::Age => r.truth.age.map(|a| Target::Number(a as f64)),
            _ => None,
        },
    }
}

fn pred_target(v: &FieldValue, metric: MetricKind) -> Option<Target> {
    match metric {
        MetricKind::Accuracy => Some(Target::Label(v.label())),
        MetricKind::Mae => match v {
            FieldValue::Date(_) => v.birth_year().map(|y| Target::Number(y as f64)),
            FieldValue::Age(a) => Some(Target::Number(*a as f64)),
            _ => None,
        },
    }
}

fn candidates(
    records: &RecordSet,
    field: FieldKind,
    metric: MetricKind,
) -> Result<Vec<(&NameRecord, Target)>, MetricsError> {
    let c: Vec<_> = records.iter().filter_map(|r| truth_target(r, field, metric).map(|t| (r, t))).collect();
    if c.is_empty() {
        return Err(MetricsError::NoGroundTruth(field));
    }
    Ok(c)
}

fn model_report(
    preds: &PredictionSet,
    model_id: &str,
    records: &RecordSet,
    field: FieldKind,
    metric: MetricKind,
    strata: Option<&Stratification>,
    opts: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    let values = preds.values_for(model_id, field);
    let items: Vec<Item> = candidates(records, field, metric)?
        .into_iter()
        .map(|(r, truth)| Item {
            stratum: strata.map_or(UNKNOWN_STRATUM, |s| s.stratum_of(&r.id)).to_string(),
            pred: values.get(&r.id).and_then(|v| pred_target(v, metric)),
            truth,
        })
        .collect();
    Ok(score(field, model_id, metric, &items, opts))
}

/// Exact-match accuracy of one model on `field`. Records whose prediction is
/// missing, malformed, or absent are discarded rather than counted wrong.
pub fn accuracy(
    preds: &PredictionSet,
    model_id: &str,
    records: &RecordSet,
    field: FieldKind,
    strata: Option<&Stratification>,
    opts: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    model_report(preds, model_id, records, field, MetricKind::Accuracy, strata, opts)
}

/// Mean absolute error in years (or ages) plus mean shift.
pub fn mae(
    preds: &PredictionSet,
    model_id: &str,
    records: &RecordSet,
    field: FieldKind,
    strata: Option<&Stratification>,
    opts: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    if !numeric_field(field) {
        return Err(MetricsError::Unsupported { field, what: "MAE" });
    }
    model_report(preds, model_id, records, field, MetricKind::Mae, strata, opts)
}

pub fn mae_birth_year(
    preds: &PredictionSet,
    model_id: &str,
    records: &RecordSet,
    strata: Option<&Stratification>,
    opts: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    mae(preds, model_id, records, FieldKind::BirthDate, strata, opts)
}

/// Metric used for `field`: MAE for dates and ages, accuracy otherwise.
pub fn metric_for(field: FieldKind) -> MetricKind {
    if numeric_field(field) {
        MetricKind::Mae
    } else {
        MetricKind::Accuracy
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn as_number(t: &Target) -> f64 {
    match t {
        Target::Number(x) => *x,
        Target::Label(_) => unreachable!("numeric baselines only see numeric targets"),
    }
}

fn target_text(t: &Target) -> String {
    match t {
        Target::Label(l) => l.clone(),
        Target::Number(x) => format!("{x}"),
    }
}

/// Modal target; ties go to the lexicographically smallest rendering.
fn mode(targets: &[&Target]) -> Target {
    let mut counts: BTreeMap<String, (usize, &Target)> = BTreeMap::new();
    for t in targets {
        counts.entry(target_text(t)).or_insert((0, t)).0 += 1;
    }
    let best = counts.values().map(|(c, _)| *c).max().unwrap_or(0);
    let (_, (_, t)) = counts.iter().find(|(_, (c, _))| *c == best).expect("non-empty");
    (*t).clone()
}

/// Scores a trivial predictor against the ground truth of `field`.
///
/// `random_shuffle` assigns each record the truth of another record under a
/// seeded permutation; `most_frequent` predicts the modal label;
/// `average_year` predicts the global mean, `average_year_per_stratum` the
/// mean of the record's stratum.
pub fn baseline(
    kind: BaselineKind,
    records: &RecordSet,
    field: FieldKind,
    strata: Option<&Stratification>,
    seed: u64,
    opts: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    let metric = metric_for(field);
    if matches!(kind, BaselineKind::AverageYear | BaselineKind::AverageYearPerStratum) && metric != MetricKind::Mae {
        return Err(MetricsError::Unsupported { field, what: "an average baseline" });
    }
    let cands = candidates(records, field, metric)?;
    let stratum = |r: &NameRecord| strata.map_or(UNKNOWN_STRATUM, |s| s.stratum_of(&r.id)).to_string();
    let truths: Vec<&Target> = cands.iter().map(|(_, t)| t).collect();

    let (name, preds): (String, Vec<Target>) = match kind {
        BaselineKind::RandomShuffle => {
            let mut shuffled: Vec<Target> = truths.iter().map(|t| (*t).clone()).collect();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            ("Random".into(), shuffled)
        }
        BaselineKind::MostFrequent => {
            let m = mode(&truths);
            (format!("Most Frequent ({})", target_text(&m)), vec![m; truths.len()])
        }
        BaselineKind::AverageYear => {
            let m = mean(truths.iter().map(|t| as_number(t)));
            (format!("Average year ({m:.0})"), vec![Target::Number(m); truths.len()])
        }
        BaselineKind::AverageYearPerStratum => {
            let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (r, t) in &cands {
                groups.entry(stratum(r)).or_default().push(as_number(t));
            }
            let means: BTreeMap<String, f64> = groups.into_iter().map(|(k, v)| (k, mean(v.into_iter()))).collect();
            let label = strata.map_or("stratum", |s| s.name.as_str());
            (
                format!("Average year per {label}"),
                cands.iter().map(|(r, _)| Target::Number(means[&stratum(r)])).collect(),
            )
        }
    };

    let items: Vec<Item> = cands
        .iter()
        .zip(preds)
        .map(|((r, t), p)| Item { stratum: stratum(r), pred: Some(p), truth: t.clone() })
        .collect();
    Ok(score(field, &name, metric, &items, opts))
}

/// Baselines shown for a field, in display order.
pub fn default_baselines(field: FieldKind, stratified: bool) -> Vec<BaselineKind> {
    match metric_for(field) {
        MetricKind::Accuracy => vec![BaselineKind::RandomShuffle, BaselineKind::MostFrequent],
        MetricKind::Mae => {
            let mut b = vec![BaselineKind::RandomShuffle, BaselineKind::AverageYear];
            if stratified {
                b.push(BaselineKind::AverageYearPerStratum);
            }
            b
        }
    }
}

/// One evaluation table: baseline rows above model rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub task: FieldKind,
    pub metric: MetricKind,
    pub stratification: Option<String>,
    pub baselines: Vec<EvalReport>,
    pub models: Vec<EvalReport>,
}

impl EvalTable {
    pub fn strata(&self) -> Vec<String> {
        let mut s: Vec<String> =
            self.baselines.iter().chain(&self.models).flat_map(|r| r.strata.keys().cloned()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn to_table(&self) -> String {
        let strata = if self.stratification.is_some() { self.strata() } else { Vec::new() };
        let mut header = vec!["Model".to_string(), "Overall".to_string()];
        header.extend(strata.iter().cloned());
        header.push("N".into());
        let mut rows = vec![header];
        let fmt = |v: Option<f64>, shift: Option<f64>| match (self.metric, v) {
            (_, None) => "-".to_string(),
            (MetricKind::Accuracy, Some(v)) => format!("{v:.2}"),
            (MetricKind::Mae, Some(v)) => match shift {
                // Round first so a tiny negative shift does not print as -0.0.
                Some(s) => format!("{v:.1} ({:+.1})", (s * 10.0).round() / 10.0 + 0.0),
                None => format!("{v:.1}"),
            },
        };
        for r in self.baselines.iter().chain(&self.models) {
            let mut row = vec![r.model_id.clone(), fmt(r.value, r.mean_shift)];
            for s in &strata {
                row.push(r.strata.get(s).map_or("-".into(), |m| fmt(m.value, m.mean_shift)));
            }
            row.push(r.evaluated_count.to_string());
            rows.push(row);
        }
        let rules = if self.baselines.is_empty() { vec![] } else { vec![self.baselines.len()] };
        let mut out = format!(
            "{} ({})\n",
            self.task.label(),
            match self.metric {
                MetricKind::Accuracy => "accuracy",
                MetricKind::Mae => "MAE in years, mean shift in parentheses",
            }
        );
        out.push_str(&render_table(&rows, &rules));
        out
    }
}

/// Evaluates `models` on `field` together with the default baselines.
pub fn evaluate_field(
    preds: &PredictionSet,
    models: &[String],
    records: &RecordSet,
    field: FieldKind,
    strata: Option<&Stratification>,
    seed: u64,
    opts: &EvalOptions,
) -> Result<EvalTable, MetricsError> {
    let metric = metric_for(field);
    let baselines = default_baselines(field, strata.is_some())
        .into_iter()
        .map(|k| baseline(k, records, field, strata, seed, opts))
        .collect::<Result<_, _>>()?;
    let models = models
        .iter()
        .map(|m| model_report(preds, m, records, field, metric, strata, opts))
        .collect::<Result<_, _>>()?;
    Ok(EvalTable { task: field, metric, stratification: strata.map(|s| s.name.clone()), baselines, models })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Gender, TruthLabels};
    use crate::gateway::RawResponse;
    use crate::parsing::{parse_response, ParseOptions};
    use crate::prompting::FieldProfile;
    use chrono::NaiveDate;
    use std::collections::BTreeSet;

    fn rec(id: &str, gender: Option<Gender>, year: Option<i32>) -> NameRecord {
        NameRecord {
            id: id.into(),
            full_name: format!("Person {id}"),
            truth: TruthLabels {
                gender,
                birth_date: year.map(|y| NaiveDate::from_ymd_opt(y, 6, 1).unwrap()),
                ..Default::default()
            },
            source: String::new(),
        }
    }

    fn set(recs: Vec<NameRecord>) -> RecordSet {
        RecordSet::new(recs, BTreeSet::new())
    }

    fn preds(model: &str, lines: &[(&str, &str)]) -> PredictionSet {
        let profile = FieldProfile::florida();
        PredictionSet::new(
            lines
                .iter()
                .map(|(id, text)| {
                    parse_response(&RawResponse::ok(id, model, *text), &profile, &ParseOptions::default())
                })
                .collect(),
        )
    }

    #[test]
    fn accuracy_arithmetic() {
        let rs = set(vec![
            rec("1", Some(Gender::M), None),
            rec("2", Some(Gender::F), None),
            rec("3", Some(Gender::F), None),
        ]);
        let p = preds("m", &[("1", "Gender: M"), ("2", "Gender: M"), ("3", "Gender: F")]);
        let r = accuracy(&p, "m", &rs, FieldKind::Gender, None, &EvalOptions::default()).unwrap();
        assert!((r.value.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((r.evaluated_count, r.discarded_count), (3, 0));
    }

    #[test]
    fn unparsed_predictions_are_discarded() {
        let rs = set(vec![rec("1", Some(Gender::M), None), rec("2", Some(Gender::F), None)]);
        let p = preds("m", &[("1", "Gender: male-ish"), ("2", "nothing")]);
        let r = accuracy(&p, "m", &rs, FieldKind::Gender, None, &EvalOptions::default()).unwrap();
        assert_eq!(r.value, None);
        assert_eq!((r.evaluated_count, r.discarded_count), (0, 2));
        assert_eq!(
            accuracy(&p, "m", &rs, FieldKind::Race, None, &EvalOptions::default()),
            Err(MetricsError::NoGroundTruth(FieldKind::Race))
        );
    }

    #[test]
    fn mae_and_shift() {
        let rs = set(vec![rec("1", None, Some(1970)), rec("2", None, Some(1950))]);
        let p = preds("m", &[("1", "Birth Date: 01/01/1990"), ("2", "Birth Date: 12/31/1950")]);
        let r = mae_birth_year(&p, "m", &rs, None, &EvalOptions::default()).unwrap();
        assert_eq!(r.value, Some(10.0));
        assert_eq!(r.mean_shift, Some(10.0));

        let same = preds("m", &[("1", "Birth Date: 03/03/1970"), ("2", "Birth Date: 03/03/1950")]);
        let r = mae_birth_year(&same, "m", &rs, None, &EvalOptions::default()).unwrap();
        assert_eq!((r.value, r.mean_shift), (Some(0.0), Some(0.0)));
    }

    #[test]
    fn low_parse_rate_is_suppressed() {
        let rs = set((0..10).map(|i| rec(&i.to_string(), None, Some(1960))).collect());
        let p = preds("m", &[("0", "Birth Date: 01/01/1960")]);
        let r = mae_birth_year(&p, "m", &rs, None, &EvalOptions::default()).unwrap();
        assert!(r.suppressed);
        assert_eq!(r.value, None);
        let loose = EvalOptions { min_parse_success: 0.0 };
        assert_eq!(mae_birth_year(&p, "m", &rs, None, &loose).unwrap().value, Some(0.0));
    }

    #[test]
    fn baselines() {
        let mut recs: Vec<NameRecord> = (0..54).map(|i| rec(&format!("f{i}"), Some(Gender::F), None)).collect();
        recs.extend((0..46).map(|i| rec(&format!("m{i}"), Some(Gender::M), None)));
        let rs = set(recs);
        let mf =
            baseline(BaselineKind::MostFrequent, &rs, FieldKind::Gender, None, 0, &EvalOptions::default()).unwrap();
        assert_eq!(mf.value, Some(0.54));
        assert_eq!(mf.model_id, "Most Frequent (F)");

        let years = set(vec![rec("a", None, Some(1960)), rec("b", None, Some(1980))]);
        let avg = baseline(BaselineKind::AverageYear, &years, FieldKind::BirthDate, None, 0, &EvalOptions::default())
            .unwrap();
        assert_eq!(avg.value, Some(10.0));
        assert_eq!(avg.model_id, "Average year (1970)");
        assert!(baseline(BaselineKind::AverageYear, &rs, FieldKind::Gender, None, 0, &EvalOptions::default()).is_err());
    }

    #[test]
    fn per_stratum_average_and_table_layout() {
        let mut a = rec("a", Some(Gender::F), Some(1960));
        let mut b = rec("b", Some(Gender::F), Some(1980));
        let c = rec("c", Some(Gender::M), Some(2000));
        a.truth.race5 = Some(crate::domain::Race5::Hispanic);
        b.truth.race5 = Some(crate::domain::Race5::Hispanic);
        let rs = set(vec![a, b, c]);
        let strata = Stratification::from_truth(&rs, FieldKind::Race);
        let r = baseline(
            BaselineKind::AverageYearPerStratum,
            &rs,
            FieldKind::BirthDate,
            Some(&strata),
            0,
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(r.strata["Hispanic"].value, Some(10.0));
        assert_eq!(r.strata[UNKNOWN_STRATUM].value, Some(0.0));
        assert!((r.value.unwrap() - 20.0 / 3.0).abs() < 1e-12);

        let p = preds("m", &[("a", "Birth Date: 01/01/1990"), ("c", "Birth Date: 01/01/1990")]);
        let table =
            evaluate_field(&p, &["m".into()], &rs, FieldKind::BirthDate, Some(&strata), 1, &EvalOptions::default())
                .unwrap();
        let text = table.to_table();
        let random = text.find("Random").unwrap();
        let model = text.find("\nm ").unwrap();
        assert!(random < model);
        assert!(text.contains("(+10.0)"));
    }
}
