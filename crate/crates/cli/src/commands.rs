use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;

use nameprobe::analytics::{
    bias_report_for, hierarchical_cluster, matrix_for_field, BiasReport, CachedEmbedder, Embedder, HashEmbedder,
    HttpEmbedder,
};
use nameprobe::gateway::{HttpBackend, ReplayBackend, ResponseCache};
use nameprobe::ingest::{load_records, subsample, write_records, ColumnMapping};
use nameprobe::metrics::{
    accuracy, evaluate_field, mae, metric_for, EvalOptions, EvalTable, MetricKind, Stratification,
};
use nameprobe::parsing::{parse_report, ParseOptions};
use nameprobe::pipeline::{
    clean_validity, default_vote_fields, enrich, ensemble, ensemble_as_predictions, read_jsonl, validate_weights,
    write_jsonl, CleaningOptions, EnsemblePrediction, PredictionSet,
};
use nameprobe::{FieldKind, Gateway, ModelSpec, RecordSet};

use crate::config::RunConfig;
use crate::{Cli, Command, UsageError};

const PREDICTIONS: &str = "predictions.jsonl";
const RECORDS: &str = "records.csv";
const KEPT: &str = "kept.csv";
const ENSEMBLE: &str = "ensemble.jsonl";

pub fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.clone().ok_or_else(|| UsageError("--config is required".into()))?;
    let mut cfg = RunConfig::load(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(cache) = &cli.cache {
        cfg.cache = Some(cache.clone());
    }
    if !cli.replay.is_empty() {
        cfg.replay = cli.replay.clone();
    }
    cfg.validate(&config_path)?;
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("cannot create output directory {}", cfg.out_dir.display()))?;

    match cli.command {
        Command::Enrich => cmd_enrich(&cfg),
        Command::Clean { threshold, weights } => cmd_clean(&cfg, threshold, weights),
        Command::Ensemble => cmd_ensemble(&cfg),
        Command::Evaluate { records } => cmd_evaluate(&cfg, records),
        Command::Agreement => cmd_agreement(&cfg),
        Command::Bias { records } => cmd_bias(&cfg, records),
        Command::Report => cmd_report(&cfg),
    }
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// File-name-safe form of a model id.
fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}

fn load_dataset(cfg: &RunConfig) -> Result<RecordSet> {
    let remap = cfg.race_remap()?;
    let (rs, report) =
        load_records(&cfg.dataset.path, &cfg.dataset.columns, &remap).map_err(|e| UsageError(e.to_string()))?;
    for w in &report.warnings {
        warn!("{}: row {}: {}", cfg.dataset.path.display(), w.row, w.message);
    }
    info!(
        "loaded {} of {} rows ({} empty names, {} duplicates dropped)",
        rs.len(),
        report.rows_read,
        report.dropped_empty_names,
        report.dropped_duplicates
    );
    match cfg.dataset.sample {
        Some(n) => subsample(&rs, n, cfg.seed()).map_err(|e| UsageError(e.to_string()).into()),
        None => Ok(rs),
    }
}

fn read_records(path: &Path) -> Result<RecordSet> {
    if !path.is_file() {
        return Err(UsageError(format!("{} does not exist; run `enrich` first", path.display())).into());
    }
    let (rs, _) =
        load_records(path, &ColumnMapping::canonical(), &Default::default()).map_err(|e| UsageError(e.to_string()))?;
    Ok(rs)
}

/// Explicit path, else the cleaned set when present, else every enriched record.
fn scoring_records(cfg: &RunConfig, explicit: Option<PathBuf>) -> Result<RecordSet> {
    let path = explicit.unwrap_or_else(|| {
        let kept = out(cfg, KEPT);
        if kept.is_file() {
            kept
        } else {
            out(cfg, RECORDS)
        }
    });
    info!("scoring against {}", path.display());
    read_records(&path)
}

fn read_predictions(cfg: &RunConfig) -> Result<PredictionSet> {
    let path = out(cfg, PREDICTIONS);
    if !path.is_file() {
        return Err(UsageError(format!("{} does not exist; run `enrich` first", path.display())).into());
    }
    PredictionSet::read_jsonl(&path).with_context(|| format!("cannot read {}", path.display()))
}

fn gateway(cfg: &RunConfig, specs: &[ModelSpec]) -> Result<Gateway> {
    let mut gw = if cfg.live() {
        for s in specs {
            if !s.api_key_env.is_empty() && std::env::var_os(&s.api_key_env).is_none() {
                return Err(UsageError(format!(
                    "model {}: environment variable {} is not set",
                    s.model_id, s.api_key_env
                ))
                .into());
            }
        }
        Gateway::new(HttpBackend::new(Duration::from_secs(cfg.enrich.timeout_secs)))
    } else {
        Gateway::new(ReplayBackend::from_files(&cfg.replay).context("cannot read replay journals")?)
    };
    if let Some(path) = &cfg.cache {
        let cache = ResponseCache::open(path).with_context(|| format!("cannot open cache {}", path.display()))?;
        gw = gw.with_cache(Arc::new(cache));
    }
    Ok(gw)
}

fn cmd_enrich(cfg: &RunConfig) -> Result<()> {
    if cfg.models.is_empty() {
        return Err(UsageError("no [[models]] configured".into()).into());
    }
    let profile = cfg.profile()?;
    let rs = load_dataset(cfg)?;
    write_records(&rs, &out(cfg, RECORDS))?;
    let gw = gateway(cfg, &cfg.models)?;
    let opts = ParseOptions { iso3_mode: cfg.enrich.iso3 };
    let preds = enrich(&rs, &cfg.models, &profile, &gw, &opts)?;
    preds.write_jsonl(&out(cfg, PREDICTIONS))?;

    let models: Vec<String> = cfg.models.iter().map(|m| m.model_id.clone()).collect();
    let report = parse_report(preds.as_slice(), &models, profile.fields(), cfg.enrich.flag_threshold);
    write_json(&out(cfg, "parse_report.json"), &report)?;
    let text =
        format!("Parse success rate (! marks rates below {:.2})\n{}", cfg.enrich.flag_threshold, report.to_table());
    write_text(&out(cfg, "parse_report.txt"), &text)?;
    println!("{} predictions for {} records and {} models", preds.len(), rs.len(), models.len());
    print!("{text}");
    Ok(())
}

fn cmd_clean(cfg: &RunConfig, threshold: Option<f64>, weights: Option<Vec<f64>>) -> Result<()> {
    if cfg.judges.is_empty() {
        return Err(UsageError("no [[judges]] configured".into()).into());
    }
    let mut judges: Vec<(ModelSpec, f64)> = cfg.judges.iter().map(|j| (j.clone(), j.vote_weight)).collect();
    if let Some(w) = weights {
        if w.len() != judges.len() {
            return Err(UsageError(format!("--weights has {} values for {} judges", w.len(), judges.len())).into());
        }
        for (j, w) in judges.iter_mut().zip(w) {
            j.1 = w;
        }
    }
    let weights: Vec<f64> = judges.iter().map(|j| j.1).collect();
    validate_weights(&weights).map_err(|e| UsageError(e.to_string()))?;
    let threshold = threshold.unwrap_or(cfg.clean.threshold);
    if threshold.is_nan() {
        return Err(UsageError("threshold must be a number".into()).into());
    }
    let opts = CleaningOptions { threshold, renormalize: cfg.clean.renormalize };

    let rs = load_dataset(cfg)?;
    let specs: Vec<ModelSpec> = judges.iter().map(|j| j.0.clone()).collect();
    let gw = gateway(cfg, &specs)?;
    let outcome = clean_validity(&rs, &judges, &gw, &opts)?;
    write_records(&outcome.kept, &out(cfg, KEPT))?;
    write_records(&outcome.discarded, &out(cfg, "discarded.csv"))?;
    write_jsonl(&out(cfg, "verdicts.jsonl"), &outcome.verdicts)?;

    let mut text = format!(
        "Validity cleaning (threshold {threshold}): kept {} of {}, discarded {}\n",
        outcome.kept.len(),
        rs.len(),
        outcome.discarded.len()
    );
    for v in outcome.verdicts.iter().filter(|v| !v.kept) {
        let name = rs.get(&v.record_id).map_or("", |r| r.full_name.as_str());
        let _ = writeln!(text, "  discarded {} {:?} (score {:.2})", v.record_id, name, v.validity_score);
    }
    write_text(&out(cfg, "clean_summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_ensemble(cfg: &RunConfig) -> Result<()> {
    let preds = read_predictions(cfg)?;
    let profile = cfg.profile()?;
    let fields = cfg.ensemble.fields.clone().unwrap_or_else(|| default_vote_fields(profile.fields()));
    let votes = ensemble(&preds, &cfg.ensemble.models, &fields, cfg.seed());
    write_jsonl(&out(cfg, ENSEMBLE), &votes)?;
    let ties = votes.iter().filter(|v| v.tie_broken).count();
    println!("{} ensemble labels over {} fields ({ties} tie-breaks)", votes.len(), fields.len());
    Ok(())
}

fn fields_with_truth(rs: &RecordSet, fields: &[FieldKind]) -> Vec<FieldKind> {
    fields.iter().copied().filter(|&f| rs.iter().any(|r| r.truth.label_for(f).is_some())).collect()
}

fn cmd_evaluate(cfg: &RunConfig, records: Option<PathBuf>) -> Result<()> {
    let rs = scoring_records(cfg, records)?;
    let mut preds = read_predictions(cfg)?;
    let models = preds.model_ids();
    let profile = cfg.profile()?;

    let ensemble_path = out(cfg, ENSEMBLE);
    let mut voted = BTreeSet::new();
    if ensemble_path.is_file() {
        let votes: Vec<EnsemblePrediction> = read_jsonl(&ensemble_path)?;
        voted = votes.iter().map(|v| v.field).collect();
        let ids: Vec<String> = rs.iter().map(|r| r.id.clone()).collect();
        let fields: Vec<FieldKind> = voted.iter().copied().collect();
        preds.extend(ensemble_as_predictions(&votes, &cfg.ensemble.name, &ids, &fields));
    }

    let fields = match &cfg.evaluate.fields {
        Some(f) => f.clone(),
        None => fields_with_truth(&rs, profile.fields()),
    };
    let opts = EvalOptions { min_parse_success: cfg.evaluate.min_parse_success };
    let mut combined = String::new();
    for field in fields {
        let mut models = models.clone();
        if voted.contains(&field) {
            models.push(cfg.ensemble.name.clone());
        }
        let table = evaluate_one(cfg, &preds, &models, &rs, field, &opts)
            .map_err(|e| UsageError(format!("evaluate {field}: {e}")))?;
        write_json(&out(cfg, &format!("eval_{}.json", field.key())), &table)?;
        let text = table.to_table();
        write_text(&out(cfg, &format!("eval_{}.txt", field.key())), &text)?;
        combined.push_str(&text);
        combined.push('\n');
    }
    write_text(&out(cfg, "eval.txt"), &combined)?;
    print!("{combined}");
    Ok(())
}

/// Ground-truth strata when the records carry the stratifying field,
/// otherwise each model is stratified by its own predictions.
fn evaluate_one(
    cfg: &RunConfig,
    preds: &PredictionSet,
    models: &[String],
    rs: &RecordSet,
    field: FieldKind,
    opts: &EvalOptions,
) -> std::result::Result<EvalTable, nameprobe::metrics::MetricsError> {
    let seed = cfg.seed();
    let Some(by) = cfg.evaluate.stratify else {
        return evaluate_field(preds, models, rs, field, None, seed, opts);
    };
    if rs.iter().any(|r| r.truth.label_for(by).is_some()) {
        let strata = Stratification::from_truth(rs, by);
        return evaluate_field(preds, models, rs, field, Some(&strata), seed, opts);
    }
    let mut table = evaluate_field(preds, &[], rs, field, None, seed, opts)?;
    table.stratification = Some(format!("predicted {}", by.label()));
    for m in models {
        let strata = Stratification::from_predictions(preds, m, by);
        let report = match metric_for(field) {
            MetricKind::Accuracy => accuracy(preds, m, rs, field, Some(&strata), opts)?,
            MetricKind::Mae => mae(preds, m, rs, field, Some(&strata), opts)?,
        };
        table.models.push(report);
    }
    Ok(table)
}

fn embedder(cfg: &RunConfig) -> Box<dyn Embedder> {
    match (&cfg.embedding, cfg.live()) {
        (Some(e), true) => {
            Box::new(CachedEmbedder::new(HttpEmbedder::new(e.base_url.clone(), e.model.clone(), e.api_key_env.clone())))
        }
        _ => {
            info!("using the offline hash embedder for free-text similarity");
            Box::new(HashEmbedder::new(cfg.seed()))
        }
    }
}

fn cmd_agreement(cfg: &RunConfig) -> Result<()> {
    let preds = read_predictions(cfg)?;
    let models = preds.model_ids();
    let profile = cfg.profile()?;
    let fields = cfg.agreement.fields.clone().unwrap_or_else(|| profile.fields().to_vec());
    let embedder = embedder(cfg);
    let mut summary = String::new();
    for field in fields {
        let matrix = matrix_for_field(&preds, &models, field, embedder.as_ref())
            .map_err(|e| UsageError(format!("agreement {field}: {e}")))?;
        write_text(&out(cfg, &format!("agreement_{}.csv", field.key())), &matrix.to_csv())?;
        match hierarchical_cluster(&matrix, cfg.agreement.linkage) {
            Ok(d) => {
                let doc = serde_json::json!({
                    "field": field,
                    "metric": matrix.metric,
                    "linkage": d.linkage,
                    "leaf_order": d.leaf_labels(),
                    "tree": d.to_json(),
                });
                write_json(&out(cfg, &format!("dendrogram_{}.json", field.key())), &doc)?;
                let _ = writeln!(summary, "{}: {}", field.label(), d.leaf_labels().join(" "));
            }
            Err(e) => {
                warn!("{field}: no dendrogram: {e}");
                let _ = writeln!(summary, "{}: not clustered ({e})", field.label());
            }
        }
    }
    let text = format!("Model order from agreement clustering ({:?} linkage)\n{summary}", cfg.agreement.linkage);
    write_text(&out(cfg, "agreement.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn bias_table(reports: &[BiasReport]) -> String {
    let mut rows = vec![vec![
        "Model".to_string(),
        "Field".into(),
        "N".into(),
        "Top value".into(),
        "Top share".into(),
        "Round share".into(),
        "Distinct".into(),
        "Shift".into(),
        "Collapsed".into(),
    ]];
    for r in reports {
        rows.push(vec![
            r.model_id.clone(),
            r.field.label().to_string(),
            r.total.to_string(),
            r.top1_value.map_or("-".into(), |v| v.to_string()),
            format!("{:.2}", r.top1_share),
            format!("{:.2}", r.round_share),
            r.distinct_count.to_string(),
            r.mean_shift.map_or("-".into(), |s| format!("{s:+.1}")),
            if r.collapsed { "yes".into() } else { "no".into() },
        ]);
    }
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| if c < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

fn cmd_bias(cfg: &RunConfig, records: Option<PathBuf>) -> Result<()> {
    let preds = read_predictions(cfg)?;
    let rs = scoring_records(cfg, records)?;
    let profile = cfg.profile()?;
    let fields: Vec<FieldKind> = cfg.bias.fields.clone().unwrap_or_else(|| {
        profile.fields().iter().copied().filter(|f| matches!(f, FieldKind::BirthDate | FieldKind::Age)).collect()
    });
    let mut reports = Vec::new();
    for field in fields {
        for m in preds.model_ids() {
            let r = bias_report_for(&preds, &m, field, Some(&rs), cfg.bias.collapse_threshold)
                .map_err(|e| UsageError(format!("bias {field}: {e}")))?;
            let stem = format!("bias_{}_{}", field.key(), slug(&m));
            write_json(&out(cfg, &format!("{stem}.json")), &r)?;
            write_text(&out(cfg, &format!("{stem}.csv")), &r.histogram_csv())?;
            reports.push(r);
        }
    }
    let text = format!(
        "Prediction distribution (collapsed: top share >= {:.2})\n{}",
        cfg.bias.collapse_threshold,
        bias_table(&reports)
    );
    write_text(&out(cfg, "bias.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let parts = ["parse_report.txt", "clean_summary.txt", "eval.txt", "agreement.txt", "bias.txt"];
    let mut text = String::new();
    for p in parts {
        if let Ok(body) = std::fs::read_to_string(out(cfg, p)) {
            text.push_str(&body);
            text.push('\n');
        }
    }
    if text.is_empty() {
        return Err(UsageError(format!("no reports found in {}", cfg.out_dir.display())).into());
    }
    write_text(&out(cfg, "report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
