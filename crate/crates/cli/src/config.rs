//! Run configuration (TOML). Relative paths resolve against the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use url::Url;

use nameprobe::analytics::{Linkage, DEFAULT_COLLAPSE_THRESHOLD};
use nameprobe::domain::{Iso3Mode, RaceRemapTable};
use nameprobe::ingest::ColumnMapping;
use nameprobe::metrics::DEFAULT_MIN_PARSE_SUCCESS;
use nameprobe::parsing::DEFAULT_FLAG_THRESHOLD;
use nameprobe::pipeline::DEFAULT_VALIDITY_THRESHOLD;
use nameprobe::{FieldKind, FieldProfile, ModelSpec};

use crate::UsageError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for sampling, shuffle baselines, and tie-breaks.
    pub seed: Option<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Response cache journal; no persistent cache when absent.
    pub cache: Option<PathBuf>,
    /// Recorded response journals; when non-empty no network calls are made.
    #[serde(default)]
    pub replay: Vec<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub enrich: EnrichConfig,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    /// Validity judges; `vote_weight` carries each judge's weight.
    #[serde(default)]
    pub judges: Vec<ModelSpec>,
    #[serde(default)]
    pub clean: CleanConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub agreement: AgreementConfig,
    #[serde(default)]
    pub bias: BiasConfig,
    pub embedding: Option<EmbeddingConfig>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "ColumnMapping::canonical")]
    pub columns: ColumnMapping,
    pub race_remap: Option<PathBuf>,
    /// Seeded random subsample size.
    pub sample: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichConfig {
    pub profile: String,
    /// Custom field list; overrides the built-in profile's fields.
    pub fields: Option<Vec<FieldKind>>,
    /// Custom prompt template file with one `{fullname}` placeholder.
    pub template: Option<PathBuf>,
    pub iso3: Iso3Mode,
    pub flag_threshold: f64,
    pub timeout_secs: u64,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        Self {
            profile: "complex".into(),
            fields: None,
            template: None,
            iso3: Iso3Mode::default(),
            flag_threshold: DEFAULT_FLAG_THRESHOLD,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    pub threshold: f64,
    pub renormalize: bool,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_VALIDITY_THRESHOLD, renormalize: false }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub fields: Option<Vec<FieldKind>>,
    /// Voting models; all enrichment models when empty.
    pub models: Vec<String>,
    pub name: String,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { fields: None, models: Vec::new(), name: "ensemble".into() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub fields: Option<Vec<FieldKind>>,
    pub stratify: Option<FieldKind>,
    pub min_parse_success: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { fields: None, stratify: None, min_parse_success: DEFAULT_MIN_PARSE_SUCCESS }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgreementConfig {
    pub fields: Option<Vec<FieldKind>>,
    pub linkage: Linkage,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasConfig {
    pub fields: Option<Vec<FieldKind>>,
    pub collapse_threshold: f64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self { fields: None, collapse_threshold: DEFAULT_COLLAPSE_THRESHOLD }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub base_url: Url,
    pub model: String,
    #[serde(default)]
    pub api_key_env: String,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.out_dir);
        if let Some(c) = cfg.cache.as_mut() {
            resolve(base, c);
        }
        for r in &mut cfg.replay {
            resolve(base, r);
        }
        resolve(base, &mut cfg.dataset.path);
        if let Some(r) = cfg.dataset.race_remap.as_mut() {
            resolve(base, r);
        }
        if let Some(t) = cfg.enrich.template.as_mut() {
            resolve(base, t);
        }
        Ok(cfg)
    }

    /// Checks that do not depend on the subcommand.
    pub fn validate(&self, path: &Path) -> Result<(), UsageError> {
        let ctx = |field: &str, msg: String| UsageError(format!("{}: {field}: {msg}", path.display()));
        if self.seed.is_none() {
            return Err(ctx("seed", "a root seed is required (set `seed` or pass --seed)".into()));
        }
        if !self.dataset.path.is_file() {
            return Err(ctx("dataset.path", format!("{} does not exist", self.dataset.path.display())));
        }
        for r in &self.replay {
            if !r.is_file() {
                return Err(ctx("replay", format!("{} does not exist", r.display())));
            }
        }
        for (i, m) in self.models.iter().chain(&self.judges).enumerate() {
            m.validate().map_err(|e| ctx(&format!("model #{}", i + 1), e.to_string()))?;
        }
        for (name, v) in [
            ("enrich.flag_threshold", self.enrich.flag_threshold),
            ("evaluate.min_parse_success", self.evaluate.min_parse_success),
            ("bias.collapse_threshold", self.bias.collapse_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ctx(name, format!("{v} is outside [0, 1]")));
            }
        }
        self.profile().map_err(|e| ctx("enrich", e.0))?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    pub fn live(&self) -> bool {
        self.replay.is_empty()
    }

    pub fn profile(&self) -> Result<FieldProfile, UsageError> {
        let e = &self.enrich;
        let mut profile = match &e.fields {
            Some(fields) => FieldProfile::new(e.profile.clone(), fields.clone()),
            None => FieldProfile::builtin(&e.profile),
        }
        .map_err(|err| UsageError(err.to_string()))?;
        if let Some(t) = &e.template {
            let text = std::fs::read_to_string(t)
                .map_err(|err| UsageError(format!("cannot read template {}: {err}", t.display())))?;
            profile = profile.with_template(text).map_err(|err| UsageError(err.to_string()))?;
        }
        Ok(profile)
    }

    pub fn race_remap(&self) -> Result<RaceRemapTable, UsageError> {
        match &self.dataset.race_remap {
            None => Ok(RaceRemapTable::default()),
            Some(p) => RaceRemapTable::from_path(p).map_err(|e| UsageError(format!("{}: {e}", p.display()))),
        }
    }
}
