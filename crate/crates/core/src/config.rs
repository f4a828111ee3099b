//! Structured run configuration with field-level error reporting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::TrainConfig;
use crate::backend::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::eval::{ReportFormat, Variant};
use crate::survey_data::SplitConfig;
use crate::synthetic::SyntheticConfig;
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Respondent-level CSV (`raw`) plus a JSON `codebook`.
    Microdata,
    /// Pre-aggregated JSON export at `path`.
    Aggregated,
    /// Generated from `synthetic`.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default)]
    pub raw: Option<PathBuf>,
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    /// Countries must have strictly more respondents than this to be kept.
    #[serde(default)]
    pub min_respondents: Option<u64>,
    /// Option labels removed before renormalizing; defaults to the two standard ones.
    #[serde(default)]
    pub invalid_options: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptingConfig {
    /// Template file; the built-in template when absent.
    #[serde(default)]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Mock {
        fixture: PathBuf,
    },
    ToyTable,
    ToyEmbedding {
        #[serde(default)]
        embedding: EmbeddingConfig,
        /// JSON map of country → vector; synthetic surveys supply their own.
        #[serde(default)]
        knowledge: Option<PathBuf>,
    },
    RealLm {
        model: String,
        #[serde(default)]
        flags: BTreeMap<String, String>,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::ToyEmbedding { embedding: EmbeddingConfig::default(), knowledge: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PewConfig {
    /// Aggregated export of the unseen survey.
    pub path: PathBuf,
    /// Country groups, e.g. the sampled seen countries and the held-out ones.
    pub groups: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    /// Test subsets to evaluate; all five by default.
    #[serde(default)]
    pub subsets: Option<Vec<String>>,
    /// Replacement pool for [ctrl]; every dataset country by default.
    #[serde(default)]
    pub control_pool: Option<Vec<String>>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
    /// Worker threads for evaluation; rayon's default when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_knn_dim")]
    pub knn_embedding_dim: usize,
    #[serde(default)]
    pub pew: Option<PewConfig>,
    /// Adapter checkpoint used for FT rows.
    #[serde(default)]
    pub adapter: Option<PathBuf>,
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Normal, Variant::Ctrl]
}
fn default_formats() -> Vec<String> {
    vec!["md".into(), "csv".into(), "svg".into()]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_knn_dim() -> usize {
    256
}

impl Default for EvalConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    /// Required unless the data source generates its own splits.
    #[serde(default)]
    pub splits: Option<SplitConfig>,
    #[serde(default)]
    pub prompting: PromptingConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Root for dataset, training and evaluation artifacts.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Parses JSON text; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config { path, message: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let config_err = |path: &str, e: Error| Error::Config {
            path: path.into(),
            message: match e {
                Error::Validation(m) => m,
                other => other.to_string(),
            },
        };
        self.train.validate().map_err(|e| config_err("train", e))?;
        let data = &self.data;
        let missing = |field: &str| Error::Config {
            path: format!("data.{field}"),
            message: format!("required for source {:?}", data.source),
        };
        match data.source {
            DataSource::Microdata if data.raw.is_none() => return Err(missing("raw")),
            DataSource::Microdata if data.codebook.is_none() => return Err(missing("codebook")),
            DataSource::Aggregated if data.path.is_none() => return Err(missing("path")),
            _ => {}
        }
        if self.splits.is_none() && data.source != DataSource::Synthetic {
            return Err(Error::Config {
                path: "splits".into(),
                message: "missing split configuration (only synthetic data supplies its own)".into(),
            });
        }
        if self.eval.formats.is_empty() {
            return Err(Error::Config { path: "eval.formats".into(), message: "at least one format".into() });
        }
        for (i, f) in self.eval.formats.iter().enumerate() {
            f.parse::<ReportFormat>().map_err(|e| config_err(&format!("eval.formats[{i}]"), e))?;
        }
        if self.eval.threads == Some(0) {
            return Err(Error::Config { path: "eval.threads".into(), message: "must be at least 1".into() });
        }
        Ok(())
    }

    /// Resolves a config-relative path.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
