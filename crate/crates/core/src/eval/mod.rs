//! Evaluation of predictors over test subsets, and report emission.

mod diversity;
mod harness;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use diversity::{diversity_report, DiversityReport, QuestionDiversity};
pub use harness::{
    evaluate, pew_generalization, prepare_variant, run_matrix, standard_rows, EntryPrediction, EvalContext,
    EvalResult, Evaluation, MatrixCell, MatrixReport, MatrixRow,
};
pub use report::{
    emit_report, markdown_grid, read_predictions_jsonl, read_results_csv, write_predictions_jsonl,
    write_results_csv, Metric, ReportBundle, ReportFormat,
};

use crate::error::{Error, Result};
use crate::prompting::PromptRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Normal,
    Ctrl,
    Shuffled,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Normal => "normal",
            Variant::Ctrl => "ctrl",
            Variant::Shuffled => "shuffled",
        }
    }

    /// Suffix appended to a predictor name in report rows.
    pub fn row_suffix(self) -> &'static str {
        match self {
            Variant::Normal => "",
            Variant::Ctrl => " [ctrl]",
            Variant::Shuffled => " [shuffled]",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Variant::Normal),
            "ctrl" => Ok(Variant::Ctrl),
            "shuffled" => Ok(Variant::Shuffled),
            other => Err(Error::validation(format!("unknown variant {other:?}; expected normal, ctrl or shuffled"))),
        }
    }
}

/// A predictor's answer for one record, in the record's display order.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Probs(Vec<f64>),
    /// Explicit per-entry failure; excluded from means and counted.
    Failed(String),
}

pub trait Predictor: Send + Sync {
    fn id(&self) -> String;

    fn predict(&self, record: &PromptRecord) -> Result<Prediction>;

    /// Settings recorded into run metadata.
    fn metadata(&self) -> BTreeMap<String, String> {
        BTreeMap::new()
    }
}

/// Returns each record's own target.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn id(&self) -> String {
        "Oracle".into()
    }

    fn predict(&self, record: &PromptRecord) -> Result<Prediction> {
        Ok(Prediction::Probs(record.entry.target.probs.clone()))
    }
}

/// Uniform over the record's options.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPredictor;

impl Predictor for UniformPredictor {
    fn id(&self) -> String {
        "Uniform".into()
    }

    fn predict(&self, record: &PromptRecord) -> Result<Prediction> {
        let n = record.option_count();
        Ok(Prediction::Probs(vec![1.0 / n as f64; n]))
    }
}
