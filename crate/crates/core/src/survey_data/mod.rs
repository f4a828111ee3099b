//! Survey ingestion, cleaning and country/question splits.

mod clean;
mod dataset;
mod ingest;
mod splits;

use serde::{Deserialize, Serialize};

pub use clean::{filter_countries, strip_invalid_options, InvalidOptionPolicy};
pub use dataset::{read_dataset_jsonl, write_dataset_jsonl, DatasetRecord};
pub use ingest::{
    parse_aggregated, parse_survey, read_aggregated_file, read_codebook, AggregatedDistribution,
    AggregatedQuestion, AggregatedSurvey, Codebook, CodebookOption, CodebookQuestion, ParsedSurvey,
};
pub use splits::{
    build_splits, DatasetSplits, SplitConfig, SplitDataset, Subset, SubsetAssignment, SUBSET_NAMES,
    TEST_SUBSETS,
};

/// One multiple-choice survey item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub question_id: u32,
    pub text: String,
    pub options: Vec<String>,
    pub dimension: String,
    pub survey_id: String,
}

/// Observed answer shares for one group on one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDistribution {
    pub group: String,
    pub question_id: u32,
    pub probs: Vec<f64>,
    /// Number of respondents surveyed in the group (not per question).
    pub respondent_count: u64,
}

/// A question paired with one group's target distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub question: SurveyQuestion,
    pub group: String,
    pub target: ResponseDistribution,
}

impl Entry {
    pub fn new(question: SurveyQuestion, target: ResponseDistribution) -> Self {
        debug_assert_eq!(question.question_id, target.question_id);
        Self { group: target.group.clone(), question, target }
    }

    /// Stable identifier used in logs and prediction dumps.
    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.question.survey_id, self.question.question_id, self.group)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    UnknownAnswerCode,
    MissingCountry,
    QuestionDropped,
    DistributionDropped,
    CountryFiltered,
    EmptyResult,
    MissingSplitMember,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub kind: ReportKind,
    pub message: String,
}

/// Non-fatal findings accumulated while building a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataReport {
    pub entries: Vec<ReportEntry>,
}

impl DataReport {
    pub fn push(&mut self, kind: ReportKind, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.entries.push(ReportEntry { kind, message });
    }

    pub fn count(&self, kind: ReportKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    pub fn extend(&mut self, other: DataReport) {
        self.entries.extend(other.entries);
    }
}

/// Scales non-negative weights to sum to one. Returns `None` when there is no mass.
pub(crate) fn normalize(weights: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    Some(weights.iter().map(|w| w / total).collect())
}
