use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize, DataReport, ReportKind, ResponseDistribution, SurveyQuestion};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookOption {
    pub code: i64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookQuestion {
    pub question_id: u32,
    /// CSV header of the answer column.
    pub column: String,
    pub text: String,
    #[serde(default)]
    pub dimension: String,
    pub options: Vec<CodebookOption>,
}

/// Maps respondent-level answer codes to question and option metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub survey_id: String,
    pub country_column: String,
    /// Display names for raw country codes; unmapped values are used as they are.
    #[serde(default)]
    pub country_names: BTreeMap<String, String>,
    pub questions: Vec<CodebookQuestion>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedSurvey {
    pub questions: Vec<SurveyQuestion>,
    pub distributions: Vec<ResponseDistribution>,
    pub report: DataReport,
}

pub fn read_codebook(path: &Path) -> Result<Codebook> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
    Ok(serde_json::from_str(&text)?)
}

/// Tallies respondent-level answers into per-country option distributions.
///
/// Rows without a country are skipped. Empty cells count as missing answers.
/// Codes absent from the codebook are skipped and summarized in the report,
/// one entry per (question, code).
pub fn parse_survey<R: Read>(raw_records: R, codebook: &Codebook) -> Result<ParsedSurvey> {
    let mut report = DataReport::default();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw_records);
    let headers = reader.headers()?.clone();
    let column_index = |name: &str| headers.iter().position(|h| h.trim() == name);

    let country_col = column_index(&codebook.country_column).ok_or_else(|| {
        Error::validation(format!("country column {:?} not in CSV header", codebook.country_column))
    })?;

    struct Tracked<'a> {
        column: usize,
        question: &'a CodebookQuestion,
        codes: HashMap<i64, usize>,
    }

    let mut tracked = Vec::new();
    let mut questions = Vec::new();
    for q in &codebook.questions {
        let labels: Vec<String> = q.options.iter().map(|o| o.label.trim().to_string()).collect();
        if labels.len() < 2 {
            report.push(
                ReportKind::QuestionDropped,
                format!("question {} has fewer than two options in the codebook", q.question_id),
            );
            continue;
        }
        let Some(column) = column_index(&q.column) else {
            report.push(
                ReportKind::QuestionDropped,
                format!("question {} column {:?} not in CSV header", q.question_id, q.column),
            );
            continue;
        };
        let codes = q.options.iter().enumerate().map(|(i, o)| (o.code, i)).collect();
        tracked.push(Tracked { column, question: q, codes });
        questions.push(SurveyQuestion {
            question_id: q.question_id,
            text: q.text.trim().to_string(),
            options: labels,
            dimension: q.dimension.clone(),
            survey_id: codebook.survey_id.clone(),
        });
    }

    let mut group_totals: BTreeMap<String, u64> = BTreeMap::new();
    let mut counts: BTreeMap<(String, usize), Vec<u64>> = BTreeMap::new();
    let mut unknown: BTreeMap<(u32, String), u64> = BTreeMap::new();
    let mut missing_country = 0u64;

    for record in reader.records() {
        let record = record?;
        let raw_country = record.get(country_col).map(str::trim).unwrap_or_default();
        let country = codebook.country_names.get(raw_country).map_or(raw_country, |n| n.trim());
        if country.is_empty() {
            missing_country += 1;
            continue;
        }
        *group_totals.entry(country.to_string()).or_default() += 1;
        for (slot, t) in tracked.iter().enumerate() {
            let cell = record.get(t.column).map(str::trim).unwrap_or_default();
            if cell.is_empty() {
                continue;
            }
            let option = cell.parse::<i64>().ok().and_then(|code| t.codes.get(&code).copied());
            match option {
                Some(i) => {
                    let n = t.question.options.len();
                    counts.entry((country.to_string(), slot)).or_insert_with(|| vec![0; n])[i] += 1;
                }
                None => {
                    *unknown.entry((t.question.question_id, cell.to_string())).or_default() += 1;
                }
            }
        }
    }

    if missing_country > 0 {
        report.push(
            ReportKind::MissingCountry,
            format!("{missing_country} rows without a country identifier skipped"),
        );
    }
    for ((qid, code), n) in unknown {
        report.push(
            ReportKind::UnknownAnswerCode,
            format!("question {qid}: {n} answers with unknown code {code:?} skipped"),
        );
    }

    let mut distributions = Vec::new();
    for (country, total) in &group_totals {
        for (slot, t) in tracked.iter().enumerate() {
            let Some(tally) = counts.get(&(country.clone(), slot)) else {
                continue;
            };
            let weights: Vec<f64> = tally.iter().map(|&c| c as f64).collect();
            if let Some(probs) = normalize(&weights) {
                distributions.push(ResponseDistribution {
                    group: country.clone(),
                    question_id: t.question.question_id,
                    probs,
                    respondent_count: *total,
                });
            }
        }
    }

    Ok(ParsedSurvey { questions, distributions, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedDistribution {
    pub country: String,
    pub question_id: u32,
    /// Shares or raw weights; renormalized on ingest.
    pub probs: Vec<f64>,
    #[serde(default)]
    pub respondent_count: u64,
}

/// Pre-aggregated survey export, one distribution per (country, question).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedSurvey {
    pub survey_id: String,
    pub questions: Vec<AggregatedQuestion>,
    pub distributions: Vec<AggregatedDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedQuestion {
    pub question_id: u32,
    pub text: String,
    pub options: Vec<String>,
    #[serde(default)]
    pub dimension: String,
}

pub fn read_aggregated_file(path: &Path) -> Result<ParsedSurvey> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
    let survey: AggregatedSurvey = serde_json::from_str(&text)?;
    Ok(parse_aggregated(&survey))
}

/// Converts an aggregated export into the same shape `parse_survey` produces.
pub fn parse_aggregated(survey: &AggregatedSurvey) -> ParsedSurvey {
    let mut report = DataReport::default();
    let mut questions = Vec::new();
    let mut option_counts = HashMap::new();
    for q in &survey.questions {
        if q.options.len() < 2 {
            report.push(
                ReportKind::QuestionDropped,
                format!("question {} has fewer than two options", q.question_id),
            );
            continue;
        }
        option_counts.insert(q.question_id, q.options.len());
        questions.push(SurveyQuestion {
            question_id: q.question_id,
            text: q.text.trim().to_string(),
            options: q.options.iter().map(|o| o.trim().to_string()).collect(),
            dimension: q.dimension.clone(),
            survey_id: survey.survey_id.clone(),
        });
    }

    let mut distributions = Vec::new();
    for d in &survey.distributions {
        let country = d.country.trim();
        let Some(&n) = option_counts.get(&d.question_id) else {
            report.push(
                ReportKind::DistributionDropped,
                format!("{country}: distribution for unknown question {}", d.question_id),
            );
            continue;
        };
        let valid = d.probs.len() == n && d.probs.iter().all(|p| p.is_finite() && *p >= 0.0);
        match normalize(&d.probs).filter(|_| valid) {
            Some(probs) => distributions.push(ResponseDistribution {
                group: country.to_string(),
                question_id: d.question_id,
                probs,
                respondent_count: d.respondent_count,
            }),
            None => report.push(
                ReportKind::DistributionDropped,
                format!("{country}: invalid distribution for question {}", d.question_id),
            ),
        }
    }
    ParsedSurvey { questions, distributions, report }
}
