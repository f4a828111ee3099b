use serde::{Deserialize, Serialize};

use super::{normalize, DataReport, ReportKind, ResponseDistribution, SurveyQuestion};

/// Keeps only groups whose respondent count is strictly greater than `min_respondents`.
pub fn filter_countries(
    distributions: Vec<ResponseDistribution>,
    min_respondents: u64,
    report: &mut DataReport,
) -> Vec<ResponseDistribution> {
    let input_len = distributions.len();
    let mut dropped = std::collections::BTreeSet::new();
    let kept: Vec<_> = distributions
        .into_iter()
        .filter(|d| {
            let keep = d.respondent_count > min_respondents;
            if !keep {
                dropped.insert((d.group.clone(), d.respondent_count));
            }
            keep
        })
        .collect();
    for (group, n) in dropped {
        report.push(
            ReportKind::CountryFiltered,
            format!("{group}: {n} respondents, not more than {min_respondents}"),
        );
    }
    if kept.is_empty() && input_len > 0 {
        report.push(ReportKind::EmptyResult, "country filter removed every distribution");
    }
    kept
}

/// Option labels treated as validity checks rather than answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidOptionPolicy {
    pub labels: Vec<String>,
}

impl InvalidOptionPolicy {
    pub const DEFAULT_LABELS: [&'static str; 2] = ["not applicable", "refuse to answer"];
    pub const EXTENDED_LABELS: [&'static str; 4] =
        ["not applicable", "refuse to answer", "don't know", "no answer"];

    pub fn extended() -> Self {
        Self { labels: Self::EXTENDED_LABELS.iter().map(|s| s.to_string()).collect() }
    }

    pub fn none() -> Self {
        Self { labels: Vec::new() }
    }

    pub fn is_invalid(&self, option: &str) -> bool {
        let option = option.trim();
        self.labels.iter().any(|l| l.trim().eq_ignore_ascii_case(option))
    }
}

impl Default for InvalidOptionPolicy {
    fn default() -> Self {
        Self { labels: Self::DEFAULT_LABELS.iter().map(|s| s.to_string()).collect() }
    }
}

/// Removes invalid options from a question and renormalizes its distributions.
///
/// Returns `None` when the question is dropped: fewer than two options
/// survive, or no distribution keeps any mass. Individual distributions with
/// no remaining mass are dropped and reported.
pub fn strip_invalid_options(
    question: &SurveyQuestion,
    distributions: Vec<ResponseDistribution>,
    policy: &InvalidOptionPolicy,
    report: &mut DataReport,
) -> Option<(SurveyQuestion, Vec<ResponseDistribution>)> {
    let keep: Vec<usize> = question
        .options
        .iter()
        .enumerate()
        .filter(|(_, o)| !policy.is_invalid(o))
        .map(|(i, _)| i)
        .collect();
    if keep.len() < 2 {
        report.push(
            ReportKind::QuestionDropped,
            format!(
                "question {}: {} valid options remain after removing invalid options",
                question.question_id,
                keep.len()
            ),
        );
        return None;
    }
    let had_distributions = !distributions.is_empty();
    let mut cleaned = question.clone();
    cleaned.options = keep.iter().map(|&i| question.options[i].clone()).collect();

    let mut out = Vec::with_capacity(distributions.len());
    for mut d in distributions {
        let weights: Vec<f64> = keep.iter().map(|&i| d.probs.get(i).copied().unwrap_or(0.0)).collect();
        match normalize(&weights) {
            Some(probs) => {
                d.probs = probs;
                out.push(d);
            }
            None => report.push(
                ReportKind::DistributionDropped,
                format!(
                    "{}: question {} has no mass on valid options",
                    d.group, question.question_id
                ),
            ),
        }
    }
    if had_distributions && out.is_empty() {
        report.push(
            ReportKind::QuestionDropped,
            format!("question {}: no distribution has mass on valid options", question.question_id),
        );
        return None;
    }
    Some((cleaned, out))
}
