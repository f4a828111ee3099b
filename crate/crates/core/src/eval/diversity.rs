use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Prediction, Predictor};
use crate::error::Result;
use crate::metrics::{diversity_profile, mean};
use crate::prompting::PromptRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionDiversity {
    pub question: String,
    pub countries: usize,
    /// Mean pairwise 1-JSD of the human targets.
    pub human: f64,
    /// Mean pairwise 1-JSD of the predictions.
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub predictor_id: String,
    pub questions: Vec<QuestionDiversity>,
    /// Questions left out, with the reason.
    pub skipped: Vec<(String, String)>,
    pub human_mean: Option<f64>,
    pub model_mean: Option<f64>,
}

/// Cross-country diversity per question for human targets and predictions.
/// Countries whose prediction failed are dropped from both series.
pub fn diversity_report(predictor: &dyn Predictor, records: &[PromptRecord]) -> Result<DiversityReport> {
    let mut by_question: BTreeMap<(String, u32), Vec<&PromptRecord>> = BTreeMap::new();
    for r in records {
        by_question.entry((r.entry.question.survey_id.clone(), r.entry.question.question_id)).or_default().push(r);
    }
    let predictions = records
        .par_iter()
        .map(|r| predictor.predict(r).map(|p| (r.id(), p)))
        .collect::<Result<BTreeMap<String, Prediction>>>()?;

    let mut questions = Vec::new();
    let mut skipped = Vec::new();
    for ((survey, qid), group) in by_question {
        let key = format!("{survey}:{qid}");
        let mut human = Vec::new();
        let mut model = Vec::new();
        for r in group {
            if let Some(Prediction::Probs(p)) = predictions.get(&r.id()) {
                if p.len() == r.option_count() {
                    human.push(r.to_original_order(&r.entry.target.probs));
                    model.push(r.to_original_order(p));
                }
            }
        }
        if human.len() < 2 {
            skipped.push((key, format!("{} usable countries; at least 2 needed", human.len())));
            continue;
        }
        questions.push(QuestionDiversity {
            question: key,
            countries: human.len(),
            human: diversity_profile(&human)?,
            model: diversity_profile(&model)?,
        });
    }
    let human_mean = mean(&questions.iter().map(|q| q.human).collect::<Vec<_>>());
    let model_mean = mean(&questions.iter().map(|q| q.model).collect::<Vec<_>>());
    Ok(DiversityReport { predictor_id: predictor.id(), questions, skipped, human_mean, model_mean })
}
