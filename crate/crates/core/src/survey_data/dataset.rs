use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::splits::Subset;
use super::{Entry, ResponseDistribution, SurveyQuestion};
use crate::error::{Error, Result};

/// One line of the canonical dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub survey_id: String,
    pub question_id: u32,
    pub country: String,
    pub question_text: String,
    pub options: Vec<String>,
    pub target_probs: Vec<f64>,
    pub dimension: String,
    pub subset: String,
}

impl DatasetRecord {
    pub fn from_entry(entry: &Entry, subset: &str) -> Self {
        Self {
            survey_id: entry.question.survey_id.clone(),
            question_id: entry.question.question_id,
            country: entry.group.clone(),
            question_text: entry.question.text.clone(),
            options: entry.question.options.clone(),
            target_probs: entry.target.probs.clone(),
            dimension: entry.question.dimension.clone(),
            subset: subset.to_string(),
        }
    }

    pub fn into_entry(self) -> Entry {
        let question = SurveyQuestion {
            question_id: self.question_id,
            text: self.question_text,
            options: self.options,
            dimension: self.dimension,
            survey_id: self.survey_id,
        };
        let target = ResponseDistribution {
            group: self.country,
            question_id: self.question_id,
            probs: self.target_probs,
            respondent_count: 0,
        };
        Entry::new(question, target)
    }
}

pub fn write_dataset_jsonl<W: Write>(mut out: W, subsets: &[Subset]) -> Result<()> {
    for subset in subsets {
        for entry in &subset.entries {
            serde_json::to_writer(&mut out, &DatasetRecord::from_entry(entry, &subset.name))?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset file back into subsets, preserving first-appearance order.
pub fn read_dataset_jsonl<R: BufRead>(input: R) -> Result<Vec<Subset>> {
    let mut subsets: Vec<Subset> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::validation(format!("dataset line {}: {e}", lineno + 1)))?;
        if record.options.len() != record.target_probs.len() {
            return Err(Error::validation(format!(
                "dataset line {}: {} options but {} probabilities",
                lineno + 1,
                record.options.len(),
                record.target_probs.len()
            )));
        }
        let name = record.subset.clone();
        let entry = record.into_entry();
        match subsets.iter_mut().find(|s| s.name == name) {
            Some(s) => s.entries.push(entry),
            None => subsets.push(Subset { name, entries: vec![entry] }),
        }
    }
    Ok(subsets)
}
