use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Prediction, Predictor, Variant};
use crate::error::{Error, Result};
use crate::metrics::{argmax, emd, mean, one_minus_jsd, validate_distribution};
use crate::prompting::{apply_control_permutation, shuffle_options, PromptRecord, PromptTemplate};
use crate::util::derive_seed;

/// Shared settings for variant construction.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub seed: u64,
    pub template: PromptTemplate,
    /// Countries that [ctrl] draws replacements from.
    pub control_pool: Vec<String>,
}

/// Derives the records a variant is evaluated on. Random draws are seeded
/// per record, so every predictor sees the same transformed prompts.
pub fn prepare_variant(records: &[PromptRecord], variant: Variant, ctx: &EvalContext) -> Result<Vec<PromptRecord>> {
    match variant {
        Variant::Normal => Ok(records.to_vec()),
        Variant::Ctrl => records
            .iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, &["ctrl", &r.id()]));
                apply_control_permutation(std::slice::from_ref(r), &ctx.control_pool, &ctx.template, &mut rng)
                    .map(|mut v| v.remove(0))
            })
            .collect(),
        Variant::Shuffled => Ok(records
            .iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, &["shuffle", &r.id()]));
                shuffle_options(r, &ctx.template, &mut rng)
            })
            .collect()),
    }
}

/// One line of predictions.jsonl. Vectors are in the original option order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryPrediction {
    pub predictor_id: String,
    pub subset: String,
    pub variant: Variant,
    pub record_id: String,
    pub displayed_country: String,
    pub status: String,
    pub probs: Option<Vec<f64>>,
    pub target: Vec<f64>,
    pub one_minus_jsd: Option<f64>,
    pub emd: Option<f64>,
    pub correct: Option<bool>,
    pub reason: Option<String>,
}

impl EntryPrediction {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub predictor_id: String,
    pub subset: String,
    pub variant: Variant,
    pub mean_one_minus_jsd: f64,
    pub mean_emd: f64,
    pub accuracy: f64,
    /// Successfully scored entries.
    pub entry_count: usize,
    pub failures: usize,
    pub run_metadata: BTreeMap<String, String>,
}

impl EvalResult {
    /// Report row label, e.g. `FT [ctrl]`.
    pub fn row_label(&self) -> String {
        format!("{}{}", self.predictor_id, self.variant.row_suffix())
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub result: EvalResult,
    pub predictions: Vec<EntryPrediction>,
}

fn score_entry(
    predictor: &dyn Predictor,
    record: &PromptRecord,
    subset: &str,
    variant: Variant,
) -> Result<EntryPrediction> {
    let target = record.to_original_order(&record.entry.target.probs);
    let mut out = EntryPrediction {
        predictor_id: predictor.id(),
        subset: subset.to_string(),
        variant,
        record_id: record.id(),
        displayed_country: record.displayed_country().to_string(),
        status: "failed".into(),
        probs: None,
        target,
        one_minus_jsd: None,
        emd: None,
        correct: None,
        reason: None,
    };
    let probs = match predictor.predict(record)? {
        Prediction::Probs(p) => p,
        Prediction::Failed(reason) => {
            out.reason = Some(reason);
            return Ok(out);
        }
    };
    if probs.len() != record.option_count() {
        out.reason = Some(format!("prediction has {} values for {} options", probs.len(), record.option_count()));
        return Ok(out);
    }
    if let Err(e) = validate_distribution(&probs) {
        out.reason = Some(format!("invalid prediction: {e}"));
        return Ok(out);
    }
    let probs = record.to_original_order(&probs);
    out.one_minus_jsd = Some(one_minus_jsd(&probs, &out.target)?);
    out.emd = Some(emd(&probs, &out.target)?);
    out.correct = Some(argmax(&probs) == argmax(&out.target));
    out.probs = Some(probs);
    out.status = "ok".into();
    Ok(out)
}

/// Subset means over the successful entries of a prediction dump.
pub(super) fn aggregate(predictions: &[EntryPrediction]) -> Option<(f64, f64, f64, usize)> {
    let ok: Vec<&EntryPrediction> = predictions.iter().filter(|p| p.is_ok()).collect();
    let jsd: Vec<f64> = ok.iter().filter_map(|p| p.one_minus_jsd).collect();
    let emds: Vec<f64> = ok.iter().filter_map(|p| p.emd).collect();
    let hits: Vec<f64> = ok.iter().filter_map(|p| p.correct).map(|c| f64::from(u8::from(c))).collect();
    Some((mean(&jsd)?, mean(&emds)?, mean(&hits)?, ok.len()))
}

/// Scores `predictor` on `records` after applying `variant`. Metrics always
/// compare against the record's original country target.
pub fn evaluate(
    predictor: &dyn Predictor,
    subset: &str,
    records: &[PromptRecord],
    variant: Variant,
    ctx: &EvalContext,
) -> Result<Evaluation> {
    let prepared = prepare_variant(records, variant, ctx)?;
    let predictions = prepared
        .par_iter()
        .map(|r| score_entry(predictor, r, subset, variant))
        .collect::<Result<Vec<_>>>()?;
    let (mean_one_minus_jsd, mean_emd, accuracy, entry_count) = aggregate(&predictions).ok_or_else(|| {
        Error::Eval(format!("{} on {subset} ({variant}): no entry was scored successfully", predictor.id()))
    })?;

    let mut run_metadata = predictor.metadata();
    run_metadata.extend([
        ("seed".to_string(), ctx.seed.to_string()),
        ("variant".to_string(), variant.to_string()),
        ("template_version".to_string(), ctx.template.version.to_string()),
        ("ctrl_scoring".to_string(), "original_country_target".to_string()),
        ("jsd_log_base".to_string(), "2".to_string()),
        ("emd_ground_distance".to_string(), "|i-j|/(n-1)".to_string()),
        ("aggregation".to_string(), "unweighted_entry_mean".to_string()),
    ]);
    let result = EvalResult {
        predictor_id: predictor.id(),
        subset: subset.to_string(),
        variant,
        mean_one_minus_jsd,
        mean_emd,
        accuracy,
        entry_count,
        failures: predictions.len() - entry_count,
        run_metadata,
    };
    Ok(Evaluation { result, predictions })
}

/// One row of an evaluation grid; `predictor: None` marks a missing adapter.
pub struct MatrixRow<'a> {
    pub label: String,
    pub predictor: Option<&'a dyn Predictor>,
    pub variant: Variant,
}

/// The ZS, ZS [ctrl], FT, FT [ctrl] rows.
pub fn standard_rows<'a>(zs: &'a dyn Predictor, ft: Option<&'a dyn Predictor>) -> Vec<MatrixRow<'a>> {
    vec![
        MatrixRow { label: "ZS".into(), predictor: Some(zs), variant: Variant::Normal },
        MatrixRow { label: "ZS [ctrl]".into(), predictor: Some(zs), variant: Variant::Ctrl },
        MatrixRow { label: "FT".into(), predictor: ft, variant: Variant::Normal },
        MatrixRow { label: "FT [ctrl]".into(), predictor: ft, variant: Variant::Ctrl },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub row: String,
    pub subset: String,
    pub result: Option<EvalResult>,
    /// Why the cell is unavailable.
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixReport {
    pub rows: Vec<String>,
    pub subsets: Vec<String>,
    pub cells: Vec<MatrixCell>,
    pub predictions: Vec<EntryPrediction>,
}

impl MatrixReport {
    pub fn cell(&self, row: &str, subset: &str) -> Option<&MatrixCell> {
        self.cells.iter().find(|c| c.row == row && c.subset == subset)
    }

    pub fn results(&self) -> Vec<EvalResult> {
        self.cells.iter().filter_map(|c| c.result.clone()).collect()
    }

    /// Unweighted mean of a row's subset values; `None` if any cell is unavailable.
    pub fn average(&self, row: &str, value: impl Fn(&EvalResult) -> f64) -> Option<f64> {
        let values: Option<Vec<f64>> = self
            .subsets
            .iter()
            .map(|s| self.cell(row, s).and_then(|c| c.result.as_ref()).map(&value))
            .collect();
        mean(&values?)
    }
}

/// Evaluates every row on every subset. Failing cells are kept as
/// unavailable entries instead of aborting the grid.
pub fn run_matrix(rows: &[MatrixRow<'_>], subsets: &[(String, Vec<PromptRecord>)], ctx: &EvalContext) -> MatrixReport {
    let mut report = MatrixReport {
        rows: rows.iter().map(|r| r.label.clone()).collect(),
        subsets: subsets.iter().map(|(name, _)| name.clone()).collect(),
        ..Default::default()
    };
    for row in rows {
        for (name, records) in subsets {
            let mut cell = MatrixCell { row: row.label.clone(), subset: name.clone(), result: None, note: None };
            match row.predictor {
                None => cell.note = Some("unavailable: no adapter".into()),
                Some(p) => match evaluate(p, name, records, row.variant, ctx) {
                    Ok(mut ev) => {
                        ev.result.predictor_id = row.label.trim_end_matches(row.variant.row_suffix()).to_string();
                        for pred in &mut ev.predictions {
                            pred.predictor_id.clone_from(&ev.result.predictor_id);
                        }
                        report.predictions.extend(ev.predictions);
                        cell.result = Some(ev.result);
                    }
                    Err(e) => {
                        log::warn!("{} on {name}: {e}", row.label);
                        cell.note = Some(format!("unavailable: {e}"));
                    }
                },
            }
            report.cells.push(cell);
        }
    }
    report
}

/// Unseen-survey evaluation: one normal-variant result per country group.
pub fn pew_generalization(
    predictor: &dyn Predictor,
    groups: &[(String, Vec<PromptRecord>)],
    ctx: &EvalContext,
) -> Result<Vec<Evaluation>> {
    groups.iter().map(|(name, records)| evaluate(predictor, name, records, Variant::Normal, ctx)).collect()
}
