//! Glue from a [`RunConfig`] to datasets, prompt records and backends.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::backend::{Backend, EmbeddingBackend, MockBackend, TableBackend};
use crate::config::{BackendConfig, DataSource, PewConfig, RunConfig};
use crate::error::{Error, Result};
use crate::eval::EvalContext;
use crate::prompting::{build_prompt, PromptRecord, PromptTemplate};
use crate::survey_data::{
    build_splits, filter_countries, parse_survey, read_aggregated_file, read_codebook, strip_invalid_options,
    DataReport, Entry, InvalidOptionPolicy, ParsedSurvey, ReportKind, ResponseDistribution, SplitDataset, SurveyQuestion,
    TEST_SUBSETS,
};
use crate::synthetic::generate;

pub type Knowledge = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone)]
pub struct BuiltData {
    pub dataset: SplitDataset,
    pub report: DataReport,
    /// Country vectors supplied by the data source, if any.
    pub knowledge: Option<Knowledge>,
}

pub fn load_template(cfg: &RunConfig) -> Result<PromptTemplate> {
    match &cfg.prompting.template {
        Some(p) => PromptTemplate::load(&cfg.resolve(p)),
        None => Ok(PromptTemplate::default()),
    }
}

/// Applies the respondent filter and strips invalid options question by question.
pub fn clean_parsed(parsed: ParsedSurvey, min_respondents: Option<u64>, policy: &InvalidOptionPolicy) -> ParsedSurvey {
    let mut report = parsed.report;
    let distributions = match min_respondents {
        Some(min) => filter_countries(parsed.distributions, min, &mut report),
        None => parsed.distributions,
    };
    let mut by_question: HashMap<u32, Vec<ResponseDistribution>> = HashMap::new();
    for d in distributions {
        by_question.entry(d.question_id).or_default().push(d);
    }
    let mut questions = Vec::new();
    let mut kept = Vec::new();
    for q in &parsed.questions {
        let dists = by_question.remove(&q.question_id).unwrap_or_default();
        if let Some((q, d)) = strip_invalid_options(q, dists, policy, &mut report) {
            questions.push(q);
            kept.extend(d);
        }
    }
    ParsedSurvey { questions, distributions: kept, report }
}

fn invalid_policy(cfg: &RunConfig) -> InvalidOptionPolicy {
    match &cfg.data.invalid_options {
        Some(labels) => InvalidOptionPolicy { labels: labels.clone() },
        None => InvalidOptionPolicy::default(),
    }
}

pub fn build_data(cfg: &RunConfig) -> Result<BuiltData> {
    let data = &cfg.data;
    let mut knowledge = None;
    let mut generated_splits = None;
    let parsed = match data.source {
        DataSource::Microdata => {
            let codebook = read_codebook(&cfg.resolve(data.codebook.as_deref().expect("validated")))?;
            let raw = cfg.resolve(data.raw.as_deref().expect("validated"));
            let file = File::open(&raw).map_err(|source| Error::Read { path: raw.clone(), source })?;
            parse_survey(BufReader::new(file), &codebook)?
        }
        DataSource::Aggregated => read_aggregated_file(&cfg.resolve(data.path.as_deref().expect("validated")))?,
        DataSource::Synthetic => {
            let survey = generate(&data.synthetic.clone().unwrap_or_default())?;
            knowledge = Some(survey.knowledge);
            generated_splits = Some(survey.splits);
            ParsedSurvey { questions: survey.questions, distributions: survey.distributions, report: DataReport::default() }
        }
    };
    let cleaned = clean_parsed(parsed, data.min_respondents, &invalid_policy(cfg));
    let mut report = cleaned.report;
    let splits = cfg.splits.clone().or(generated_splits).expect("validated");
    let dataset = build_splits(&cleaned.questions, &cleaned.distributions, &splits, &mut report)?;
    Ok(BuiltData { dataset, report, knowledge })
}

/// Renders entries; questions with too many options are skipped and reported.
pub fn build_records(entries: &[Entry], template: &PromptTemplate, report: &mut DataReport) -> Vec<PromptRecord> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        match build_prompt(e, template) {
            Ok(r) => out.push(r),
            Err(err) => report.push(ReportKind::QuestionDropped, format!("{}: {err}", e.key())),
        }
    }
    out
}

pub fn subset_records(
    dataset: &SplitDataset,
    name: &str,
    template: &PromptTemplate,
    report: &mut DataReport,
) -> Result<Vec<PromptRecord>> {
    let entries = dataset.subset(name).ok_or_else(|| Error::validation(format!("unknown subset {name:?}")))?;
    Ok(build_records(entries, template, report))
}

/// Test subsets selected by the config, in canonical order.
pub fn evaluation_subsets(
    cfg: &RunConfig,
    dataset: &SplitDataset,
    template: &PromptTemplate,
    report: &mut DataReport,
) -> Result<Vec<(String, Vec<PromptRecord>)>> {
    let names: Vec<String> = match &cfg.eval.subsets {
        Some(list) => list.clone(),
        None => TEST_SUBSETS.iter().map(|s| s.to_string()).collect(),
    };
    names.into_iter().map(|n| Ok((n.clone(), subset_records(dataset, &n, template, report)?))).collect()
}

/// Records of the unseen survey, one list per configured country group.
pub fn pew_groups(
    cfg: &RunConfig,
    pew: &PewConfig,
    template: &PromptTemplate,
    report: &mut DataReport,
) -> Result<Vec<(String, Vec<PromptRecord>)>> {
    let parsed = clean_parsed(read_aggregated_file(&cfg.resolve(&pew.path))?, None, &invalid_policy(cfg));
    report.extend(parsed.report);
    let questions: HashMap<u32, &SurveyQuestion> = parsed.questions.iter().map(|q| (q.question_id, q)).collect();
    let mut groups = Vec::with_capacity(pew.groups.len());
    for (name, countries) in &pew.groups {
        let entries: Vec<Entry> = parsed
            .distributions
            .iter()
            .filter(|d| countries.contains(&d.group))
            .filter_map(|d| questions.get(&d.question_id).map(|q| Entry::new((*q).clone(), d.clone())))
            .collect();
        if entries.is_empty() {
            report.push(ReportKind::EmptyResult, format!("unseen-survey group {name:?} has no entries"));
        }
        groups.push((name.clone(), build_records(&entries, template, report)));
    }
    Ok(groups)
}

pub fn eval_context(cfg: &RunConfig, dataset: &SplitDataset, template: &PromptTemplate) -> EvalContext {
    EvalContext {
        seed: cfg.eval.seed,
        template: template.clone(),
        control_pool: cfg.eval.control_pool.clone().unwrap_or_else(|| dataset.countries()),
    }
}

pub fn read_knowledge(path: &Path) -> Result<Knowledge> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
    Ok(serde_json::from_str(&text)?)
}

/// Instantiates the configured backend. Adapter settings come from the train section.
pub fn build_backend(
    cfg: &RunConfig,
    knowledge: Option<&Knowledge>,
    template: &PromptTemplate,
) -> Result<Box<dyn Backend>> {
    match &cfg.backend {
        BackendConfig::Mock { fixture } => Ok(Box::new(MockBackend::load(&cfg.resolve(fixture))?)),
        BackendConfig::ToyTable => Ok(Box::new(TableBackend::new(template.clone()))),
        BackendConfig::ToyEmbedding { embedding, knowledge: path } => {
            let mut config = embedding.clone();
            config.rank = cfg.train.adapter_rank;
            config.alpha = cfg.train.adapter_alpha;
            config.dropout = cfg.train.adapter_dropout;
            let table = match (path, knowledge) {
                (Some(p), _) => read_knowledge(&cfg.resolve(p))?,
                (None, Some(k)) => k.clone(),
                (None, None) => Knowledge::new(),
            };
            Ok(Box::new(EmbeddingBackend::new(config, table, template.clone())?))
        }
        BackendConfig::RealLm { model, .. } => Err(Error::Capability(format!(
            "real language model backends are not bundled; cannot load {model:?}"
        ))),
    }
}

/// Loads an adapter checkpoint written by training into a trainable backend.
pub fn load_adapter(backend: &mut dyn Backend, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
    let checkpoint: serde_json::Value = serde_json::from_str(&text)?;
    let id = backend.descriptor().identifier;
    backend
        .as_trainable()
        .ok_or_else(|| Error::Capability(format!("backend {id:?} cannot load adapters")))?
        .restore_checkpoint(&checkpoint)
}
