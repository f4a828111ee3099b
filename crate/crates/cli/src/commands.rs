use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use simdist_core::alignment::{save_adapter, train};
use simdist_core::baselines::{AvgCulturePredictor, BackendPredictor, HashingEmbedder, JsonZsPredictor, KnnPredictor};
use simdist_core::config::BackendConfig;
use simdist_core::eval::{
    diversity_report, emit_report, pew_generalization, read_predictions_jsonl, read_results_csv, run_matrix,
    EvalContext, MatrixRow, ReportBundle, ReportFormat, UniformPredictor,
};
use simdist_core::pipeline::{
    build_backend, build_data, eval_context, evaluation_subsets, load_adapter, load_template, pew_groups,
    subset_records, BuiltData,
};
use simdist_core::survey_data::{write_dataset_jsonl, DataReport};
use simdist_core::util::sha256_hex;
use simdist_core::{Backend, LossKind, PromptRecord, PromptTemplate, Predictor, RunConfig, Variant};

use crate::Command;

const MODEL_CACHE_ENV: &str = "SIMDIST_MODEL_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Knn,
    AvgCulture,
    JsonZs,
    Uniform,
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "knn" => Ok(BaselineKind::Knn),
            "avg_culture" | "avg" => Ok(BaselineKind::AvgCulture),
            "json_zs" | "json" => Ok(BaselineKind::JsonZs),
            "uniform" => Ok(BaselineKind::Uniform),
            other => Err(format!("unknown baseline {other:?}; expected knn, avg_culture, json_zs or uniform")),
        }
    }
}

pub fn run(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::BuildData { .. } => build(cfg),
        Command::Train { .. } => train_adapter(cfg),
        Command::Eval { subsets, variants, adapter, .. } => {
            let mut cfg = cfg.clone();
            if let Some(s) = subsets {
                cfg.eval.subsets = Some(s.clone());
            }
            if let Some(v) = variants {
                cfg.eval.variants = v.clone();
            }
            if let Some(a) = adapter {
                cfg.eval.adapter = Some(std::env::current_dir()?.join(a));
            }
            eval(&cfg)
        }
        Command::Baseline { predictors, subsets, .. } => {
            let mut cfg = cfg.clone();
            if let Some(s) = subsets {
                cfg.eval.subsets = Some(s.clone());
            }
            baseline(&cfg, predictors)
        }
        Command::Ablate { losses, shuffled, .. } => ablate(cfg, losses, *shuffled),
        Command::Report { input, .. } => {
            let dir = input.clone().unwrap_or_else(|| cfg.output_dir.join("eval"));
            report(cfg, &dir)
        }
    }
}

fn formats(cfg: &RunConfig) -> Result<Vec<ReportFormat>> {
    Ok(cfg.eval.formats.iter().map(|f| f.parse()).collect::<simdist_core::Result<_>>()?)
}

/// Shared run metadata; deliberately free of timestamps and absolute paths.
fn metadata(cfg: &RunConfig, subcommand: &str) -> Value {
    json!({
        "subcommand": subcommand,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "config_hash": cfg.hash(),
        "avg_column": "unweighted mean of subset means",
        "ctrl_scoring": "original country target",
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn backend(cfg: &RunConfig, data: &BuiltData, template: &PromptTemplate) -> Result<Box<dyn Backend>> {
    if let BackendConfig::RealLm { model, .. } = &cfg.backend {
        let cache = std::env::var_os(MODEL_CACHE_ENV).map(PathBuf::from);
        log::info!("model cache: {}", cache.as_deref().map_or("<unset>".into(), |p| p.display().to_string()));
        bail!(
            "backend `real_lm` ({model}) needs a language model runtime, which this build does not include; \
             use `toy_embedding`, `toy_table` or `mock`"
        );
    }
    Ok(build_backend(cfg, data.knowledge.as_ref(), template)?)
}

fn build(cfg: &RunConfig) -> Result<()> {
    let data = build_data(cfg)?;
    let dir = cfg.output_dir.join("data");
    create_dir(&dir)?;
    let path = dir.join("dataset.jsonl");
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    write_dataset_jsonl(&mut out, &data.dataset.subsets)?;
    out.flush()?;

    let counts = data.dataset.counts();
    let sizes = data.dataset.effective_set_sizes();
    write_json(
        &dir.join("summary.json"),
        &json!({
            "subsets": counts.iter().cloned().collect::<std::collections::BTreeMap<_, _>>(),
            "set_sizes": sizes,
            "splits": data.dataset.splits,
            "report": data.report,
        }),
    )?;

    println!("{:<8} {:>8}", "subset", "entries");
    for (name, n) in &counts {
        println!("{name:<8} {n:>8}");
    }
    let sizes: Vec<String> = sizes.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("sets: {}", sizes.join(" "));
    if !data.report.entries.is_empty() {
        println!("{} data warnings, see {}", data.report.entries.len(), dir.join("summary.json").display());
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn train_records(cfg: &RunConfig, data: &BuiltData, template: &PromptTemplate) -> Result<(Vec<PromptRecord>, Vec<PromptRecord>)> {
    let mut report = DataReport::default();
    let train = subset_records(&data.dataset, "train", template, &mut report)?;
    let valid = subset_records(&data.dataset, "valid", template, &mut report)?;
    if train.is_empty() {
        bail!("the train subset of {} is empty", cfg.output_dir.display());
    }
    Ok((train, valid))
}

/// Trains one adapter into `dir` and returns the loaded backend.
fn train_into(
    cfg: &RunConfig,
    data: &BuiltData,
    template: &PromptTemplate,
    records: &(Vec<PromptRecord>, Vec<PromptRecord>),
    dir: &Path,
) -> Result<Box<dyn Backend>> {
    let mut model = backend(cfg, data, template)?;
    let mut outcome = train(model.as_mut(), &records.0, &records.1, &cfg.train)?;
    create_dir(dir)?;
    save_adapter(&mut outcome, &dir.join("adapter.json"))?;
    let log_path = dir.join("training_log.jsonl");
    let mut out = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    outcome.log.write_jsonl(&mut out)?;
    out.flush()?;
    let last = outcome.log.epochs().last().cloned();
    println!(
        "{}: stopped ({:?}) at best epoch {:?}; final train loss {}; log {}",
        cfg.train.loss,
        outcome.stop_reason,
        outcome.best_epoch,
        last.map_or_else(|| "n/a".into(), |e| format!("{:.6}", e.train_loss)),
        log_path.display()
    );
    Ok(model)
}

fn train_adapter(cfg: &RunConfig) -> Result<()> {
    let data = build_data(cfg)?;
    let template = load_template(cfg)?;
    let records = train_records(cfg, &data, &template)?;
    train_into(cfg, &data, &template, &records, &cfg.output_dir.join("train"))?;
    Ok(())
}

fn adapter_path(cfg: &RunConfig) -> Option<PathBuf> {
    match &cfg.eval.adapter {
        Some(p) => Some(cfg.resolve(p)),
        None => Some(cfg.output_dir.join("train").join("adapter.json")).filter(|p| p.exists()),
    }
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}

fn rows<'a>(predictors: &[&'a dyn Predictor], missing: &[&str], variants: &[Variant]) -> Vec<MatrixRow<'a>> {
    let mut out = Vec::new();
    for p in predictors {
        for v in variants {
            out.push(MatrixRow { label: format!("{}{}", p.id(), v.row_suffix()), predictor: Some(*p), variant: *v });
        }
    }
    for id in missing {
        for v in variants {
            out.push(MatrixRow { label: format!("{id}{}", v.row_suffix()), predictor: None, variant: *v });
        }
    }
    out
}

fn summarize(bundle: &ReportBundle) {
    for r in &bundle.results {
        println!(
            "{:<22} {:<8} 1-JSD {:.4}  EMD {:.4}  acc {:.4}  n={} failed={}",
            r.row_label(),
            r.subset,
            r.mean_one_minus_jsd,
            r.mean_emd,
            r.accuracy,
            r.entry_count,
            r.failures
        );
    }
    for c in &bundle.unavailable {
        println!("{:<22} {:<8} {}", c.row, c.subset, c.note.as_deref().unwrap_or("unavailable"));
    }
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let data = build_data(cfg)?;
    let template = load_template(cfg)?;
    let mut report = data.report.clone();
    let subsets = evaluation_subsets(cfg, &data.dataset, &template, &mut report)?;
    let ctx = eval_context(cfg, &data.dataset, &template);

    let base = backend(cfg, &data, &template)?;
    let zs = BackendPredictor::new("ZS", base.as_ref());
    let mut meta = metadata(cfg, "eval");
    meta["backend"] = serde_json::to_value(base.descriptor())?;

    let fine_tuned = match adapter_path(cfg) {
        Some(path) => {
            let mut model = backend(cfg, &data, &template)?;
            load_adapter(model.as_mut(), &path).with_context(|| format!("loading adapter {}", path.display()))?;
            meta["adapter_sha256"] = json!(file_digest(&path)?);
            Some(model)
        }
        None => {
            log::warn!("no adapter found; FT rows are reported as unavailable");
            None
        }
    };
    let ft = fine_tuned.as_deref().map(|b| BackendPredictor::new("FT", b));

    let mut predictors: Vec<&dyn Predictor> = vec![&zs];
    let mut missing = Vec::new();
    match &ft {
        Some(p) => predictors.push(p),
        None => missing.push("FT"),
    }
    let matrix = run_matrix(&rows(&predictors, &missing, &cfg.eval.variants), &subsets, &ctx);
    let mut bundle = ReportBundle::from_matrix("Evaluation", matrix, meta.clone());

    let pooled: Vec<PromptRecord> = subsets.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    for p in &predictors {
        match diversity_report(*p, &pooled) {
            Ok(d) => bundle.diversity.push(d),
            Err(e) => log::warn!("diversity for {}: {e}", p.id()),
        }
    }
    let dir = cfg.output_dir.join("eval");
    emit_report(&bundle, &formats(cfg)?, &dir)?;
    summarize(&bundle);

    if let Some(pew) = &cfg.eval.pew {
        let groups = pew_groups(cfg, pew, &template, &mut report)?;
        let mut pew_bundle = ReportBundle { title: "Unseen survey".into(), run_metadata: meta, ..Default::default() };
        for p in &predictors {
            for ev in pew_generalization(*p, &groups, &ctx)? {
                pew_bundle.results.push(ev.result);
                pew_bundle.predictions.extend(ev.predictions);
            }
        }
        emit_report(&pew_bundle, &formats(cfg)?, &dir.join("pew"))?;
        summarize(&pew_bundle);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn baseline(cfg: &RunConfig, kinds: &[BaselineKind]) -> Result<()> {
    let data = build_data(cfg)?;
    let template = load_template(cfg)?;
    let mut report = data.report.clone();
    let subsets = evaluation_subsets(cfg, &data.dataset, &template, &mut report)?;
    let ctx = eval_context(cfg, &data.dataset, &template);
    let train_entries = data.dataset.subset("train").unwrap_or_default();

    let needs_backend = kinds.contains(&BaselineKind::JsonZs);
    let base = if needs_backend { Some(backend(cfg, &data, &template)?) } else { None };
    let mut owned: Vec<Box<dyn Predictor + '_>> = Vec::new();
    for kind in kinds {
        owned.push(match kind {
            BaselineKind::Knn => Box::new(KnnPredictor::new(
                train_entries,
                HashingEmbedder { dim: cfg.eval.knn_embedding_dim },
            )?),
            BaselineKind::AvgCulture => Box::new(AvgCulturePredictor::new(train_entries)),
            BaselineKind::JsonZs => {
                Box::new(JsonZsPredictor::new(base.as_deref().expect("built above"), template.clone()))
            }
            BaselineKind::Uniform => Box::new(UniformPredictor),
        });
    }
    let predictors: Vec<&dyn Predictor> = owned.iter().map(|p| p.as_ref()).collect();
    let matrix = run_matrix(&rows(&predictors, &[], &[Variant::Normal]), &subsets, &ctx);
    let mut meta = metadata(cfg, "baseline");
    meta["predictors"] = json!(predictors.iter().map(|p| p.id()).collect::<Vec<_>>());
    let bundle = ReportBundle::from_matrix("Baselines", matrix, meta);
    let dir = cfg.output_dir.join("baseline");
    emit_report(&bundle, &formats(cfg)?, &dir)?;
    summarize(&bundle);
    println!("wrote {}", dir.display());
    Ok(())
}

/// Labels ablation rows by loss.
struct Labeled<'a> {
    id: String,
    inner: BackendPredictor<'a>,
}

impl Predictor for Labeled<'_> {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn predict(&self, record: &PromptRecord) -> simdist_core::Result<simdist_core::eval::Prediction> {
        self.inner.predict(record)
    }
}

fn ablate(cfg: &RunConfig, losses: &[LossKind], shuffled: bool) -> Result<()> {
    if losses.is_empty() {
        bail!("no losses to compare");
    }
    let data = build_data(cfg)?;
    let template = load_template(cfg)?;
    let mut report = data.report.clone();
    let records = train_records(cfg, &data, &template)?;
    let subsets = evaluation_subsets(cfg, &data.dataset, &template, &mut report)?;
    let ctx: EvalContext = eval_context(cfg, &data.dataset, &template);
    let dir = cfg.output_dir.join("ablate");

    let mut models = Vec::with_capacity(losses.len());
    for loss in losses {
        let mut run = cfg.clone();
        run.train.loss = *loss;
        models.push((*loss, train_into(&run, &data, &template, &records, &dir.join(loss.as_str()))?));
    }
    let predictors: Vec<Labeled<'_>> = models
        .iter()
        .map(|(loss, m)| Labeled { id: format!("FT-{loss}"), inner: BackendPredictor::new("FT", m.as_ref()) })
        .collect();
    let refs: Vec<&dyn Predictor> = predictors.iter().map(|p| p as &dyn Predictor).collect();
    let variants: &[Variant] = if shuffled { &[Variant::Normal, Variant::Shuffled] } else { &[Variant::Normal] };
    let matrix = run_matrix(&rows(&refs, &[], variants), &subsets, &ctx);
    let mut meta = metadata(cfg, "ablate");
    meta["losses"] = json!(losses.iter().map(|l| l.as_str()).collect::<Vec<_>>());
    let bundle = ReportBundle::from_matrix("Loss ablation", matrix, meta);
    emit_report(&bundle, &formats(cfg)?, &dir)?;
    summarize(&bundle);
    println!("wrote {}", dir.display());
    Ok(())
}

fn report(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let open = |name: &str| {
        let path = dir.join(name);
        File::open(&path).with_context(|| format!("opening {}", path.display()))
    };
    let results = read_results_csv(open("results.csv")?)?;
    let predictions = read_predictions_jsonl(BufReader::new(open("predictions.jsonl")?))?;
    let run_metadata: Value = match open("run_metadata.json") {
        Ok(f) => serde_json::from_reader(BufReader::new(f))?,
        Err(_) => metadata(cfg, "report"),
    };
    let title = match run_metadata.get("subcommand").and_then(Value::as_str) {
        Some("baseline") => "Baselines",
        Some("ablate") => "Loss ablation",
        _ => "Evaluation",
    };
    let bundle = ReportBundle { title: title.into(), results, predictions, run_metadata, ..Default::default() };
    let written = emit_report(&bundle, &formats(cfg)?, dir)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
