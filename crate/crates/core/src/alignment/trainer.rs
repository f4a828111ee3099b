use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{label_token_ids, predict_distribution, restrict_logits, AdamW, LossKind, Objective, Optimizer, OptimizerKind, Sgd};
use crate::backend::{Backend, BackendDescriptor, TrainableBackend};
use crate::error::{Error, Result};
use crate::metrics::one_minus_jsd;
use crate::prompting::PromptRecord;
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    #[default]
    ValidOneMinusJsd,
    TrainLoss,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_rank")]
    pub adapter_rank: usize,
    #[serde(default = "default_alpha")]
    pub adapter_alpha: f64,
    #[serde(default = "default_dropout")]
    pub adapter_dropout: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub early_stop_metric: EarlyStopMetric,
    /// Epochs without improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub weight_decay: f64,
    /// Divide the WA loss by `n - 1`.
    #[serde(default = "default_true")]
    pub wa_normalized: bool,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

fn default_loss() -> LossKind {
    LossKind::Kl
}
fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    16
}
fn default_rank() -> usize {
    8
}
fn default_alpha() -> f64 {
    32.0
}
fn default_dropout() -> f64 {
    0.05
}
fn default_epochs() -> usize {
    10
}
fn default_patience() -> usize {
    3
}
fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: default_loss(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            adapter_rank: default_rank(),
            adapter_alpha: default_alpha(),
            adapter_dropout: default_dropout(),
            max_epochs: default_epochs(),
            early_stop_metric: EarlyStopMetric::default(),
            patience: default_patience(),
            seed: 0,
            optimizer: OptimizerKind::default(),
            weight_decay: 0.0,
            wa_normalized: true,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if self.adapter_rank == 0 {
            return Err(Error::validation("adapter_rank must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.adapter_dropout) {
            return Err(Error::validation("adapter_dropout must lie in [0, 1)"));
        }
        if self.max_epochs == 0 {
            return Err(Error::validation("max_epochs must be at least 1"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::validation("weight_decay must be non-negative"));
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective { kind: self.loss, wa_normalized: self.wa_normalized }
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn build_optimizer(&self) -> Box<dyn Optimizer> {
        match self.optimizer {
            OptimizerKind::AdamW => Box::new(AdamW::new(self.learning_rate, self.weight_decay)),
            OptimizerKind::Sgd => Box::new(Sgd { lr: self.learning_rate }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
    Diverged,
}

/// One line of the JSON Lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Start {
        config: TrainConfig,
        backend: BackendDescriptor,
        base_weights_digest: String,
        dataset_hash: String,
        train_entries: usize,
        valid_entries: usize,
        log_base: String,
    },
    Step {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    Epoch {
        epoch: usize,
        train_loss: f64,
        valid_one_minus_jsd: Option<f64>,
        improved: bool,
    },
    End {
        stop_reason: StopReason,
        best_epoch: Option<usize>,
        wall_clock_secs: f64,
    },
    Artifact {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_one_minus_jsd: Option<f64>,
}

/// Append-only training log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    events: Vec<LogEvent>,
}

impl TrainingLog {
    pub fn push(&mut self, event: LogEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn step_losses(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                LogEvent::Step { loss, .. } => Some(*loss),
                _ => None,
            })
            .collect()
    }

    pub fn epochs(&self) -> Vec<EpochSummary> {
        self.events
            .iter()
            .filter_map(|e| match e {
                LogEvent::Epoch { epoch, train_loss, valid_one_minus_jsd, .. } => Some(EpochSummary {
                    epoch: *epoch,
                    train_loss: *train_loss,
                    valid_one_minus_jsd: *valid_one_minus_jsd,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn config(&self) -> Option<&TrainConfig> {
        self.events.iter().find_map(|e| match e {
            LogEvent::Start { config, .. } => Some(config),
            _ => None,
        })
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.events.iter().rev().find_map(|e| match e {
            LogEvent::End { stop_reason, .. } => Some(*stop_reason),
            _ => None,
        })
    }

    pub fn adapter_path(&self) -> Option<&Path> {
        self.events.iter().rev().find_map(|e| match e {
            LogEvent::Artifact { path } => Some(path.as_path()),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut log = Self::default();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            log.push(serde_json::from_str(&line)?);
        }
        Ok(log)
    }
}

/// Sidecar written next to an adapter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterMetadata {
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub loss: LossKind,
    pub backend: BackendDescriptor,
    pub base_weights_digest: String,
    pub best_epoch: Option<usize>,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    pub stop_reason: StopReason,
    pub best_epoch: Option<usize>,
    /// Backend-native checkpoint of the parameters left loaded in the backend.
    pub checkpoint: serde_json::Value,
    pub metadata: AdapterMetadata,
}

/// Writes the checkpoint to `path` and the metadata to `<path>.meta.json`,
/// then records the artifact in the log.
pub fn save_adapter(outcome: &mut TrainOutcome, path: &Path) -> Result<PathBuf> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(&outcome.checkpoint)?)?;
    let mut meta_path = path.as_os_str().to_owned();
    meta_path.push(".meta.json");
    let meta_path = PathBuf::from(meta_path);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&outcome.metadata)?)?;
    outcome.log.push(LogEvent::Artifact { path: path.to_path_buf() });
    Ok(meta_path)
}

pub fn dataset_hash(train: &[PromptRecord], valid: &[PromptRecord]) -> String {
    let mut text = String::new();
    for (split, records) in [("train", train), ("valid", valid)] {
        for r in records {
            text.push_str(split);
            text.push('\t');
            text.push_str(&r.rendered_text);
            text.push('\t');
            text.push_str(&serde_json::to_string(&r.entry.target.probs).expect("finite probs"));
            text.push('\n');
        }
    }
    sha256_hex(text.as_bytes())
}

struct Prepared<'a> {
    record: &'a PromptRecord,
    label_ids: Vec<u32>,
}

fn prepare<'a, B: Backend + ?Sized>(backend: &B, records: &'a [PromptRecord]) -> Result<Vec<Prepared<'a>>> {
    records
        .iter()
        .map(|record| Ok(Prepared { record, label_ids: label_token_ids(backend, &record.option_labels)? }))
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean 1-JSD of the backend's current predictions against each record's target.
fn mean_one_minus_jsd<B: Backend + ?Sized>(backend: &B, records: &[PromptRecord]) -> Result<f64> {
    let scores = records
        .par_iter()
        .map(|r| {
            let p = predict_distribution(backend, r)?;
            one_minus_jsd(&p, &r.entry.target.probs)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&scores))
}

/// Inference-mode loss over `records`; `None` when a logit or loss is non-finite.
fn full_loss<B: Backend + ?Sized>(backend: &B, items: &[Prepared<'_>], objective: &Objective) -> Result<Option<f64>> {
    let losses = items
        .par_iter()
        .map(|item| {
            let full = backend.next_token_logits(&item.record.rendered_text)?;
            let z = restrict_logits(&full, &item.label_ids, &item.record.id())?;
            if z.iter().any(|v| !v.is_finite()) {
                return Ok(f64::NAN);
            }
            objective.value_and_logit_grad(&item.record.entry.target.probs, &z).map(|(v, _)| v)
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = mean(&losses);
    Ok(m.is_finite().then_some(m))
}

/// Fits the backend's adapter parameters to the training records' targets.
///
/// The parameters with the best early-stop metric are left loaded in the
/// backend; on divergence the last good parameters are restored.
pub fn train(
    backend: &mut dyn Backend,
    train: &[PromptRecord],
    valid: &[PromptRecord],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if config.early_stop_metric == EarlyStopMetric::ValidOneMinusJsd && valid.is_empty() {
        return Err(Error::validation("early stopping on validation 1-JSD needs validation entries"));
    }
    let descriptor = backend.descriptor();
    let model = backend
        .as_trainable()
        .ok_or_else(|| Error::Capability(format!("backend {:?} is not trainable", descriptor.identifier)))?;

    let started = Instant::now();
    let objective = config.objective();
    let prompts: Vec<&str> = train.iter().chain(valid).map(|r| r.rendered_text.as_str()).collect();
    model.prepare(&prompts)?;
    let descriptor = model.descriptor();
    let items = prepare(&*model, train)?;
    let data_hash = dataset_hash(train, valid);
    let base_digest = model.base_weights_digest();

    let mut log = TrainingLog::default();
    log.push(LogEvent::Start {
        config: config.clone(),
        backend: descriptor.clone(),
        base_weights_digest: base_digest.clone(),
        dataset_hash: data_hash.clone(),
        train_entries: train.len(),
        valid_entries: valid.len(),
        log_base: "e".into(),
    });

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = config.build_optimizer();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut last_good = model.adapter_params();
    let mut best: Option<(f64, usize)> = None;
    let mut stale = 0;
    let mut step = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    'epochs: for epoch in 1..=config.max_epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(config.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
            let model_ref: &dyn TrainableBackend = &*model;
            let results = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &seed)| {
                    let item = &items[i];
                    let full = model_ref.forward_train(&item.record.rendered_text, seed)?;
                    let z = restrict_logits(&full, &item.label_ids, &item.record.id())?;
                    if z.iter().any(|v| !v.is_finite()) {
                        return Ok(None);
                    }
                    let (loss, grad) = objective.value_and_logit_grad(&item.record.entry.target.probs, &z)?;
                    Ok(Some((loss, grad)))
                })
                .collect::<Result<Vec<_>>>()?;

            let mut total = 0.0;
            let mut diverged = false;
            model.zero_grad();
            let vocab = model.vocab_size();
            let scale = 1.0 / batch.len() as f64;
            for ((&i, &seed), result) in batch.iter().zip(&seeds).zip(results) {
                let Some((loss, grad)) = result else {
                    diverged = true;
                    break;
                };
                total += loss;
                let mut full_grad = vec![0.0; vocab];
                for (&id, g) in items[i].label_ids.iter().zip(&grad) {
                    full_grad[id as usize] += g * scale;
                }
                model.backward(&items[i].record.rendered_text, seed, &full_grad)?;
            }
            let batch_loss = total * scale;
            if diverged || !batch_loss.is_finite() {
                log::warn!("non-finite loss at epoch {epoch}, step {step}; restoring last good parameters");
                model.load_adapter_params(&last_good)?;
                stop_reason = StopReason::Diverged;
                break 'epochs;
            }
            step += 1;
            log.push(LogEvent::Step { epoch, step, loss: batch_loss });
            let (params, grads) = model.params_and_grads();
            optimizer.step(params, grads);
        }

        let Some(train_loss) = full_loss(&*model, &items, &objective)? else {
            log::warn!("non-finite training loss after epoch {epoch}; restoring last good parameters");
            model.load_adapter_params(&last_good)?;
            stop_reason = StopReason::Diverged;
            break;
        };
        let valid_score = if valid.is_empty() { None } else { Some(mean_one_minus_jsd(&*model, valid)?) };
        let score = match config.early_stop_metric {
            EarlyStopMetric::ValidOneMinusJsd => valid_score.expect("validation set checked above"),
            EarlyStopMetric::TrainLoss => -train_loss,
            EarlyStopMetric::None => epoch as f64,
        };
        let improved = best.map_or(true, |(b, _)| score > b);
        log.push(LogEvent::Epoch { epoch, train_loss, valid_one_minus_jsd: valid_score, improved });
        log::info!("epoch {epoch}: train loss {train_loss:.6}, valid 1-JSD {valid_score:?}");
        if improved {
            best = Some((score, epoch));
            last_good = model.adapter_params();
            stale = 0;
        } else {
            stale += 1;
            if config.early_stop_metric != EarlyStopMetric::None && stale >= config.patience {
                stop_reason = StopReason::EarlyStopped;
                break;
            }
        }
    }

    // leave the best checkpoint loaded
    if stop_reason != StopReason::Diverged {
        model.load_adapter_params(&last_good)?;
    }
    let best_epoch = best.map(|(_, e)| e);
    log.push(LogEvent::End { stop_reason, best_epoch, wall_clock_secs: started.elapsed().as_secs_f64() });

    let metadata = AdapterMetadata {
        config_hash: config.hash(),
        dataset_hash: data_hash,
        seed: config.seed,
        loss: config.loss,
        backend: descriptor,
        base_weights_digest: base_digest,
        best_epoch,
        stop_reason,
    };
    Ok(TrainOutcome { log, stop_reason, best_epoch, checkpoint: model.adapter_checkpoint()?, metadata })
}
