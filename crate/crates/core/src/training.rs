//! Minibatch Adam training with periodic validation and best-model selection.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ifthen_tensor::{clip_grad_norm, Adam, AdamConfig, Graph, ParamStore, Scalar, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::corpus::{EncodedPair, TARGET_LEN};
use crate::error::{io_err, validation, Error, Result};
use crate::inference::predict_ids;
use crate::metrics::{evaluate, EvalReport};
use crate::models::{Family, SeqModel};

/// Global-norm clip applied to recurrent families unless configured otherwise.
pub const RECURRENT_CLIP_NORM: f64 = 5.0;

/// `factor * model_size^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn noam_lr(step: u64, model_size: usize, factor: f64, warmup: u64) -> Result<f64> {
    if step == 0 {
        return validation("noam schedule is defined from step 1");
    }
    if model_size == 0 || warmup == 0 || factor <= 0.0 {
        return validation("noam schedule needs positive model_size, factor and warmup");
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok(factor * (model_size as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheduler {
    /// `base_lr` throughout.
    Constant,
    /// Warmup then inverse square root decay; `base_lr` is ignored.
    Noam {
        #[serde(default = "one")]
        factor: f64,
        #[serde(default = "default_warmup")]
        warmup: u64,
        /// Defaults to the architecture's width.
        #[serde(default)]
        model_size: Option<usize>,
    },
}

fn one() -> f64 {
    1.0
}

fn default_warmup() -> u64 {
    4000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub validate_every_steps: u64,
    /// Also validate after every epoch.
    pub validate_each_epoch: bool,
    pub base_lr: f64,
    pub scheduler: Scheduler,
    pub batch_size: usize,
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Global gradient-norm clip. Absent means the family default; 0 disables.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            validate_every_steps: 4000,
            validate_each_epoch: true,
            base_lr: 0.001,
            scheduler: Scheduler::Constant,
            batch_size: 64,
            max_steps: None,
            seed: 1,
            checkpoint_dir: None,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return validation("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return validation("batch_size must be at least 1");
        }
        if self.validate_every_steps == 0 {
            return validation("validate_every_steps must be at least 1");
        }
        if let Scheduler::Noam { warmup, factor, .. } = self.scheduler {
            if warmup == 0 {
                return validation("warmup must be at least 1");
            }
            if factor <= 0.0 {
                return validation("noam factor must be positive");
            }
        } else if self.base_lr <= 0.0 {
            return validation("base_lr must be positive");
        }
        if self.max_steps == Some(0) {
            return validation("max_steps must be at least 1");
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: u64, arch_model_size: usize) -> Result<f64> {
        match self.scheduler {
            Scheduler::Constant => Ok(self.base_lr),
            Scheduler::Noam {
                factor,
                warmup,
                model_size,
            } => noam_lr(step, model_size.unwrap_or(arch_model_size), factor, warmup),
        }
    }

    pub fn effective_clip(&self, family: Family) -> Option<f64> {
        match (self.clip_norm, family) {
            (Some(c), _) if c > 0.0 => Some(c),
            (Some(_), _) | (None, Family::Transformer) => None,
            (None, _) => Some(RECURRENT_CLIP_NORM),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: u64,
    pub epoch: usize,
    /// Mean minibatch loss since the previous validation.
    pub train_loss: f64,
    pub validation_loss: f64,
    pub learning_rate: f64,
    pub metrics: EvalReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub validations: Vec<ValidationRecord>,
    pub best_step: Option<u64>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum HistoryLine<'a> {
    Step(&'a StepRecord),
    Validation(&'a ValidationRecord),
}

impl TrainHistory {
    pub fn optimizer_steps(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.step)
    }

    pub fn best(&self) -> Option<&ValidationRecord> {
        let step = self.best_step?;
        self.validations.iter().find(|v| v.step == step)
    }

    /// One JSON object per line, step records and validation records in
    /// the order they occurred.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let ctx = || format!("writing {}", path.display());
        let mut out = BufWriter::new(File::create(path).map_err(io_err(ctx()))?);
        let mut vals = self.validations.iter().peekable();
        for s in &self.steps {
            serde_json::to_writer(&mut out, &HistoryLine::Step(s)).map_err(|e| Error::Validation(e.to_string()))?;
            writeln!(out).map_err(io_err(ctx()))?;
            while let Some(v) = vals.next_if(|v| v.step == s.step) {
                serde_json::to_writer(&mut out, &HistoryLine::Validation(v))
                    .map_err(|e| Error::Validation(e.to_string()))?;
                writeln!(out).map_err(io_err(ctx()))?;
            }
        }
        out.flush().map_err(io_err(ctx()))
    }
}

fn check_pairs<T: Scalar>(model: &SeqModel<T>, pairs: &[EncodedPair], what: &str) -> Result<()> {
    let (vs, vt) = (model.source_vocab().len(), model.target_vocab().len());
    for (i, p) in pairs.iter().enumerate() {
        if p.source_ids.len() != model.max_source_len() {
            return validation(format!(
                "{what} pair {i} has {} source ids, model expects {}",
                p.source_ids.len(),
                model.max_source_len()
            ));
        }
        if p.source_ids.iter().any(|&id| id >= vs) || p.target_ids.iter().any(|&id| id >= vt) {
            return validation(format!("{what} pair {i} was encoded with other vocabularies"));
        }
    }
    Ok(())
}

/// Mean token cross-entropy of `pairs` with dropout off.
pub fn mean_loss<T: Scalar>(model: &SeqModel<T>, pairs: &[EncodedPair], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let g = Graph::inference();
        let (src, tgt) = unzip(chunk);
        let batch = model.source_batch(&src)?;
        let loss = model.loss(&g, &batch, &tgt)?.value().to_f64_vec()[0];
        total += loss * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Greedy-decodes `pairs` and scores them against their gold recipes.
pub fn evaluate_pairs<T: Scalar>(model: &SeqModel<T>, pairs: &[EncodedPair], batch_size: usize) -> Result<EvalReport> {
    let rows: Vec<Vec<usize>> = pairs.iter().map(|p| p.source_ids.clone()).collect();
    let preds = predict_ids(model, &rows, batch_size)?;
    let refs: Vec<_> = pairs.iter().map(|p| p.recipe.clone()).collect();
    evaluate(&preds, &refs)
}

fn unzip(chunk: &[EncodedPair]) -> (Vec<&[usize]>, Vec<[usize; TARGET_LEN]>) {
    chunk.iter().map(|p| (p.source_ids.as_slice(), p.target_ids)).unzip()
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

struct Best<T> {
    accuracy: f64,
    loss: f64,
    params: ParamStore<T>,
}

/// Trains `model` and returns the parameters with the best validation
/// sequence accuracy (ties: lower validation loss). An empty `valid` set
/// validates on the training pairs.
pub fn train<T: Scalar>(
    model: SeqModel<T>,
    train_pairs: &[EncodedPair],
    valid_pairs: &[EncodedPair],
    config: &TrainConfig,
) -> Result<(SeqModel<T>, TrainHistory)> {
    train_with_observer(model, train_pairs, valid_pairs, config, &mut |_| {})
}

/// [`train`], reporting each validation as it happens.
pub fn train_with_observer<T: Scalar>(
    mut model: SeqModel<T>,
    train_pairs: &[EncodedPair],
    valid_pairs: &[EncodedPair],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&ValidationRecord),
) -> Result<(SeqModel<T>, TrainHistory)> {
    config.validate()?;
    if train_pairs.is_empty() {
        return validation("training set is empty");
    }
    check_pairs(&model, train_pairs, "training")?;
    check_pairs(&model, valid_pairs, "validation")?;
    let valid_pairs = if valid_pairs.is_empty() { train_pairs } else { valid_pairs };
    if let Some(dir) = &config.checkpoint_dir {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    let width = model.config().model_size();
    let clip = config.effective_clip(model.family());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(AdamConfig::default());
    let mut history = TrainHistory::default();
    let mut best: Option<Best<T>> = None;
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut step = 0u64;
    let mut since_validation = (0.0, 0usize);
    let mut last_validated = 0u64;
    let mut lr = config.learning_rate(1, width)?;

    let mut validate = |model: &SeqModel<T>,
                        history: &mut TrainHistory,
                        best: &mut Option<Best<T>>,
                        step: u64,
                        epoch: usize,
                        lr: f64,
                        since: &mut (f64, usize)|
     -> Result<()> {
        let metrics = evaluate_pairs(model, valid_pairs, config.batch_size)?;
        let validation_loss = mean_loss(model, valid_pairs, config.batch_size)?;
        let record = ValidationRecord {
            step,
            epoch,
            train_loss: if since.1 == 0 { f64::NAN } else { since.0 / since.1 as f64 },
            validation_loss,
            learning_rate: lr,
            metrics,
        };
        *since = (0.0, 0);
        let improved = match best {
            None => true,
            Some(b) => {
                record.metrics.sequence_acc > b.accuracy
                    || (record.metrics.sequence_acc == b.accuracy && record.validation_loss < b.loss)
            }
        };
        if improved {
            *best = Some(Best {
                accuracy: record.metrics.sequence_acc,
                loss: record.validation_loss,
                params: model.params().clone(),
            });
            history.best_step = Some(step);
        }
        if let Some(dir) = &config.checkpoint_dir {
            save_checkpoint(&dir.join("last.ckpt"), model, step)?;
            if improved {
                save_checkpoint(&dir.join("best.ckpt"), model, step)?;
            }
        }
        observer(&record);
        history.validations.push(record);
        Ok(())
    };

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            step += 1;
            lr = config.learning_rate(step, width)?;
            let batch_pairs: Vec<&EncodedPair> = chunk.iter().map(|&i| &train_pairs[i]).collect();
            let src: Vec<&[usize]> = batch_pairs.iter().map(|p| p.source_ids.as_slice()).collect();
            let tgt: Vec<[usize; TARGET_LEN]> = batch_pairs.iter().map(|p| p.target_ids).collect();
            let (loss, grads) = {
                let g = Graph::training(step_seed(config.seed, step));
                let batch = model.source_batch(&src)?;
                let loss = model.loss(&g, &batch, &tgt)?;
                let value = loss.value().to_f64_vec()[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { step });
                }
                (value, g.backward(loss)?)
            };
            let params = model.params_mut();
            params.zero_grad();
            grads.accumulate_into(params);
            let grad_norm = match clip {
                Some(max) => clip_grad_norm(params, max),
                None => clip_grad_norm(params, f64::INFINITY),
            };
            adam.step(params, lr).map_err(|e| match e {
                TensorError::NonFiniteGradient(param) => Error::NonFiniteGradient { param, step },
                other => other.into(),
            })?;
            since_validation.0 += loss;
            since_validation.1 += 1;
            history.steps.push(StepRecord {
                step,
                epoch,
                loss,
                learning_rate: lr,
                grad_norm,
            });
            if step.is_multiple_of(config.validate_every_steps) {
                validate(&model, &mut history, &mut best, step, epoch, lr, &mut since_validation)?;
                last_validated = step;
            }
        }
        if config.validate_each_epoch && last_validated != step {
            validate(&model, &mut history, &mut best, step, epoch, lr, &mut since_validation)?;
            last_validated = step;
        }
    }
    if last_validated != step || history.validations.is_empty() {
        let epoch = history.steps.last().map_or(0, |s| s.epoch);
        validate(&model, &mut history, &mut best, step, epoch, lr, &mut since_validation)?;
    }
    if let Some(b) = best {
        model.params_mut().copy_values_from(&b.params)?;
    }
    if let Some(dir) = &config.checkpoint_dir {
        history.write_jsonl(&dir.join("history.jsonl"))?;
    }
    Ok((model, history))
}
