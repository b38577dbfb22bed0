//! Training loops: source-language pretraining, then transfer by plain
//! fine-tuning, fine-tuning followed by preference optimization, or the
//! combined cross-lingual objective.
//!
//! One run is one writer over the model. Every shuffle and sample derives
//! from the run seed, so identical inputs give bit-identical parameters.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataprep::{make_batches, Batch, DatasetSplits};
use crate::error::{Error, Result};
use crate::nnet::{
    classify_param, init_model, snapshot_reference, GradStore, Graph, ModelConfig, ParamGroup,
    Params, PolicyModel, ReferenceSnapshot,
};
use crate::objectives::{
    clo_loss_grad, dpo_loss_grad, nll_loss, nll_loss_grad, LossBreakdown, NllMode,
    ObjectiveConfig, Reduction,
};
use crate::synthlang::{sample_task_from_mix, tokens, LanguageTag, TaskMix, Vocabulary};
use crate::util::{derive_seed, derive_seed_indexed};

/// Transfer method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// NLL fine-tuning on chosen responses (which languages it sees is
    /// governed by the objective's NLL mode; the standard baseline uses
    /// both).
    Sft,
    /// SFT, then standard preference optimization over the same pairs with
    /// the SFT checkpoint as reference.
    SftDpo,
    /// The combined objective with the pre-transfer base as reference.
    Clo,
}

/// Which parameters the optimizer may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMask {
    AttentionOnly,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub objective: ObjectiveConfig,
    pub update_mask: UpdateMask,
    pub lr: f64,
    pub min_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_seq_len: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if !(self.min_lr > 0.0 && self.min_lr <= self.lr) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 < min_lr <= lr, got lr {} min_lr {}",
                self.lr, self.min_lr
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Clo,
            objective: ObjectiveConfig::default(),
            update_mask: UpdateMask::AttentionOnly,
            lr: 5e-5,
            min_lr: 1.1e-6,
            epochs: 1,
            batch_size: 8,
            seed: 0,
            max_seq_len: 64,
        }
    }
}

/// One optimizer step's worth of logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub breakdown: LossBreakdown,
    pub lr: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub chosen_checkpoint_step: usize,
}

impl TrainLog {
    /// Minimum validation loss seen, if any evaluation ran.
    pub fn best_val_loss(&self) -> Option<f64> {
        self.steps
            .iter()
            .filter_map(|s| s.val_loss)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
    }
}

/// Writes the per-step log as CSV. Wall time stays out of the file so two
/// identical runs produce identical bytes.
pub fn write_train_log_csv(path: &std::path::Path, log: &TrainLog) -> Result<()> {
    use std::io::Write;
    let mut out = String::from(
        "step,l_sft,l_cl,l_clo,mean_z_en,mean_z_tgt,pref_acc_en,pref_acc_tgt,lr,val_loss\n",
    );
    for s in &log.steps {
        let b = &s.breakdown;
        let val = s.val_loss.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.step,
            b.l_sft,
            b.l_cl,
            b.l_clo,
            b.mean_z_en,
            b.mean_z_tgt,
            b.pref_acc_en,
            b.pref_acc_tgt,
            s.lr,
            val
        ));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Cosine schedule from `lr` down to `min_lr` over `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    if total_steps == 0 {
        return config.lr;
    }
    let progress = step as f64 / total_steps as f64;
    config.min_lr
        + 0.5 * (config.lr - config.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam moments, one slot per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Params,
    v: Params,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(config: &ModelConfig) -> Self {
        AdamState {
            m: Params::zeros(config),
            v: Params::zeros(config),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step over the unmasked parameter groups. Masked parameters are
/// skipped entirely: values and moments stay untouched.
pub fn apply_masked_update(
    model: &mut PolicyModel,
    grads: &GradStore,
    mask: UpdateMask,
    state: &mut AdamState,
    lr: f64,
) {
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for name in model.param_names() {
        if mask == UpdateMask::AttentionOnly && classify_param(&name) == ParamGroup::Other {
            continue;
        }
        let g = grads.get(&name).unwrap();
        let m = state.m.get_mut(&name).unwrap();
        let v = state.v.get_mut(&name).unwrap();
        let w = model.param_mut(&name).unwrap();
        for i in 0..w.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
}

/// Scales gradients down to `max_norm` when they exceed it; returns the
/// pre-clip norm.
fn clip_global_norm(grads: &mut GradStore, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm {
        grads.scale_all(max_norm / norm);
    }
    norm
}

const CLIP_NORM: f64 = 1.0;

/// Per-step objective of one training phase.
enum PhaseObjective<'r> {
    Nll {
        mode: NllMode,
        reduction: Reduction,
    },
    Clo {
        refm: &'r ReferenceSnapshot,
        objective: &'r ObjectiveConfig,
    },
    Dpo {
        refm: &'r ReferenceSnapshot,
        beta: f64,
        reduction: Reduction,
    },
}

impl PhaseObjective<'_> {
    fn loss_grad(&self, model: &PolicyModel, batch: &Batch) -> Result<(LossBreakdown, GradStore)> {
        match self {
            PhaseObjective::Nll { mode, reduction } => {
                let (value, grads) = nll_loss_grad(model, batch, *mode, *reduction)?;
                Ok((nll_breakdown(value, batch.len()), grads))
            }
            PhaseObjective::Clo { refm, objective } => clo_loss_grad(model, refm, batch, objective),
            PhaseObjective::Dpo {
                refm,
                beta,
                reduction,
            } => {
                let pairs: Vec<_> = batch.pairs().cloned().collect();
                let (value, margins, grads) = dpo_loss_grad(model, refm, &pairs, *beta, *reduction)?;
                // Pairs alternate source/target direction per item.
                let z_en: Vec<f64> = margins.iter().copied().step_by(2).collect();
                let z_tgt: Vec<f64> = margins.iter().copied().skip(1).step_by(2).collect();
                let breakdown = LossBreakdown {
                    l_sft: 0.0,
                    l_cl: 0.0,
                    l_clo: value,
                    mean_z_en: z_en.iter().sum::<f64>() / z_en.len() as f64,
                    mean_z_tgt: z_tgt.iter().sum::<f64>() / z_tgt.len() as f64,
                    pref_acc_en: z_en.iter().filter(|z| **z > 0.0).count() as f64
                        / z_en.len() as f64,
                    pref_acc_tgt: z_tgt.iter().filter(|z| **z > 0.0).count() as f64
                        / z_tgt.len() as f64,
                    batch_size: batch.len(),
                };
                Ok((breakdown, grads))
            }
        }
    }

    fn loss_value(&self, model: &PolicyModel, batch: &Batch) -> Result<f64> {
        match self {
            PhaseObjective::Nll { mode, reduction } => nll_loss(model, batch, *mode, *reduction),
            PhaseObjective::Clo { refm, objective } => {
                Ok(crate::objectives::clo_loss(model, refm, batch, objective)?.l_clo)
            }
            PhaseObjective::Dpo {
                refm,
                beta,
                reduction,
            } => {
                let pairs: Vec<_> = batch.pairs().cloned().collect();
                let (value, _) =
                    crate::objectives::dpo_loss(model, refm, &pairs, *beta, *reduction)?;
                Ok(value)
            }
        }
    }
}

fn nll_breakdown(value: f64, batch_size: usize) -> LossBreakdown {
    LossBreakdown {
        l_sft: value,
        l_cl: 0.0,
        l_clo: value,
        mean_z_en: 0.0,
        mean_z_tgt: 0.0,
        pref_acc_en: 0.0,
        pref_acc_tgt: 0.0,
        batch_size,
    }
}

/// Example-weighted mean objective over fixed validation batches.
fn validation_loss(
    objective: &PhaseObjective<'_>,
    model: &PolicyModel,
    val_batches: &[Batch],
) -> Result<Option<f64>> {
    if val_batches.is_empty() {
        return Ok(None);
    }
    let mut weighted = 0.0;
    let mut count = 0usize;
    for batch in val_batches {
        weighted += objective.loss_value(model, batch)? * batch.len() as f64;
        count += batch.len();
    }
    Ok(Some(weighted / count as f64))
}

struct PhaseOutcome {
    best_params: Params,
    best_step: usize,
}

/// Runs `epochs` passes over the train split with the given objective,
/// logging every step and keeping the parameters with the lowest
/// validation loss. Without a validation split the final parameters win.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    model: &mut PolicyModel,
    splits: &DatasetSplits,
    vocab: &Vocabulary,
    config: &TrainConfig,
    objective: &PhaseObjective<'_>,
    phase_label: &str,
    step_offset: usize,
    log: &mut TrainLog,
) -> Result<PhaseOutcome> {
    if splits.train.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    for ex in splits.all() {
        for (p, r) in [(&ex.x_en, &ex.y_en), (&ex.x_tgt, &ex.y_tgt)] {
            if p.len() + r.len() > config.max_seq_len {
                return Err(Error::Config(format!(
                    "example {} exceeds max_seq_len {}",
                    ex.id, config.max_seq_len
                )));
            }
        }
    }
    let steps_per_epoch = splits.train.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let val_every = total_steps.div_ceil(10).max(1);
    let val_batches = if splits.validation.is_empty() {
        Vec::new()
    } else {
        make_batches(
            &splits.validation,
            config.batch_size,
            derive_seed(config.seed, &format!("{phase_label}-val")),
            vocab,
        )?
    };

    let mut opt = AdamState::new(model.config());
    let mut best: Option<(f64, Params, usize)> = None;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let batches = make_batches(
            &splits.train,
            config.batch_size,
            derive_seed_indexed(config.seed, &format!("{phase_label}-epoch"), epoch as u64),
            vocab,
        )?;
        for batch in &batches {
            let start = Instant::now();
            let lr = lr_at(step, total_steps, config);
            let (breakdown, mut grads) = objective.loss_grad(model, batch)?;
            if !breakdown.l_clo.is_finite() {
                return Err(Error::NonFinite {
                    step: step_offset + step,
                    value: breakdown.l_clo,
                });
            }
            let grad_norm = clip_global_norm(&mut grads, CLIP_NORM);
            apply_masked_update(model, &grads, config.update_mask, &mut opt, lr);
            step += 1;
            let val_loss = if step.is_multiple_of(val_every) || step == total_steps {
                let v = validation_loss(objective, model, &val_batches)?;
                if let Some(v) = v {
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            step: step_offset + step,
                            value: v,
                        });
                    }
                    let improved = best.as_ref().is_none_or(|(bv, _, _)| v < *bv);
                    if improved {
                        best = Some((v, model.params.clone(), step_offset + step));
                    }
                }
                v
            } else {
                None
            };
            log.steps.push(StepRecord {
                step: step_offset + step,
                breakdown,
                lr,
                grad_norm,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                val_loss,
            });
        }
    }
    let (best_params, best_step) = match best {
        Some((_, params, s)) => (params, s),
        None => (model.params.clone(), step_offset + step),
    };
    Ok(PhaseOutcome {
        best_params,
        best_step,
    })
}

/// Transfer-trains `base` on the splits. Returns the checkpoint with the
/// lowest validation loss and the full log.
pub fn train(
    base: &PolicyModel,
    splits: &DatasetSplits,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<(PolicyModel, TrainLog)> {
    train_with_reference(base, splits, vocab, config, None)
}

/// Like `train`, but with an explicit reference policy for the preference
/// terms (defaults to a snapshot of `base`).
pub fn train_with_reference(
    base: &PolicyModel,
    splits: &DatasetSplits,
    vocab: &Vocabulary,
    config: &TrainConfig,
    reference: Option<&ReferenceSnapshot>,
) -> Result<(PolicyModel, TrainLog)> {
    config.validate()?;
    let mut model = base.clone();
    let mut log = TrainLog {
        steps: Vec::new(),
        chosen_checkpoint_step: 0,
    };
    match config.method {
        Method::Sft => {
            let objective = PhaseObjective::Nll {
                mode: config.objective.nll_mode,
                reduction: config.objective.logprob_reduction,
            };
            let outcome = run_phase(
                &mut model, splits, vocab, config, &objective, "train", 0, &mut log,
            )?;
            model.params = outcome.best_params;
            model.set_step(outcome.best_step as u64);
            log.chosen_checkpoint_step = outcome.best_step;
        }
        Method::Clo => {
            let snapshot;
            let refm = match reference {
                Some(r) => r,
                None => {
                    snapshot = snapshot_reference(base);
                    &snapshot
                }
            };
            let objective = PhaseObjective::Clo {
                refm,
                objective: &config.objective,
            };
            let outcome = run_phase(
                &mut model, splits, vocab, config, &objective, "train", 0, &mut log,
            )?;
            model.params = outcome.best_params;
            model.set_step(outcome.best_step as u64);
            log.chosen_checkpoint_step = outcome.best_step;
        }
        Method::SftDpo => {
            // Stage one: plain SFT on both languages.
            let sft_objective = PhaseObjective::Nll {
                mode: NllMode::TargetAndEnglish,
                reduction: config.objective.logprob_reduction,
            };
            let outcome = run_phase(
                &mut model,
                splits,
                vocab,
                config,
                &sft_objective,
                "train",
                0,
                &mut log,
            )?;
            model.params = outcome.best_params;
            let stage_one_steps = log.steps.len();
            // Stage two: preference optimization against the SFT checkpoint.
            let snapshot;
            let refm = match reference {
                Some(r) => r,
                None => {
                    snapshot = snapshot_reference(&model);
                    &snapshot
                }
            };
            let dpo_objective = PhaseObjective::Dpo {
                refm,
                beta: config.objective.beta,
                reduction: config.objective.logprob_reduction,
            };
            let outcome = run_phase(
                &mut model,
                splits,
                vocab,
                config,
                &dpo_objective,
                "dpo",
                stage_one_steps,
                &mut log,
            )?;
            model.params = outcome.best_params;
            model.set_step(outcome.best_step as u64);
            log.chosen_checkpoint_step = outcome.best_step;
        }
    }
    Ok((model, log))
}

/// Pretraining data shape: source-language tasks drawn on the fly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainCorpus {
    pub task_mix: TaskMix,
    pub len_range: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub seed: u64,
}

/// Builds the source-language-biased base model: initializes from the model
/// config and trains NLL on `LangA` tasks only. Zero steps returns the
/// freshly initialized model.
pub fn pretrain_base(
    model_config: &ModelConfig,
    vocab: &Vocabulary,
    corpus: &PretrainCorpus,
    config: &PretrainConfig,
) -> Result<(PolicyModel, TrainLog)> {
    if config.steps > 0 && !(config.min_lr > 0.0 && config.min_lr <= config.lr) {
        return Err(Error::Config(format!(
            "learning rates must satisfy 0 < min_lr <= lr, got lr {} min_lr {}",
            config.lr, config.min_lr
        )));
    }
    if config.batch_size < 1 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut model = init_model(model_config)?;
    let mut log = TrainLog {
        steps: Vec::new(),
        chosen_checkpoint_step: 0,
    };
    let mut opt = AdamState::new(model_config);
    let schedule = TrainConfig {
        lr: config.lr,
        min_lr: config.min_lr,
        ..TrainConfig::default()
    };
    for step in 0..config.steps {
        let start = Instant::now();
        let lr = lr_at(step, config.steps, &schedule);
        let mut graph = Graph::new(&model);
        let mut terms = Vec::with_capacity(config.batch_size);
        for b in 0..config.batch_size {
            let task_seed =
                derive_seed_indexed(config.seed, "pretrain", (step * config.batch_size + b) as u64);
            let task = sample_task_from_mix(
                task_seed,
                LanguageTag::LangA,
                &corpus.task_mix,
                corpus.len_range,
                vocab,
            )?;
            let mut response = task.response;
            response.push(tokens::EOS);
            let lp = graph.seq_logprob(&task.prompt, &response)?;
            terms.push(graph.neg(lp)?);
        }
        let loss_node = graph.mean(&terms)?;
        let value = graph.value(loss_node)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { step, value });
        }
        let mut grads = graph.backward(loss_node)?;
        let grad_norm = clip_global_norm(&mut grads, CLIP_NORM);
        apply_masked_update(&mut model, &grads, UpdateMask::Full, &mut opt, lr);
        log.steps.push(StepRecord {
            step: step + 1,
            breakdown: nll_breakdown(value, config.batch_size),
            lr,
            grad_norm,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            val_loss: None,
        });
    }
    model.set_step(config.steps as u64);
    log.chosen_checkpoint_step = config.steps;
    Ok((model, log))
}
