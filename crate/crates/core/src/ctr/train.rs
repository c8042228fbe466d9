//! Minibatch Adagrad trainers for the baseline, SCR and LSPR objectives.

use serde::{Deserialize, Serialize};

use crate::augment::{perturb_example, Example, PerturbationSpec};
use crate::ctr::model::{CtrModel, ForwardPass};
use crate::error::{Error, Result};
use crate::losses::{self, HiddenPair, PredictionBatch};
use crate::numerics::{derive_seed, Rng};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CtrMethod {
    Baseline,
    Scr,
    Lspr,
}

impl CtrMethod {
    pub fn name(self) -> &'static str {
        match self {
            CtrMethod::Baseline => "baseline",
            CtrMethod::Scr => "scr",
            CtrMethod::Lspr => "lspr",
        }
    }
}

/// Which representation the consistency penalty compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrTarget {
    Logit,
    Hidden,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: CtrMethod,
    pub lambda: f64,
    pub perturbation: PerturbationSpec,
    pub scr_target: ScrTarget,
    /// Share of each batch that SCR perturbs.
    pub scr_perturb_fraction: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: CtrMethod::Baseline,
            lambda: 0.5,
            perturbation: PerturbationSpec::default(),
            scr_target: ScrTarget::Both,
            scr_perturb_fraction: 0.25,
            batch_size: 64,
            epochs: 8,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::contract("lambda must be finite and >= 0"));
        }
        if !(self.scr_perturb_fraction > 0.0 && self.scr_perturb_fraction <= 1.0) {
            return Err(Error::contract("scr_perturb_fraction must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1"));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::contract("learning_rate must be finite and >= 0"));
        }
        self.perturbation.validate()
    }
}

/// Clean examples of one batch plus the perturbed copies drawn for it.
#[derive(Debug, Clone)]
pub struct BatchPlan<'a> {
    pub clean: Vec<&'a Example>,
    /// `(index into clean, perturbed copy)`, ascending by index.
    pub perturbed: Vec<(usize, Example)>,
}

/// Draws the perturbations `cfg.method` calls for.
pub fn plan_batch<'a>(batch: &[&'a Example], cfg: &TrainConfig, rng: &mut Rng) -> Result<BatchPlan<'a>> {
    let chosen: Vec<usize> = match cfg.method {
        CtrMethod::Baseline => Vec::new(),
        CtrMethod::Lspr => (0..batch.len()).collect(),
        CtrMethod::Scr => {
            let m = ((batch.len() as f64 * cfg.scr_perturb_fraction).ceil() as usize).clamp(1, batch.len());
            let mut idx: Vec<usize> = (0..batch.len()).collect();
            rng.shuffle(&mut idx);
            idx.truncate(m);
            idx.sort_unstable();
            idx
        }
    };
    let perturbed = chosen
        .into_iter()
        .map(|i| Ok((i, perturb_example(batch[i], &cfg.perturbation, rng)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchPlan {
        clean: batch.to_vec(),
        perturbed,
    })
}

/// Objective value and gradient for one planned batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub forward_passes: usize,
}

fn batch_of(passes: &[ForwardPass], labels: Vec<u8>) -> Result<PredictionBatch> {
    PredictionBatch::new(labels, passes.iter().map(|p| p.prediction).collect())
}

/// Evaluates the method's objective on a planned batch and its gradient.
///
/// * baseline: mean BCE on the clean batch;
/// * LSPR: mean BCE on the clean batch plus λ times mean BCE on the
///   perturbed copies against the original labels;
/// * SCR: mean BCE on the clean batch plus λ times the MSE between clean and
///   perturbed representations (logit, hidden vector, or both summed). The
///   clean representation is a constant target.
pub fn batch_objective(model: &CtrModel, plan: &BatchPlan<'_>, cfg: &TrainConfig) -> Result<BatchOutcome> {
    let n = plan.clean.len();
    if n == 0 {
        return Err(Error::contract("empty batch"));
    }
    let mut grad = vec![0.0; model.params().len()];
    let clean: Vec<ForwardPass> = plan.clean.iter().map(|ex| model.forward(ex)).collect::<Result<_>>()?;
    let labels: Vec<u8> = plan.clean.iter().map(|ex| ex.label).collect();
    let clean_batch = batch_of(&clean, labels.clone())?;
    for (pass, &y) in clean.iter().zip(&labels) {
        model.backward(pass, (pass.prediction - f64::from(y)) / n as f64, None, &mut grad);
    }

    let pert: Vec<ForwardPass> = plan
        .perturbed
        .iter()
        .map(|(_, ex)| model.forward(ex))
        .collect::<Result<_>>()?;
    let forward_passes = clean.len() + pert.len();

    let loss = match cfg.method {
        CtrMethod::Baseline => losses::bce(&clean_batch),
        CtrMethod::Lspr => {
            for (i, ex) in &plan.perturbed {
                assert_eq!(ex.label, labels[*i], "perturbed copy must keep its label");
            }
            let pert_labels: Vec<u8> = plan.perturbed.iter().map(|(_, ex)| ex.label).collect();
            let pert_batch = batch_of(&pert, pert_labels)?;
            for (pass, (_, ex)) in pert.iter().zip(&plan.perturbed) {
                let d = cfg.lambda * (pass.prediction - f64::from(ex.label)) / n as f64;
                model.backward(pass, d, None, &mut grad);
            }
            losses::lspr_loss(&clean_batch, &pert_batch, cfg.lambda)?
        }
        CtrMethod::Scr => {
            let m = pert.len() as f64;
            let use_logit = matches!(cfg.scr_target, ScrTarget::Logit | ScrTarget::Both);
            let use_hidden = matches!(cfg.scr_target, ScrTarget::Hidden | ScrTarget::Both);
            let mut logit_pair = (Vec::new(), Vec::new());
            let mut hidden_pair = (Vec::new(), Vec::new());
            for (pass, (i, _)) in pert.iter().zip(&plan.perturbed) {
                let target = &clean[*i];
                let h_dim = pass.hidden.dim() as f64;
                let d_logit = if use_logit {
                    logit_pair.0.push(target.logit);
                    logit_pair.1.push(pass.logit);
                    cfg.lambda * 2.0 * (pass.logit - target.logit) / m
                } else {
                    0.0
                };
                let d_hidden: Option<Vec<f64>> = use_hidden.then(|| {
                    hidden_pair.0.extend_from_slice(&target.hidden);
                    hidden_pair.1.extend_from_slice(&pass.hidden);
                    pass.hidden
                        .iter()
                        .zip(target.hidden.iter())
                        .map(|(hp, hc)| cfg.lambda * 2.0 * (hp - hc) / (m * h_dim))
                        .collect()
                });
                model.backward(pass, d_logit, d_hidden.as_deref(), &mut grad);
            }
            let mut reg = 0.0;
            if use_logit {
                reg += losses::mse(&HiddenPair::new(logit_pair.0, logit_pair.1)?);
            }
            if use_hidden {
                reg += losses::mse(&HiddenPair::new(hidden_pair.0, hidden_pair.1)?);
            }
            losses::bce(&clean_batch) + cfg.lambda * reg
        }
    };
    Ok(BatchOutcome {
        loss,
        grad,
        forward_passes,
    })
}

/// Held-out metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub ne: f64,
    pub bce: f64,
}

/// Normalized entropy and log loss of the model on `data`. Read-only.
pub fn evaluate(model: &CtrModel, data: &[Example]) -> Result<Evaluation> {
    let preds: Vec<f64> = par::map(data, |ex| model.forward(ex).map(|p| p.prediction))
        .into_iter()
        .collect::<Result<_>>()?;
    let batch = PredictionBatch::new(data.iter().map(|e| e.label).collect(), preds)?;
    Ok(Evaluation {
        ne: losses::normalized_entropy(&batch)?,
        bce: losses::bce(&batch),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-batch objective over the epoch.
    pub objective: f64,
    pub train_ne: f64,
    pub eval_ne: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CtrModel,
    pub history: Vec<EpochRecord>,
}

/// Trains with the objective selected by `cfg.method`.
///
/// Batch order comes from one seed stream and perturbations from another,
/// so every method visits identical batches for a given seed.
pub fn train(mut model: CtrModel, train: &[Example], eval: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    let mut order_rng = Rng::new(derive_seed(cfg.seed, &[1]));
    let mut perturb_rng = Rng::new(derive_seed(cfg.seed, &[2]));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let plan = plan_batch(&batch, cfg, &mut perturb_rng)?;
            let out = batch_objective(&model, &plan, cfg)?;
            if !out.loss.is_finite() {
                return Err(Error::TrainingDivergence { epoch });
            }
            model.adagrad_step(&out.grad, cfg.learning_rate);
            total += out.loss;
            batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::TrainingDivergence { epoch });
        }
        history.push(EpochRecord {
            epoch,
            objective: total / batches as f64,
            train_ne: evaluate(&model, train)?.ne,
            eval_ne: evaluate(&model, eval)?.ne,
        });
    }
    Ok(TrainOutcome { model, history })
}

fn expect_method(cfg: &TrainConfig, method: CtrMethod) -> Result<()> {
    if cfg.method != method {
        return Err(Error::contract(format!(
            "trainer for {} called with method {}",
            method.name(),
            cfg.method.name()
        )));
    }
    Ok(())
}

pub fn train_baseline(
    model: CtrModel,
    train_set: &[Example],
    eval: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    expect_method(cfg, CtrMethod::Baseline)?;
    train(model, train_set, eval, cfg)
}

pub fn train_scr(model: CtrModel, train_set: &[Example], eval: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_method(cfg, CtrMethod::Scr)?;
    train(model, train_set, eval, cfg)
}

pub fn train_lspr(model: CtrModel, train_set: &[Example], eval: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_method(cfg, CtrMethod::Lspr)?;
    train(model, train_set, eval, cfg)
}
