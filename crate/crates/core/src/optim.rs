//! Momentum SGD with coupled weight decay, sharpness-aware minimization,
//! a step learning-rate schedule, and the mini-batch training loop.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::model::{ModelParams, PatchInput};
use crate::numerics::Vec64;

/// Below this gradient norm the SAM perturbation is set to zero.
pub const SAM_GRAD_NORM_FLOOR: f64 = 1e-12;

/// Parameters an optimizer can update as one flat buffer.
pub trait FlatParams: Clone {
    fn as_flat(&self) -> &[f64];
    fn as_flat_mut(&mut self) -> &mut [f64];

    fn same_shape(&self, other: &Self) -> bool {
        self.as_flat().len() == other.as_flat().len()
    }
}

impl FlatParams for Vec<f64> {
    fn as_flat(&self) -> &[f64] {
        self
    }
    fn as_flat_mut(&mut self) -> &mut [f64] {
        self
    }
}

/// Anything that yields a loss and its gradient at a parameter point.
pub trait Objective<P> {
    fn loss_and_grad(&self, params: &P) -> Result<(f64, P)>;
}

impl<P, F> Objective<P> for F
where
    F: Fn(&P) -> Result<(f64, P)>,
{
    fn loss_and_grad(&self, params: &P) -> Result<(f64, P)> {
        self(params)
    }
}

/// Mean cross-entropy of a [`ModelParams`] network over a fixed batch.
pub struct BatchLoss<'a> {
    pub batch: &'a [(&'a PatchInput, usize)],
}

impl Objective<ModelParams> for BatchLoss<'_> {
    fn loss_and_grad(&self, params: &ModelParams) -> Result<(f64, ModelParams)> {
        params.loss_and_grad(self.batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamHyper {
    pub rho: f64,
}

impl SamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(invalid("rho", "must be non-negative"));
        }
        Ok(())
    }
}

/// Momentum buffer, flat and shaped like the optimized parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub velocity: Vec64,
}

impl OptState {
    pub fn for_params<P: FlatParams>(params: &P) -> Self {
        Self { velocity: Vec64::zeros(params.as_flat().len()) }
    }
}

/// `initial_lr · gamma^⌊epoch / step_size⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub step_size: usize,
    pub gamma: f64,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(invalid("lr", "must be positive"));
        }
        if self.step_size < 1 {
            return Err(invalid("step_size", "must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("gamma", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.initial_lr * libm::pow(self.gamma, (epoch / self.step_size) as f64)
    }
}

/// One momentum-SGD update: `g̃ = g + wd·w; v ← μv + g̃; w ← w − lr·v`.
pub fn sgd_step<P: FlatParams>(
    params: &mut P,
    grads: &P,
    state: &mut OptState,
    hyper: &SgdHyper,
) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(Error::Shape("gradient does not match parameters"));
    }
    let n = params.as_flat().len();
    if state.velocity.len() != n {
        return Err(Error::Shape("optimizer state does not match parameters"));
    }
    let mut velocity = core::mem::take(&mut state.velocity).into_inner();
    for ((w, g), v) in params.as_flat_mut().iter_mut().zip(grads.as_flat()).zip(velocity.iter_mut()) {
        let g_eff = g + hyper.weight_decay * *w;
        *v = hyper.momentum * *v + g_eff;
        *w -= hyper.lr * *v;
    }
    state.velocity = Vec64::from_raw(velocity);
    Ok(())
}

/// One SAM update. Computes `g₁ = ∇L(w)`, perturbs to `w + ρ g₁/‖g₁‖₂`,
/// takes `g₂` there, and applies [`sgd_step`] at the original `w` with `g₂`.
/// Returns the loss at the perturbed point.
pub fn sam_step<P: FlatParams, O: Objective<P> + ?Sized>(
    params: &mut P,
    state: &mut OptState,
    sgd: &SgdHyper,
    sam: &SamHyper,
    objective: &O,
) -> Result<f64> {
    let (loss, g1) = objective.loss_and_grad(params)?;
    let norm = libm::sqrt(g1.as_flat().iter().map(|g| g * g).sum::<f64>());
    let (loss_perturbed, g2) = if sam.rho == 0.0 || norm < SAM_GRAD_NORM_FLOOR {
        (loss, g1)
    } else {
        let mut perturbed = params.clone();
        let scale = sam.rho / norm;
        for (w, g) in perturbed.as_flat_mut().iter_mut().zip(g1.as_flat()) {
            *w += scale * g;
        }
        objective.loss_and_grad(&perturbed)?
    };
    sgd_step(params, &g2, state, sgd)?;
    Ok(loss_perturbed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Sam(SamHyper),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub optimizer: Optimizer,
    /// Stop after the first epoch whose full-data loss is at or below this.
    pub stop_at_loss: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        self.schedule.validate()?;
        self.hyper(0).validate()?;
        if let Optimizer::Sam(sam) = self.optimizer {
            sam.validate()?;
        }
        Ok(())
    }

    fn hyper(&self, epoch: usize) -> SgdHyper {
        SgdHyper {
            lr: self.schedule.lr_at(epoch),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean cross-entropy over the full dataset after the last epoch.
    pub final_loss: f64,
    pub epochs_run: usize,
}

/// Shuffled mini-batch training. Deterministic for a given RNG state.
pub fn train<R: rand::Rng + ?Sized>(
    mut params: ModelParams,
    dataset: &[(&PatchInput, usize)],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    cfg.validate()?;
    let mut state = OptState::for_params(&params);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut batch: Vec<(&PatchInput, usize)> = Vec::with_capacity(cfg.batch_size);
    let mut epochs_run = 0;
    let mut last_loss = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let hyper = cfg.hyper(epoch);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i]));
            let objective = BatchLoss { batch: &batch };
            match cfg.optimizer {
                Optimizer::Sgd => {
                    let (_, grads) = objective.loss_and_grad(&params)?;
                    sgd_step(&mut params, &grads, &mut state, &hyper)?;
                }
                Optimizer::Sam(sam) => {
                    sam_step(&mut params, &mut state, &hyper, &sam, &objective)?;
                }
            }
        }
        epochs_run = epoch + 1;
        if let Some(target) = cfg.stop_at_loss {
            let loss = params.loss(dataset)?;
            last_loss = Some(loss);
            if loss <= target {
                break;
            }
        }
    }
    if params.as_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trained parameters"));
    }
    let final_loss = match last_loss {
        Some(l) => l,
        None => params.loss(dataset)?,
    };
    Ok(TrainOutcome { params, final_loss, epochs_run })
}
