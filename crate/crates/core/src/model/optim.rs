//! AdamW, the warmup schedule and the training loop.

use log::info;
use ndarray::{Array2, Zip};
use rand::Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::forward::{weight_total, LossReport};
use super::params::{ParamGroup, Params};
use super::ModelState;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::token_grid::TokenGrid;

/// Learning rate of the `step`-th update (1-based): linear warmup to
/// `lr_max` over `warmup` updates, then constant.
pub fn lr_at(step: u64, lr_max: f64, warmup: u64) -> f64 {
    if warmup == 0 {
        return lr_max;
    }
    lr_max * (step as f64 / warmup as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        AdamW {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        }
    }

    /// Apply the `t`-th update (1-based) to one tensor.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &self,
        param: &mut Array2<f64>,
        grad: &Array2<f64>,
        m: &mut Array2<f64>,
        v: &mut Array2<f64>,
        lr: f64,
        t: u64,
        decay: bool,
    ) {
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        let shrink = if decay { 1.0 - lr * self.weight_decay } else { 1.0 };
        Zip::from(param).and(grad).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p = *p * shrink - lr * mhat / (vhat.sqrt() + self.eps);
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub lr_temporal: f64,
    pub lr_depth: f64,
    pub loss: LossReport,
}

/// Learning rates of the temporal and depth groups at update `step`.
pub fn group_lrs(cfg: &TrainConfig, step: u64) -> (f64, f64) {
    let t = cfg.temporal_lr.unwrap_or(cfg.lr_max);
    let d = cfg.depth_lr.unwrap_or(cfg.lr_max);
    (lr_at(step, t, cfg.warmup_steps), lr_at(step, d, cfg.warmup_steps))
}

fn all_finite(p: &Params) -> bool {
    p.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
}

/// One optimization step over `batch`. The loss is normalized by the total
/// weight of the whole batch.
pub fn train_step(state: &mut ModelState, batch: &[TokenGrid], cfg: &TrainConfig) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let weights = cfg.loss_weights();
    let total_weight: f64 = batch.iter().map(|g| weight_total(g, &weights)).sum();
    let model = &state.model;
    let infos = &model.layout.infos;
    let results: Vec<Result<(LossReport, Params)>> = batch
        .par_iter()
        .map(|grid| {
            let mut g = Params::zeros(infos);
            let r = model.loss_and_grad(grid, &weights, total_weight, &mut g)?;
            Ok((r, g))
        })
        .collect();
    let mut grads = Params::zeros(infos);
    let mut reports = Vec::with_capacity(batch.len());
    for r in results {
        let (report, g) = r?;
        grads.add_assign(&g);
        reports.push(report);
    }
    let loss = LossReport::merge(&reports);
    if !loss.total.is_finite() || !all_finite(&grads) {
        return Err(Error::Numeric(format!(
            "non-finite loss or gradient at step {}",
            state.step + 1
        )));
    }

    state.step += 1;
    let (lr_t, lr_d) = group_lrs(cfg, state.step);
    let opt = AdamW::from_config(cfg);
    let infos = state.model.layout.infos.clone();
    let params = state.model.params.tensors_mut();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    for (i, info) in infos.iter().enumerate() {
        let lr = match info.group {
            ParamGroup::Temporal => lr_t,
            ParamGroup::Depth => lr_d,
        };
        opt.update(&mut params[i], &grads.tensors()[i], &mut m[i], &mut v[i], lr, state.step, info.decay);
    }
    if !all_finite(&state.model.params) {
        return Err(Error::Numeric(format!("non-finite parameters after step {}", state.step)));
    }
    Ok(StepStats {
        step: state.step,
        lr_temporal: lr_t,
        lr_depth: lr_d,
        loss,
    })
}

/// Batch for update `step` (1-based): grids drawn with replacement and
/// windows of at most `batch_frames`, both derived from `(seed, step)` so a
/// resumed run draws the same batches.
pub fn sample_batch(data: &[TokenGrid], cfg: &TrainConfig, max_frames: usize, seed: u64, step: u64) -> Result<Vec<TokenGrid>> {
    if data.is_empty() {
        return Err(Error::Invalid("no training grids".into()));
    }
    let window = cfg.batch_frames.min(max_frames);
    let mut rng = seeded(derive_seed(seed, step));
    (0..cfg.batch_size)
        .map(|_| {
            let grid = &data[rng.random_range(0..data.len())];
            if grid.len() <= window {
                return Ok(grid.clone());
            }
            let start = rng.random_range(0..=grid.len() - window);
            grid.slice(start, start + window)
        })
        .collect()
}

/// Number of updates: `cfg.steps` if set, otherwise enough windows to cover
/// the data `cfg.epochs` times.
pub fn planned_steps(data: &[TokenGrid], cfg: &TrainConfig, max_frames: usize) -> u64 {
    if let Some(steps) = cfg.steps {
        return steps;
    }
    let frames: usize = data.iter().map(TokenGrid::len).sum();
    let per_step = cfg.batch_size * cfg.batch_frames.min(max_frames);
    (cfg.epochs * frames.div_ceil(per_step)) as u64
}

/// Train until the planned number of updates, continuing from `state.step`.
/// `on_step` runs after every update.
pub fn train<F>(state: &mut ModelState, data: &[TokenGrid], cfg: &TrainConfig, mut on_step: F) -> Result<Vec<StepStats>>
where
    F: FnMut(&ModelState, &StepStats) -> Result<()>,
{
    cfg.validate()?;
    let total = planned_steps(data, cfg, state.model.config.max_frames);
    let seed = state.model.config.seed;
    let mut history = Vec::new();
    while state.step < total {
        let batch = sample_batch(data, cfg, state.model.config.max_frames, seed, state.step + 1)?;
        let stats = train_step(state, &batch, cfg)?;
        if stats.step % 50 == 0 || stats.step == total {
            info!("step {} loss {:.4} lr {:.2e}", stats.step, stats.loss.total, stats.lr_temporal);
        }
        on_step(state, &stats)?;
        history.push(stats);
    }
    Ok(history)
}
