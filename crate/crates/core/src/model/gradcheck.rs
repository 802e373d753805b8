//! Finite-difference check of the analytic gradients.

use super::config::LossWeights;
use super::params::{ParamGroup, Params};
use super::Model;
use crate::error::Result;
use crate::token_grid::TokenGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub scalars: usize,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)`, in L2 norm over
    /// the whole group.
    pub relative_error: f64,
}

/// Compare backprop against central differences of the loss for every
/// scalar parameter. Meant for tiny models.
pub fn grad_check(model: &Model, grid: &TokenGrid, weights: &LossWeights, step: f64) -> Result<Vec<GroupCheck>> {
    let base = model.loss(grid, weights)?;
    let normalizer = base.weight_sum;
    let mut analytic = Params::zeros(&model.layout.infos);
    model.loss_and_grad(grid, weights, normalizer, &mut analytic)?;

    let mut probe = model.clone();
    let mut out = Vec::new();
    for group in [ParamGroup::Temporal, ParamGroup::Depth] {
        let (mut diff, mut a_norm, mut n_norm, mut scalars) = (0.0, 0.0, 0.0, 0);
        for (i, info) in model.layout.infos.iter().enumerate() {
            if info.group != group {
                continue;
            }
            let len = model.params.tensors()[i].len();
            for j in 0..len {
                let orig = probe.params.tensors()[i].as_slice().unwrap()[j];
                probe.params.tensors_mut()[i].as_slice_mut().unwrap()[j] = orig + step;
                let up = probe.loss(grid, weights)?.total;
                probe.params.tensors_mut()[i].as_slice_mut().unwrap()[j] = orig - step;
                let down = probe.loss(grid, weights)?.total;
                probe.params.tensors_mut()[i].as_slice_mut().unwrap()[j] = orig;
                let numeric = (up - down) / (2.0 * step);
                let a = analytic.tensors()[i].as_slice().unwrap()[j];
                diff += (a - numeric).powi(2);
                a_norm += a * a;
                n_norm += numeric * numeric;
                scalars += 1;
            }
        }
        let denom = a_norm.sqrt().max(n_norm.sqrt()).max(1e-300);
        out.push(GroupCheck {
            group,
            scalars,
            relative_error: diff.sqrt() / denom,
        });
    }
    Ok(out)
}
