//! Hierarchical transformer over token grids: a temporal transformer across
//! frames and a small depth transformer across the streams of one frame.
//!
//! All math is in `f64` with hand-written backpropagation.

mod block;
pub mod checkpoint;
mod config;
mod forward;
mod gradcheck;
mod infer;
mod ops;
mod optim;
mod params;

use ndarray::Array2;

pub use config::{LossWeights, ModelConfig, TrainConfig};
pub use forward::{weight_total, LossReport, StreamLoss};
pub use gradcheck::{grad_check, GroupCheck};
pub use infer::{DepthDecoder, TemporalDecoder};
pub use optim::{group_lrs, lr_at, planned_steps, sample_batch, train, train_step, AdamW, StepStats};
pub use params::{ParamGroup, ParamId, ParamInfo, Params};

use crate::error::{Error, Result};
use params::Layout;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Params,
}

impl Model {
    /// Freshly initialized model; every tensor is drawn from a generator
    /// keyed by `config.seed` and the tensor's name.
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = layout.init_params(config.seed);
        Ok(Model {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn param_infos(&self) -> &[ParamInfo] {
        &self.layout.infos
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.layout.find(name)
    }

    pub fn param(&self, name: &str) -> Option<&Array2<f64>> {
        self.param_id(name).map(|id| &self.params[id])
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn zero_grads(&self) -> Params {
        Params::zeros(&self.layout.infos)
    }

    /// Names of the parameters tied to the text vocabulary.
    pub fn text_vocab_param_names(&self) -> Vec<String> {
        self.layout
            .text_vocab_params()
            .into_iter()
            .map(|id| self.layout.infos[id.0].name.clone())
            .collect()
    }
}

/// A model plus its optimizer moments and update count.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub model: Model,
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl ModelState {
    pub fn new(model: Model) -> Self {
        let m = model.zero_grads();
        let v = model.zero_grads();
        ModelState { model, m, v, step: 0 }
    }

    pub fn init(config: ModelConfig) -> Result<Self> {
        Ok(Self::new(Model::new(config)?))
    }
}

/// Replace the text vocabulary. Temporal and depth text embeddings and the
/// Text Linear heads are re-drawn from `seed`, and their optimizer moments
/// are reset; every other tensor and moment is kept.
pub fn swap_text_vocab(state: &ModelState, text_vocab: u32, seed: u64) -> Result<ModelState> {
    let old = &state.model;
    let schema = old.config.schema.with_text_vocab(text_vocab)?;
    let config = ModelConfig {
        schema,
        ..old.config.clone()
    };
    config.validate()?;
    let layout = Layout::new(&config);
    if layout.infos.len() != old.layout.infos.len() {
        return Err(Error::Schema("vocabulary swap changed the parameter layout".into()));
    }
    let fresh: Vec<ParamId> = layout.text_vocab_params();
    let mut params = Vec::with_capacity(layout.infos.len());
    let mut m = Vec::with_capacity(layout.infos.len());
    let mut v = Vec::with_capacity(layout.infos.len());
    for (i, info) in layout.infos.iter().enumerate() {
        let id = ParamId(i);
        if fresh.contains(&id) {
            params.push(layout.init_tensor(id, seed));
            m.push(Array2::zeros(info.shape));
            v.push(Array2::zeros(info.shape));
        } else {
            params.push(old.params[id].clone());
            m.push(state.m[id].clone());
            v.push(state.v[id].clone());
        }
    }
    Ok(ModelState {
        model: Model {
            config,
            layout,
            params: Params::from_tensors(params),
        },
        m: Params::from_tensors(m),
        v: Params::from_tensors(v),
        step: state.step,
    })
}
