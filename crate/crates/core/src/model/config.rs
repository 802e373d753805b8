use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::token_grid::{GridSchema, StreamRole, StreamSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub temporal_layers: usize,
    pub depth_layers: usize,
    pub max_frames: usize,
    pub schema: GridSchema,
    pub seed: u64,
}

impl ModelConfig {
    /// Default sizes (d_model 128, 4 heads, 4 temporal and 2 depth layers,
    /// 2048 frames) over `schema`.
    pub fn new(schema: GridSchema) -> Self {
        ModelConfig {
            d_model: 128,
            n_heads: 4,
            temporal_layers: 4,
            depth_layers: 2,
            max_frames: 2048,
            schema,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Invalid(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_frames == 0 {
            return Err(Error::Invalid("max_frames must be at least 1".into()));
        }
        if self.schema.text_streams().is_empty() || self.schema.audio_streams().len() < 2 {
            return Err(Error::Schema(
                "model needs at least one text stream and two audio streams".into(),
            ));
        }
        self.schema.validate()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Length of the depth sequence: the projected temporal state, the text
    /// tokens, and every audio token except the last.
    pub fn depth_positions(&self) -> usize {
        self.schema.text_streams().len() + self.schema.audio_streams().len()
    }
}

/// Loss weights per token class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub text: f64,
    pub semantic: f64,
    pub acoustic: f64,
    /// Multiplier on the text weight when the target is PAD.
    pub pad_factor: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            text: 100.0,
            semantic: 100.0,
            acoustic: 1.0,
            pad_factor: 0.5,
        }
    }
}

impl LossWeights {
    pub fn uniform() -> Self {
        LossWeights {
            text: 1.0,
            semantic: 1.0,
            acoustic: 1.0,
            pad_factor: 1.0,
        }
    }

    /// Weight of predicting `token` on `spec`; `None` for INITIAL filler,
    /// which is never a target.
    pub fn token_weight(&self, spec: &StreamSpec, token: u32) -> Option<f64> {
        if token == spec.initial_id {
            return None;
        }
        Some(match spec.role {
            StreamRole::Text if spec.pad_id == Some(token) => self.text * self.pad_factor,
            StreamRole::Text => self.text,
            StreamRole::SemanticAudio => self.semantic,
            StreamRole::AcousticAudio => self.acoustic,
        })
    }

    fn validate(&self) -> Result<()> {
        let all = [self.text, self.semantic, self.acoustic, self.pad_factor];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub warmup_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Samples per optimization step.
    pub batch_size: usize,
    /// Maximum frames per sample; longer grids are windowed.
    pub batch_frames: usize,
    pub pad_loss_factor: f64,
    pub w_text: f64,
    pub w_semantic: f64,
    pub w_acoustic: f64,
    /// Learning rate of the temporal group (temporal stack, embeddings and
    /// Text Linear); `lr_max` when absent.
    pub temporal_lr: Option<f64>,
    /// Learning rate of the depth group; `lr_max` when absent.
    pub depth_lr: Option<f64>,
    pub epochs: usize,
    /// Fixed number of steps; overrides `epochs` when set.
    pub steps: Option<u64>,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl TrainConfig {
    /// Pre-training hyperparameters.
    pub fn pretrain() -> Self {
        TrainConfig {
            lr_max: 3e-5,
            warmup_steps: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.95,
            adam_eps: 1e-5,
            weight_decay: 0.1,
            batch_size: 16,
            batch_frames: 2048,
            pad_loss_factor: 0.5,
            w_text: 100.0,
            w_semantic: 100.0,
            w_acoustic: 1.0,
            temporal_lr: None,
            depth_lr: None,
            epochs: 1,
            steps: None,
            checkpoint_every: 500,
        }
    }

    /// Stereo fine-tuning: separate temporal and depth learning rates.
    pub fn finetune() -> Self {
        TrainConfig {
            temporal_lr: Some(2e-6),
            depth_lr: Some(4e-6),
            epochs: 3,
            ..Self::pretrain()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            text: self.w_text,
            semantic: self.w_semantic,
            acoustic: self.w_acoustic,
            pad_factor: self.pad_loss_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        if self.warmup_steps == 0 {
            return Err(Error::Invalid("warmup_steps must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_frames < 2 {
            return Err(Error::Invalid("batch_size must be positive and batch_frames at least 2".into()));
        }
        let rates = [Some(self.lr_max), self.temporal_lr, self.depth_lr];
        if rates.iter().flatten().any(|lr| !(lr.is_finite() && *lr >= 0.0)) {
            return Err(Error::Invalid("learning rates must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Invalid("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
