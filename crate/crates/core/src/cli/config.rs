use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::SplitRatios;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::{ModelConfig, TrainConfig};
use crate::synth::SynthConfig;
use crate::token_grid::{GridSchema, SchemaKind};

/// Vocabulary sizes of the grids built by `prep` (reserved ids included).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaSection {
    pub kind: SchemaKind,
    pub text_vocab: u32,
    pub semantic_vocab: u32,
    pub acoustic_vocab: u32,
}

impl Default for SchemaSection {
    fn default() -> Self {
        SchemaSection {
            kind: SchemaKind::Dialogue,
            text_vocab: 32_000,
            semantic_vocab: 32_002,
            acoustic_vocab: 2_049,
        }
    }
}

impl SchemaSection {
    pub fn build(&self) -> Result<GridSchema> {
        crate::token_grid::build_schema(self.kind, self.text_vocab, self.semantic_vocab, self.acoustic_vocab)
    }
}

/// Model sizes; the schema comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub temporal_layers: usize,
    pub depth_layers: usize,
    pub max_frames: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(GridSchema::dialogue(4, 6, 4).expect("valid"));
        ModelSection {
            d_model: m.d_model,
            n_heads: m.n_heads,
            temporal_layers: m.temporal_layers,
            depth_layers: m.depth_layers,
            max_frames: m.max_frames,
        }
    }
}

impl ModelSection {
    pub fn config(&self, schema: GridSchema, seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            temporal_layers: self.temporal_layers,
            depth_layers: self.depth_layers,
            max_frames: self.max_frames,
            schema,
            seed,
        }
    }
}

/// Everything a command may read from `--config`, after flag overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub schema: SchemaSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub split: SplitRatios,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            schema: SchemaSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::pretrain(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
            split: SplitRatios::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
