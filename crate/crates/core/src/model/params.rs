//! Named parameter storage and the model's parameter layout.

use std::ops::{Index, IndexMut};

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::rng::{derive_seed, fnv1a, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Optimizer group: the temporal side (stream embeddings, temporal stack,
/// Text Linear) or the depth side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Temporal,
    Depth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: (usize, usize),
    pub group: ParamGroup,
    /// Whether decoupled weight decay applies (not to norm gains and biases).
    pub decay: bool,
    pub(crate) init: Init,
}

/// Tensors indexed by [`ParamId`]; also used for gradients and optimizer
/// moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn zeros(infos: &[ParamInfo]) -> Self {
        Params {
            tensors: infos.iter().map(|i| Array2::zeros(i.shape)).collect(),
        }
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub(crate) fn from_tensors(tensors: Vec<Array2<f64>>) -> Self {
        Params { tensors }
    }
}

impl Index<ParamId> for Params {
    type Output = Array2<f64>;

    fn index(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0]
    }
}

impl IndexMut<ParamId> for Params {
    fn index_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockIds {
    pub attn_norm: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub mlp_norm: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Head {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Where every parameter lives. Built deterministically from a config, so
/// two layouts over schemas of the same kind agree on names and order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub infos: Vec<ParamInfo>,
    pub text_streams: Vec<usize>,
    pub audio_streams: Vec<usize>,
    /// Temporal input embedding per schema stream.
    pub stream_emb: Vec<ParamId>,
    pub start: ParamId,
    pub temporal: Vec<BlockIds>,
    pub temporal_norm: ParamId,
    /// Text Linear per text stream.
    pub text_heads: Vec<Head>,
    pub depth_in: ParamId,
    pub depth_pos: ParamId,
    pub depth_text_emb: Vec<ParamId>,
    /// Depth input embeddings of audio streams, all but the last.
    pub depth_audio_emb: Vec<ParamId>,
    pub depth: Vec<BlockIds>,
    pub depth_norm: ParamId,
    pub audio_heads: Vec<Head>,
}

/// Standard deviation of embedding tables and output heads.
pub(crate) const SMALL_STD: f64 = 0.02;

struct Builder {
    infos: Vec<ParamInfo>,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), group: ParamGroup, init: Init) -> ParamId {
        let decay = shape.0 > 1 && matches!(init, Init::Normal(_));
        self.infos.push(ParamInfo {
            name,
            shape,
            group,
            decay,
            init,
        });
        ParamId(self.infos.len() - 1)
    }

    fn block(&mut self, prefix: &str, d: usize, layers: usize, group: ParamGroup) -> BlockIds {
        let std_in = 1.0 / (d as f64).sqrt();
        let std_out = std_in / (2.0 * layers as f64).sqrt();
        let hidden = 4 * d;
        BlockIds {
            attn_norm: self.add(format!("{prefix}.attn_norm"), (1, d), group, Init::Ones),
            wq: self.add(format!("{prefix}.wq"), (d, d), group, Init::Normal(std_in)),
            wk: self.add(format!("{prefix}.wk"), (d, d), group, Init::Normal(std_in)),
            wv: self.add(format!("{prefix}.wv"), (d, d), group, Init::Normal(std_in)),
            wo: self.add(format!("{prefix}.wo"), (d, d), group, Init::Normal(std_out)),
            mlp_norm: self.add(format!("{prefix}.mlp_norm"), (1, d), group, Init::Ones),
            w1: self.add(format!("{prefix}.w1"), (d, hidden), group, Init::Normal(std_in)),
            w2: self.add(
                format!("{prefix}.w2"),
                (hidden, d),
                group,
                Init::Normal(std_out / 2.0),
            ),
        }
    }
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Layout {
        use ParamGroup::{Depth, Temporal};
        let d = config.d_model;
        let schema = &config.schema;
        let text_streams = schema.text_streams();
        let audio_streams = schema.audio_streams();
        let mut b = Builder { infos: Vec::new() };

        let stream_emb = schema
            .streams
            .iter()
            .map(|s| {
                b.add(
                    format!("temporal.emb.{}", s.name),
                    (s.vocab_size as usize, d),
                    Temporal,
                    Init::Normal(SMALL_STD),
                )
            })
            .collect();
        let start = b.add("temporal.start".into(), (1, d), Temporal, Init::Normal(SMALL_STD));
        let temporal = (0..config.temporal_layers)
            .map(|i| b.block(&format!("temporal.block{i}"), d, config.temporal_layers, Temporal))
            .collect();
        let temporal_norm = b.add("temporal.norm".into(), (1, d), Temporal, Init::Ones);
        let text_heads = text_streams
            .iter()
            .map(|&s| {
                let spec = &schema.streams[s];
                let v = spec.vocab_size as usize;
                Head {
                    weight: b.add(
                        format!("text_linear.{}.weight", spec.name),
                        (d, v),
                        Temporal,
                        Init::Normal(SMALL_STD),
                    ),
                    bias: b.add(format!("text_linear.{}.bias", spec.name), (1, v), Temporal, Init::Zeros),
                }
            })
            .collect();

        let depth_in = b.add("depth.in_proj".into(), (d, d), Depth, Init::Normal(1.0 / (d as f64).sqrt()));
        let depth_pos = b.add(
            "depth.pos".into(),
            (config.depth_positions(), d),
            Depth,
            Init::Normal(SMALL_STD),
        );
        let depth_text_emb = text_streams
            .iter()
            .map(|&s| {
                let spec = &schema.streams[s];
                b.add(
                    format!("depth.emb.{}", spec.name),
                    (spec.vocab_size as usize, d),
                    Depth,
                    Init::Normal(SMALL_STD),
                )
            })
            .collect();
        let depth_audio_emb = audio_streams[..audio_streams.len() - 1]
            .iter()
            .map(|&s| {
                let spec = &schema.streams[s];
                b.add(
                    format!("depth.emb.{}", spec.name),
                    (spec.vocab_size as usize, d),
                    Depth,
                    Init::Normal(SMALL_STD),
                )
            })
            .collect();
        let depth = (0..config.depth_layers)
            .map(|i| b.block(&format!("depth.block{i}"), d, config.depth_layers, Depth))
            .collect();
        let depth_norm = b.add("depth.norm".into(), (1, d), Depth, Init::Ones);
        let audio_heads = audio_streams
            .iter()
            .map(|&s| {
                let spec = &schema.streams[s];
                let v = spec.vocab_size as usize;
                Head {
                    weight: b.add(
                        format!("depth.head.{}.weight", spec.name),
                        (d, v),
                        Depth,
                        Init::Normal(SMALL_STD),
                    ),
                    bias: b.add(format!("depth.head.{}.bias", spec.name), (1, v), Depth, Init::Zeros),
                }
            })
            .collect();

        Layout {
            infos: b.infos,
            text_streams,
            audio_streams,
            stream_emb,
            start,
            temporal,
            temporal_norm,
            text_heads,
            depth_in,
            depth_pos,
            depth_text_emb,
            depth_audio_emb,
            depth,
            depth_norm,
            audio_heads,
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.infos.iter().position(|i| i.name == name).map(ParamId)
    }

    /// Parameters tied to the text vocabulary: temporal and depth text
    /// embeddings and the Text Linear heads.
    pub fn text_vocab_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.text_streams.iter().map(|&s| self.stream_emb[s]).collect();
        ids.extend(self.depth_text_emb.iter().copied());
        for h in &self.text_heads {
            ids.push(h.weight);
            ids.push(h.bias);
        }
        ids
    }

    /// Draw one tensor. Every tensor has its own generator keyed by
    /// `(seed, name)`, so re-drawing a subset leaves the rest untouched.
    pub fn init_tensor(&self, id: ParamId, seed: u64) -> Array2<f64> {
        let info = &self.infos[id.0];
        match info.init {
            Init::Zeros => Array2::zeros(info.shape),
            Init::Ones => Array2::ones(info.shape),
            Init::Normal(std) => {
                let mut rng = seeded(derive_seed(seed, fnv1a(&info.name)));
                let normal = Normal::new(0.0, std).expect("finite std");
                Array2::from_shape_simple_fn(info.shape, || normal.sample(&mut rng))
            }
        }
    }

    pub fn init_params(&self, seed: u64) -> Params {
        Params::from_tensors(
            (0..self.infos.len())
                .map(|i| self.init_tensor(ParamId(i), seed))
                .collect(),
        )
    }
}
