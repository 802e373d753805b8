//! Incremental decoding with per-layer key/value caches.

use ndarray::{Array1, ArrayView1};

use super::block::{block_step, KvCache};
use super::ops::{position_encoding, rms_norm_vec};
use super::Model;
use crate::error::{Error, Result};

/// Runs the temporal transformer one frame at a time.
pub struct TemporalDecoder<'m> {
    model: &'m Model,
    caches: Vec<KvCache>,
    pos: usize,
}

impl<'m> TemporalDecoder<'m> {
    pub fn new(model: &'m Model) -> Self {
        TemporalDecoder {
            model,
            caches: vec![KvCache::new(); model.layout.temporal.len()],
            pos: 0,
        }
    }

    /// Number of context vectors produced so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Context vector for the next frame. The first call takes `None`; every
    /// later call takes the tokens of the frame just completed.
    pub fn step(&mut self, prev_frame: Option<&[u32]>) -> Result<Array1<f64>> {
        let m = self.model;
        let p = &m.params;
        let l = &m.layout;
        if self.pos >= m.config.max_frames {
            return Err(Error::Invalid(format!(
                "model context of {} frames exhausted",
                m.config.max_frames
            )));
        }
        let mut x = position_encoding(self.pos, m.config.d_model);
        match (self.pos, prev_frame) {
            (0, None) => x += &p[l.start].row(0),
            (0, Some(_)) => return Err(Error::Invalid("first temporal step takes no frame".into())),
            (_, None) => return Err(Error::Invalid("temporal step needs the previous frame".into())),
            (_, Some(frame)) => {
                let specs = &m.config.schema.streams;
                if frame.len() != specs.len() {
                    return Err(Error::Invalid(format!(
                        "frame has {} tokens, schema has {} streams",
                        frame.len(),
                        specs.len()
                    )));
                }
                for (s, (&tok, spec)) in frame.iter().zip(specs).enumerate() {
                    if tok >= spec.vocab_size {
                        return Err(Error::Invalid(format!("token {tok} outside vocabulary of {}", spec.name)));
                    }
                    x += &p[l.stream_emb[s]].row(tok as usize);
                }
            }
        }
        for (ids, cache) in l.temporal.iter().zip(&mut self.caches) {
            x = block_step(p, ids, &x, cache, m.config.n_heads);
        }
        self.pos += 1;
        Ok(rms_norm_vec(x.view(), &p[l.temporal_norm]))
    }
}

/// Runs the depth transformer over one frame: text tokens first, then audio
/// tokens in depth order.
pub struct DepthDecoder<'m> {
    model: &'m Model,
    caches: Vec<KvCache>,
    fed: usize,
    last: Array1<f64>,
}

impl<'m> DepthDecoder<'m> {
    pub fn new(model: &'m Model, z: ArrayView1<f64>) -> Self {
        let p = &model.params;
        let l = &model.layout;
        let x = z.dot(&p[l.depth_in]) + p[l.depth_pos].row(0);
        let mut dec = DepthDecoder {
            model,
            caches: vec![KvCache::new(); l.depth.len()],
            fed: 0,
            last: Array1::zeros(0),
        };
        dec.run(x);
        dec
    }

    fn run(&mut self, mut x: Array1<f64>) {
        let m = self.model;
        for (ids, cache) in m.layout.depth.iter().zip(&mut self.caches) {
            x = block_step(&m.params, ids, &x, cache, m.config.n_heads);
        }
        self.last = x;
    }

    /// Tokens fed so far (text then audio).
    pub fn fed(&self) -> usize {
        self.fed
    }

    /// Feed the next token of the frame.
    pub fn push(&mut self, token: u32) -> Result<()> {
        let m = self.model;
        let l = &m.layout;
        let n_text = l.text_streams.len();
        let table = if self.fed < n_text {
            l.depth_text_emb[self.fed]
        } else if self.fed - n_text < l.depth_audio_emb.len() {
            l.depth_audio_emb[self.fed - n_text]
        } else {
            return Err(Error::Invalid("depth sequence is already complete".into()));
        };
        let emb = &m.params[table];
        if token as usize >= emb.nrows() {
            return Err(Error::Invalid(format!("token {token} outside vocabulary")));
        }
        let x = &emb.row(token as usize) + &m.params[l.depth_pos].row(self.fed + 1);
        self.fed += 1;
        self.run(x);
        Ok(())
    }

    /// Logits of the next audio stream, available once every text token has
    /// been fed.
    pub fn audio_logits(&self) -> Result<Array1<f64>> {
        let l = &self.model.layout;
        let n_text = l.text_streams.len();
        if self.fed < n_text || self.fed - n_text >= l.audio_heads.len() {
            return Err(Error::Invalid(format!(
                "no audio logits after {} depth tokens",
                self.fed
            )));
        }
        let head = &l.audio_heads[self.fed - n_text];
        let y = rms_norm_vec(self.last.view(), &self.model.params[l.depth_norm]);
        Ok(y.dot(&self.model.params[head.weight]) + self.model.params[head.bias].row(0))
    }
}

impl Model {
    pub fn temporal_decoder(&self) -> TemporalDecoder<'_> {
        TemporalDecoder::new(self)
    }

    pub fn depth_decoder(&self, z: ArrayView1<f64>) -> DepthDecoder<'_> {
        DepthDecoder::new(self, z)
    }

    /// Logits of audio stream `prefix.len() - n_text` given the context
    /// vector and the frame's tokens so far (text first, then audio).
    pub fn depth_logits(&self, z: ArrayView1<f64>, prefix: &[u32]) -> Result<Array1<f64>> {
        let mut dec = self.depth_decoder(z);
        for &tok in prefix {
            dec.push(tok)?;
        }
        dec.audio_logits()
    }
}
