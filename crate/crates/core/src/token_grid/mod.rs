//! Multi-stream token grids.
//!
//! A [`TokenGrid`] is a `T × S` time-major matrix of token ids over a
//! [`GridSchema`]. Per-stream delays are applied by shifting a stream right
//! and dropping its tail, so a grid keeps its length through
//! [`TokenGrid::apply_delays`] and [`TokenGrid::remove_delays`].

mod format;
mod schema;

pub use format::{GRID_MAGIC, GRID_VERSION};
pub use schema::{
    build_schema, Channel, GridSchema, SchemaKind, StreamRole, StreamSpec, CODEC_LAYERS,
    DIALOGUE_ACOUSTIC_DELAY, MIN_VOCAB, TTS_ACOUSTIC_DELAY, TTS_SEMANTIC_DELAY,
};

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    schema: GridSchema,
    len: usize,
    tokens: Vec<u32>,
    delayed: bool,
}

impl TokenGrid {
    /// Build a grid from time-major tokens (`frame 0 streams 0..S-1`, ...).
    pub fn new(schema: GridSchema, tokens: Vec<u32>, delayed: bool) -> Result<Self> {
        let width = schema.len();
        if width == 0 {
            return Err(Error::Grid("schema has no streams".into()));
        }
        if tokens.len() % width != 0 {
            return Err(Error::Grid(format!(
                "{} tokens do not fill whole frames of {width} streams",
                tokens.len()
            )));
        }
        let len = tokens.len() / width;
        for (i, &tok) in tokens.iter().enumerate() {
            let spec = &schema.streams[i % width];
            if tok >= spec.vocab_size {
                return Err(Error::Grid(format!(
                    "token {tok} at frame {} of {} exceeds vocabulary {}",
                    i / width,
                    spec.name,
                    spec.vocab_size
                )));
            }
        }
        Ok(TokenGrid {
            schema,
            len,
            tokens,
            delayed,
        })
    }

    /// Build a grid from one token sequence per stream.
    pub fn from_streams(schema: GridSchema, streams: &[Vec<u32>], delayed: bool) -> Result<Self> {
        if streams.len() != schema.len() {
            return Err(Error::Grid(format!(
                "expected {} streams, got {}",
                schema.len(),
                streams.len()
            )));
        }
        let len = streams.first().map_or(0, Vec::len);
        if let Some(bad) = streams.iter().position(|s| s.len() != len) {
            return Err(Error::Grid(format!(
                "stream {bad} has {} frames, expected {len}",
                streams[bad].len()
            )));
        }
        let mut tokens = Vec::with_capacity(len * streams.len());
        for t in 0..len {
            tokens.extend(streams.iter().map(|s| s[t]));
        }
        Self::new(schema, tokens, delayed)
    }

    /// A grid of `len` frames where every stream holds its INITIAL token.
    pub fn filled_initial(schema: GridSchema, len: usize, delayed: bool) -> Self {
        let frame: Vec<u32> = schema.streams.iter().map(|s| s.initial_id).collect();
        let tokens = frame.iter().copied().cycle().take(len * frame.len()).collect();
        TokenGrid {
            schema,
            len,
            tokens,
            delayed,
        }
    }

    pub fn empty(schema: GridSchema, delayed: bool) -> Self {
        Self::filled_initial(schema, 0, delayed)
    }

    pub fn schema(&self) -> &GridSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> usize {
        self.schema.len()
    }

    pub fn is_delayed(&self) -> bool {
        self.delayed
    }

    pub fn duration_s(&self) -> f64 {
        crate::frames_to_seconds(self.len)
    }

    pub fn get(&self, frame: usize, stream: usize) -> u32 {
        self.tokens[frame * self.width() + stream]
    }

    pub fn frame(&self, frame: usize) -> &[u32] {
        let w = self.width();
        &self.tokens[frame * w..(frame + 1) * w]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[u32]> {
        self.tokens.chunks_exact(self.width())
    }

    pub fn stream(&self, stream: usize) -> Vec<u32> {
        self.frames().map(|f| f[stream]).collect()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Shift every stream right by its delay, filling the head with
    /// INITIAL and dropping the last `delay` tokens.
    pub fn apply_delays(&self) -> Result<TokenGrid> {
        if self.delayed {
            return Err(Error::Grid("grid is already delayed".into()));
        }
        Ok(self.shifted(|t, delay| t.checked_sub(delay), true))
    }

    /// Shift every stream left by its delay; the trailing `delay` positions
    /// whose source tokens were dropped hold INITIAL.
    pub fn remove_delays(&self) -> Result<TokenGrid> {
        if !self.delayed {
            return Err(Error::Grid("grid is not delayed".into()));
        }
        let len = self.len;
        Ok(self.shifted(|t, delay| Some(t + delay).filter(|&src| src < len), false))
    }

    fn shifted(&self, source: impl Fn(usize, usize) -> Option<usize>, delayed: bool) -> TokenGrid {
        let w = self.width();
        let mut tokens = Vec::with_capacity(self.tokens.len());
        for t in 0..self.len {
            for (s, spec) in self.schema.streams.iter().enumerate() {
                tokens.push(match source(t, spec.delay) {
                    Some(src) => self.tokens[src * w + s],
                    None => spec.initial_id,
                });
            }
        }
        TokenGrid {
            schema: self.schema.clone(),
            len: self.len,
            tokens,
            delayed,
        }
    }

    /// Fraction of frames whose self-channel text token is PAD; 0 for an
    /// empty grid.
    pub fn pad_ratio(&self) -> Result<f64> {
        let idx = self
            .schema
            .text_stream(Channel::Model)
            .ok_or_else(|| Error::Schema("schema has no text stream".into()))?;
        if self.len == 0 {
            return Ok(0.0);
        }
        let pad = self.schema.streams[idx].pad_id.expect("text streams carry PAD");
        let count = self.frames().filter(|f| f[idx] == pad).count();
        Ok(count as f64 / self.len as f64)
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<TokenGrid> {
        if start > end || end > self.len {
            return Err(Error::Grid(format!(
                "slice [{start}, {end}) out of range for {} frames",
                self.len
            )));
        }
        let w = self.width();
        Ok(TokenGrid {
            schema: self.schema.clone(),
            len: end - start,
            tokens: self.tokens[start * w..end * w].to_vec(),
            delayed: self.delayed,
        })
    }

    pub fn concat(&self, other: &TokenGrid) -> Result<TokenGrid> {
        if self.schema != other.schema {
            return Err(Error::Grid("cannot concatenate grids with different schemas".into()));
        }
        if self.delayed != other.delayed {
            return Err(Error::Grid(
                "cannot concatenate a delayed grid with an undelayed one".into(),
            ));
        }
        let mut tokens = Vec::with_capacity(self.tokens.len() + other.tokens.len());
        tokens.extend_from_slice(&self.tokens);
        tokens.extend_from_slice(&other.tokens);
        Ok(TokenGrid {
            schema: self.schema.clone(),
            len: self.len + other.len,
            tokens,
            delayed: self.delayed,
        })
    }

    /// Append one frame. Used by generation, which grows grids in place.
    pub(crate) fn push_frame(&mut self, frame: &[u32]) {
        debug_assert_eq!(frame.len(), self.width());
        self.tokens.extend_from_slice(frame);
        self.len += 1;
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TokenGrid> {
        format::decode(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing grid {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TokenGrid> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading grid {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}
