//! Little-endian binary grid format:
//!
//! ```text
//! magic "JMGR" | version u16 = 1 | stream_count u16
//! per stream: role u8 | channel u8 | delay u16 | vocab u32 | pad_id u32 (0xFFFFFFFF if absent) | initial_id u32
//! delayed u8 | length T u64 | tokens u32, time-major
//! ```
//!
//! Decoding accepts only the canonical dialogue and TTS layouts, so any
//! corruption of the header is reported rather than producing a different
//! grid.

use super::schema::{build_schema, SchemaKind, StreamRole};
use super::{Channel, GridSchema, TokenGrid};
use crate::error::{Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"JMGR";
pub const GRID_VERSION: u16 = 1;
const NO_PAD: u32 = u32::MAX;

pub(super) fn encode(grid: &TokenGrid) -> Vec<u8> {
    let schema = grid.schema();
    let mut out = Vec::with_capacity(4 + 4 + schema.len() * 16 + 9 + grid.tokens.len() * 4);
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
    out.extend_from_slice(&(schema.len() as u16).to_le_bytes());
    for spec in &schema.streams {
        out.push(spec.role.code());
        out.push(spec.channel.code());
        out.extend_from_slice(&(spec.delay as u16).to_le_bytes());
        out.extend_from_slice(&spec.vocab_size.to_le_bytes());
        out.extend_from_slice(&spec.pad_id.unwrap_or(NO_PAD).to_le_bytes());
        out.extend_from_slice(&spec.initial_id.to_le_bytes());
    }
    out.push(u8::from(grid.is_delayed()));
    out.extend_from_slice(&(grid.len() as u64).to_le_bytes());
    for tok in &grid.tokens {
        out.extend_from_slice(&tok.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(Error::Format(format!("truncated payload while reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

struct RawStream {
    role: StreamRole,
    channel: Channel,
    delay: u16,
    vocab: u32,
    pad: u32,
    initial: u32,
}

pub(super) fn decode(bytes: &[u8]) -> Result<TokenGrid> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != GRID_MAGIC {
        return Err(Error::Format("bad magic, not a grid file".into()));
    }
    let version = r.u16("version")?;
    if version != GRID_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version} (expected {GRID_VERSION})"
        )));
    }
    let count = r.u16("stream count")? as usize;
    let mut raw = Vec::with_capacity(count);
    for i in 0..count {
        let role = r.u8("role")?;
        let role = StreamRole::from_code(role)
            .ok_or_else(|| Error::Format(format!("stream {i}: unknown role {role}")))?;
        let channel = r.u8("channel")?;
        let channel = Channel::from_code(channel)
            .ok_or_else(|| Error::Format(format!("stream {i}: unknown channel {channel}")))?;
        raw.push(RawStream {
            role,
            channel,
            delay: r.u16("delay")?,
            vocab: r.u32("vocab")?,
            pad: r.u32("pad id")?,
            initial: r.u32("initial id")?,
        });
    }
    let schema = canonical_schema(&raw)?;
    let delayed = match r.u8("delayed flag")? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("invalid delayed flag {other}"))),
    };
    let len = r.u64("length")?;
    let cells = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_mul(count))
        .ok_or_else(|| Error::Format(format!("implausible length {len}")))?;
    let payload_bytes = cells
        .checked_mul(4)
        .ok_or_else(|| Error::Format(format!("implausible length {len}")))?;
    let payload = r.take(payload_bytes, "tokens")?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after token payload",
            bytes.len() - r.pos
        )));
    }
    let tokens = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    TokenGrid::new(schema, tokens, delayed).map_err(|e| Error::Format(e.to_string()))
}

fn canonical_schema(raw: &[RawStream]) -> Result<GridSchema> {
    let kind = match raw.len() {
        17 => SchemaKind::Dialogue,
        18 => SchemaKind::Tts,
        n => return Err(Error::Format(format!("unsupported stream count {n}"))),
    };
    let vocab_of = |role: StreamRole| {
        raw.iter()
            .find(|s| s.role == role)
            .map(|s| s.vocab)
            .ok_or_else(|| Error::Format(format!("no {role:?} stream in header")))
    };
    let schema = build_schema(
        kind,
        vocab_of(StreamRole::Text)?,
        vocab_of(StreamRole::SemanticAudio)?,
        vocab_of(StreamRole::AcousticAudio)?,
    )
    .map_err(|e| Error::Format(e.to_string()))?;
    for (i, (spec, got)) in schema.streams.iter().zip(raw).enumerate() {
        let matches = spec.role == got.role
            && spec.channel == got.channel
            && spec.delay == got.delay as usize
            && spec.vocab_size == got.vocab
            && spec.pad_id.unwrap_or(NO_PAD) == got.pad
            && spec.initial_id == got.initial;
        if !matches {
            return Err(Error::Format(format!(
                "stream {i} header does not match the canonical {kind:?} layout"
            )));
        }
    }
    Ok(schema)
}
