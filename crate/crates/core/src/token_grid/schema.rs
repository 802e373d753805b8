use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::FRAME_RATE_HZ;

/// Number of codec layers per channel (one semantic plus seven acoustic).
pub const CODEC_LAYERS: usize = 8;

/// Delay applied to acoustic streams in the dialogue schema, in frames.
pub const DIALOGUE_ACOUSTIC_DELAY: usize = 1;

/// Semantic and acoustic delays of the multi-stream TTS schema, in frames.
pub const TTS_SEMANTIC_DELAY: usize = 25;
pub const TTS_ACOUSTIC_DELAY: usize = 27;

/// Smallest vocabulary able to host the reserved ids of any stream.
pub const MIN_VOCAB: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamRole {
    Text,
    SemanticAudio,
    AcousticAudio,
}

impl StreamRole {
    pub fn code(self) -> u8 {
        match self {
            StreamRole::Text => 0,
            StreamRole::SemanticAudio => 1,
            StreamRole::AcousticAudio => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(StreamRole::Text),
            1 => Some(StreamRole::SemanticAudio),
            2 => Some(StreamRole::AcousticAudio),
            _ => None,
        }
    }

    pub fn is_audio(self) -> bool {
        self != StreamRole::Text
    }
}

/// Side of the stereo dialogue a stream belongs to. `Model` is the system's
/// own channel ("self"); `User` is the other speaker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "self")]
    Model,
    #[serde(rename = "user")]
    User,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Model, Channel::User];

    pub fn code(self) -> u8 {
        match self {
            Channel::Model => 0,
            Channel::User => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Channel::Model),
            1 => Some(Channel::User),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Channel::Model => Channel::User,
            Channel::User => Channel::Model,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Model => "self",
            Channel::User => "user",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" | "model" | "0" => Ok(Channel::Model),
            "user" | "1" => Ok(Channel::User),
            other => Err(Error::Invalid(format!("unknown channel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub name: String,
    pub role: StreamRole,
    pub channel: Channel,
    pub vocab_size: u32,
    pub delay: usize,
    pub pad_id: Option<u32>,
    pub initial_id: u32,
}

impl StreamSpec {
    fn new(role: StreamRole, channel: Channel, layer: usize, vocab_size: u32, delay: usize) -> Self {
        let name = match role {
            StreamRole::Text => format!("text.{channel}"),
            StreamRole::SemanticAudio => format!("semantic.{channel}"),
            StreamRole::AcousticAudio => format!("acoustic{}.{channel}", layer + 1),
        };
        let pad_id = (role == StreamRole::Text).then(|| vocab_size - 2);
        StreamSpec {
            name,
            role,
            channel,
            vocab_size,
            delay,
            pad_id,
            initial_id: vocab_size - 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_id >= self.vocab_size {
            return Err(Error::Schema(format!(
                "{}: initial id {} outside vocabulary of {}",
                self.name, self.initial_id, self.vocab_size
            )));
        }
        match (self.role, self.pad_id) {
            (StreamRole::Text, None) => {
                return Err(Error::Schema(format!("{}: text stream without PAD id", self.name)))
            }
            (StreamRole::Text, Some(pad)) => {
                if pad >= self.vocab_size || pad == self.initial_id {
                    return Err(Error::Schema(format!(
                        "{}: PAD id {pad} must be inside the vocabulary and distinct from INITIAL",
                        self.name
                    )));
                }
            }
            (_, Some(_)) => {
                return Err(Error::Schema(format!("{}: audio streams carry no PAD id", self.name)))
            }
            (_, None) => {}
        }
        Ok(())
    }

    /// Largest id usable for ordinary content on this stream, exclusive.
    pub fn content_vocab(&self) -> u32 {
        match self.pad_id {
            Some(pad) => pad.min(self.initial_id),
            None => self.initial_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaKind {
    /// 17 streams: text(self), codec(self)×8, codec(user)×8; acoustic delay 1.
    Dialogue,
    /// 18 streams: text(self), text(user), codec(self)×8, codec(user)×8;
    /// semantic delay 25, acoustic delay 27.
    Tts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSchema {
    pub kind: SchemaKind,
    pub streams: Vec<StreamSpec>,
    pub frame_rate_hz: f64,
}

/// Build one of the two canonical stream layouts.
///
/// Reserved ids sit at the top of every vocabulary: `INITIAL = V-1` on all
/// streams and `PAD = V-2` on text streams.
pub fn build_schema(
    kind: SchemaKind,
    text_vocab: u32,
    semantic_vocab: u32,
    acoustic_vocab: u32,
) -> Result<GridSchema> {
    for (label, vocab) in [
        ("text", text_vocab),
        ("semantic", semantic_vocab),
        ("acoustic", acoustic_vocab),
    ] {
        if vocab < MIN_VOCAB {
            return Err(Error::Schema(format!(
                "{label} vocabulary of {vocab} cannot host PAD and INITIAL (need at least {MIN_VOCAB})"
            )));
        }
    }
    let (semantic_delay, acoustic_delay) = match kind {
        SchemaKind::Dialogue => (0, DIALOGUE_ACOUSTIC_DELAY),
        SchemaKind::Tts => (TTS_SEMANTIC_DELAY, TTS_ACOUSTIC_DELAY),
    };
    let mut streams = vec![StreamSpec::new(StreamRole::Text, Channel::Model, 0, text_vocab, 0)];
    if kind == SchemaKind::Tts {
        streams.push(StreamSpec::new(StreamRole::Text, Channel::User, 0, text_vocab, 0));
    }
    for channel in Channel::BOTH {
        streams.push(StreamSpec::new(
            StreamRole::SemanticAudio,
            channel,
            0,
            semantic_vocab,
            semantic_delay,
        ));
        for layer in 1..CODEC_LAYERS {
            streams.push(StreamSpec::new(
                StreamRole::AcousticAudio,
                channel,
                layer,
                acoustic_vocab,
                acoustic_delay,
            ));
        }
    }
    let schema = GridSchema {
        kind,
        streams,
        frame_rate_hz: FRAME_RATE_HZ,
    };
    schema.validate()?;
    Ok(schema)
}

impl GridSchema {
    pub fn dialogue(text_vocab: u32, semantic_vocab: u32, acoustic_vocab: u32) -> Result<Self> {
        build_schema(SchemaKind::Dialogue, text_vocab, semantic_vocab, acoustic_vocab)
    }

    pub fn tts(text_vocab: u32, semantic_vocab: u32, acoustic_vocab: u32) -> Result<Self> {
        build_schema(SchemaKind::Tts, text_vocab, semantic_vocab, acoustic_vocab)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_rate_hz != FRAME_RATE_HZ {
            return Err(Error::Schema(format!(
                "frame rate must be {FRAME_RATE_HZ} Hz, got {}",
                self.frame_rate_hz
            )));
        }
        for spec in &self.streams {
            spec.validate()?;
            if self.kind == SchemaKind::Dialogue
                && spec.role == StreamRole::Text
                && spec.channel != Channel::Model
            {
                return Err(Error::Schema(
                    "the dialogue schema carries a single text stream on the self channel".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn max_delay(&self) -> usize {
        self.streams.iter().map(|s| s.delay).max().unwrap_or(0)
    }

    pub fn text_vocab(&self) -> u32 {
        self.streams[self.text_streams()[0]].vocab_size
    }

    pub fn semantic_vocab(&self) -> u32 {
        self.streams[self.semantic_stream(Channel::Model)].vocab_size
    }

    pub fn acoustic_vocab(&self) -> u32 {
        self.streams[self.semantic_stream(Channel::Model) + 1].vocab_size
    }

    /// Indices of the text streams, in schema order.
    pub fn text_streams(&self) -> Vec<usize> {
        self.indices_where(|s| s.role == StreamRole::Text)
    }

    /// Indices of the audio streams in depth order: self semantic, self
    /// acoustic 2-8, user semantic, user acoustic 2-8.
    pub fn audio_streams(&self) -> Vec<usize> {
        self.indices_where(|s| s.role.is_audio())
    }

    pub fn text_stream(&self, channel: Channel) -> Option<usize> {
        self.streams
            .iter()
            .position(|s| s.role == StreamRole::Text && s.channel == channel)
    }

    pub fn semantic_stream(&self, channel: Channel) -> usize {
        self.streams
            .iter()
            .position(|s| s.role == StreamRole::SemanticAudio && s.channel == channel)
            .expect("canonical schemas carry a semantic stream per channel")
    }

    /// Stream index of codec layer `layer` (0 = semantic) on `channel`.
    pub fn codec_stream(&self, channel: Channel, layer: usize) -> usize {
        assert!(layer < CODEC_LAYERS);
        self.semantic_stream(channel) + layer
    }

    /// Copy of this schema with every text vocabulary replaced.
    pub fn with_text_vocab(&self, text_vocab: u32) -> Result<Self> {
        build_schema(self.kind, text_vocab, self.semantic_vocab(), self.acoustic_vocab())
    }

    fn indices_where(&self, pred: impl Fn(&StreamSpec) -> bool) -> Vec<usize> {
        self.streams
            .iter()
            .enumerate()
            .filter(|(_, s)| pred(s))
            .map(|(i, _)| i)
            .collect()
    }
}
