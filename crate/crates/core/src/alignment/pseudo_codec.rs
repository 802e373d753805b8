//! Deterministic stand-in for a neural audio codec.
//!
//! The semantic layer carries activity and text exactly (0 silent, 1 active
//! without text, `2 + token` active with text), so [`pseudo_decode`] acts as
//! a lossless ASR. Acoustic layers are a fixed hash of (layer, frame,
//! semantic token) and carry no recoverable information.

use super::ActivityTrack;
use crate::error::{Error, Result};
use crate::rng::mix64;
use crate::token_grid::{Channel, GridSchema, TokenGrid, CODEC_LAYERS};

pub const SILENT: u32 = 0;
pub const ACTIVE_PAD: u32 = 1;
pub const TEXT_OFFSET: u32 = 2;

/// Hash for acoustic layer `layer` (1..=7) at `frame` given the semantic
/// token, reduced modulo `modulus`.
pub fn acoustic_hash(layer: usize, frame: usize, semantic: u32, modulus: u32) -> u32 {
    let h = mix64(mix64(mix64(0x4A4D_4C41_4200_0000 ^ layer as u64) ^ frame as u64) ^ semantic as u64);
    (h % modulus as u64) as u32
}

/// Encode one channel into its eight codec layers (`8 × T`).
pub fn pseudo_encode(
    text_stream: &[u32],
    activity: &ActivityTrack,
    schema: &GridSchema,
) -> Result<Vec<Vec<u32>>> {
    let text_spec = &schema.streams[schema.text_streams()[0]];
    let pad = text_spec.pad_id.expect("text streams carry PAD");
    let semantic_vocab = schema.semantic_vocab();
    if semantic_vocab < text_spec.vocab_size + TEXT_OFFSET {
        return Err(Error::Schema(format!(
            "semantic vocabulary {semantic_vocab} cannot embed text vocabulary {} (need text + {TEXT_OFFSET})",
            text_spec.vocab_size
        )));
    }
    // INITIAL is the top id and is never emitted as content.
    let acoustic_modulus = schema.acoustic_vocab() - 1;
    let frames = text_stream.len();
    let mask = activity.frame_mask(frames);
    let mut layers = vec![Vec::with_capacity(frames); CODEC_LAYERS];
    for (t, (&text, &active)) in text_stream.iter().zip(&mask).enumerate() {
        let semantic = match (active, text == pad) {
            (false, _) => SILENT,
            (true, true) => ACTIVE_PAD,
            (true, false) => {
                if text >= text_spec.content_vocab() {
                    return Err(Error::Invalid(format!("reserved text id {text} at frame {t}")));
                }
                TEXT_OFFSET + text
            }
        };
        layers[0].push(semantic);
        for (layer, out) in layers.iter_mut().enumerate().skip(1) {
            out.push(acoustic_hash(layer, t, semantic, acoustic_modulus));
        }
    }
    Ok(layers)
}

/// Recover text tokens from a semantic stream: `s - 2` for every `s >= 2`.
pub fn pseudo_decode(semantic: &[u32]) -> Vec<u32> {
    semantic
        .iter()
        .filter(|&&s| s >= TEXT_OFFSET)
        .map(|&s| s - TEXT_OFFSET)
        .collect()
}

/// Decode the semantic stream of `channel` from an undelayed grid. INITIAL
/// filler counts as silence.
pub fn decode_channel(grid: &TokenGrid, channel: Channel) -> Result<Vec<u32>> {
    if grid.is_delayed() {
        return Err(Error::Grid("decode expects an undelayed grid".into()));
    }
    let idx = grid.schema().semantic_stream(channel);
    let initial = grid.schema().streams[idx].initial_id;
    let semantic: Vec<u32> = grid
        .frames()
        .map(|f| if f[idx] == initial { SILENT } else { f[idx] })
        .collect();
    Ok(pseudo_decode(&semantic))
}
