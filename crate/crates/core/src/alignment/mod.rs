//! From diarized, timestamped transcripts to stereo training grids.
//!
//! The pipeline per dialogue is: [`assign_channels`] picks the speaker that
//! plays the model's own channel, [`text_stream_from_transcript`] places text
//! tokens on frames with PAD in between, [`activity_from_segments`] builds a
//! per-channel speech activity track, [`pseudo_encode`] turns text and
//! activity into codec tokens and [`build_training_grid`] assembles and
//! delays the grid.

mod files;
mod manifest;
mod pseudo_codec;

pub use files::{
    parse_diarization, parse_transcript, read_diarization, read_transcript, write_diarization,
    write_transcript, TranscriptRecord,
};
pub use manifest::{
    read_manifest, split_manifest, write_manifest, ManifestRecord, Split, SplitRatios,
};
pub use pseudo_codec::{acoustic_hash, decode_channel, pseudo_decode, pseudo_encode, ACTIVE_PAD, SILENT, TEXT_OFFSET};

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::token_grid::{Channel, GridSchema, StreamSpec, TokenGrid};
use crate::{frames_to_seconds, FRAME_RATE_HZ};

/// Tolerance used when comparing times that went through float arithmetic.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || start >= end {
            return Err(Error::Invalid(format!("invalid interval [{start}, {end}]")));
        }
        Ok(Interval { start, end })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

/// Sort and merge intervals into a disjoint sequence. Touching intervals
/// are joined.
pub fn merge_intervals(mut intervals: Vec<Interval>) -> Vec<Interval> {
    intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => merged.push(iv),
        }
    }
    merged
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiarSegment {
    pub speaker: String,
    pub interval: Interval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedToken {
    pub token_id: u32,
    pub start: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedTranscript {
    pub channel: Channel,
    pub tokens: Vec<TimedToken>,
}

impl TimedTranscript {
    pub fn new(channel: Channel, tokens: Vec<TimedToken>) -> Self {
        TimedTranscript { channel, tokens }
    }

    pub fn empty(channel: Channel) -> Self {
        Self::new(channel, Vec::new())
    }

    pub fn token_ids(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.token_id).collect()
    }
}

/// Speech activity of one channel: disjoint intervals sorted by start.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityTrack {
    pub channel: Channel,
    intervals: Vec<Interval>,
}

impl ActivityTrack {
    pub fn new(channel: Channel, intervals: Vec<Interval>) -> Result<Self> {
        for pair in intervals.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::Invalid(format!(
                    "activity intervals overlap or are unsorted at {}",
                    pair[1].start
                )));
            }
        }
        Ok(ActivityTrack { channel, intervals })
    }

    /// Merge arbitrary intervals into a valid track.
    pub fn from_unsorted(channel: Channel, intervals: Vec<Interval>) -> Self {
        ActivityTrack {
            channel,
            intervals: merge_intervals(intervals),
        }
    }

    pub fn empty(channel: Channel) -> Self {
        ActivityTrack {
            channel,
            intervals: Vec::new(),
        }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn total(&self) -> f64 {
        self.intervals.iter().map(Interval::duration).sum()
    }

    /// Per-frame activity: frame `t` is active when its midpoint lies in an
    /// interval.
    pub fn frame_mask(&self, frames: usize) -> Vec<bool> {
        let mut mask = vec![false; frames];
        for iv in &self.intervals {
            let first = (iv.start * FRAME_RATE_HZ - 0.5).ceil().max(0.0) as usize;
            for (t, slot) in mask.iter_mut().enumerate().skip(first) {
                let mid = (t as f64 + 0.5) / FRAME_RATE_HZ;
                if mid >= iv.end {
                    break;
                }
                if mid >= iv.start {
                    *slot = true;
                }
            }
        }
        mask
    }
}

/// Map every diarized speaker to a channel: one speaker, drawn uniformly
/// with a generator seeded by `seed`, becomes the model's own channel.
pub fn assign_channels(segments: &[DiarSegment], seed: u64) -> Result<BTreeMap<String, Channel>> {
    let mut speakers: Vec<&str> = segments.iter().map(|s| s.speaker.as_str()).collect();
    speakers.sort_unstable();
    speakers.dedup();
    if speakers.is_empty() {
        return Err(Error::Invalid("cannot assign channels without segments".into()));
    }
    let chosen = seeded(seed).random_range(0..speakers.len());
    Ok(speakers
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let channel = if i == chosen { Channel::Model } else { Channel::User };
            (s.to_string(), channel)
        })
        .collect())
}

/// Text stream of `frames` frames plus the number of tokens that did not fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TextStream {
    pub tokens: Vec<u32>,
    pub dropped: usize,
}

/// Place each token on frame `floor(start · 12.5)`, cascading to the next
/// free frame on collision; every other frame holds PAD.
pub fn text_stream_from_transcript(
    transcript: &TimedTranscript,
    frames: usize,
    spec: &StreamSpec,
) -> Result<TextStream> {
    let pad = spec
        .pad_id
        .ok_or_else(|| Error::Schema(format!("{} has no PAD id", spec.name)))?;
    let limit = spec.content_vocab();
    let mut tokens = vec![pad; frames];
    let mut next_free = 0usize;
    let mut dropped = 0usize;
    let mut previous = f64::NEG_INFINITY;
    for (i, tok) in transcript.tokens.iter().enumerate() {
        if !(tok.start >= previous) {
            return Err(Error::Invalid(format!(
                "transcript for {} is not sorted by start time at token {i}",
                transcript.channel
            )));
        }
        previous = tok.start;
        if tok.token_id >= limit {
            return Err(Error::Invalid(format!(
                "token {} collides with reserved ids of {} (content vocabulary {limit})",
                tok.token_id, spec.name
            )));
        }
        let frame = (tok.start * FRAME_RATE_HZ + TIME_EPS).floor().max(0.0) as usize;
        let frame = frame.max(next_free);
        if frame >= frames {
            dropped += 1;
            continue;
        }
        tokens[frame] = tok.token_id;
        next_free = frame + 1;
    }
    if dropped > 0 {
        log::warn!(
            "{dropped} text token(s) on {} fell past frame {}",
            transcript.channel,
            frames.saturating_sub(1)
        );
    }
    Ok(TextStream { tokens, dropped })
}

/// Union of all segments whose speaker maps to `channel`, clipped to the
/// grid duration.
pub fn activity_from_segments(
    segments: &[DiarSegment],
    channel_map: &BTreeMap<String, Channel>,
    channel: Channel,
    frames: usize,
) -> ActivityTrack {
    let horizon = frames_to_seconds(frames);
    let clipped = segments
        .iter()
        .filter(|s| channel_map.get(&s.speaker) == Some(&channel))
        .filter_map(|s| {
            let start = s.interval.start.max(0.0);
            let end = s.interval.end.min(horizon);
            (start < end).then_some(Interval { start, end })
        })
        .collect();
    ActivityTrack::from_unsorted(channel, clipped)
}

/// A training grid together with the number of text tokens dropped while
/// placing the transcripts.
#[derive(Debug, Clone)]
pub struct AlignedGrid {
    pub grid: TokenGrid,
    pub dropped: usize,
}

/// Assemble a delayed training grid: text streams from the transcripts of
/// their channels, codec streams from [`pseudo_encode`] of each channel.
pub fn build_training_grid(
    transcripts: &[TimedTranscript],
    activities: &[ActivityTrack],
    schema: &GridSchema,
    frames: usize,
) -> Result<AlignedGrid> {
    let transcript_of = |channel: Channel| {
        transcripts
            .iter()
            .find(|t| t.channel == channel)
            .cloned()
            .unwrap_or_else(|| TimedTranscript::empty(channel))
    };
    let activity_of = |channel: Channel| {
        activities
            .iter()
            .find(|a| a.channel == channel)
            .cloned()
            .unwrap_or_else(|| ActivityTrack::empty(channel))
    };
    let text_spec = &schema.streams[schema.text_streams()[0]];
    let mut streams: Vec<Vec<u32>> = vec![Vec::new(); schema.len()];
    let mut dropped = 0;
    for channel in Channel::BOTH {
        let text = text_stream_from_transcript(&transcript_of(channel), frames, text_spec)?;
        let codec = pseudo_encode(&text.tokens, &activity_of(channel), schema)?;
        for (layer, tokens) in codec.into_iter().enumerate() {
            streams[schema.codec_stream(channel, layer)] = tokens;
        }
        if let Some(idx) = schema.text_stream(channel) {
            dropped += text.dropped;
            streams[idx] = text.tokens;
        }
    }
    let grid = TokenGrid::from_streams(schema.clone(), &streams, false)?.apply_delays()?;
    Ok(AlignedGrid { grid, dropped })
}

/// Everything produced for one dialogue by the preprocessing pipeline.
#[derive(Debug, Clone)]
pub struct PreparedDialogue {
    pub id: String,
    pub grid: TokenGrid,
    pub channel_map: BTreeMap<String, Channel>,
    pub dropped: usize,
}

/// Run the full preprocessing chain for one dialogue given per-speaker
/// transcript records and diarization segments.
pub fn prepare_dialogue(
    id: &str,
    records: &[TranscriptRecord],
    segments: &[DiarSegment],
    schema: &GridSchema,
    seed: u64,
) -> Result<PreparedDialogue> {
    let channel_map = assign_channels(segments, seed)?;
    let end = segments
        .iter()
        .map(|s| s.interval.end)
        .fold(0.0f64, f64::max);
    let frames = crate::seconds_to_frames(end);
    let mut transcripts = Vec::new();
    let mut activities = Vec::new();
    for channel in Channel::BOTH {
        let mut tokens: Vec<TimedToken> = records
            .iter()
            .filter(|r| channel_map.get(&r.label) == Some(&channel))
            .map(|r| r.token)
            .collect();
        if let Some(r) = records.iter().find(|r| !channel_map.contains_key(&r.label)) {
            return Err(Error::Invalid(format!(
                "dialogue {id}: transcript speaker {:?} has no diarization segment",
                r.label
            )));
        }
        tokens.sort_by(|a, b| a.start.total_cmp(&b.start));
        transcripts.push(TimedTranscript::new(channel, tokens));
        activities.push(activity_from_segments(segments, &channel_map, channel, frames));
    }
    let aligned = build_training_grid(&transcripts, &activities, schema, frames)?;
    Ok(PreparedDialogue {
        id: id.to_string(),
        grid: aligned.grid,
        channel_map,
        dropped: aligned.dropped,
    })
}
