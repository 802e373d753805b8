//! Scripted two-speaker process for toy corpora with known turn-taking
//! statistics.
//!
//! Each speaker is an on/off chain at frame rate whose switching
//! probabilities depend on whether the other speaker was talking in the
//! previous frame. Every active frame carries one word; within a speech run
//! words mostly follow a fixed cycle, so the text is predictable but not
//! trivial.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    build_training_grid, ActivityTrack, DiarSegment, Interval, TimedToken, TimedTranscript, TranscriptRecord,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::token_grid::{Channel, GridSchema, TokenGrid};
use crate::turn_taking::{activity_from_grid, analyze, TurnTakingTotals};
use crate::FRAME_RATE_HZ;

pub const SPEAKERS: [&str; 2] = ["A", "B"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Word vocabulary size.
    pub words: u32,
    /// Probability that the next word continues the cycle.
    pub follow_prob: f64,
    /// Per-frame probability of starting to speak while the other is silent.
    pub start_alone: f64,
    /// Per-frame probability of starting to speak while the other speaks.
    pub start_over: f64,
    /// Per-frame probability of stopping while the other is silent.
    pub stop_alone: f64,
    /// Per-frame probability of stopping while the other speaks.
    pub stop_over: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            words: 16,
            follow_prob: 0.8,
            start_alone: 0.09,
            start_over: 0.024,
            stop_alone: 0.035,
            stop_over: 0.068,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.follow_prob, self.start_alone, self.start_over, self.stop_alone, self.stop_over];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invalid("synth probabilities must lie in [0, 1]".into()));
        }
        if self.words < 1 {
            return Err(Error::Invalid("synth needs at least one word".into()));
        }
        Ok(())
    }

    /// Dialogue schema sized for this process: text holds the words plus
    /// PAD and INITIAL, semantic tokens embed text, acoustic tokens are few.
    pub fn schema(&self) -> GridSchema {
        let text = self.words + 2;
        GridSchema::dialogue(text, text + 2, 8).expect("valid synth schema")
    }
}

/// One scripted dialogue: per speaker, a word or silence at each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDialogue {
    pub id: String,
    pub words: [Vec<Option<u32>>; 2],
}

impl SynthDialogue {
    pub fn frames(&self) -> usize {
        self.words[0].len()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / FRAME_RATE_HZ
    }

    fn runs(&self, speaker: usize) -> Vec<Interval> {
        let w = &self.words[speaker];
        let mut out = Vec::new();
        let mut start = None;
        for t in 0..=w.len() {
            let active = t < w.len() && w[t].is_some();
            match (active, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    out.push(Interval {
                        start: s as f64 / FRAME_RATE_HZ,
                        end: t as f64 / FRAME_RATE_HZ,
                    });
                    start = None;
                }
                _ => {}
            }
        }
        out
    }

    /// Diarization segments, speakers labelled `A` and `B`.
    pub fn segments(&self) -> Vec<DiarSegment> {
        let mut out: Vec<DiarSegment> = (0..2)
            .flat_map(|s| {
                self.runs(s).into_iter().map(move |interval| DiarSegment {
                    speaker: SPEAKERS[s].to_string(),
                    interval,
                })
            })
            .collect();
        out.sort_by(|a, b| a.interval.start.total_cmp(&b.interval.start));
        out
    }

    /// Timed transcript; each word starts at its frame.
    pub fn transcript(&self) -> Vec<TranscriptRecord> {
        let mut out = Vec::new();
        for t in 0..self.frames() {
            for s in 0..2 {
                if let Some(w) = self.words[s][t] {
                    out.push(TranscriptRecord {
                        label: SPEAKERS[s].to_string(),
                        token: TimedToken {
                            token_id: w,
                            start: t as f64 / FRAME_RATE_HZ,
                        },
                    });
                }
            }
        }
        out
    }

    /// Delayed training grid with speaker A on `a_channel`.
    pub fn grid(&self, schema: &GridSchema, a_channel: Channel) -> Result<TokenGrid> {
        let mut transcripts = Vec::new();
        let mut activities = Vec::new();
        for (s, channel) in [(0, a_channel), (1, a_channel.other())] {
            let tokens = (0..self.frames())
                .filter_map(|t| {
                    self.words[s][t].map(|w| TimedToken {
                        token_id: w,
                        start: t as f64 / FRAME_RATE_HZ,
                    })
                })
                .collect();
            transcripts.push(TimedTranscript::new(channel, tokens));
            activities.push(ActivityTrack::new(channel, self.runs(s))?);
        }
        Ok(build_training_grid(&transcripts, &activities, schema, self.frames())?.grid)
    }
}

/// Simulate one dialogue of `frames` frames, starting with both silent.
pub fn synth_dialogue<R: Rng + ?Sized>(cfg: &SynthConfig, id: &str, frames: usize, rng: &mut R) -> SynthDialogue {
    let mut on = [false, false];
    let mut last = [0u32, 0u32];
    let mut words = [Vec::with_capacity(frames), Vec::with_capacity(frames)];
    for _ in 0..frames {
        let prev = on;
        for s in 0..2 {
            let other = prev[1 - s];
            let p = match (prev[s], other) {
                (false, false) => cfg.start_alone,
                (false, true) => cfg.start_over,
                (true, false) => 1.0 - cfg.stop_alone,
                (true, true) => 1.0 - cfg.stop_over,
            };
            on[s] = rng.random_bool(p);
            if on[s] {
                last[s] = if prev[s] && rng.random_bool(cfg.follow_prob) {
                    (last[s] + 1) % cfg.words
                } else {
                    rng.random_range(0..cfg.words)
                };
                words[s].push(Some(last[s]));
            } else {
                words[s].push(None);
            }
        }
    }
    SynthDialogue { id: id.to_string(), words }
}

/// `count` dialogues of `frames` frames each, dialogue `i` drawn from its
/// own generator derived from `seed`.
pub fn synth_corpus(cfg: &SynthConfig, count: usize, frames: usize, seed: u64) -> Vec<SynthDialogue> {
    (0..count)
        .map(|i| {
            let mut rng = seeded(derive_seed(seed, i as u64));
            synth_dialogue(cfg, &format!("synth{i:04}"), frames, &mut rng)
        })
        .collect()
}

/// Monte Carlo estimate of the turn-taking statistics the process produces
/// on the frame window `window` of dialogues of `frames` frames.
pub fn expected_turn_taking(
    cfg: &SynthConfig,
    dialogues: usize,
    frames: usize,
    window: std::ops::Range<usize>,
    seed: u64,
) -> Result<TurnTakingTotals> {
    let schema = cfg.schema();
    let mut total: Option<TurnTakingTotals> = None;
    for d in synth_corpus(cfg, dialogues, frames, seed) {
        let grid = d.grid(&schema, Channel::Model)?.remove_delays()?;
        let part = grid.slice(window.start, window.end)?;
        let t = analyze(
            &activity_from_grid(&part, Channel::Model)?,
            &activity_from_grid(&part, Channel::User)?,
            part.duration_s(),
        );
        total = Some(match total {
            None => t,
            Some(acc) => acc.merge(&t),
        });
    }
    total.ok_or_else(|| Error::Invalid("no dialogues simulated".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_dense() {
        let cfg = SynthConfig::default();
        let a = synth_corpus(&cfg, 3, 200, 9);
        assert_eq!(a, synth_corpus(&cfg, 3, 200, 9));
        let d = &a[0];
        assert_eq!(d.frames(), 200);
        let active = d.words[0].iter().filter(|w| w.is_some()).count();
        let tokens = d.transcript().iter().filter(|r| r.label == "A").count();
        assert_eq!(active, tokens);
    }

    #[test]
    fn grid_round_trips_activity() {
        let cfg = SynthConfig::default();
        let d = &synth_corpus(&cfg, 1, 300, 4)[0];
        let grid = d.grid(&cfg.schema(), Channel::User).unwrap().remove_delays().unwrap();
        let track = activity_from_grid(&grid, Channel::User).unwrap();
        let expected: f64 = d.segments().iter().filter(|s| s.speaker == "A").map(|s| s.interval.duration()).sum();
        assert!((track.total() - expected).abs() < 1e-9);
    }
}
