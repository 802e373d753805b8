//! Turn-taking statistics over stereo speech activity.
//!
//! Speech is first grouped into inter-pausal units (IPUs): runs of speech on
//! one channel whose internal silences are shorter than 0.2 s. Time where
//! neither channel has an IPU is *joint silence*; a joint silence between two
//! IPUs of the same speaker is a pause, between different speakers a gap.
//! Joint silence before the first or after the last IPU is counted in
//! neither. Overlap is the time both channels are inside an IPU.

use std::fmt::Write as _;

use crate::alignment::{merge_intervals, ActivityTrack, Interval, TIME_EPS};
use crate::error::{Error, Result};
use crate::token_grid::{Channel, TokenGrid};
use crate::FRAME_RATE_HZ;

/// Minimum silence separating two IPUs, in seconds.
pub const MIN_IPU_SILENCE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct IpuSet {
    pub channel: Channel,
    pub ipus: Vec<Interval>,
}

impl IpuSet {
    pub fn total(&self) -> f64 {
        self.ipus.iter().map(Interval::duration).fold(0.0, |a, d| a + d)
    }
}

/// Group speech into IPUs: silences shorter than `min_silence` are bridged,
/// silences of at least `min_silence` split.
pub fn segments_to_ipus(activity: &ActivityTrack, min_silence: f64) -> IpuSet {
    let mut ipus: Vec<Interval> = Vec::new();
    for iv in activity.intervals() {
        match ipus.last_mut() {
            Some(last) if iv.start - last.end < min_silence - TIME_EPS => last.end = iv.end,
            _ => ipus.push(*iv),
        }
    }
    IpuSet {
        channel: activity.channel,
        ipus,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SilenceClassification {
    pub pauses: Vec<Interval>,
    pub gaps: Vec<Interval>,
    /// Joint silence before the first and after the last IPU.
    pub edges: Vec<Interval>,
}

fn channels_at(sets: [&IpuSet; 2], instant: f64, pick: impl Fn(&Interval) -> f64) -> Vec<Channel> {
    sets.iter()
        .filter(|set| set.ipus.iter().any(|iv| (pick(iv) - instant).abs() <= TIME_EPS))
        .map(|set| set.channel)
        .collect()
}

/// Split joint silence within `[0, duration]` into pauses, gaps and edge
/// silence.
///
/// A silence is a pause when the IPUs ending at its start and the IPUs
/// starting at its end all belong to one and the same channel; any mix of
/// channels (including both channels ending at the same instant) makes it a
/// gap.
pub fn classify_silences(ipus_self: &IpuSet, ipus_user: &IpuSet, duration: f64) -> SilenceClassification {
    let speech = merge_intervals(ipus_self.ipus.iter().chain(&ipus_user.ipus).copied().collect());
    let mut out = SilenceClassification::default();
    let Some(first) = speech.first() else {
        if duration > 0.0 {
            out.edges.push(Interval { start: 0.0, end: duration });
        }
        return out;
    };
    if first.start > TIME_EPS {
        out.edges.push(Interval { start: 0.0, end: first.start });
    }
    for pair in speech.windows(2) {
        let silence = Interval {
            start: pair[0].end,
            end: pair[1].start,
        };
        let before = channels_at([ipus_self, ipus_user], silence.start, |iv| iv.end);
        let after = channels_at([ipus_self, ipus_user], silence.end, |iv| iv.start);
        if before.len() == 1 && after.len() == 1 && before[0] == after[0] {
            out.pauses.push(silence);
        } else {
            out.gaps.push(silence);
        }
    }
    let last_end = speech.last().map_or(0.0, |iv| iv.end);
    if duration - last_end > TIME_EPS {
        out.edges.push(Interval {
            start: last_end,
            end: duration,
        });
    }
    out
}

/// Intervals where both channels are inside an IPU.
pub fn overlap_intervals(a: &IpuSet, b: &IpuSet) -> Vec<Interval> {
    let (mut i, mut j) = (0, 0);
    let mut out: Vec<Interval> = Vec::new();
    while i < a.ipus.len() && j < b.ipus.len() {
        let start = a.ipus[i].start.max(b.ipus[j].start);
        let end = a.ipus[i].end.min(b.ipus[j].end);
        if end > start {
            out.push(Interval { start, end });
        }
        if a.ipus[i].end < b.ipus[j].end {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

pub fn overlap_total(a: &IpuSet, b: &IpuSet) -> f64 {
    overlap_intervals(a, b).iter().map(Interval::duration).fold(0.0, |a, d| a + d)
}

/// Raw seconds and event counts; merging is plain addition.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TurnTakingTotals {
    pub duration_s: f64,
    pub ipu_s: f64,
    pub pause_s: f64,
    pub gap_s: f64,
    pub overlap_s: f64,
    pub edge_silence_s: f64,
    pub ipus: usize,
    pub pauses: usize,
    pub gaps: usize,
    pub overlaps: usize,
}

impl TurnTakingTotals {
    pub fn measure(ipus_self: &IpuSet, ipus_user: &IpuSet, duration_s: f64) -> Self {
        let silences = classify_silences(ipus_self, ipus_user, duration_s);
        let sum = |v: &[Interval]| v.iter().map(Interval::duration).fold(0.0, |a, d| a + d);
        let overlaps = overlap_intervals(ipus_self, ipus_user);
        TurnTakingTotals {
            duration_s,
            ipu_s: ipus_self.total() + ipus_user.total(),
            pause_s: sum(&silences.pauses),
            gap_s: sum(&silences.gaps),
            overlap_s: sum(&overlaps),
            edge_silence_s: sum(&silences.edges),
            ipus: ipus_self.ipus.len() + ipus_user.ipus.len(),
            pauses: silences.pauses.len(),
            gaps: silences.gaps.len(),
            overlaps: overlaps.len(),
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        TurnTakingTotals {
            duration_s: self.duration_s + other.duration_s,
            ipu_s: self.ipu_s + other.ipu_s,
            pause_s: self.pause_s + other.pause_s,
            gap_s: self.gap_s + other.gap_s,
            overlap_s: self.overlap_s + other.overlap_s,
            edge_silence_s: self.edge_silence_s + other.edge_silence_s,
            ipus: self.ipus + other.ipus,
            pauses: self.pauses + other.pauses,
            gaps: self.gaps + other.gaps,
            overlaps: self.overlaps + other.overlaps,
        }
    }

    pub fn report(&self) -> Result<TurnTakingReport> {
        if !(self.duration_s > 0.0) {
            return Err(Error::Invalid("turn-taking report needs a positive duration".into()));
        }
        let per_min = |s: f64| s * 60.0 / self.duration_s;
        Ok(TurnTakingReport {
            duration_min: self.duration_s / 60.0,
            ipu_s_per_min: per_min(self.ipu_s),
            pause_s_per_min: per_min(self.pause_s),
            gap_s_per_min: per_min(self.gap_s),
            overlap_s_per_min: per_min(self.overlap_s),
            edge_silence_s_per_min: per_min(self.edge_silence_s),
            ipu_count: self.ipus,
            pause_count: self.pauses,
            gap_count: self.gaps,
            overlap_count: self.overlaps,
        })
    }
}

/// Seconds per minute of each event type. The IPU figure sums both
/// channels, so it ranges up to 120.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnTakingReport {
    pub duration_min: f64,
    pub ipu_s_per_min: f64,
    pub pause_s_per_min: f64,
    pub gap_s_per_min: f64,
    pub overlap_s_per_min: f64,
    pub edge_silence_s_per_min: f64,
    pub ipu_count: usize,
    pub pause_count: usize,
    pub gap_count: usize,
    pub overlap_count: usize,
}

impl TurnTakingReport {
    /// `key: value` lines; rates with one decimal place.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "duration_min: {:.3}", self.duration_min).unwrap();
        writeln!(out, "ipu_s_per_min: {:.1}", self.ipu_s_per_min).unwrap();
        writeln!(out, "pause_s_per_min: {:.1}", self.pause_s_per_min).unwrap();
        writeln!(out, "gap_s_per_min: {:.1}", self.gap_s_per_min).unwrap();
        writeln!(out, "overlap_s_per_min: {:.1}", self.overlap_s_per_min).unwrap();
        writeln!(out, "edge_silence_s_per_min: {:.1}", self.edge_silence_s_per_min).unwrap();
        writeln!(out, "ipu_count: {}", self.ipu_count).unwrap();
        writeln!(out, "pause_count: {}", self.pause_count).unwrap();
        writeln!(out, "gap_count: {}", self.gap_count).unwrap();
        writeln!(out, "overlap_count: {}", self.overlap_count).unwrap();
        out
    }
}

/// Per-minute report for one dialogue of `duration_s` seconds.
pub fn report(ipus_self: &IpuSet, ipus_user: &IpuSet, duration_s: f64) -> Result<TurnTakingReport> {
    TurnTakingTotals::measure(ipus_self, ipus_user, duration_s).report()
}

/// IPU grouping of both channels followed by [`TurnTakingTotals::measure`].
pub fn analyze(own: &ActivityTrack, user: &ActivityTrack, duration_s: f64) -> TurnTakingTotals {
    TurnTakingTotals::measure(
        &segments_to_ipus(own, MIN_IPU_SILENCE),
        &segments_to_ipus(user, MIN_IPU_SILENCE),
        duration_s,
    )
}

/// Speech activity of `channel` read off an undelayed grid under the
/// pseudo-codec: a frame is active when its semantic token is neither
/// silence (0) nor INITIAL filler.
pub fn activity_from_grid(grid: &TokenGrid, channel: Channel) -> Result<ActivityTrack> {
    if grid.is_delayed() {
        return Err(Error::Grid("activity extraction expects an undelayed grid".into()));
    }
    let idx = grid.schema().semantic_stream(channel);
    let initial = grid.schema().streams[idx].initial_id;
    let mut intervals = Vec::new();
    let mut run_start: Option<usize> = None;
    for t in 0..=grid.len() {
        let active = t < grid.len() && {
            let s = grid.get(t, idx);
            s != 0 && s != initial
        };
        match (active, run_start) {
            (true, None) => run_start = Some(t),
            (false, Some(start)) => {
                intervals.push(Interval {
                    start: start as f64 / FRAME_RATE_HZ,
                    end: t as f64 / FRAME_RATE_HZ,
                });
                run_start = None;
            }
            _ => {}
        }
    }
    ActivityTrack::new(channel, intervals)
}
