#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use jmlab::alignment::{ActivityTrack, Interval};
use jmlab::rng::seeded;
use jmlab::turn_taking::TurnTakingTotals;
use jmlab::{Channel, GridSchema, StreamRole, TokenGrid};
use rand::Rng;

/// Random undelayed grid whose text streams mix real tokens and PAD.
pub fn random_content(schema: &GridSchema, len: usize, seed: u64) -> TokenGrid {
    let mut rng = seeded(seed);
    let mut tokens = Vec::with_capacity(len * schema.len());
    for _ in 0..len {
        for spec in &schema.streams {
            let tok = match spec.role {
                StreamRole::Text if rng.random_bool(0.3) => spec.pad_id.unwrap(),
                _ => rng.random_range(0..spec.content_vocab()),
            };
            tokens.push(tok);
        }
    }
    TokenGrid::new(schema.clone(), tokens, false).unwrap()
}

/// Random delayed grid, ready for training.
pub fn random_grid(schema: &GridSchema, len: usize, seed: u64) -> TokenGrid {
    random_content(schema, len, seed).apply_delays().unwrap()
}

pub fn tiny_schema() -> GridSchema {
    GridSchema::dialogue(6, 9, 5).unwrap()
}

/// Random activity with boundaries on whole milliseconds.
pub fn random_track(rng: &mut impl Rng, channel: Channel, duration_ms: u32) -> ActivityTrack {
    let mut intervals = Vec::new();
    let mut t = rng.random_range(0..400);
    while t < duration_ms {
        // short speech bursts and silences, many near the 200 ms boundary
        let len = rng.random_range(1..1500);
        let end = (t + len).min(duration_ms);
        intervals.push(Interval::new(t as f64 / 1000.0, end as f64 / 1000.0).unwrap());
        let silence = match rng.random_range(0..4) {
            0 => 200,
            1 => rng.random_range(195..206),
            2 => rng.random_range(1..200),
            _ => rng.random_range(1..2500),
        };
        t = end + silence;
    }
    ActivityTrack::new(channel, intervals).unwrap()
}

fn dense(track: &ActivityTrack, cells: usize) -> Vec<bool> {
    (0..cells)
        .map(|c| {
            let mid = (c as f64 + 0.5) / 1000.0;
            track.intervals().iter().any(|iv| iv.start <= mid && mid < iv.end)
        })
        .collect()
}

/// IPU membership per cell: silences under 200 cells between speech are bridged.
fn dense_ipus(active: &[bool]) -> Vec<bool> {
    let mut out = active.to_vec();
    let mut last_end: Option<usize> = None;
    for c in 0..active.len() {
        if active[c] {
            if let Some(e) = last_end {
                if c - e < 200 {
                    out[e..c].iter_mut().for_each(|x| *x = true);
                }
            }
            if c + 1 == active.len() || !active[c + 1] {
                last_end = Some(c + 1);
            }
        }
    }
    out
}

fn runs(v: &[bool]) -> usize {
    v.iter().enumerate().filter(|&(i, &x)| x && (i == 0 || !v[i - 1])).count()
}

/// Totals from 1 ms cells.
pub fn oracle(a: &ActivityTrack, b: &ActivityTrack, duration_ms: u32) -> TurnTakingTotals {
    let cells = duration_ms as usize;
    let ia = dense_ipus(&dense(a, cells));
    let ib = dense_ipus(&dense(b, cells));
    let ms = |n: usize| n as f64 / 1000.0;
    let both: Vec<bool> = ia.iter().zip(&ib).map(|(&x, &y)| x && y).collect();
    let any: Vec<bool> = ia.iter().zip(&ib).map(|(&x, &y)| x || y).collect();
    let mut totals = TurnTakingTotals {
        duration_s: ms(cells),
        ipu_s: ms(ia.iter().filter(|&&x| x).count() + ib.iter().filter(|&&x| x).count()),
        overlap_s: ms(both.iter().filter(|&&x| x).count()),
        ipus: runs(&ia) + runs(&ib),
        overlaps: runs(&both),
        ..Default::default()
    };
    let first = any.iter().position(|&x| x);
    let last = any.iter().rposition(|&x| x);
    let (Some(first), Some(last)) = (first, last) else {
        totals.edge_silence_s = ms(cells);
        return totals;
    };
    totals.edge_silence_s = ms(first + cells - 1 - last);
    let mut c = first;
    while c <= last {
        if any[c] {
            c += 1;
            continue;
        }
        let start = c;
        while !any[c] {
            c += 1;
        }
        let before = (ia[start - 1], ib[start - 1]);
        let after = (ia[c], ib[c]);
        let single = |p: (bool, bool)| p.0 != p.1;
        if single(before) && before == after {
            totals.pause_s += ms(c - start);
            totals.pauses += 1;
        } else {
            totals.gap_s += ms(c - start);
            totals.gaps += 1;
        }
    }
    totals
}

/// Largest absolute difference over the second-valued totals, or infinity
/// when an event count differs.
pub fn totals_gap(a: &TurnTakingTotals, b: &TurnTakingTotals) -> f64 {
    if (a.ipus, a.pauses, a.gaps, a.overlaps) != (b.ipus, b.pauses, b.gaps, b.overlaps) {
        return f64::INFINITY;
    }
    [
        a.ipu_s - b.ipu_s,
        a.pause_s - b.pause_s,
        a.gap_s - b.gap_s,
        a.overlap_s - b.overlap_s,
        a.edge_silence_s - b.edge_silence_s,
    ]
    .iter()
    .fold(0.0f64, |m, d| m.max(d.abs()))
}

/// Every sequence over `0..alphabet` of length at most `max_len`.
pub fn all_sequences(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<u8>| {
                (0..alphabet).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Edit distance from `source` to every sequence of length at most
/// `max_len`, by breadth-first search over single insertions, deletions and
/// substitutions. Shortest edit paths never need a longer intermediate.
pub fn bfs_distances(source: &[u8], alphabet: u8, max_len: usize) -> HashMap<Vec<u8>, usize> {
    let mut dist = HashMap::new();
    dist.insert(source.to_vec(), 0);
    let mut queue = VecDeque::from([source.to_vec()]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        let mut next = Vec::new();
        for i in 0..s.len() {
            let mut t = s.clone();
            t.remove(i);
            next.push(t);
            for c in 0..alphabet {
                if c != s[i] {
                    let mut t = s.clone();
                    t[i] = c;
                    next.push(t);
                }
            }
        }
        if s.len() < max_len {
            for i in 0..=s.len() {
                for c in 0..alphabet {
                    let mut t = s.clone();
                    t.insert(i, c);
                    next.push(t);
                }
            }
        }
        for t in next {
            if !dist.contains_key(&t) {
                dist.insert(t.clone(), d + 1);
                queue.push_back(t);
            }
        }
    }
    dist
}
