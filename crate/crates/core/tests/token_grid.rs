mod common;

use common::random_content;
use jmlab::token_grid::{TTS_ACOUSTIC_DELAY, TTS_SEMANTIC_DELAY};
use jmlab::{describe_frames, frames_to_seconds, seconds_to_frames, Channel, Error, GridSchema, StreamRole, TokenGrid};
use proptest::prelude::*;

fn schemas() -> [GridSchema; 2] {
    [GridSchema::dialogue(7, 11, 6).unwrap(), GridSchema::tts(7, 11, 6).unwrap()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delays_round_trip_on_the_kept_prefix(len in 0usize..80, seed in any::<u64>(), tts in any::<bool>()) {
        let schema = schemas()[tts as usize].clone();
        let grid = random_content(&schema, len, seed);
        let back = grid.apply_delays().unwrap().remove_delays().unwrap();
        let keep = len.saturating_sub(schema.max_delay());
        prop_assert_eq!(back.slice(0, keep).unwrap(), grid.slice(0, keep).unwrap());
    }

    #[test]
    fn delayed_heads_hold_initial(len in 0usize..60, seed in any::<u64>(), tts in any::<bool>()) {
        let schema = schemas()[tts as usize].clone();
        let delayed = random_content(&schema, len, seed).apply_delays().unwrap();
        for (s, spec) in schema.streams.iter().enumerate() {
            for t in 0..spec.delay.min(len) {
                prop_assert_eq!(delayed.get(t, s), spec.initial_id);
            }
        }
    }

    #[test]
    fn bytes_round_trip(len in 0usize..40, seed in any::<u64>(), tts in any::<bool>(), delayed in any::<bool>()) {
        let schema = schemas()[tts as usize].clone();
        let mut grid = random_content(&schema, len, seed);
        if delayed {
            grid = grid.apply_delays().unwrap();
        }
        prop_assert_eq!(TokenGrid::from_bytes(&grid.to_bytes()).unwrap(), grid);
    }

    #[test]
    fn truncated_bytes_are_rejected(len in 1usize..20, seed in any::<u64>(), cut in 1usize..64) {
        let grid = random_content(&schemas()[0], len, seed);
        let bytes = grid.to_bytes();
        let cut = cut.min(bytes.len());
        let res = TokenGrid::from_bytes(&bytes[..bytes.len() - cut]);
        prop_assert!(matches!(res, Err(Error::Format(_))));
    }

    #[test]
    fn slice_then_concat_is_identity(len in 0usize..50, at in 0usize..50, seed in any::<u64>()) {
        let grid = random_content(&schemas()[1], len, seed);
        let at = at.min(len);
        let joined = grid.slice(0, at).unwrap().concat(&grid.slice(at, len).unwrap()).unwrap();
        prop_assert_eq!(joined, grid);
    }
}

#[test]
fn stream_layouts() {
    let [dialogue, tts] = schemas();
    assert_eq!(dialogue.len(), 17);
    assert_eq!(tts.len(), 18);
    assert_eq!(dialogue.text_streams(), vec![0]);
    assert_eq!(tts.text_streams(), vec![0, 1]);
    assert_eq!(dialogue.max_delay(), 1);
    assert_eq!(tts.max_delay(), TTS_ACOUSTIC_DELAY);
    let delays: Vec<usize> = tts.streams.iter().map(|s| s.delay).collect();
    assert_eq!(delays[2], TTS_SEMANTIC_DELAY);
    assert!(delays[3..10].iter().all(|&d| d == TTS_ACOUSTIC_DELAY));
    for schema in [&dialogue, &tts] {
        for spec in &schema.streams {
            assert_eq!(spec.initial_id, spec.vocab_size - 1);
            match spec.role {
                StreamRole::Text => assert_eq!(spec.pad_id, Some(spec.vocab_size - 2)),
                _ => assert_eq!(spec.pad_id, None),
            }
        }
        assert_eq!(schema.semantic_stream(Channel::Model) + 8, schema.semantic_stream(Channel::User));
    }
}

#[test]
fn rejects_out_of_range_tokens() {
    let schema = schemas()[0].clone();
    let mut tokens = vec![0u32; schema.len() * 2];
    tokens[3] = schema.streams[3].vocab_size;
    assert!(matches!(TokenGrid::new(schema, tokens, false), Err(Error::Grid(_))));
}

#[test]
fn delay_direction_is_checked() {
    let grid = random_content(&schemas()[0], 5, 1);
    assert!(grid.remove_delays().is_err());
    assert!(grid.apply_delays().unwrap().apply_delays().is_err());
}

#[test]
fn pad_ratio_counts_self_text() {
    let schema = schemas()[0].clone();
    let pad = schema.streams[0].pad_id.unwrap();
    let mut streams: Vec<Vec<u32>> = vec![vec![0; 4]; schema.len()];
    streams[0] = vec![pad, 2, pad, pad];
    let grid = TokenGrid::from_streams(schema, &streams, false).unwrap();
    assert_eq!(grid.pad_ratio().unwrap(), 0.75);
}

#[test]
fn frame_arithmetic() {
    assert_eq!(frames_to_seconds(2048), 163.84);
    assert_eq!(seconds_to_frames(163.84), 2048);
    assert_eq!(seconds_to_frames(10.0), 125);
    assert_eq!(describe_frames(2048), "2048 frames = 163.84 s (2.7 min)");
}
