mod common;

use common::random_grid;
use jmlab::eval::*;
use jmlab::generation::PseudoAsr;
use jmlab::model::{Model, ModelConfig};
use jmlab::synth::{synth_corpus, SynthConfig};
use jmlab::{frames_to_seconds, Channel, TokenGrid};

#[test]
fn chunk_counts_follow_durations() {
    let schema = SynthConfig::default().schema();
    let frames = [812usize, 375, 374, 1500, 0, 1124];
    let dialogues: Vec<(String, TokenGrid)> = frames
        .iter()
        .enumerate()
        .map(|(i, &n)| (format!("d{i}"), random_grid(&schema, n, i as u64)))
        .collect();
    let cfg = EvalConfig::default();
    let chunks = chunk_dialogues(&dialogues, &cfg).unwrap();
    let expected: usize = frames.iter().map(|&n| (frames_to_seconds(n) / 30.0).floor() as usize).sum();
    assert_eq!(chunks.len(), expected);
    assert_eq!(expected, 2 + 1 + 0 + 4 + 0 + 2);
    for c in &chunks {
        assert_eq!(c.grid.len(), 375);
        assert_eq!(c.prompt().len(), 125);
        assert_eq!(c.reference().len(), 250);
        assert_eq!(c.prompt().concat(&c.reference()).unwrap(), c.grid);
    }
    assert_eq!(chunks[1].id, "d0:1");
    assert_eq!(chunks[1].grid, dialogues[0].1.slice(375, 750).unwrap());
    let bad = EvalConfig { prompt_s: 30.0, ..EvalConfig::default() };
    assert!(chunk_dialogues(&dialogues, &bad).is_err());
}

#[test]
fn uniform_lm_perplexity_is_vocab() {
    let lm = UniformLm { vocab: 37 };
    let s = lm.score(&[1, 2, 3, 4, 5]);
    assert!((ppl(s.nll, s.tokens).unwrap() - 37.0).abs() < 1e-9);
    assert!(ppl(0.0, 0).is_err());
}

#[test]
fn bigram_by_hand() {
    // vocab 3, corpus [0 1 0 1] and [1]
    let lm = BigramLm::train(&[vec![0, 1, 0, 1], vec![1]], 3).unwrap();
    // contexts: BOS 2, 0 -> 2, 1 -> 1
    assert!((lm.prob(None, 0) - 2.0 / 5.0).abs() < 1e-15);
    assert!((lm.prob(None, 1) - 2.0 / 5.0).abs() < 1e-15);
    assert!((lm.prob(Some(0), 1) - 3.0 / 5.0).abs() < 1e-15);
    assert!((lm.prob(Some(1), 0) - 2.0 / 4.0).abs() < 1e-15);
    assert!((lm.prob(Some(2), 2) - 1.0 / 3.0).abs() < 1e-15);
    let s = lm.score(&[0, 1, 2]);
    let want = -(0.4f64.ln() + 0.6f64.ln() + 0.25f64.ln());
    assert!((s.nll - want).abs() < 1e-12);
    assert_eq!(s.tokens, 3);
    assert_eq!(lm.score(&[5]).nll, f64::INFINITY);
    assert!(BigramLm::train(&[vec![3]], 3).is_err());
    assert!(BigramLm::train(&[vec![]], 3).is_err());
    for prev in [None, Some(0), Some(1), Some(2)] {
        let total: f64 = (0..3).map(|t| lm.prob(prev, t)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn mock_lm_sees_both_channels() {
    let cfg = SynthConfig::default();
    let schema = cfg.schema();
    let grids: Vec<TokenGrid> = synth_corpus(&cfg, 3, 200, 1)
        .iter()
        .map(|d| d.grid(&schema, Channel::Model).unwrap())
        .collect();
    let vocab = decoded_vocab(&schema);
    assert_eq!(vocab, cfg.words + 1);
    let lm = mock_lm_train(&grids, &PseudoAsr, vocab).unwrap();
    let words: Vec<u32> = (0..cfg.words).collect();
    // the word cycle is much more likely than its reverse
    let fwd = lm.score(&words);
    let mut rev = words.clone();
    rev.reverse();
    assert!(fwd.nll < lm.score(&rev).nll);
}

fn small_model(schema: jmlab::GridSchema) -> Model {
    Model::new(ModelConfig {
        d_model: 8,
        n_heads: 2,
        temporal_layers: 1,
        depth_layers: 1,
        max_frames: 40,
        schema,
        seed: 2,
    })
    .unwrap()
}

#[test]
fn experiment_is_deterministic_and_has_reference_row() {
    let cfg = SynthConfig::default();
    let schema = cfg.schema();
    let dialogues: Vec<(String, TokenGrid)> = synth_corpus(&cfg, 2, 80, 4)
        .iter()
        .map(|d| (d.id.clone(), d.grid(&schema, Channel::Model).unwrap()))
        .collect();
    let ecfg = EvalConfig {
        chunk_s: 3.2,
        prompt_s: 1.2,
        temperatures: vec![0.8, 1.0],
        seed: 11,
        max_chunks: Some(3),
    };
    let chunks = chunk_dialogues(&dialogues, &ecfg).unwrap();
    assert_eq!(chunks.len(), 4);
    let grids: Vec<TokenGrid> = dialogues.iter().map(|(_, g)| g.clone()).collect();
    let lm = mock_lm_train(&grids, &PseudoAsr, decoded_vocab(&schema)).unwrap();
    let model = small_model(schema);
    let a = run_experiment(&model, &chunks, &ecfg, &lm, &PseudoAsr).unwrap();
    let b = run_experiment(&model, &chunks, &ecfg, &lm, &PseudoAsr).unwrap();
    assert_eq!(a.to_tsv().unwrap(), b.to_tsv().unwrap());
    assert_eq!(a.rows.len(), 3);
    assert_eq!(a.rows[2].label(), "reference");
    assert!(a.rows.iter().all(|r| r.samples.len() == 3));
    let tsv = a.to_tsv().unwrap();
    let header = tsv.lines().nth(1).unwrap();
    assert_eq!(header, REPORT_COLUMNS.join("\t"));
    // reference row scores the real continuation
    let reference = a.row(None).unwrap();
    for (s, c) in reference.samples.iter().zip(&chunks) {
        let (tokens, score, _) = score_region(&c.grid, c.prompt_frames, &lm, &PseudoAsr).unwrap();
        assert_eq!(s.lm, score);
        assert_eq!(s.tokens.to_vec(), tokens);
    }
    let seeds: Vec<u64> = a.rows[0].samples.iter().map(|s| s.seed).collect();
    assert_eq!(seeds, (0..3).map(|i| sample_seed(11, 0, i)).collect::<Vec<_>>());
    assert_eq!(
        shuffled_ppl(&a.rows[0].samples, &lm, 5).unwrap(),
        shuffled_ppl(&a.rows[0].samples, &lm, 5).unwrap()
    );
}
