//! One line per acceptance criterion. Run with
//! `cargo test --test acceptance`; exits nonzero if any criterion fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{all_sequences, bfs_distances, oracle, random_content, random_track, totals_gap};
use jmlab::alignment::*;
use jmlab::eval::*;
use jmlab::generation::*;
use jmlab::model::*;
use jmlab::rng::seeded;
use jmlab::synth::{expected_turn_taking, synth_corpus, SynthConfig};
use jmlab::turn_taking::{analyze, segments_to_ipus, MIN_IPU_SILENCE};
use jmlab::{describe_frames, frames_to_seconds, seconds_to_frames, Channel, GridSchema, StreamRole, TokenGrid};
use rand::Rng;

const DELAY_GRIDS: usize = 1000;
const DELAY_BUDGET: Duration = Duration::from_secs(5);

const ORACLE_INSTANCES: usize = 1000;
const ORACLE_TOL_S: f64 = 1e-9;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);

const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(60);

const UNIFORM_LOSS_TOL: f64 = 0.02;

const CLOSED_LOOP_TRANSCRIPTS: usize = 1000;

const E2E_MAX_PARAMS: usize = 1_000_000;
const E2E_BUDGET: Duration = Duration::from_secs(30 * 60);
const E2E_MIN_CHUNKS: usize = 100;
const E2E_TAU: f64 = 1.0;
const E2E_REL_TOL: f64 = 0.30;
const E2E_STEPS: u64 = 400;
const E2E_TRAIN_DIALOGUES: usize = 60;
const E2E_TEST_DIALOGUES: usize = 25;
const E2E_DIALOGUE_FRAMES: usize = 1500;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn frame_arithmetic() -> Outcome {
    let text = describe_frames(2048);
    ensure(text == "2048 frames = 163.84 s (2.7 min)", || format!("got {text:?}"))?;
    ensure(frames_to_seconds(2048) == 163.84, || "2048 frames".into())?;
    ensure(seconds_to_frames(163.84) == 2048, || "163.84 s".into())?;
    ensure(seconds_to_frames(10.0) == 125 && seconds_to_frames(30.0) == 375, || "10 s / 30 s".into())?;
    Ok(text)
}

fn delay_algebra() -> Outcome {
    let start = Instant::now();
    let schemas = [ok(GridSchema::dialogue(7, 11, 6))?, ok(GridSchema::tts(7, 11, 6))?];
    let mut delays: Vec<usize> = schemas.iter().flat_map(|s| s.streams.iter().map(|x| x.delay)).collect();
    delays.sort();
    delays.dedup();
    ensure(delays == [0, 1, 25, 27], || format!("delays {delays:?}"))?;
    let mut rng = seeded(99);
    for i in 0..DELAY_GRIDS {
        let schema = &schemas[i % 2];
        let len = rng.random_range(0..120);
        let grid = random_content(schema, len, rng.random());
        let back = ok(ok(grid.apply_delays())?.remove_delays())?;
        let keep = len.saturating_sub(schema.max_delay());
        ensure(back.len() == len, || format!("grid {i}: length {}", back.len()))?;
        ensure(ok(back.slice(0, keep))? == ok(grid.slice(0, keep))?, || format!("grid {i} differs"))?;
    }
    let took = start.elapsed();
    ensure(took < DELAY_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{DELAY_GRIDS} grids, delays {delays:?}, {took:.2?}"))
}

fn turn_taking_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(7);
    let mut worst = 0.0f64;
    for i in 0..ORACLE_INSTANCES {
        let ms = rng.random_range(1..20_000);
        let a = random_track(&mut rng, Channel::Model, ms);
        let b = random_track(&mut rng, Channel::User, ms);
        let gap = totals_gap(&analyze(&a, &b, ms as f64 / 1000.0), &oracle(&a, &b, ms));
        ensure(gap <= ORACLE_TOL_S, || format!("instance {i}: difference {gap}"))?;
        worst = worst.max(gap);
    }
    let took = start.elapsed();
    ensure(took < ORACLE_BUDGET, || format!("took {took:?}"))?;
    let track = ok(ActivityTrack::new(
        Channel::Model,
        vec![ok(Interval::new(0.0, 1.0))?, ok(Interval::new(1.2, 2.0))?],
    ))?;
    let split = segments_to_ipus(&track, MIN_IPU_SILENCE).ipus.len();
    ensure(split == 2, || format!("0.2 s silence gave {split} IPUs"))?;
    Ok(format!("{ORACLE_INSTANCES} instances, max diff {worst:.1e} s, {took:.2?}; 0.2 s silence splits"))
}

fn tiny_config(schema: GridSchema, d_model: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        d_model,
        n_heads: 2,
        temporal_layers: 2,
        depth_layers: 1,
        max_frames: 16,
        schema,
        seed,
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let schema = ok(GridSchema::dialogue(6, 9, 5))?;
    let model = ok(Model::new(tiny_config(schema.clone(), 16, 3)))?;
    let grid = ok(random_content(&schema, 8, 11).apply_delays())?;
    let mut worst = 0.0f64;
    for weights in [LossWeights::default(), LossWeights::uniform()] {
        for c in ok(grad_check(&model, &grid, &weights, GRAD_STEP))? {
            ensure(c.scalars > 0, || format!("{:?} empty", c.group))?;
            ensure(c.relative_error <= GRAD_TOL, || format!("{c:?}"))?;
            worst = worst.max(c.relative_error);
        }
    }
    let took = start.elapsed();
    ensure(took < GRAD_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("d_model 16, T 8, max relative error {worst:.1e}, {took:.2?}"))
}

fn loss_semantics() -> Outcome {
    let schema = ok(GridSchema::dialogue(6, 9, 5))?;
    let model = ok(Model::new(tiny_config(schema.clone(), 8, 3)))?;
    let text = schema.text_stream(Channel::Model).ok_or("no self text stream")?;
    let pad = schema.streams[text].pad_id.unwrap();
    let mut tokens = random_content(&schema, 8, 4).tokens().to_vec();
    for t in 0..8 {
        tokens[t * schema.len() + text] = pad;
    }
    let grid = ok(ok(TokenGrid::new(schema.clone(), tokens, false))?.apply_delays())?;
    let w = LossWeights::default();
    let report = ok(model.loss(&grid, &w))?;
    let s = &report.streams[text];
    ensure(s.tokens == 8 && s.weight_sum == 8.0 * 0.5 * w.text, || format!("PAD weights {s:?}"))?;
    ensure((s.weighted_nll - 0.5 * w.text * s.nll_sum).abs() < 1e-9, || "PAD nll".into())?;

    let no_ac = ok(model.loss(&grid, &LossWeights { acoustic: 0.0, ..w }))?;
    let (num, den) = report
        .streams
        .iter()
        .filter(|s| s.role != StreamRole::AcousticAudio)
        .fold((0.0, 0.0), |(a, b), s| (a + s.weighted_nll, b + s.weight_sum));
    ensure(no_ac.total == num / den, || format!("{} vs {}", no_ac.total, num / den))?;
    ensure(no_ac.role_component(StreamRole::AcousticAudio) == 0.0, || "acoustic term left".into())?;

    let big = ok(GridSchema::dialogue(40, 60, 30))?;
    let fresh = ok(Model::new(tiny_config(big.clone(), 16, 3)))?;
    let r = ok(fresh.loss(&ok(random_content(&big, 16, 2).apply_delays())?, &LossWeights::uniform()))?;
    let count: usize = r.streams.iter().map(|s| s.tokens).sum();
    let expected: f64 = r
        .streams
        .iter()
        .zip(&big.streams)
        .map(|(s, spec)| s.tokens as f64 * (spec.vocab_size as f64).ln())
        .sum::<f64>()
        / count as f64;
    let rel = (r.total - expected).abs() / expected;
    ensure(rel < UNIFORM_LOSS_TOL, || format!("uniform loss {} vs {expected}", r.total))?;
    Ok(format!("PAD at 0.5 w_text, acoustic removed, uniform loss off by {:.2}%", rel * 100.0))
}

fn swap_isolation() -> Outcome {
    let schema = ok(GridSchema::dialogue(6, 9, 5))?;
    let mut state = ok(ModelState::init(tiny_config(schema.clone(), 8, 3)))?;
    let train = TrainConfig {
        lr_max: 1e-2,
        warmup_steps: 1,
        batch_size: 1,
        batch_frames: 10,
        ..TrainConfig::pretrain()
    };
    ok(train_step(&mut state, &[ok(random_content(&schema, 10, 9).apply_delays())?], &train))?;
    let swapped = ok(swap_text_vocab(&state, 12, 77))?;
    let mut names = state.model.text_vocab_param_names();
    names.sort();
    let mut changed = Vec::new();
    for info in state.model.param_infos() {
        let a = state.model.param(&info.name).unwrap();
        let b = swapped.model.param(&info.name).unwrap();
        if a != b {
            changed.push(info.name.clone());
        }
    }
    changed.sort();
    ensure(changed == names, || format!("changed {changed:?}, expected {names:?}"))?;
    let has = |p: &str| names.iter().any(|n| n.starts_with(p));
    ensure(has("temporal.emb.text") && has("depth.emb.text") && has("text_linear."), || format!("{names:?}"))?;
    Ok(format!("changed: {}", names.join(", ")))
}

fn warmup_schedule() -> Outcome {
    let lr = 3e-5;
    let got = [lr_at(0, lr, 500), lr_at(250, lr, 500), lr_at(500, lr, 500)];
    ensure(got == [0.0, 0.5 * lr, lr], || format!("{got:?}"))?;
    Ok(format!("{got:?}"))
}

fn random_channel(rng: &mut impl Rng, channel: Channel, frames: usize, vocab: u32) -> Result<(TimedTranscript, ActivityTrack), String> {
    let mut tokens = Vec::new();
    let mut intervals = Vec::new();
    for f in 0..frames {
        if rng.random_bool(0.3) {
            tokens.push(TimedToken {
                token_id: rng.random_range(0..vocab),
                start: (f as f64 + rng.random_range(0.0..0.9)) * 0.08,
            });
            intervals.push(ok(Interval::new(f as f64 * 0.08, (f + 1) as f64 * 0.08))?);
        }
    }
    Ok((TimedTranscript::new(channel, tokens), ActivityTrack::from_unsorted(channel, intervals)))
}

fn closed_loop() -> Outcome {
    let schema = ok(GridSchema::dialogue(40, 42, 16))?;
    let vocab = schema.streams[0].content_vocab();
    let mut rng = seeded(12);
    for i in 0..CLOSED_LOOP_TRANSCRIPTS {
        let frames = rng.random_range(1..120);
        let (ta, aa) = random_channel(&mut rng, Channel::Model, frames, vocab)?;
        let (tb, ab) = random_channel(&mut rng, Channel::User, frames, vocab)?;
        let aligned = ok(build_training_grid(&[ta.clone(), tb.clone()], &[aa, ab], &schema, frames))?;
        let plain = ok(aligned.grid.remove_delays())?;
        for t in [&ta, &tb] {
            let hyp = ok(decode_channel(&plain, t.channel))?;
            let reference = t.token_ids();
            let clean = if reference.is_empty() {
                hyp.is_empty()
            } else {
                ok(wer(&hyp, &reference))? == 0.0
            };
            ensure(clean, || format!("transcript {i} {:?}: {hyp:?} vs {reference:?}", t.channel))?;
        }
    }

    let tts = ok(GridSchema::tts(8, 10, 5))?;
    let model = ok(Model::new(ModelConfig {
        d_model: 8,
        n_heads: 2,
        temporal_layers: 1,
        depth_layers: 1,
        max_frames: 64,
        schema: tts,
        seed: 17,
    }))?;
    let words = |ch, ids: &[(u32, f64)]| {
        TimedTranscript::new(ch, ids.iter().map(|&(token_id, start)| TimedToken { token_id, start }).collect())
    };
    let input = TtsInput {
        transcripts: vec![
            words(Channel::Model, &[(1, 0.0), (2, 0.16), (3, 0.4)]),
            words(Channel::User, &[(4, 0.8), (5, 1.0)]),
        ],
        frames: 20,
    };
    let activity = vec![
        ok(ActivityTrack::new(Channel::Model, vec![ok(Interval::new(0.0, 0.6))?]))?,
        ok(ActivityTrack::new(Channel::User, vec![ok(Interval::new(0.7, 1.2))?]))?,
    ];
    let mut candidates = Vec::new();
    for seed in 0..5 {
        candidates.push(ok(tts_generate(&model, &input, &TtsAudio::Sample, &SamplerConfig::new(1.0, seed)))?);
    }
    let perfect = ok(tts_generate(&model, &input, &TtsAudio::Forced(activity), &SamplerConfig::new(1.0, 99)))?;
    candidates.insert(2, perfect.clone());
    let best = ok(best_of_candidates(candidates, &input, &PseudoAsr))?;
    ensure(best.selected_index == 2 && best.selected == perfect, || format!("selected {}", best.selected_index))?;

    let seqs = all_sequences(3, 6);
    for a in &seqs {
        let dist = bfs_distances(a, 3, 6);
        for b in &seqs {
            let d = edit_distance(a, b);
            ensure(d == dist[b], || format!("{a:?} -> {b:?}: {d} vs {}", dist[b]))?;
        }
    }
    Ok(format!(
        "{CLOSED_LOOP_TRANSCRIPTS} transcripts at WER 0, injected candidate selected, {} sequence pairs",
        seqs.len() * seqs.len()
    ))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let synth = SynthConfig::default();
    let schema = synth.schema();
    let mut data = Vec::new();
    for (i, d) in synth_corpus(&synth, E2E_TRAIN_DIALOGUES, E2E_DIALOGUE_FRAMES, 7).iter().enumerate() {
        let ch = if i % 2 == 0 { Channel::Model } else { Channel::User };
        data.push(ok(d.grid(&schema, ch))?);
    }
    let mut state = ok(ModelState::init(ModelConfig {
        d_model: 32,
        n_heads: 2,
        temporal_layers: 2,
        depth_layers: 1,
        max_frames: 384,
        schema: schema.clone(),
        seed: 1,
    }))?;
    let params = state.model.param_count();
    ensure(params <= E2E_MAX_PARAMS, || format!("{params} parameters"))?;
    let train_cfg = TrainConfig {
        lr_max: 3e-3,
        warmup_steps: 20,
        batch_size: 4,
        batch_frames: 384,
        pad_loss_factor: 1.0,
        steps: Some(E2E_STEPS),
        ..TrainConfig::pretrain()
    };
    ok(train(&mut state, &data, &train_cfg, |_, _| Ok(())))?;
    let trained = start.elapsed();

    let mut test = Vec::new();
    for d in synth_corpus(&synth, E2E_TEST_DIALOGUES, E2E_DIALOGUE_FRAMES, 99) {
        test.push((d.id.clone(), ok(d.grid(&schema, Channel::Model))?));
    }
    let eval_cfg = EvalConfig {
        temperatures: vec![E2E_TAU],
        seed: 0,
        ..EvalConfig::default()
    };
    let chunks = ok(chunk_dialogues(&test, &eval_cfg))?;
    ensure(chunks.len() >= E2E_MIN_CHUNKS, || format!("{} chunks", chunks.len()))?;
    let lm = ok(mock_lm_train(&data, &PseudoAsr, decoded_vocab(&schema)))?;
    let report = ok(run_experiment(&state.model, &chunks, &eval_cfg, &lm, &PseudoAsr))?;
    let row = report.row(Some(E2E_TAU)).ok_or("missing row")?;
    let got = ok(row.turn_taking.report())?;
    let shuffled = ok(shuffled_ppl(&row.samples, &lm, 5))?;
    let window = eval_cfg.prompt_frames()..eval_cfg.chunk_frames();
    let want = ok(ok(expected_turn_taking(&synth, 400, E2E_DIALOGUE_FRAMES, window, 3))?.report())?;
    let took = start.elapsed();

    let detail = format!(
        "{params} params, {} chunks, overlap {:.2} vs {:.2} s/min, pause {:.2} vs {:.2} s/min, ppl {:.2} vs shuffled {:.2}, train {:.0?}, total {:.0?}",
        chunks.len(),
        got.overlap_s_per_min,
        want.overlap_s_per_min,
        got.pause_s_per_min,
        want.pause_s_per_min,
        row.mean_ppl,
        shuffled,
        trained,
        took,
    );
    let within = |g: f64, w: f64| (g - w).abs() <= E2E_REL_TOL * w;
    ensure(took < E2E_BUDGET, || format!("too slow: {detail}"))?;
    ensure(within(got.overlap_s_per_min, want.overlap_s_per_min), || detail.clone())?;
    ensure(within(got.pause_s_per_min, want.pause_s_per_min), || detail.clone())?;
    ensure(row.mean_ppl < shuffled, || detail.clone())?;
    Ok(detail)
}

const CLI_CONFIG: &str = r#"
seed = 5

[schema]
kind = "dialogue"
text_vocab = 18
semantic_vocab = 20
acoustic_vocab = 8

[model]
d_model = 8
n_heads = 2
temporal_layers = 1
depth_layers = 1
max_frames = 48

[train]
lr_max = 0.003
warmup_steps = 2
batch_size = 2
batch_frames = 48
checkpoint_every = 3

[eval]
chunk_s = 3.2
prompt_s = 1.2
temperatures = [0.8, 1.0]

[split]
train = 3
valid = 1
test = 1
"#;

fn cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["jmlab"];
    argv.extend_from_slice(args);
    match jmlab::cli::run(argv) {
        0 => Ok(()),
        code => Err(format!("{} exited with {code}", args[0])),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn determinism() -> Outcome {
    let tmp = ok(tempfile::tempdir())?;
    let dir = tmp.path();
    let cfg = dir.join("config.toml");
    ok(fs::write(&cfg, CLI_CONFIG))?;
    let c = p(&cfg);
    let (syn, prep, split) = (dir.join("synth"), dir.join("prep"), dir.join("split"));
    cli(&["synth", "--config", c, "--out", p(&syn), "--dialogues", "10", "--duration-s", "8"])?;
    cli(&[
        "prep",
        "--config",
        c,
        "--out",
        p(&prep),
        "--transcripts",
        p(&syn.join("transcripts")),
        "--diarization",
        p(&syn.join("diarization")),
    ])?;
    cli(&["split", "--config", c, "--out", p(&split), "--manifest", p(&prep.join("manifest.tsv"))])?;
    let manifest = split.join("manifest.tsv");
    let m = p(&manifest);

    let (full, part, resumed) = (dir.join("full"), dir.join("part"), dir.join("resumed"));
    cli(&["train", "--config", c, "--out", p(&full), "--manifest", m, "--steps", "8"])?;
    cli(&["train", "--config", c, "--out", p(&part), "--manifest", m, "--steps", "3"])?;
    let mid = part.join("checkpoints/step000003.ckpt");
    cli(&["train", "--config", c, "--out", p(&resumed), "--manifest", m, "--steps", "8", "--resume", p(&mid)])?;
    let a = ok(fs::read(full.join("model.ckpt")))?;
    let b = ok(fs::read(resumed.join("model.ckpt")))?;
    ensure(a == b, || "resumed checkpoint differs from uninterrupted run".into())?;

    let ckpt = full.join("model.ckpt");
    let (e1, e2) = (dir.join("eval1"), dir.join("eval2"));
    cli(&["eval", "--config", c, "--out", p(&e1), "--checkpoint", p(&ckpt), "--manifest", m])?;
    cli(&["eval", "--config", c, "--out", p(&e2), "--checkpoint", p(&ckpt), "--manifest", m])?;
    let r1 = ok(fs::read(e1.join("report.tsv")))?;
    let r2 = ok(fs::read(e2.join("report.tsv")))?;
    ensure(r1 == r2, || "eval reports differ".into())?;
    Ok(format!("8 steps vs 3 + resume: {} checkpoint bytes equal; eval report {} bytes equal", a.len(), r1.len()))
}

fn chunker_accounting() -> Outcome {
    let synth = SynthConfig::default();
    let schema = synth.schema();
    let lengths = [812usize, 375, 374, 1500, 0, 1124, 1875];
    let mut dialogues = Vec::new();
    for (i, &frames) in lengths.iter().enumerate() {
        let d = synth_corpus(&synth, 1, frames, i as u64).remove(0);
        dialogues.push((format!("d{i}"), ok(d.grid(&schema, Channel::Model))?));
    }
    let cfg = EvalConfig::default();
    let chunks = ok(chunk_dialogues(&dialogues, &cfg))?;
    let seconds: Vec<f64> = lengths.iter().map(|&n| frames_to_seconds(n)).collect();
    let want: usize = seconds.iter().map(|s| (s / 30.0).floor() as usize).sum();
    ensure(chunks.len() == want, || format!("{} chunks, expected {want}", chunks.len()))?;
    for c in &chunks {
        let (pr, re) = (c.prompt().len(), c.reference().len());
        ensure((pr, re) == (125, 250), || format!("{}: prompt {pr}, reference {re}", c.id))?;
    }
    Ok(format!("{want} chunks from {seconds:?} s, prompt 125 and reference 250 frames"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("frame arithmetic", frame_arithmetic),
        ("delay algebra", delay_algebra),
        ("turn-taking oracle", turn_taking_oracle),
        ("gradient check", gradient_check),
        ("loss semantics", loss_semantics),
        ("text vocabulary swap isolation", swap_isolation),
        ("warmup schedule", warmup_schedule),
        ("closed-loop pipeline", closed_loop),
        ("determinism", determinism),
        ("chunker accounting", chunker_accounting),
        ("end-to-end behavior", end_to_end),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
