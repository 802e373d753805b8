use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{write_file, Command, Common, RunConfig, RunDir};
use crate::alignment::{
    prepare_dialogue, read_diarization, read_manifest, read_transcript, split_manifest, write_diarization,
    write_manifest, write_transcript, ActivityTrack, Interval, ManifestRecord, TimedToken, TimedTranscript,
};
use crate::error::{Error, Result};
use crate::eval::{chunk_dialogues, decoded_vocab, load_manifest_grids, mock_lm_train, run_experiment, EvalConfig};
use crate::generation::{
    best_of_n, continue_dialogue, write_generation_manifest, GenerationRecord, PseudoAsr, SamplerConfig, TtsInput,
};
use crate::model::{checkpoint, train, ModelState};
use crate::rng::derive_seed;
use crate::synth::synth_corpus;
use crate::token_grid::{Channel, TokenGrid, GRID_MAGIC};
use crate::turn_taking::{activity_from_grid, analyze, TurnTakingTotals};
use crate::{describe_frames, seconds_to_frames, StreamRole};

pub(super) fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            common,
            dialogues,
            duration_s,
        } => synth(&common, dialogues, duration_s),
        Command::Prep {
            common,
            transcripts,
            diarization,
        } => prep(&common, &transcripts, &diarization),
        Command::Split { common, manifest } => split(&common, &manifest),
        Command::Train {
            common,
            manifest,
            resume,
            steps,
        } => train_cmd(&common, &manifest, resume.as_deref(), steps),
        Command::Continue {
            common,
            checkpoint,
            manifest,
            tau,
            max_chunks,
        } => continue_cmd(&common, &checkpoint, &manifest, tau, max_chunks),
        Command::Tts {
            common,
            checkpoint,
            transcript,
            n,
            tau,
            frames,
        } => tts(&common, &checkpoint, &transcript, n, tau, frames),
        Command::Analyze {
            common,
            grid,
            manifest,
            segments,
            duration_s,
        } => analyze_cmd(&common, grid, manifest, segments, duration_s),
        Command::Eval {
            common,
            checkpoint,
            manifest,
            tau,
        } => eval(&common, &checkpoint, &manifest, tau),
        Command::Inspect { path } => inspect(&path),
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn synth(common: &Common, dialogues: usize, duration_s: f64) -> Result<()> {
    let mut cfg = resolve(common)?;
    cfg.synth.validate()?;
    if dialogues == 0 || !(duration_s > 0.0) {
        return Err(Error::Usage("synth needs at least one dialogue and a positive duration".into()));
    }
    // make the echoed config directly usable by `prep`
    let schema = cfg.synth.schema();
    cfg.schema.kind = schema.kind;
    cfg.schema.text_vocab = schema.text_vocab();
    cfg.schema.semantic_vocab = schema.semantic_vocab();
    cfg.schema.acoustic_vocab = schema.acoustic_vocab();
    let mut run = RunDir::create(&common.out, &cfg)?;
    let frames = seconds_to_frames(duration_s);
    make_dirs(&run, &["transcripts", "diarization"])?;
    for d in synth_corpus(&cfg.synth, dialogues, frames, cfg.seed) {
        write_transcript(run.join(&format!("transcripts/{}.tsv", d.id)), &d.transcript())?;
        write_diarization(run.join(&format!("diarization/{}.tsv", d.id)), &d.segments())?;
    }
    run.line(&format!("wrote {dialogues} dialogues of {}", describe_frames(frames)));
    Ok(())
}

fn make_dirs(run: &RunDir, names: &[&str]) -> Result<()> {
    for name in names {
        let path = run.join(name);
        fs::create_dir_all(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    }
    Ok(())
}

fn tsv_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.path();
        if path.extension().is_some_and(|e| e == "tsv") {
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            out.insert(stem, path);
        }
    }
    Ok(out)
}

fn prep(common: &Common, transcripts: &Path, diarization: &Path) -> Result<()> {
    let cfg = resolve(common)?;
    let schema = cfg.schema.build()?;
    let mut run = RunDir::create(&common.out, &cfg)?;
    make_dirs(&run, &["grids"])?;
    let texts = tsv_stems(transcripts)?;
    let diars = tsv_stems(diarization)?;
    let mut records = Vec::new();
    let (mut pad, mut text_frames, mut dropped) = (0.0, 0usize, 0usize);
    for (id, diar_path) in &diars {
        let Some(text_path) = texts.get(id) else {
            return Err(Error::Invalid(format!("dialogue {id} has diarization but no transcript")));
        };
        let segments = read_diarization(diar_path)?;
        let words = read_transcript(text_path)?;
        let seed = derive_seed(cfg.seed, crate::rng::fnv1a(id));
        let prepared = prepare_dialogue(id, &words, &segments, &schema, seed)?;
        let grid_rel = format!("grids/{id}.jmg");
        prepared.grid.save(run.join(&grid_rel))?;
        let ratio = prepared.grid.pad_ratio()?;
        pad += ratio * prepared.grid.len() as f64;
        text_frames += prepared.grid.len();
        dropped += prepared.dropped;
        run.line(&format!(
            "{id}: {}, pad ratio {ratio:.4}, channels {:?}",
            describe_frames(prepared.grid.len()),
            prepared.channel_map
        ));
        records.push(ManifestRecord {
            id: id.clone(),
            grid_path: grid_rel,
            duration_s: prepared.grid.duration_s(),
            split: "none".into(),
        });
    }
    if let Some(orphan) = texts.keys().find(|k| !diars.contains_key(*k)) {
        return Err(Error::Invalid(format!("dialogue {orphan} has a transcript but no diarization")));
    }
    if records.is_empty() {
        return Err(Error::Invalid("no dialogues found".into()));
    }
    write_manifest(run.join("manifest.tsv"), &records)?;
    let overall = if text_frames > 0 { pad / text_frames as f64 } else { 0.0 };
    let summary = format!(
        "dialogues\t{}\nframes\t{text_frames}\npad_ratio\t{overall:.6}\ndropped_tokens\t{dropped}\n",
        records.len()
    );
    write_file(&run.join("pad_summary.tsv"), summary.as_bytes())?;
    run.line(&format!("{} dialogues, overall pad ratio {overall:.4}", records.len()));
    println!("{summary}");
    Ok(())
}

fn split(common: &Common, manifest: &Path) -> Result<()> {
    let cfg = resolve(common)?;
    let mut run = RunDir::create(&common.out, &cfg)?;
    let records = read_manifest(manifest)?;
    let parts = split_manifest(&records, cfg.split, cfg.seed)?;
    let mut out = Vec::new();
    for (name, part) in [("train", &parts.train), ("valid", &parts.valid), ("test", &parts.test)] {
        for r in part {
            out.push(ManifestRecord {
                grid_path: r.resolve(manifest).to_string_lossy().into_owned(),
                split: name.to_string(),
                ..r.clone()
            });
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    write_manifest(run.join("manifest.tsv"), &out)?;
    run.line(&format!(
        "train {} / valid {} / test {}",
        parts.train.len(),
        parts.valid.len(),
        parts.test.len()
    ));
    Ok(())
}

/// Grids of `split`, or all grids when the manifest has no such split.
fn split_grids(manifest: &Path, split: &str) -> Result<Vec<(String, TokenGrid)>> {
    let picked = load_manifest_grids(manifest, Some(split))?;
    if !picked.is_empty() {
        return Ok(picked);
    }
    log::warn!("manifest has no {split} split; using every dialogue");
    load_manifest_grids(manifest, None)
}

fn shared_schema(grids: &[(String, TokenGrid)]) -> Result<crate::GridSchema> {
    let first = grids.first().ok_or_else(|| Error::Invalid("manifest lists no grids".into()))?;
    if let Some((id, _)) = grids.iter().find(|(_, g)| g.schema() != first.1.schema()) {
        return Err(Error::Schema(format!("grid {id} uses a different schema")));
    }
    Ok(first.1.schema().clone())
}

fn train_cmd(common: &Common, manifest: &Path, resume: Option<&Path>, steps: Option<u64>) -> Result<()> {
    let mut cfg = resolve(common)?;
    if steps.is_some() {
        cfg.train.steps = steps;
    }
    cfg.train.validate()?;
    let grids = split_grids(manifest, "train")?;
    let schema = shared_schema(&grids)?;
    let model_cfg = cfg.model.config(schema, cfg.seed);
    let mut run = RunDir::create(&common.out, &cfg)?;
    let mut state = match resume {
        Some(p) => checkpoint::load_matching(p, &model_cfg)?,
        None => ModelState::init(model_cfg)?,
    };
    run.line(&format!(
        "{} parameters, {} training grids, starting at step {}",
        state.model.param_count(),
        grids.len(),
        state.step
    ));
    let data: Vec<TokenGrid> = grids.into_iter().map(|(_, g)| g).collect();
    let ckpt_dir = run.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(format!("creating {}", ckpt_dir.display()), e))?;
    let mut curve = String::from("step\tloss\ttext\tsemantic\tacoustic\tlr_temporal\tlr_depth\n");
    let every = cfg.train.checkpoint_every.max(1);
    let result = train(&mut state, &data, &cfg.train, |st, s| {
        let l = &s.loss;
        writeln!(
            curve,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:e}\t{:e}",
            s.step,
            l.total,
            l.role_mean_nll(StreamRole::Text),
            l.role_mean_nll(StreamRole::SemanticAudio),
            l.role_mean_nll(StreamRole::AcousticAudio),
            s.lr_temporal,
            s.lr_depth
        )
        .expect("write to string");
        if s.step % every == 0 {
            checkpoint::save(st, ckpt_dir.join(format!("step{:06}.ckpt", s.step)))?;
        }
        Ok(())
    });
    write_file(&run.join("loss.tsv"), curve.as_bytes())?;
    match result {
        Ok(history) => {
            checkpoint::save(&state, run.join("model.ckpt"))?;
            if let (Some(first), Some(last)) = (history.first(), history.last()) {
                run.line(&format!(
                    "trained {} steps: loss {:.4} -> {:.4}",
                    history.len(),
                    first.loss.total,
                    last.loss.total
                ));
            }
            Ok(())
        }
        Err(e) => {
            let finite = state
                .model
                .params()
                .tensors()
                .iter()
                .all(|t| t.iter().all(|x| x.is_finite()));
            if finite {
                checkpoint::save(&state, run.join("last_good.ckpt"))?;
                run.line(&format!("aborted at step {}; last good state saved", state.step + 1));
            } else {
                run.line("aborted; parameters are not finite, keeping earlier checkpoints only");
            }
            Err(e)
        }
    }
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn continue_cmd(common: &Common, ckpt: &Path, manifest: &Path, tau: f64, max_chunks: Option<usize>) -> Result<()> {
    let cfg = resolve(common)?;
    let state = checkpoint::load(ckpt)?;
    let eval_cfg = EvalConfig {
        max_chunks,
        temperatures: vec![tau],
        seed: cfg.seed,
        ..cfg.eval.clone()
    };
    let chunks = chunk_dialogues(&split_grids(manifest, "test")?, &eval_cfg)?;
    let chunks = &chunks[..max_chunks.unwrap_or(chunks.len()).min(chunks.len())];
    let mut run = RunDir::create(&common.out, &cfg)?;
    make_dirs(&run, &["grids"])?;
    let mut records = Vec::new();
    for (i, chunk) in chunks.iter().enumerate() {
        let sampler = SamplerConfig {
            temperature: tau,
            seed: crate::eval::sample_seed(cfg.seed, 0, i),
            max_new_frames: chunk.grid.len() - chunk.prompt_frames,
        };
        let result = continue_dialogue(&state.model, &chunk.prompt(), sampler.max_new_frames, &sampler)?;
        let rel = format!("grids/{}.jmg", file_safe(&chunk.id));
        result.grid.save(run.join(&rel))?;
        records.push(GenerationRecord {
            id: chunk.id.clone(),
            prompt_frames: result.prompt_frames,
            new_frames: result.new_frames(),
            tau,
            seed: sampler.seed,
            grid_path: rel,
            wer: None,
        });
    }
    write_generation_manifest(run.join("generations.tsv"), &records)?;
    run.line(&format!("continued {} chunks at tau {tau}", records.len()));
    Ok(())
}

fn tts(common: &Common, ckpt: &Path, transcript: &Path, n: usize, tau: f64, frames: Option<usize>) -> Result<()> {
    let cfg = resolve(common)?;
    let state = checkpoint::load(ckpt)?;
    let records = read_transcript(transcript)?;
    let mut per_channel: BTreeMap<u8, Vec<TimedToken>> = BTreeMap::new();
    for r in &records {
        let channel = Channel::from_str(&r.label)
            .map_err(|_| Error::Invalid(format!("transcript label {:?} is not a channel", r.label)))?;
        per_channel.entry(channel.code()).or_default().push(r.token);
    }
    let mut transcripts = Vec::new();
    for channel in Channel::BOTH {
        let mut tokens = per_channel.remove(&channel.code()).unwrap_or_default();
        tokens.sort_by(|a, b| a.start.total_cmp(&b.start));
        transcripts.push(TimedTranscript::new(channel, tokens));
    }
    let last = records.iter().map(|r| r.token.start).fold(0.0f64, f64::max);
    let frames = frames.unwrap_or(seconds_to_frames(last + 1.0));
    let input = TtsInput { transcripts, frames };
    let seeds: Vec<u64> = (0..n as u64).map(|i| derive_seed(cfg.seed, i)).collect();
    let mut run = RunDir::create(&common.out, &cfg)?;
    let best = best_of_n(&state.model, &input, &seeds, tau, &PseudoAsr)?;
    best.selected.grid.save(run.join("selected.jmg"))?;
    let mut table = String::from("seed\tedits\treference_len\twer\tselected\n");
    for (i, c) in best.table.iter().enumerate() {
        match c.score {
            Some(s) => writeln!(table, "{}\t{}\t{}\t{:.6}\t{}", c.seed, s.edits, s.reference_len, s.rate(), i == best.selected_index),
            None => writeln!(table, "{}\t\t\t\tfalse", c.seed),
        }
        .expect("write to string");
    }
    write_file(&run.join("wer.tsv"), table.as_bytes())?;
    write_generation_manifest(
        run.join("generations.tsv"),
        &[GenerationRecord {
            id: file_safe(&transcript.file_stem().unwrap_or_default().to_string_lossy()),
            prompt_frames: 0,
            new_frames: best.selected.grid.len(),
            tau,
            seed: best.selected.seed,
            grid_path: "selected.jmg".into(),
            wer: Some(best.score.rate()),
        }],
    )?;
    run.line(&format!("selected candidate {} with WER {:.4}", best.selected_index, best.score.rate()));
    Ok(())
}

fn grid_totals(grid: &TokenGrid) -> Result<TurnTakingTotals> {
    let g = if grid.is_delayed() { grid.remove_delays()? } else { grid.clone() };
    Ok(analyze(
        &activity_from_grid(&g, Channel::Model)?,
        &activity_from_grid(&g, Channel::User)?,
        g.duration_s(),
    ))
}

fn analyze_cmd(
    common: &Common,
    grid: Option<PathBuf>,
    manifest: Option<PathBuf>,
    segments: Option<PathBuf>,
    duration_s: Option<f64>,
) -> Result<()> {
    let cfg = resolve(common)?;
    let totals = match (grid, manifest, segments) {
        (Some(g), None, None) => grid_totals(&TokenGrid::load(g)?)?,
        (None, Some(m), None) => {
            let grids = load_manifest_grids(&m, None)?;
            let mut acc: Option<TurnTakingTotals> = None;
            for (_, g) in &grids {
                let t = grid_totals(g)?;
                acc = Some(acc.map_or(t.clone(), |a| a.merge(&t)));
            }
            acc.ok_or_else(|| Error::Invalid("manifest lists no grids".into()))?
        }
        (None, None, Some(s)) => {
            let segs = read_diarization(&s)?;
            let mut per: [Vec<Interval>; 2] = [Vec::new(), Vec::new()];
            for seg in &segs {
                let channel = Channel::from_str(&seg.speaker)
                    .map_err(|_| Error::Invalid(format!("segment label {:?} is not a channel", seg.speaker)))?;
                per[channel.code() as usize].push(seg.interval);
            }
            let end = segs.iter().map(|s| s.interval.end).fold(0.0f64, f64::max);
            let duration = duration_s.unwrap_or(end);
            let [a, b] = per;
            analyze(
                &ActivityTrack::from_unsorted(Channel::Model, a),
                &ActivityTrack::from_unsorted(Channel::User, b),
                duration,
            )
        }
        _ => return Err(Error::Usage("analyze needs exactly one of --grid, --manifest, --segments".into())),
    };
    let report = totals.report()?;
    let mut run = RunDir::create(&common.out, &cfg)?;
    let text = report.to_text();
    write_file(&run.join("report.txt"), text.as_bytes())?;
    run.line("turn-taking report written");
    print!("{text}");
    Ok(())
}

fn eval(common: &Common, ckpt: &Path, manifest: &Path, tau: Option<f64>) -> Result<()> {
    let mut cfg = resolve(common)?;
    if let Some(t) = tau {
        cfg.eval.temperatures = vec![t];
    }
    cfg.eval.seed = cfg.seed;
    cfg.eval.validate()?;
    let state = checkpoint::load(ckpt)?;
    let schema = state.model.config().schema.clone();
    let test = split_grids(manifest, "test")?;
    let train: Vec<TokenGrid> = split_grids(manifest, "train")?.into_iter().map(|(_, g)| g).collect();
    let lm = mock_lm_train(&train, &PseudoAsr, decoded_vocab(&schema))?;
    let chunks = chunk_dialogues(&test, &cfg.eval)?;
    let mut run = RunDir::create(&common.out, &cfg)?;
    run.line(&format!("{} chunks from {} test dialogues", chunks.len(), test.len()));
    let report = run_experiment(&state.model, &chunks, &cfg.eval, &lm, &PseudoAsr)?;
    let tsv = report.to_tsv()?;
    write_file(&run.join("report.tsv"), tsv.as_bytes())?;
    print!("{tsv}");
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if bytes.starts_with(GRID_MAGIC) {
        let grid = TokenGrid::from_bytes(&bytes)?;
        println!("grid\t{:?}", grid.schema().kind);
        println!("streams\t{}", grid.width());
        println!("length\t{}", describe_frames(grid.len()));
        println!("delayed\t{}", grid.is_delayed());
        println!("pad_ratio\t{:.6}", grid.pad_ratio()?);
    } else if bytes.starts_with(&checkpoint::CHECKPOINT_MAGIC) {
        let state = checkpoint::decode(&bytes)?;
        let c = state.model.config();
        println!("checkpoint\tstep {}", state.step);
        println!("parameters\t{}", state.model.param_count());
        println!(
            "model\td_model {} heads {} temporal {} depth {} max_frames {}",
            c.d_model, c.n_heads, c.temporal_layers, c.depth_layers, c.max_frames
        );
        println!("context\t{}", describe_frames(c.max_frames));
    } else {
        let records = read_manifest(path)?;
        let mut splits: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &records {
            *splits.entry(r.split.as_str()).or_default() += 1;
        }
        let total: f64 = records.iter().map(|r| r.duration_s).sum();
        println!("manifest\t{} dialogues, {:.2} s", records.len(), total);
        for (s, n) in splits {
            println!("split\t{s}\t{n}");
        }
    }
    Ok(())
}
