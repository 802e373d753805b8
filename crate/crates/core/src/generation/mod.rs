//! Autoregressive sampling from a trained model: dialogue continuation and
//! multi-stream TTS with best-of-N selection.

mod records;
mod wer;

use ndarray::ArrayView1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use records::{read_generation_manifest, write_generation_manifest, GenerationRecord};
pub use wer::{corpus_wer, edit_distance, wer, WerScore};

use crate::alignment::{decode_channel, pseudo_encode, text_stream_from_transcript, ActivityTrack, TimedTranscript};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::seeded;
use crate::token_grid::{Channel, SchemaKind, TokenGrid};

/// Temperatures at or below this sample the argmax.
pub const ARGMAX_TEMPERATURE: f64 = 1e-6;

/// Prompt length of the continuation task: 10 s.
pub const PROMPT_FRAMES: usize = 125;
/// Frames generated after the prompt: 20 s.
pub const CONTINUATION_FRAMES: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub seed: u64,
    pub max_new_frames: usize,
}

impl SamplerConfig {
    pub fn new(temperature: f64, seed: u64) -> Self {
        SamplerConfig {
            temperature,
            seed,
            max_new_frames: CONTINUATION_FRAMES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// One sampled token: where it went and the logit it was drawn at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub frame: usize,
    pub stream: usize,
    pub token: u32,
    pub logit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    /// Delayed grid: prompt frames followed by generated frames.
    pub grid: TokenGrid,
    pub prompt_frames: usize,
    pub log: Vec<SampleRecord>,
    pub seed: u64,
    pub temperature: f64,
}

impl GenerationResult {
    pub fn new_frames(&self) -> usize {
        self.grid.len() - self.prompt_frames
    }
}

/// Draw from `softmax(logits / temperature)`. Entries at -inf are never
/// drawn; temperatures at or below [`ARGMAX_TEMPERATURE`] take the argmax.
pub fn sample_token<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> Result<u32> {
    if logits.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::Numeric("logits contain NaN or +inf".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Numeric("every logit is -inf".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Invalid(format!("temperature must be positive, got {temperature}")));
    }
    if temperature <= ARGMAX_TEMPERATURE {
        return Ok(logits.iter().position(|&x| x == max).unwrap() as u32);
    }
    let weights: Vec<f64> = logits.iter().map(|&x| ((x - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return Ok(i as u32);
            }
            u -= w;
        }
    }
    Ok(last as u32)
}

/// Where each token of a generated frame comes from.
enum Source {
    Forced(u32),
    Sample,
}

struct FrameSampler<'m> {
    model: &'m Model,
    temperature: f64,
    rng: ChaCha8Rng,
    log: Vec<SampleRecord>,
}

impl FrameSampler<'_> {
    fn draw(&mut self, frame: usize, stream: usize, logits: ArrayView1<f64>) -> Result<u32> {
        let spec = &self.model.config().schema.streams[stream];
        let mut masked = logits.to_vec();
        masked[spec.initial_id as usize] = f64::NEG_INFINITY;
        let token = sample_token(&masked, self.temperature, &mut self.rng)?;
        self.log.push(SampleRecord {
            frame,
            stream,
            token,
            logit: masked[token as usize],
        });
        Ok(token)
    }

    /// Produce frame `t` given its context vector. Streams still inside
    /// their delay are INITIAL.
    fn frame(&mut self, t: usize, z: ArrayView1<f64>, source: impl Fn(usize) -> Source) -> Result<Vec<u32>> {
        let schema = &self.model.config().schema;
        let source = |s: usize| {
            if t < schema.streams[s].delay {
                Source::Forced(schema.streams[s].initial_id)
            } else {
                source(s)
            }
        };
        let mut frame = vec![0u32; schema.len()];
        let mut all_forced = true;
        for (s, slot) in frame.iter_mut().enumerate() {
            match source(s) {
                Source::Forced(tok) => *slot = tok,
                Source::Sample => all_forced = false,
            }
        }
        if all_forced {
            return Ok(frame);
        }
        let model = self.model;
        for (j, s) in schema.text_streams().into_iter().enumerate() {
            if let Source::Sample = source(s) {
                frame[s] = self.draw(t, s, model.text_logits_for(j, z).view())?;
            }
        }
        let audio = schema.audio_streams();
        let needs_depth = audio.iter().any(|&s| matches!(source(s), Source::Sample));
        if !needs_depth {
            return Ok(frame);
        }
        let mut depth = model.depth_decoder(z);
        for s in schema.text_streams() {
            depth.push(frame[s])?;
        }
        for (k, &s) in audio.iter().enumerate() {
            if let Source::Sample = source(s) {
                let logits = depth.audio_logits()?;
                frame[s] = self.draw(t, s, logits.view())?;
            }
            if k + 1 < audio.len() {
                depth.push(frame[s])?;
            }
        }
        Ok(frame)
    }
}

/// Generate `total` frames. `source(t, s)` forces a token or asks for a
/// sample; streams inside their delay are always INITIAL.
fn run_frames(
    model: &Model,
    total: usize,
    sampler: &SamplerConfig,
    source: impl Fn(usize, usize) -> Source,
) -> Result<(TokenGrid, Vec<SampleRecord>)> {
    sampler.validate()?;
    let schema = model.config().schema.clone();
    if total > model.config().max_frames {
        return Err(Error::Invalid(format!(
            "{total} frames exceed the model context of {}",
            model.config().max_frames
        )));
    }
    let mut fs = FrameSampler {
        model,
        temperature: sampler.temperature,
        rng: seeded(sampler.seed),
        log: Vec::new(),
    };
    let mut grid = TokenGrid::empty(schema, true);
    let mut temporal = model.temporal_decoder();
    for t in 0..total {
        let prev = (t > 0).then(|| grid.frame(t - 1));
        let z = temporal.step(prev)?;
        let frame = fs.frame(t, z.view(), |s| source(t, s))?;
        grid.push_frame(&frame);
    }
    Ok((grid, fs.log))
}

/// Sample the frame that follows `context` (a delayed grid).
pub fn generate_frame(model: &Model, context: &TokenGrid, sampler: &SamplerConfig) -> Result<Vec<u32>> {
    check_schema(model, context)?;
    let len = context.len();
    let (grid, _) = run_frames(model, len + 1, sampler, |t, s| {
        if t < len {
            Source::Forced(context.get(t, s))
        } else {
            Source::Sample
        }
    })?;
    Ok(grid.frame(len).to_vec())
}

fn check_schema(model: &Model, grid: &TokenGrid) -> Result<()> {
    if grid.schema() != &model.config().schema {
        return Err(Error::Schema("grid schema does not match the model".into()));
    }
    if !grid.is_delayed() {
        return Err(Error::Grid("generation works on delayed grids".into()));
    }
    Ok(())
}

/// Teacher-force every stream of `prompt`, then sample `n_frames` more
/// frames of all streams on both channels.
pub fn continue_dialogue(
    model: &Model,
    prompt: &TokenGrid,
    n_frames: usize,
    sampler: &SamplerConfig,
) -> Result<GenerationResult> {
    check_schema(model, prompt)?;
    let p = prompt.len();
    let (grid, log) = run_frames(model, p + n_frames, sampler, |t, s| {
        if t < p {
            Source::Forced(prompt.get(t, s))
        } else {
            Source::Sample
        }
    })?;
    Ok(GenerationResult {
        grid,
        prompt_frames: p,
        log,
        seed: sampler.seed,
        temperature: sampler.temperature,
    })
}

/// Text to speak on each channel, over `frames` content frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TtsInput {
    pub transcripts: Vec<TimedTranscript>,
    pub frames: usize,
}

impl TtsInput {
    /// Reference token ids of `channel`.
    pub fn reference(&self, channel: Channel) -> Vec<u32> {
        self.transcripts
            .iter()
            .filter(|t| t.channel == channel)
            .flat_map(TimedTranscript::token_ids)
            .collect()
    }
}

/// How audio streams are produced in TTS.
#[derive(Debug, Clone, PartialEq)]
pub enum TtsAudio {
    Sample,
    /// Force audio from the pseudo-codec of the given activity; used to
    /// close the loop without a trained model.
    Forced(Vec<ActivityTrack>),
}

/// Undelayed text (and optionally codec) streams of a TTS request, padded to
/// `frames + max_delay` so no content is cut by the delays.
fn tts_streams(model: &Model, input: &TtsInput, audio: &TtsAudio) -> Result<(TokenGrid, usize)> {
    let schema = &model.config().schema;
    if schema.kind != SchemaKind::Tts {
        return Err(Error::Schema("tts generation needs a model on the tts schema".into()));
    }
    let total = input.frames + schema.max_delay();
    let text_spec = &schema.streams[schema.text_streams()[0]];
    let mut streams: Vec<Vec<u32>> = schema.streams.iter().map(|s| vec![s.initial_id; total]).collect();
    for channel in Channel::BOTH {
        let transcript = input
            .transcripts
            .iter()
            .find(|t| t.channel == channel)
            .cloned()
            .unwrap_or_else(|| TimedTranscript::empty(channel));
        let mut text = text_stream_from_transcript(&transcript, input.frames, text_spec)?.tokens;
        text.resize(total, text_spec.pad_id.expect("text PAD"));
        if let TtsAudio::Forced(activities) = audio {
            let activity = activities
                .iter()
                .find(|a| a.channel == channel)
                .cloned()
                .unwrap_or_else(|| ActivityTrack::empty(channel));
            for (layer, tokens) in pseudo_encode(&text, &activity, schema)?.into_iter().enumerate() {
                streams[schema.codec_stream(channel, layer)] = tokens;
            }
        }
        if let Some(idx) = schema.text_stream(channel) {
            streams[idx] = text;
        }
    }
    let grid = TokenGrid::from_streams(schema.clone(), &streams, false)?.apply_delays()?;
    Ok((grid, total))
}

/// Multi-stream TTS: text streams are forced from `input`, audio streams are
/// sampled (or forced) under the schema's delays. The output has
/// `input.frames + max_delay` frames.
pub fn tts_generate(model: &Model, input: &TtsInput, audio: &TtsAudio, sampler: &SamplerConfig) -> Result<GenerationResult> {
    let (forced, total) = tts_streams(model, input, audio)?;
    let schema = &model.config().schema;
    let text: Vec<usize> = schema.text_streams();
    let force_audio = matches!(audio, TtsAudio::Forced(_));
    let (grid, log) = run_frames(model, total, sampler, |t, s| {
        if force_audio || text.contains(&s) {
            Source::Forced(forced.get(t, s))
        } else {
            Source::Sample
        }
    })?;
    Ok(GenerationResult {
        grid,
        prompt_frames: 0,
        log,
        seed: sampler.seed,
        temperature: sampler.temperature,
    })
}

/// Turns generated audio back into text tokens per channel.
pub trait AsrAdapter: Sync {
    fn transcribe(&self, grid: &TokenGrid, channel: Channel) -> Result<Vec<u32>>;
}

/// Reads text straight off the semantic stream of the pseudo-codec.
#[derive(Debug, Clone, Copy, Default)]
pub struct PseudoAsr;

impl AsrAdapter for PseudoAsr {
    fn transcribe(&self, grid: &TokenGrid, channel: Channel) -> Result<Vec<u32>> {
        let undelayed = if grid.is_delayed() { grid.remove_delays()? } else { grid.clone() };
        decode_channel(&undelayed, channel)
    }
}

/// WER of a generated grid against the request text, summed over channels.
pub fn score_candidate(result: &GenerationResult, input: &TtsInput, asr: &dyn AsrAdapter) -> Result<WerScore> {
    let mut total = WerScore::default();
    for channel in Channel::BOTH {
        let hyp = asr.transcribe(&result.grid, channel)?;
        total = total.add(WerScore::new(&hyp, &input.reference(channel)));
    }
    if total.reference_len == 0 {
        return Err(Error::Invalid("empty reference text".into()));
    }
    Ok(total)
}

/// Index of the lowest score; ties go to the earliest candidate. `None`
/// entries (failed transcription) are skipped.
pub fn select_best(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub seed: u64,
    pub score: Option<WerScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestOfN {
    pub selected: GenerationResult,
    pub selected_index: usize,
    pub score: WerScore,
    pub table: Vec<CandidateScore>,
}

/// Pick the best of already generated candidates.
pub fn best_of_candidates(candidates: Vec<GenerationResult>, input: &TtsInput, asr: &dyn AsrAdapter) -> Result<BestOfN> {
    if candidates.is_empty() {
        return Err(Error::Invalid("best-of-n needs at least one candidate".into()));
    }
    let table: Vec<CandidateScore> = candidates
        .iter()
        .map(|c| {
            let score = match score_candidate(c, input, asr) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("candidate with seed {} could not be scored: {e}", c.seed);
                    None
                }
            };
            CandidateScore { seed: c.seed, score }
        })
        .collect();
    let rates: Vec<Option<f64>> = table.iter().map(|c| c.score.map(|s| s.rate())).collect();
    let index = select_best(&rates).ok_or_else(|| Error::Invalid("no candidate could be transcribed".into()))?;
    let score = table[index].score.expect("selected candidate is scored");
    let selected = candidates.into_iter().nth(index).expect("index in range");
    Ok(BestOfN {
        selected,
        selected_index: index,
        score,
        table,
    })
}

/// Generate one TTS candidate per seed (in parallel) and keep the one with
/// the lowest WER.
pub fn best_of_n(
    model: &Model,
    input: &TtsInput,
    seeds: &[u64],
    temperature: f64,
    asr: &dyn AsrAdapter,
) -> Result<BestOfN> {
    let mut unique = seeds.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if seeds.is_empty() || unique.len() != seeds.len() {
        return Err(Error::Invalid("best-of-n needs at least one seed and distinct seeds".into()));
    }
    let candidates: Vec<GenerationResult> = seeds
        .par_iter()
        .map(|&seed| {
            let sampler = SamplerConfig {
                temperature,
                seed,
                max_new_frames: input.frames,
            };
            tts_generate(model, input, &TtsAudio::Sample, &sampler)
        })
        .collect::<Result<_>>()?;
    best_of_candidates(candidates, input, asr)
}
