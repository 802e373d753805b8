//! Prompted-continuation experiments: chunking, generation across
//! temperatures, perplexity of decoded text under a scoring LM, and
//! turn-taking statistics of the generated region.
//!
//! Perplexity is computed over pseudo-decoded token streams rather than ASR
//! transcripts of audio, so it is a structural analog of an ASR-based score.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{read_manifest, ManifestRecord, TEXT_OFFSET};
use crate::error::{Error, Result};
use crate::generation::{continue_dialogue, AsrAdapter, SamplerConfig};
use crate::model::Model;
use crate::rng::{derive_seed, seeded};
use crate::token_grid::{Channel, GridSchema, TokenGrid};
use crate::turn_taking::{activity_from_grid, analyze, TurnTakingTotals};
use crate::{seconds_to_frames, FRAME_RATE_HZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub chunk_s: f64,
    pub prompt_s: f64,
    pub temperatures: Vec<f64>,
    pub seed: u64,
    /// Use at most this many chunks (the first ones); all when absent.
    pub max_chunks: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            chunk_s: 30.0,
            prompt_s: 10.0,
            temperatures: vec![0.8, 0.9, 1.0],
            seed: 0,
            max_chunks: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prompt_s > 0.0 && self.prompt_s < self.chunk_s) {
            return Err(Error::Invalid("prompt_s must be positive and below chunk_s".into()));
        }
        if self.temperatures.is_empty() || self.temperatures.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Invalid("temperatures must be positive".into()));
        }
        Ok(())
    }

    pub fn chunk_frames(&self) -> usize {
        seconds_to_frames(self.chunk_s)
    }

    pub fn prompt_frames(&self) -> usize {
        seconds_to_frames(self.prompt_s)
    }
}

/// One evaluation window of a delayed dialogue grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub id: String,
    pub grid: TokenGrid,
    pub prompt_frames: usize,
}

impl Chunk {
    pub fn prompt(&self) -> TokenGrid {
        self.grid.slice(0, self.prompt_frames).expect("prompt within chunk")
    }

    pub fn reference(&self) -> TokenGrid {
        self.grid
            .slice(self.prompt_frames, self.grid.len())
            .expect("reference within chunk")
    }
}

/// Non-overlapping windows from the start of each dialogue; the remainder
/// shorter than a window is dropped.
pub fn chunk_dialogues(dialogues: &[(String, TokenGrid)], cfg: &EvalConfig) -> Result<Vec<Chunk>> {
    cfg.validate()?;
    let window = cfg.chunk_frames();
    let prompt = cfg.prompt_frames();
    let mut out = Vec::new();
    for (id, grid) in dialogues {
        for k in 0..grid.len() / window {
            out.push(Chunk {
                id: format!("{id}:{k}"),
                grid: grid.slice(k * window, (k + 1) * window)?,
                prompt_frames: prompt,
            });
        }
    }
    Ok(out)
}

/// Load the grids of a manifest, keeping rows of `split` (all rows when
/// `None`).
pub fn load_manifest_grids(manifest: &Path, split: Option<&str>) -> Result<Vec<(String, TokenGrid)>> {
    read_manifest(manifest)?
        .into_iter()
        .filter(|r: &ManifestRecord| split.is_none_or(|s| r.split == s))
        .map(|r| Ok((r.id.clone(), TokenGrid::load(r.resolve(manifest))?)))
        .collect()
}

/// Total negative log-likelihood (nats) and token count.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LmScore {
    pub nll: f64,
    pub tokens: usize,
}

impl LmScore {
    pub fn add(self, other: LmScore) -> LmScore {
        LmScore {
            nll: self.nll + other.nll,
            tokens: self.tokens + other.tokens,
        }
    }
}

pub fn ppl(nll_total: f64, token_count: usize) -> Result<f64> {
    if token_count == 0 {
        return Err(Error::Invalid("perplexity of zero tokens".into()));
    }
    Ok((nll_total / token_count as f64).exp())
}

/// A token-level scoring language model.
pub trait LmAdapter: Sync {
    fn score(&self, tokens: &[u32]) -> LmScore;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformLm {
    pub vocab: u32,
}

impl LmAdapter for UniformLm {
    fn score(&self, tokens: &[u32]) -> LmScore {
        LmScore {
            nll: tokens.len() as f64 * (self.vocab as f64).ln(),
            tokens: tokens.len(),
        }
    }
}

/// Bigram model with add-one smoothing; the first token of a sequence is
/// conditioned on a beginning-of-sequence context.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramLm {
    vocab: u32,
    pairs: HashMap<(Option<u32>, u32), u64>,
    contexts: HashMap<Option<u32>, u64>,
}

impl BigramLm {
    pub fn train(sequences: &[Vec<u32>], vocab: u32) -> Result<BigramLm> {
        if vocab == 0 || sequences.iter().all(Vec::is_empty) {
            return Err(Error::Invalid("bigram LM needs a non-empty corpus".into()));
        }
        let mut lm = BigramLm {
            vocab,
            pairs: HashMap::new(),
            contexts: HashMap::new(),
        };
        for seq in sequences {
            let mut prev = None;
            for &tok in seq {
                if tok >= vocab {
                    return Err(Error::Invalid(format!("token {tok} outside LM vocabulary {vocab}")));
                }
                *lm.pairs.entry((prev, tok)).or_default() += 1;
                *lm.contexts.entry(prev).or_default() += 1;
                prev = Some(tok);
            }
        }
        Ok(lm)
    }

    pub fn vocab(&self) -> u32 {
        self.vocab
    }

    /// `P(token | prev)`; `prev = None` is the start of a sequence.
    pub fn prob(&self, prev: Option<u32>, token: u32) -> f64 {
        let pair = self.pairs.get(&(prev, token)).copied().unwrap_or(0) as f64;
        let ctx = self.contexts.get(&prev).copied().unwrap_or(0) as f64;
        (pair + 1.0) / (ctx + self.vocab as f64)
    }
}

impl LmAdapter for BigramLm {
    fn score(&self, tokens: &[u32]) -> LmScore {
        let mut prev = None;
        let mut nll = 0.0;
        for &tok in tokens {
            nll += if tok < self.vocab { -self.prob(prev, tok).ln() } else { f64::INFINITY };
            prev = Some(tok);
        }
        LmScore {
            nll,
            tokens: tokens.len(),
        }
    }
}

/// Number of distinct ids the pseudo-codec can decode from a semantic
/// stream of `schema` (every semantic id at or above the text offset, except
/// INITIAL).
pub fn decoded_vocab(schema: &GridSchema) -> u32 {
    schema.semantic_vocab().saturating_sub(TEXT_OFFSET + 1)
}

/// Train the scoring LM on the decoded text of both channels of every grid.
pub fn mock_lm_train(grids: &[TokenGrid], asr: &dyn AsrAdapter, vocab: u32) -> Result<BigramLm> {
    let mut sequences = Vec::new();
    for g in grids {
        for channel in Channel::BOTH {
            sequences.push(asr.transcribe(g, channel)?);
        }
    }
    BigramLm::train(&sequences, vocab)
}

/// What one chunk produced: decoded tokens per channel, their LM score and
/// turn-taking totals over the evaluated region.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub chunk_id: String,
    pub seed: u64,
    pub tokens: [Vec<u32>; 2],
    pub lm: LmScore,
    pub turn_taking: TurnTakingTotals,
}

/// Score the frames after the prompt of a full delayed chunk grid.
pub fn score_region(
    grid: &TokenGrid,
    prompt_frames: usize,
    lm: &dyn LmAdapter,
    asr: &dyn AsrAdapter,
) -> Result<(Vec<Vec<u32>>, LmScore, TurnTakingTotals)> {
    let undelayed = grid.remove_delays()?;
    let region = undelayed.slice(prompt_frames, undelayed.len())?;
    let mut tokens = Vec::new();
    let mut score = LmScore::default();
    for channel in Channel::BOTH {
        let t = asr.transcribe(&region, channel)?;
        score = score.add(lm.score(&t));
        tokens.push(t);
    }
    let totals = analyze(
        &activity_from_grid(&region, Channel::Model)?,
        &activity_from_grid(&region, Channel::User)?,
        region.len() as f64 / FRAME_RATE_HZ,
    );
    Ok((tokens, score, totals))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    /// Temperature, or `None` for the reference row.
    pub tau: Option<f64>,
    pub samples: Vec<SampleOutcome>,
    pub lm: LmScore,
    /// Corpus-level perplexity; NaN when no tokens were decoded.
    pub mean_ppl: f64,
    pub turn_taking: TurnTakingTotals,
}

impl ExperimentRow {
    fn from_samples(tau: Option<f64>, samples: Vec<SampleOutcome>) -> Result<Self> {
        let lm = samples.iter().fold(LmScore::default(), |a, s| a.add(s.lm));
        let turn_taking = samples
            .iter()
            .skip(1)
            .fold(samples[0].turn_taking.clone(), |a, s| a.merge(&s.turn_taking));
        Ok(ExperimentRow {
            tau,
            mean_ppl: ppl(lm.nll, lm.tokens).unwrap_or(f64::NAN),
            samples,
            lm,
            turn_taking,
        })
    }

    pub fn label(&self) -> String {
        match self.tau {
            Some(t) => format!("{t:.1}"),
            None => "reference".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "tau",
    "n_samples",
    "mean_ppl",
    "ipu_s_per_min",
    "pause_s_per_min",
    "gap_s_per_min",
    "overlap_s_per_min",
];

impl ExperimentReport {
    /// Tab-separated table, one row per temperature plus the reference row.
    pub fn to_tsv(&self) -> Result<String> {
        let mut out = String::from("# ppl: scoring LM over pseudo-decoded tokens of the generated region\n");
        out.push_str(&REPORT_COLUMNS.join("\t"));
        out.push('\n');
        for row in &self.rows {
            let r = row.turn_taking.report()?;
            writeln!(
                out,
                "{}\t{}\t{:.4}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
                row.label(),
                row.samples.len(),
                row.mean_ppl,
                r.ipu_s_per_min,
                r.pause_s_per_min,
                r.gap_s_per_min,
                r.overlap_s_per_min
            )
            .expect("write to string");
        }
        Ok(out)
    }

    pub fn row(&self, tau: Option<f64>) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.tau == tau)
    }
}

/// Seed of chunk `index` at temperature `tau_index`.
pub fn sample_seed(seed: u64, tau_index: usize, index: usize) -> u64 {
    derive_seed(derive_seed(seed, tau_index as u64), index as u64)
}

/// Generate a continuation of every chunk at every temperature, then score
/// generated and reference regions alike.
pub fn run_experiment(
    model: &Model,
    chunks: &[Chunk],
    cfg: &EvalConfig,
    lm: &dyn LmAdapter,
    asr: &dyn AsrAdapter,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let chunks = &chunks[..cfg.max_chunks.unwrap_or(chunks.len()).min(chunks.len())];
    if chunks.is_empty() {
        return Err(Error::Invalid("no evaluation chunks".into()));
    }
    let mut rows = Vec::new();
    for (ti, &tau) in cfg.temperatures.iter().enumerate() {
        let samples: Vec<SampleOutcome> = chunks
            .par_iter()
            .enumerate()
            .map(|(i, chunk)| {
                let seed = sample_seed(cfg.seed, ti, i);
                let sampler = SamplerConfig {
                    temperature: tau,
                    seed,
                    max_new_frames: chunk.grid.len() - chunk.prompt_frames,
                };
                let result = continue_dialogue(model, &chunk.prompt(), sampler.max_new_frames, &sampler)?;
                let (tokens, lm_score, totals) = score_region(&result.grid, chunk.prompt_frames, lm, asr)?;
                Ok(SampleOutcome {
                    chunk_id: chunk.id.clone(),
                    seed,
                    tokens: [tokens[0].clone(), tokens[1].clone()],
                    lm: lm_score,
                    turn_taking: totals,
                })
            })
            .collect::<Result<_>>()?;
        let row = ExperimentRow::from_samples(Some(tau), samples)?;
        log::info!("tau {tau}: ppl {:.3} over {} tokens", row.mean_ppl, row.lm.tokens);
        rows.push(row);
    }
    let reference: Vec<SampleOutcome> = chunks
        .iter()
        .map(|chunk| {
            let (tokens, lm_score, totals) = score_region(&chunk.grid, chunk.prompt_frames, lm, asr)?;
            Ok(SampleOutcome {
                chunk_id: chunk.id.clone(),
                seed: 0,
                tokens: [tokens[0].clone(), tokens[1].clone()],
                lm: lm_score,
                turn_taking: totals,
            })
        })
        .collect::<Result<_>>()?;
    rows.push(ExperimentRow::from_samples(None, reference)?);
    Ok(ExperimentReport { rows })
}

/// Corpus perplexity of the samples' decoded tokens after shuffling each
/// channel's tokens with a seeded permutation.
pub fn shuffled_ppl(samples: &[SampleOutcome], lm: &dyn LmAdapter, seed: u64) -> Result<f64> {
    let mut total = LmScore::default();
    for (i, s) in samples.iter().enumerate() {
        for (c, tokens) in s.tokens.iter().enumerate() {
            let mut shuffled = tokens.clone();
            shuffled.shuffle(&mut seeded(derive_seed(seed, (2 * i + c) as u64)));
            total = total.add(lm.score(&shuffled));
        }
    }
    ppl(total.nll, total.tokens)
}
