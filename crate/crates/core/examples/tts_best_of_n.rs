//! Multi-stream TTS: text is forced, audio is sampled behind a 2 s delay,
//! and the candidate with the lowest WER wins.

use jmlab::alignment::{TimedToken, TimedTranscript};
use jmlab::generation::{best_of_n, PseudoAsr, TtsInput};
use jmlab::model::{train, ModelConfig, ModelState, TrainConfig};
use jmlab::synth::{synth_corpus, SynthConfig};
use jmlab::{Channel, GridSchema, FRAME_RATE_HZ};

fn main() -> jmlab::Result<()> {
    let synth = SynthConfig::default();
    let text = synth.words + 2;
    let schema = GridSchema::tts(text, text + 2, 8)?;
    let data = synth_corpus(&synth, 16, 300, 3)
        .iter()
        .map(|d| d.grid(&schema, Channel::Model))
        .collect::<jmlab::Result<Vec<_>>>()?;
    let mut state = ModelState::init(ModelConfig {
        d_model: 24,
        n_heads: 2,
        temporal_layers: 2,
        depth_layers: 1,
        max_frames: 128,
        schema,
        seed: 4,
    })?;
    let cfg = TrainConfig {
        lr_max: 3e-3,
        warmup_steps: 10,
        batch_size: 4,
        batch_frames: 128,
        steps: Some(300),
        ..TrainConfig::pretrain()
    };
    train(&mut state, &data, &cfg, |_, _| Ok(()))?;

    // a short two-speaker script taken from a held-out dialogue
    let script = synth_corpus(&synth, 1, 60, 42).remove(0);
    let transcripts = [Channel::Model, Channel::User]
        .into_iter()
        .zip(&script.words)
        .map(|(channel, words)| {
            let tokens = words
                .iter()
                .enumerate()
                .filter_map(|(t, w)| {
                    w.map(|token_id| TimedToken {
                        token_id,
                        start: t as f64 / FRAME_RATE_HZ,
                    })
                })
                .collect();
            TimedTranscript::new(channel, tokens)
        })
        .collect();
    let input = TtsInput {
        transcripts,
        frames: script.frames(),
    };
    println!("self:  {:?}", input.reference(Channel::Model));
    println!("user:  {:?}", input.reference(Channel::User));

    let seeds: Vec<u64> = (1..=8).collect();
    let best = best_of_n(&state.model, &input, &seeds, 1.0, &PseudoAsr)?;
    println!("seed  edits/len");
    for (i, c) in best.table.iter().enumerate() {
        let mark = if i == best.selected_index { "  <- selected" } else { "" };
        match c.score {
            Some(s) => println!("{:>4}  {}/{}{mark}", c.seed, s.edits, s.reference_len),
            None => println!("{:>4}  unscored", c.seed),
        }
    }
    println!("selected grid: {} frames, WER {:.3}", best.selected.grid.len(), best.score.rate());
    Ok(())
}
