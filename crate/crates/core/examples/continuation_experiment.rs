//! Continuation experiment: 10 s prompts, 20 s continuations at several
//! temperatures, scored by a bigram LM and turn-taking statistics.

use jmlab::eval::{chunk_dialogues, decoded_vocab, mock_lm_train, run_experiment, shuffled_ppl, EvalConfig};
use jmlab::generation::PseudoAsr;
use jmlab::model::{train, ModelConfig, ModelState, TrainConfig};
use jmlab::synth::{synth_corpus, SynthConfig};
use jmlab::Channel;

fn main() -> jmlab::Result<()> {
    let synth = SynthConfig::default();
    let schema = synth.schema();
    let data = synth_corpus(&synth, 20, 750, 7)
        .iter()
        .enumerate()
        .map(|(i, d)| d.grid(&schema, if i % 2 == 0 { Channel::Model } else { Channel::User }))
        .collect::<jmlab::Result<Vec<_>>>()?;
    let mut state = ModelState::init(ModelConfig {
        d_model: 24,
        n_heads: 2,
        temporal_layers: 2,
        depth_layers: 1,
        max_frames: 384,
        schema: schema.clone(),
        seed: 1,
    })?;
    let cfg = TrainConfig {
        lr_max: 3e-3,
        warmup_steps: 10,
        batch_size: 4,
        batch_frames: 384,
        pad_loss_factor: 1.0,
        steps: Some(250),
        ..TrainConfig::pretrain()
    };
    train(&mut state, &data, &cfg, |_, _| Ok(()))?;

    let test: Vec<_> = synth_corpus(&synth, 4, 750, 99)
        .iter()
        .map(|d| Ok((d.id.clone(), d.grid(&schema, Channel::Model)?)))
        .collect::<jmlab::Result<_>>()?;
    let eval = EvalConfig {
        temperatures: vec![0.8, 1.0],
        ..EvalConfig::default()
    };
    let chunks = chunk_dialogues(&test, &eval)?;
    println!("{} chunks", chunks.len());
    let lm = mock_lm_train(&data, &PseudoAsr, decoded_vocab(&schema))?;
    let report = run_experiment(&state.model, &chunks, &eval, &lm, &PseudoAsr)?;
    print!("{}", report.to_tsv()?);
    let noise = shuffled_ppl(&report.rows[1].samples, &lm, 5)?;
    println!("shuffled-token ppl {noise:.2}");
    Ok(())
}
