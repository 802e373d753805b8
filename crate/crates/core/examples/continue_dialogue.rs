//! Prompted continuation: keep 10 s of a dialogue, sample the next 10 s.

use jmlab::alignment::decode_channel;
use jmlab::generation::{continue_dialogue, SamplerConfig};
use jmlab::model::{train, ModelConfig, ModelState, TrainConfig};
use jmlab::synth::{synth_corpus, SynthConfig};
use jmlab::turn_taking::{activity_from_grid, analyze};
use jmlab::{frames_to_seconds, Channel, TokenGrid};

fn report(label: &str, grid: &TokenGrid, from: usize) -> jmlab::Result<()> {
    let region = grid.remove_delays()?.slice(from, grid.len() - 1)?;
    let own = activity_from_grid(&region, Channel::Model)?;
    let user = activity_from_grid(&region, Channel::User)?;
    let r = analyze(&own, &user, frames_to_seconds(region.len())).report()?;
    println!(
        "{label:<10} ipu {:5.1}  pause {:4.1}  gap {:4.1}  overlap {:4.1}  s/min",
        r.ipu_s_per_min, r.pause_s_per_min, r.gap_s_per_min, r.overlap_s_per_min
    );
    println!("{:<10} self words {:?}", "", decode_channel(&region, Channel::Model)?);
    Ok(())
}

fn main() -> jmlab::Result<()> {
    let synth = SynthConfig::default();
    let schema = synth.schema();
    let data = synth_corpus(&synth, 20, 600, 7)
        .iter()
        .map(|d| d.grid(&schema, Channel::Model))
        .collect::<jmlab::Result<Vec<_>>>()?;
    let mut state = ModelState::init(ModelConfig {
        d_model: 24,
        n_heads: 2,
        temporal_layers: 2,
        depth_layers: 1,
        max_frames: 256,
        schema: schema.clone(),
        seed: 1,
    })?;
    let cfg = TrainConfig {
        lr_max: 3e-3,
        warmup_steps: 10,
        batch_size: 2,
        batch_frames: 256,
        steps: Some(300),
        ..TrainConfig::pretrain()
    };
    train(&mut state, &data, &cfg, |_, _| Ok(()))?;

    let held_out = synth_corpus(&synth, 1, 250, 99).remove(0).grid(&schema, Channel::Model)?;
    let prompt = held_out.slice(0, 125)?;
    for (tau, seed) in [(0.8, 1), (1.0, 1), (1.0, 2)] {
        let out = continue_dialogue(&state.model, &prompt, 125, &SamplerConfig::new(tau, seed))?;
        report(&format!("tau {tau} #{seed}"), &out.grid, 125)?;
    }
    report("reference", &held_out, 125)?;
    Ok(())
}
