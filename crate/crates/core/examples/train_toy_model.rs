//! Train a small model on a scripted corpus and save a checkpoint.

use jmlab::model::{checkpoint, train, ModelConfig, ModelState, TrainConfig};
use jmlab::synth::{synth_corpus, SynthConfig};
use jmlab::{Channel, StreamRole};

fn main() -> jmlab::Result<()> {
    let synth = SynthConfig::default();
    let schema = synth.schema();
    let data = synth_corpus(&synth, 20, 600, 7)
        .iter()
        .enumerate()
        .map(|(i, d)| d.grid(&schema, if i % 2 == 0 { Channel::Model } else { Channel::User }))
        .collect::<jmlab::Result<Vec<_>>>()?;

    let mut state = ModelState::init(ModelConfig {
        d_model: 24,
        n_heads: 2,
        temporal_layers: 2,
        depth_layers: 1,
        max_frames: 128,
        schema,
        seed: 1,
    })?;
    println!("{} parameters", state.model.param_count());

    let cfg = TrainConfig {
        lr_max: 3e-3,
        warmup_steps: 10,
        batch_size: 4,
        batch_frames: 128,
        steps: Some(80),
        ..TrainConfig::pretrain()
    };
    println!("step   loss    text   semantic  acoustic");
    train(&mut state, &data, &cfg, |_, s| {
        if s.step % 10 == 0 {
            println!(
                "{:>4}  {:.4}  {:.3}  {:.3}     {:.3}",
                s.step,
                s.loss.total,
                s.loss.role_mean_nll(StreamRole::Text),
                s.loss.role_mean_nll(StreamRole::SemanticAudio),
                s.loss.role_mean_nll(StreamRole::AcousticAudio)
            );
        }
        Ok(())
    })?;

    let path = std::env::temp_dir().join("jmlab_toy.ckpt");
    checkpoint::save(&state, &path)?;
    println!("saved {}", path.display());
    Ok(())
}
