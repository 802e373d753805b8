//! Diarization plus timed transcripts to delayed grids, a manifest and splits.

use std::fs;

use jmlab::alignment::{prepare_dialogue, split_manifest, write_manifest, ManifestRecord, SplitRatios};
use jmlab::rng::derive_seed;
use jmlab::synth::{synth_corpus, SynthConfig};
use jmlab::{frames_to_seconds, seconds_to_frames};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig::default();
    let schema = cfg.schema();
    let out = std::env::temp_dir().join("jmlab_prep_corpus");
    fs::create_dir_all(out.join("grids"))?;

    let mut records = Vec::new();
    for (i, d) in synth_corpus(&cfg, 10, seconds_to_frames(60.0), 1).iter().enumerate() {
        let words = d.transcript();
        let segments = d.segments();
        if i == 0 {
            println!("{}: {} words, {} segments, first: {:?}", d.id, words.len(), segments.len(), segments[0]);
        }
        let prepared = prepare_dialogue(&d.id, &words, &segments, &schema, derive_seed(1, i as u64))?;
        let path = format!("grids/{}.jmg", d.id);
        prepared.grid.save(out.join(&path))?;
        println!(
            "{}  {:?}  pad ratio {:.2}  dropped {}",
            d.id,
            prepared.channel_map,
            prepared.grid.pad_ratio()?,
            prepared.dropped
        );
        records.push(ManifestRecord {
            id: d.id.clone(),
            grid_path: path,
            duration_s: frames_to_seconds(prepared.grid.len()),
            split: "none".into(),
        });
    }

    let split = split_manifest(&records, SplitRatios { train: 8, valid: 1, test: 1 }, 1)?;
    let mut all = Vec::new();
    for (name, part) in [("train", split.train), ("valid", split.valid), ("test", split.test)] {
        println!("{name}: {:?}", part.iter().map(|r| r.id.as_str()).collect::<Vec<_>>());
        all.extend(part.into_iter().map(|r| ManifestRecord { split: name.into(), ..r }));
    }
    write_manifest(out.join("manifest.tsv"), &all)?;
    println!("wrote {}", out.join("manifest.tsv").display());
    Ok(())
}
