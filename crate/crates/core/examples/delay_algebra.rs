//! Stream layouts, per-stream delays and the frame clock.

use jmlab::{describe_frames, GridSchema, TokenGrid};

fn show(grid: &TokenGrid, frames: usize) {
    for t in 0..frames.min(grid.len()) {
        let row: Vec<String> = grid.frame(t).iter().map(|x| format!("{x:>2}")).collect();
        println!("  {t:>2} | {}", row.join(" "));
    }
}

fn main() -> jmlab::Result<()> {
    println!("{}", describe_frames(2048));
    println!("{}", describe_frames(375));

    let dialogue = GridSchema::dialogue(8, 10, 12)?;
    println!("\ndialogue schema, {} streams", dialogue.len());
    for s in &dialogue.streams {
        println!("  {:<16} vocab {:>3}  delay {}", s.name, s.vocab_size, s.delay);
    }

    // count up frame by frame so the shift is easy to read
    let len = 6;
    let mut tokens = Vec::new();
    for t in 0..len {
        for s in &dialogue.streams {
            tokens.push(t as u32 % s.content_vocab());
        }
    }
    let plain = TokenGrid::new(dialogue.clone(), tokens, false)?;
    let delayed = plain.apply_delays()?;
    println!("\nundelayed:");
    show(&plain, len);
    println!("delayed (INITIAL = vocab - 1 fills the head):");
    show(&delayed, len);
    let back = delayed.remove_delays()?;
    let keep = len - dialogue.max_delay();
    assert_eq!(back.slice(0, keep)?, plain.slice(0, keep)?);
    println!("round trip exact on the first {keep} frames");

    let tts = GridSchema::tts(8, 10, 12)?;
    let delays: Vec<usize> = tts.streams.iter().map(|s| s.delay).collect();
    println!("\ntts schema, {} streams, delays {delays:?}", tts.len());
    Ok(())
}
