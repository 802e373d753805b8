//! IPU, pause, gap and overlap statistics from activity segments or grids.

use jmlab::alignment::{ActivityTrack, Interval};
use jmlab::synth::{expected_turn_taking, synth_corpus, SynthConfig};
use jmlab::turn_taking::{activity_from_grid, analyze, classify_silences, segments_to_ipus, MIN_IPU_SILENCE};
use jmlab::{frames_to_seconds, Channel};

fn track(channel: Channel, spans: &[(f64, f64)]) -> jmlab::Result<ActivityTrack> {
    let intervals = spans.iter().map(|&(a, b)| Interval::new(a, b)).collect::<jmlab::Result<Vec<_>>>()?;
    ActivityTrack::new(channel, intervals)
}

fn main() -> jmlab::Result<()> {
    // A speaks, pauses, B backchannels over A, then a gap before B takes over
    let a = track(Channel::Model, &[(0.0, 2.0), (2.1, 3.5), (3.9, 5.0)])?;
    let b = track(Channel::User, &[(4.6, 4.9), (5.6, 8.0)])?;
    let (ia, ib) = (segments_to_ipus(&a, MIN_IPU_SILENCE), segments_to_ipus(&b, MIN_IPU_SILENCE));
    println!("self IPUs {:?}", ia.ipus);
    println!("user IPUs {:?}", ib.ipus);
    let silences = classify_silences(&ia, &ib, 9.0);
    println!("pauses {:?}\ngaps {:?}\nedges {:?}", silences.pauses, silences.gaps, silences.edges);
    print!("{}", analyze(&a, &b, 9.0).report()?.to_text());

    // the same statistics over grids of the scripted process
    let cfg = SynthConfig::default();
    let schema = cfg.schema();
    let mut total = None;
    for d in synth_corpus(&cfg, 20, 1500, 5) {
        let grid = d.grid(&schema, Channel::Model)?.remove_delays()?;
        let own = activity_from_grid(&grid, Channel::Model)?;
        let user = activity_from_grid(&grid, Channel::User)?;
        let t = analyze(&own, &user, frames_to_seconds(grid.len()));
        total = Some(match total {
            None => t,
            Some(acc) => t.merge(&acc),
        });
    }
    let measured = total.expect("non-empty corpus").report()?;
    let expected = expected_turn_taking(&cfg, 200, 1500, 0..1500, 9)?.report()?;
    println!("\n             measured  expected (s/min)");
    for (name, m, e) in [
        ("ipu", measured.ipu_s_per_min, expected.ipu_s_per_min),
        ("pause", measured.pause_s_per_min, expected.pause_s_per_min),
        ("gap", measured.gap_s_per_min, expected.gap_s_per_min),
        ("overlap", measured.overlap_s_per_min, expected.overlap_s_per_min),
    ] {
        println!("{name:<12} {m:8.2}  {e:8.2}");
    }
    Ok(())
}
