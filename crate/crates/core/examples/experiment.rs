//! Runs the full experiment on the reference synthetic corpus and prints the
//! summary.
//!
//! `cargo run --release --example experiment -- [seed] [key=value ...]`
//! Keys are lab keys (`ranker.epochs=3`) or synthetic keys prefixed with
//! `synth.` (`synth.noise_rate=0.2`).

use std::time::Instant;

use jointneg::corpus::generate_synthetic;
use jointneg::lab::{
    reference_config, reference_synth, run_experiment, set_synth_key, Lab, LabConfig,
    REFERENCE_TRAIN_QUERIES,
};

fn main() -> jointneg::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let mut synth = reference_synth(seed);
    let mut config = LabConfig {
        seed,
        ..reference_config()
    };
    for kv in args {
        let (k, v) = kv.split_once('=').expect("key=value");
        match k.strip_prefix("synth.") {
            Some(s) => set_synth_key(&mut synth, s, v)?,
            None => config.set(k, v)?,
        }
    }
    let start = Instant::now();
    let corpus = generate_synthetic(&synth)?;
    let (train, dev) = corpus.split(REFERENCE_TRAIN_QUERIES);
    let mut lab = Lab::new(config, corpus.collection, train, dev)?;
    let summary = run_experiment(&mut lab)?;
    print!("{}", summary.to_text());
    println!("elapsed_s\t{:.1}", start.elapsed().as_secs_f64());
    Ok(())
}
