//! Classical against predicted information gain on random viewpoints near
//! frontiers, measured against the gain a perfect map would give. Each
//! predictor drives its own run, so the sampled viewpoints differ.
//!
//! cargo run --release --example gain_error -- [seed] [samples]

use seer::occ_predict::PredictorKind;
use seer::runtime::{eval_gain_error, RunConfig};
use seer::sim_world::{generate_world, WorldConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let world = generate_world(seed, &WorldConfig::default()).expect("world");
    let pct = |e: Option<f64>| e.map_or("n/a".to_string(), |v| format!("{:.1}%", 100.0 * v));
    for predictor in [PredictorKind::Null, PredictorKind::SlabExtrapolation, PredictorKind::OracleSim] {
        let name = predictor.name();
        let r = eval_gain_error(&world, predictor, n, &RunConfig::default()).expect("eval");
        println!(
            "{name:>7}: {} samples ({} with true gain), classical error {}, predicted error {}",
            r.samples.len(),
            r.qualifying(),
            pct(r.classical_error()),
            pct(r.predicted_error())
        );
    }
}
