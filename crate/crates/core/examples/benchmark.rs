//! Frontier baseline against SEER on seeded corridor+rooms worlds.
//!
//! cargo run --release --example benchmark -- [worlds] [first_seed]

use seer::occ_predict::PredictorKind;
use seer::runtime::{benchmark_csv, run_benchmark, summarize, summary_csv, MethodKind, RunConfig};
use seer::sim_world::{generate_world, WorldConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let first: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let worlds: Vec<_> = (first..first + n).map(|s| generate_world(s, &WorldConfig::default()).unwrap()).collect();
    let reports = run_benchmark(&worlds, &[MethodKind::Frontier, MethodKind::Seer], &PredictorKind::OracleSim, &RunConfig::default()).unwrap();
    print!("{}", benchmark_csv(&reports));
    println!();
    print!("{}", summary_csv(&summarize(&reports)));
}
