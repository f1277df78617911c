//! Explores one generated world and prints the run log.
//!
//! cargo run --release --example explore -- [seed] [method] [rooms]

use seer::occ_predict::PredictorKind;
use seer::runtime::{run_experiment, MethodKind, RunConfig};
use seer::sim_world::{generate_world, WorldConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let method: MethodKind = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(MethodKind::Seer);
    let rooms: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4);
    let cfg = if rooms == 0 {
        WorldConfig { length: 6.0, corridor_width: 4.0, rooms: 0, ..Default::default() }
    } else {
        WorldConfig { rooms, ..Default::default() }
    };
    let world = generate_world(seed, &cfg).expect("world");
    let report = run_experiment(&world, method, PredictorKind::OracleSim, &RunConfig::default()).expect("run");
    for e in &report.events {
        println!("{e}");
    }
    println!("{}", report.summary());
    println!("decision cycles: {} mean {:.1} ms max {:.1} ms", report.timing.cycles, report.timing.mean_ms, report.timing.max_ms);
}
