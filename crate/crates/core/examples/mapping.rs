//! Spins in place at the start of a world, integrating depth scans, and
//! prints the coverage and the frontier clusters that result.
//!
//! cargo run --release --example mapping -- [seed]

use std::f64::consts::PI;

use seer::frontier::{update_frontiers, FrontierParams, FrontierRegistry};
use seer::sim_world::{coverage, generate_world, render_depth, CameraModel, WorldConfig};
use seer::{MapParams, Pose};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let world = generate_world(seed, &WorldConfig::default()).expect("world");
    let truth = world.ground_truth(0.1);
    let mut map = world.empty_map(0.1, MapParams::default()).expect("map");
    let mut reg = FrontierRegistry::new(FrontierParams::default());
    let camera = CameraModel::default();
    let start = world.start;
    for k in 0..16 {
        let pose = Pose::new(start.position, start.yaw + k as f64 * 2.0 * PI / 16.0);
        let rays = render_depth(&world, &pose, &camera);
        let hits = rays.iter().filter(|r| r.hit).count();
        if let Some(changed) = map.integrate_scan(&pose.position, &rays).expect("scan") {
            let upd = update_frontiers(&map, &changed.dilate(1), &mut reg);
            println!(
                "scan {k:2} yaw {:5.2}: {hits:4}/{} hits, coverage {:.3}, clusters +{} -{} = {}",
                pose.yaw,
                rays.len(),
                coverage(&map, &truth).unwrap(),
                upd.added.len(),
                upd.removed.len(),
                reg.len()
            );
        }
    }
    let mut clusters: Vec<_> = reg.clusters().collect();
    clusters.sort_by_key(|c| std::cmp::Reverse(c.cells.len()));
    println!("largest clusters:");
    for c in clusters.iter().take(8) {
        println!("  id {:4} {:5} cells centroid ({:.2}, {:.2}, {:.2})", c.id, c.cells.len(), c.centroid.x, c.centroid.y, c.centroid.z);
    }
}
