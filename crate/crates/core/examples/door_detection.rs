//! Flies the corridor centre line scanning all around, then runs door
//! detection on every frontier cluster and compares with the world's doors.
//!
//! cargo run --release --example door_detection -- [seed]

use std::f64::consts::PI;

use seer::frontier::{update_frontiers, FrontierParams, FrontierRegistry};
use seer::semantics::{detect_doors, DoorParams, SemanticRegistry};
use seer::sim_world::{generate_world, render_depth, CameraModel, WorldConfig};
use seer::{MapParams, Pose, Vec3};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let world = generate_world(seed, &WorldConfig::default()).expect("world");
    let mut map = world.empty_map(0.1, MapParams::default()).expect("map");
    let mut reg = FrontierRegistry::new(FrontierParams::default());
    let camera = CameraModel::default();
    let start = world.start.position;
    let mut x = start.x;
    while x < world.bounds.max.x - 0.5 {
        for k in 0..12 {
            let pose = Pose::new(Vec3::new(x, start.y, start.z), k as f64 * PI / 6.0);
            if let Some(b) = map.integrate_scan(&pose.position, &render_depth(&world, &pose, &camera)).expect("scan") {
                update_frontiers(&map, &b.dilate(1), &mut reg);
            }
        }
        x += 1.0;
    }
    let p = DoorParams::default();
    let mut sois = SemanticRegistry::new();
    for c in reg.clusters() {
        sois.add_candidates(detect_doors(&map, c, &p), p.dedupe);
    }
    println!("{} frontier clusters, {} door candidates", reg.len(), sois.len());
    for o in sois.objects() {
        let nearest = world
            .doors
            .iter()
            .map(|d| (Vec3::new(d.center[0], d.center[1], o.position.z) - o.position).norm())
            .fold(f64::INFINITY, f64::min);
        println!(
            "  door {} at ({:.2}, {:.2}) width {:.2} facing ({:.0}, {:.0}), {:.2} m from a true door",
            o.id, o.position.x, o.position.y, o.width, o.direction.x, o.direction.y, nearest
        );
    }
    for d in &world.doors {
        println!("  true door at ({:.2}, {:.2}) width {:.2}", d.center[0], d.center[1], d.width);
    }
}
