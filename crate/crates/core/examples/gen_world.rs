//! Generates a seeded corridor+rooms world, prints its layout and checks
//! the text format round trip.
//!
//! cargo run --example gen_world -- [seed] [rooms]

use seer::sim_world::{generate_world, World, WorldConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let rooms: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let cfg = WorldConfig { rooms, ..Default::default() };
    let world = match generate_world(seed, &cfg) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    let size = world.bounds.max - world.bounds.min;
    println!("world seed {seed}: {:.1} x {:.1} x {:.1} m, {} boxes", size.x, size.y, size.z, world.boxes.len());
    for (r, d) in world.rooms.iter().zip(&world.doors) {
        println!(
            "  room ({:.1},{:.1})-({:.1},{:.1})  door at ({:.2},{:.2}) width {:.2} m",
            r.min[0], r.min[1], r.max[0], r.max[1], d.center[0], d.center[1], d.width
        );
    }
    let truth = world.ground_truth(0.1);
    println!("observable voxels at 0.1 m: {}", truth.observable_count());

    let path = std::env::temp_dir().join(format!("seer_world_{seed}.txt"));
    world.save(&path).expect("save");
    let back = World::load(&path).expect("load");
    println!("round trip through {}: {}", path.display(), if back == world { "identical" } else { "DIFFERENT" });
}
