//! Writes a few (input, target) occupancy block pairs for the predictor
//! trainer and reads them back.
//!
//! cargo run --release --example training_pairs -- [pairs] [out_dir]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seer::block::{OccupancyBlock, FREE, OCCUPIED, UNKNOWN};
use seer::occ_predict::{make_training_pair, save_pair, survey_poses};
use seer::sim_world::{generate_world, CameraModel, WorldConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let dir = args.get(2).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("seer_pairs"));
    std::fs::create_dir_all(&dir).expect("out dir");
    let world = generate_world(2, &WorldConfig::default()).expect("world");
    let poses = survey_poses(&world, 1.0, 1.0, 4);
    println!("{} scan poses", poses.len());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let camera = CameraModel::default();
    for k in 0..n {
        let (input, target) = make_training_pair(&world, &poses, &camera, &mut rng).expect("pair");
        let stem = format!("pair_{k:05}");
        save_pair(&dir, &stem, &input, &target).expect("save");
        let back = OccupancyBlock::load(&dir.join(format!("{stem}.in"))).expect("load");
        // the file keeps dims and values only
        assert_eq!((back.dims(), back.values()), (input.dims(), input.values()));
        let counts = |b: &OccupancyBlock| format!("{} free {} occ {} unknown", b.count(FREE), b.count(OCCUPIED), b.count(UNKNOWN));
        println!("{stem}: in  {}", counts(&input));
        println!("{stem}: tar {}", counts(&target));
    }
    println!("wrote {n} pairs to {}", dir.display());
}
