//! Scores every predictor on freshly generated training pairs with the
//! occupancy, structure and total losses.
//!
//! cargo run --release --example predictors -- [pairs] [weights.bin]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seer::block::OCCUPIED;
use seer::occ_predict::{loss_occ, loss_struct, loss_total, make_training_pair, survey_poses, LossWeights, PredictorKind, TinyNet};
use seer::sim_world::{generate_world, CameraModel, GroundTruth, WorldConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let net = match args.get(2) {
        Some(path) => TinyNet::load(path.as_ref()).expect("weights"),
        None => TinyNet::random(&mut ChaCha8Rng::seed_from_u64(0)),
    };
    let world = generate_world(4, &WorldConfig::default()).expect("world");
    let poses = survey_poses(&world, 1.0, 1.0, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pairs: Vec<_> = (0..n).map(|_| make_training_pair(&world, &poses, &CameraModel::default(), &mut rng).expect("pair")).collect();
    let w = LossWeights::default();
    let predictors = [
        PredictorKind::Null,
        PredictorKind::SlabExtrapolation,
        PredictorKind::OracleSim,
        PredictorKind::TinyConvNet(net),
    ];
    println!("{:>8} {:>10} {:>10} {:>10}", "", "occ", "struct", "total");
    for p in &predictors {
        let (mut lo, mut ls, mut lt) = (0.0, 0.0, 0.0);
        for (input, target) in &pairs {
            let occ = target.values().iter().map(|&v| v == OCCUPIED).collect();
            let truth = GroundTruth::from_occupancy(target.origin, target.resolution, target.dims(), occ);
            let pred = p.predict(input, Some(&truth)).expect("predict");
            lo += loss_occ(&pred, target, input, w.alpha);
            ls += loss_struct(&pred, target, w.beta);
            lt += loss_total(&pred, target, input, &w);
        }
        let k = n as f64;
        println!("{:>8} {:10.2} {:10.2} {:10.2}", p.name(), lo / k, ls / k, lt / k);
    }
}
