//! Plans a min-jerk flight from the start through the first door on a fully
//! known map, then optimises a yaw profile that looks along the path and
//! finally into the room.
//!
//! cargo run --release --example trajectory -- [seed]

use seer::nav::NavGrid;
use seer::sim_world::{generate_world, WorldConfig, ROBOT_RADIUS};
use seer::traj_opt::{optimize_yaw, plan_position, Limits, State, YawParams};
use seer::{MapParams, Vec3};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let world = generate_world(seed, &WorldConfig::default()).expect("world");
    let truth = world.ground_truth(0.1);
    let mut map = world.empty_map(0.1, MapParams::default()).expect("map");
    for i in 0..map.len() {
        map.set_state(map.voxel_at(i), truth.trinary_at(i));
    }
    let start = world.start;
    let nav = NavGrid::build(&map, start.position.z - map.origin().z, ROBOT_RADIUS);
    let door = &world.doors[0];
    let goal = Vec3::new(door.center[0] + 1.2 * door.normal[0], door.center[1] + 1.2 * door.normal[1], start.position.z);
    let lim = Limits::default();
    let plan = plan_position(&State::at_rest(start.position), &goal, &nav, &lim).expect("plan");
    let traj = &plan.traj;
    let (v, a) = traj.peaks(0.01);
    let clearance = (0..=(traj.duration() / 0.02) as usize)
        .map(|k| world.clearance(&traj.position(k as f64 * 0.02)))
        .fold(f64::INFINITY, f64::min);
    println!(
        "{} waypoints, {} corridor boxes, {:.2} s, {:.2} m, peak v {v:.2} m/s a {a:.2} m/s^2, min clearance {clearance:.2} m, knot residual {:.1e}",
        plan.waypoints.len(),
        plan.corridor.len(),
        traj.duration(),
        traj.length(0.01),
        traj.knot_residual()
    );

    // reference yaw: direction of travel at each knot, last one into the room
    let times = traj.knot_times();
    let mut gamma: Vec<f64> = times[1..]
        .iter()
        .map(|&t| {
            let d = traj.eval(t - 1e-3, 1);
            d.y.atan2(d.x)
        })
        .collect();
    *gamma.last_mut().unwrap() = door.normal[1].atan2(door.normal[0]);
    let yaw = optimize_yaw(&gamma, &traj.durations, &YawParams::default(), start.yaw).expect("yaw");
    println!(
        "yaw: {} knots, cost {:.3} (reference {:.3}) after {} iterations, peak rate {:.2} rad/s",
        yaw.knots.len(),
        yaw.cost,
        yaw.reference_cost,
        yaw.iterations,
        yaw.peak_rate(0.01)
    );
    for (t, k) in times.iter().zip(&yaw.knots) {
        let p = traj.position(*t);
        println!("  t {t:6.2}  ({:5.2}, {:5.2})  yaw {k:6.2}", p.x, p.y);
    }
}
