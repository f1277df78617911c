//! Acceptance criteria. Each check prints one PASS/FAIL line; the process
//! exits non-zero if any check fails.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seer::block::{OccupancyBlock, FREE, OCCUPIED, UNKNOWN};
use seer::frontier::{update_frontiers, FrontierCluster, FrontierParams, FrontierRegistry};
use seer::geom::Box3;
use seer::info_gain::{classical_gain_ray, predicted_gain_ray, NoPrediction, PredLookup, PredictionMap, SamplerParams, ViewSampler};
use seer::occ_predict::{loss_occ, loss_struct, loss_total, LossWeights, PredictedBlock, PredictorKind};
use seer::runtime::{eval_gain_error, run_benchmark, summarize, ExperimentReport, GainErrorReport, MethodKind, RunConfig};
use seer::semantics::{detect_doors, DoorParams};
use seer::sim_world::{generate_world, render_depth, CameraModel, World, WorldConfig, ROBOT_RADIUS};
use seer::traj_opt::{optimize_yaw, search_yaw, YawObjective, YawParams, YawProblem};
use seer::{MapParams, Pose, Trinary, Vec3, Voxel, VoxelMap};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Fixed(HashMap<Voxel, Trinary>);

impl PredLookup for Fixed {
    fn lookup(&self, v: Voxel) -> Option<Trinary> {
        self.0.get(&v).copied()
    }
}

fn random_trinary(rng: &mut ChaCha8Rng, p_free: f64, p_occ: f64) -> Trinary {
    let u: f64 = rng.gen();
    if u < p_free {
        Trinary::Free
    } else if u < p_free + p_occ {
        Trinary::Occupied
    } else {
        Trinary::Unknown
    }
}

fn random_map(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> VoxelMap {
    let mut m = VoxelMap::new(Vec3::zeros(), 0.1, dims, MapParams::default()).unwrap();
    let (pf, po) = (rng.gen_range(0.1..0.6), rng.gen_range(0.0..0.15));
    for v in m.bounds().voxels().collect::<Vec<_>>() {
        m.set_state(v, random_trinary(rng, pf, po));
    }
    m
}

fn random_prediction(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> PredictedBlock {
    let n = dims.iter().product();
    let probs = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let density = rng.gen_range(0.0..1.0);
    let mask = (0..n).map(|_| rng.gen_bool(density)).collect();
    PredictedBlock::from_parts(dims, probs, mask)
}

fn random_point(rng: &mut ChaCha8Rng, m: &VoxelMap) -> Vec3 {
    let e = m.extent_max();
    Vec3::new(rng.gen_range(0.0..e.x), rng.gen_range(0.0..e.y), rng.gen_range(0.0..e.z))
}

fn gain_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rays = 0;
    for map_no in 0..1000 {
        let dims = [rng.gen_range(4..16), rng.gen_range(4..16), rng.gen_range(2..8)];
        let m = random_map(&mut rng, dims);
        let mut pred = PredictionMap::new(&m);
        pred.insert(&m, &random_prediction(&mut rng, dims));
        let mut null = PredictionMap::new(&m);
        let null_block = PredictorKind::Null.predict(&m.extract_block_with_dims(&(m.extent_max() / 2.0), dims), None).map_err(|e| e.to_string())?;
        null.insert(&m, &null_block);
        for _ in 0..20 {
            let s = random_point(&mut rng, &m);
            let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let e = s + dir * rng.gen_range(0.0..3.0);
            let cls = classical_gain_ray(&m, &s, &e);
            let p = predicted_gain_ray(&m, &pred, &s, &e);
            ensure(p <= cls, || format!("map {map_no}: predicted {p} > classical {cls}"))?;
            let n0 = predicted_gain_ray(&m, &NoPrediction, &s, &e);
            let n1 = predicted_gain_ray(&m, &null, &s, &e);
            ensure(n0 == cls && n1 == cls, || format!("map {map_no}: null gave {n0}/{n1}, classical {cls}"))?;
            rays += 1;
        }
    }
    Ok(format!("1000 maps, {rays} rays"))
}

fn alg1_fixtures() -> Outcome {
    // voxel 0 free, voxels 1..=6 unknown, then the map ends
    let mut m = VoxelMap::new(Vec3::zeros(), 0.1, [7, 1, 1], MapParams::default()).unwrap();
    m.set_state([0, 0, 0], Trinary::Free);
    let s = Vec3::new(0.05, 0.05, 0.05);
    let e = Vec3::new(0.65, 0.05, 0.05);
    let third = Fixed(HashMap::from([([3, 0, 0], Trinary::Occupied)]));
    let g = predicted_gain_ray(&m, &third, &s, &e);
    ensure(g == 3, || format!("third-occupied walk gave {g}"))?;
    ensure(classical_gain_ray(&m, &s, &e) == 6, || "classical walk not 6".into())?;
    let free = Fixed((1..=6).map(|x| ([x, 0, 0], Trinary::Free)).collect());
    let g = predicted_gain_ray(&m, &free, &s, &e);
    ensure(g == 6, || format!("predicted-free walk gave {g}"))?;
    Ok("third occupied -> 3, all predicted free -> 6".into())
}

fn gain_error_direction() -> Outcome {
    let cfg = RunConfig::default();
    let mut all = GainErrorReport::default();
    let worlds = 5;
    for seed in 1..=worlds {
        let w = generate_world(seed, &WorldConfig::default()).unwrap();
        all.extend(eval_gain_error(&w, PredictorKind::OracleSim, 50, &cfg).map_err(|e| e.to_string())?);
    }
    let (c, p) = (all.classical_error().unwrap_or(f64::NAN), all.predicted_error().unwrap_or(f64::NAN));
    let detail = format!("{} viewpoints ({} with true gain) over {worlds} worlds, classical {:.1}%, predicted {:.1}%", all.samples.len(), all.qualifying(), 100.0 * c, 100.0 * p);
    ensure(all.samples.len() >= 200, || format!("too few viewpoints: {detail}"))?;
    ensure(p <= 0.8 * c, || detail.clone())?;
    Ok(detail)
}

fn benchmark_direction(reports: &[ExperimentReport]) -> Outcome {
    let s = summarize(reports);
    let get = |m: MethodKind| s.iter().find(|x| x.method == m).ok_or(format!("{} missing", m.name()));
    let (f, e) = (get(MethodKind::Frontier)?, get(MethodKind::Seer)?);
    let path = |x: &seer::runtime::MethodSummary| x.path.map(|p| p.avg).unwrap_or(f64::INFINITY);
    let detail = format!(
        "frontier path {:.1} m succ {:.0}%, seer path {:.1} m succ {:.0}%",
        path(f),
        100.0 * f.success_rate(),
        path(e),
        100.0 * e.success_rate()
    );
    ensure(path(e) <= 0.9 * path(f), || detail.clone())?;
    ensure(e.success_rate() >= f.success_rate(), || detail.clone())?;
    Ok(detail)
}

fn block(dims: [usize; 3], v: Vec<i8>) -> OccupancyBlock {
    OccupancyBlock::from_values(dims, v).unwrap()
}

fn loss_exactness() -> Outcome {
    let input = block([1, 1, 1], vec![UNKNOWN]);
    let target = block([1, 1, 1], vec![OCCUPIED]);
    let pred = PredictedBlock::from_parts([1, 1, 1], vec![0.8], vec![true]);
    let l = loss_occ(&pred, &target, &input, 5.0);
    ensure((l + 5.0 * 0.8f64.ln()).abs() < 1e-9, || format!("single voxel loss_occ {l}"))?;

    let target = block([1, 1, 4], vec![OCCUPIED, OCCUPIED, OCCUPIED, FREE]);
    let pred = PredictedBlock::from_parts([1, 1, 4], vec![0.9, 0.1, 0.2, 0.3], vec![true; 4]);
    let l = loss_struct(&pred, &target, 2.0);
    ensure(l == 4.0, || format!("column loss_struct {l}"))?;

    // occupied terms ln p: -0.5, -1.5, -1.5; free term ln(1 - q): -0.5,
    // so loss_occ = 4 / 4 = 1 while one voxel is predicted occupied
    let input = block([1, 1, 4], vec![FREE; 4]);
    let (a, b) = ((-0.5f64).exp(), (-1.5f64).exp());
    let pred = PredictedBlock::from_parts([1, 1, 4], vec![a, b, b, 1.0 - a], vec![true; 4]);
    let lo = loss_occ(&pred, &target, &input, 5.0);
    let ls = loss_struct(&pred, &target, 2.0);
    let lt = loss_total(&pred, &target, &input, &LossWeights::default());
    ensure((lo - 1.0).abs() < 1e-12 && ls == 4.0, || format!("components {lo}, {ls}"))?;
    ensure((lt - 6.0).abs() < 1e-12, || format!("loss_total {lt}"))?;

    let unk = OccupancyBlock::unknown([3, 3, 3]);
    let pred = PredictedBlock::from_parts([3, 3, 3], vec![0.9; 27], vec![true; 27]);
    let l = loss_occ(&pred, &unk, &unk, 5.0);
    ensure(l == 0.0, || format!("all-unknown loss_occ {l}"))?;
    Ok(format!("-5 ln 0.8, 4, {lt}, 0"))
}

fn random_yaw_problem(rng: &mut ChaCha8Rng) -> YawProblem<'static> {
    let durations: Vec<f64> = (0..3).map(|_| rng.gen_range(0.3..2.0)).collect();
    let (a, b, c): (f64, f64, f64) = (rng.gen_range(0.5..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.0..2.0));
    let heading = rng.gen_range(-3.0..3.0f64);
    let soi = rng.gen_bool(0.5).then(|| Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 1.0));
    YawProblem {
        position: Box::new(move |i, s| Vec3::new((i as f64 + s) * heading.cos(), (i as f64 + s) * heading.sin(), 1.0)),
        gain: Box::new(move |i, k, yaw| c * ((yaw * a + b * (i + k) as f64).sin() + 1.0)),
        durations,
        soi,
        hfov: std::f64::consts::FRAC_PI_2,
        start_yaw: rng.gen_range(-3.0..3.0),
    }
}

fn yaw_optimization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for n in 0..50 {
        let m = rng.gen_range(2..7);
        let durs: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..2.0)).collect();
        let gamma: Vec<f64> = (0..m).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let psi0 = rng.gen_range(-3.0..3.0);
        let obj = YawObjective::new(&gamma, &durs, psi0, YawParams::default()).map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..m - 1).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let (_, g) = obj.eval(&x);
        for i in 0..x.len() {
            let h = 1e-5;
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (obj.cost(&a) - obj.cost(&b)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
            ensure(rel <= 1e-4, || format!("instance {n} coord {i}: fd {fd} analytic {}", g[i]))?;
        }
    }

    let p = YawParams { bins: 8, ..Default::default() };
    let instances = 30;
    for n in 0..instances {
        let prob = random_yaw_problem(&mut rng);
        let (bins, _) = search_yaw(&prob, &p);
        let mut best = (f64::INFINITY, vec![]);
        for a in 0..8 {
            for b in 0..8 {
                for c in 0..8 {
                    let cost = prob.sequence_cost(&[a, b, c], &p);
                    if cost < best.0 - 1e-12 {
                        best = (cost, vec![a, b, c]);
                    }
                }
            }
        }
        let dp = prob.sequence_cost(&bins, &p);
        ensure((dp - best.0).abs() < 1e-9, || format!("dp instance {n}: {dp} vs exhaustive {}", best.0))?;

        let (_, gamma) = search_yaw(&prob, &YawParams::default());
        let plan = optimize_yaw(&gamma, &prob.durations, &YawParams::default(), prob.start_yaw).map_err(|e| e.to_string())?;
        ensure(plan.cost <= plan.reference_cost, || format!("instance {n}: J(opt) {} > J(gamma) {}", plan.cost, plan.reference_cost))?;
    }
    Ok(format!("50 gradients (worst rel err {worst:.1e}), {instances} DP and J checks"))
}

fn sliding_window() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sampler = ViewSampler::new(SamplerParams::default(), CameraModel::default()).map_err(|e| e.to_string())?;
    let mut yaws = 0;
    for n in 0..100 {
        let dims = [60, 60, 24];
        let m = random_map(&mut rng, dims);
        let mut pred = PredictionMap::new(&m);
        if n % 2 == 0 {
            pred.insert(&m, &random_prediction(&mut rng, dims));
        }
        let p = Vec3::new(rng.gen_range(1.0..5.0), rng.gen_range(1.0..5.0), rng.gen_range(0.5..1.9));
        let centre = rng.gen_range(-3.2..3.2);
        let windowed = sampler.window_gains(&sampler.slice_gains(&m, &pred, &p, centre));
        for (k, &w) in windowed.iter().enumerate() {
            let d = sampler.direct_yaw_gain(&m, &pred, &p, centre, k);
            ensure(w == d, || format!("viewpoint {n} yaw {k}: windowed {w} direct {d}"))?;
            yaws += 1;
        }
    }
    Ok(format!("100 viewpoints, {yaws} yaws"))
}

fn random_box_world(rng: &mut ChaCha8Rng) -> World {
    let bounds = Box3::new(Vec3::zeros(), Vec3::new(2.0, 2.0, 0.8));
    let boxes = (0..rng.gen_range(1..6))
        .map(|_| {
            let min = Vec3::new(rng.gen_range(0.0..1.8), rng.gen_range(0.0..1.8), 0.0);
            let size = Vec3::new(rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6), rng.gen_range(0.2..0.8));
            Box3::new(min, min + size)
        })
        .collect();
    World { bounds, boxes, rooms: vec![], doors: vec![], start: Pose::new(Vec3::new(1.0, 1.0, 0.4), 0.0), seed: 0 }
}

fn frontier_incremental() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cam = CameraModel { max_range: 1.5, ..Default::default() };
    let mut steps = 0;
    for n in 0..50 {
        let w = random_box_world(&mut rng);
        let mut m = w.empty_map(0.1, MapParams::default()).unwrap();
        assert_eq!(m.dims(), [20, 20, 8]);
        let mut reg = FrontierRegistry::new(FrontierParams::default());
        for step in 0..rng.gen_range(3..8) {
            let pos = loop {
                let p = Vec3::new(rng.gen_range(0.1..1.9), rng.gen_range(0.1..1.9), rng.gen_range(0.1..0.7));
                if !w.is_solid(&p) {
                    break p;
                }
            };
            let pose = Pose::new(pos, rng.gen_range(-3.2..3.2));
            let changed = m.integrate_scan(&pos, &render_depth(&w, &pose, &cam)).map_err(|e| e.to_string())?;
            if let Some(ch) = changed {
                update_frontiers(&m, &ch.dilate(1), &mut reg);
            }
            let mut fresh = FrontierRegistry::new(FrontierParams::default());
            fresh.rebuild(&m);
            ensure(reg.cell_union() == fresh.cell_union(), || {
                format!("sequence {n} step {step}: {} incremental vs {} scratch cells", reg.cell_union().len(), fresh.cell_union().len())
            })?;
            steps += 1;
        }
    }
    Ok(format!("50 sequences, {steps} scans"))
}

/// Wall of `thick` voxels at `wy` with an opening of `gap` voxels from `gx`
/// up to 2 m. Space past `unknown_from` is unknown. `swap` exchanges x and y.
struct Wall {
    gap: i32,
    gx: i32,
    wy: i32,
    thick: i32,
    unknown_from: i32,
    swap: bool,
}

impl Wall {
    fn map(&self) -> VoxelMap {
        let dims = if self.swap { [50, 60, 24] } else { [60, 50, 24] };
        let mut m = VoxelMap::new(Vec3::zeros(), 0.1, dims, MapParams::default()).unwrap();
        for v in m.bounds().voxels().collect::<Vec<_>>() {
            let [x, y, z] = if self.swap { [v[1], v[0], v[2]] } else { v };
            let in_wall = (self.wy..self.wy + self.thick).contains(&y);
            let opening = self.gap > 0 && (self.gx..self.gx + self.gap).contains(&x) && z < 20;
            let state = if z == 0 || z == 23 || (in_wall && !opening) {
                Trinary::Occupied
            } else if y >= self.unknown_from {
                Trinary::Unknown
            } else {
                Trinary::Free
            };
            m.set_state(v, state);
        }
        m
    }

    fn point(&self, x: f64, y: f64, z: f64) -> Vec3 {
        if self.swap {
            Vec3::new(y, x, z)
        } else {
            Vec3::new(x, y, z)
        }
    }

    /// Openings keep at least 1.5 m of wall on both sides, otherwise the
    /// jamb-side wall is shorter than the minimum line length.
    fn random(rng: &mut ChaCha8Rng, gap: i32) -> Self {
        let wy = rng.gen_range(15..22);
        let thick = rng.gen_range(1..4);
        Wall { gap, gx: rng.gen_range(15..(45 - gap).max(16)), wy, thick, unknown_from: wy + thick + rng.gen_range(6..12), swap: rng.gen_bool(0.5) }
    }

    /// Single-cell cluster on the unknown boundary near x.
    fn cluster(&self, m: &VoxelMap, rng: &mut ChaCha8Rng, x: f64) -> FrontierCluster {
        let y = (self.unknown_from as f64 - 0.5) * 0.1;
        let p = self.point(x + rng.gen_range(-0.3..0.3), y, rng.gen_range(0.8..1.2));
        FrontierCluster::from_cells(0, vec![m.voxel_of(&p)], m)
    }
}

fn door_detection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = DoorParams::default();
    let mut hits = 0;
    for _ in 0..50 {
        let gap = rng.gen_range(7..=10);
        let wall = Wall::random(&mut rng, gap);
        let m = wall.map();
        let cx = (wall.gx as f64 + gap as f64 / 2.0) * 0.1;
        let truth = wall.point(cx, (wall.wy as f64 + wall.thick as f64 / 2.0) * 0.1, 0.0);
        let doors = detect_doors(&m, &wall.cluster(&m, &mut rng, cx), &p);
        let found = doors.iter().any(|d| {
            let off = Vec3::new(d.position.x - truth.x, d.position.y - truth.y, 0.0).norm();
            off <= 0.3 && (d.width - gap as f64 * 0.1).abs() <= 0.1 + 1e-9
        });
        hits += found as usize;
    }
    let mut false_pos = 0;
    for k in 0..100 {
        let gap = if k < 50 { 0 } else { rng.gen_range(20..=30) };
        let wall = Wall::random(&mut rng, gap);
        let m = wall.map();
        let cx = if gap > 0 { (wall.gx as f64 + gap as f64 / 2.0) * 0.1 } else { rng.gen_range(1.5..4.5) };
        false_pos += detect_doors(&m, &wall.cluster(&m, &mut rng, cx), &p).len();
    }
    let detail = format!("{hits}/50 gaps found, {false_pos} candidates on 50 solid + 50 wide walls");
    ensure(hits >= 45 && false_pos == 0, || detail.clone())?;
    Ok(detail)
}

fn safety(reports: &[ExperimentReport]) -> Outcome {
    let r_robot = ROBOT_RADIUS;
    let mut n = 0;
    for r in reports.iter().filter(|r| r.success) {
        ensure(!r.collision && r.min_clearance >= r_robot, || format!("{}: clearance {:.3}", r.summary(), r.min_clearance))?;
        ensure(r.coverage >= 0.95, || format!("{}: coverage {:.4}", r.summary(), r.coverage))?;
        ensure(r.max_knot_residual < 1e-6, || format!("{}: knot residual {:.2e}", r.summary(), r.max_knot_residual))?;
        n += 1;
    }
    ensure(n > 0, || "no successful runs".into())?;
    Ok(format!("{n} successful runs of {} checked", reports.len()))
}

fn main() {
    let mut failed = 0;
    let mut run = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("PASS {name}: {d} ({secs:.1} s)"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} ({secs:.1} s)");
            }
        }
    };
    run("gain dominance", &mut || {
        let t = Instant::now();
        let d = gain_dominance()?;
        let s = t.elapsed().as_secs_f64();
        ensure(s < 10.0, || format!("took {s:.1} s"))?;
        Ok(d)
    });
    run("alg1 literalness", &mut alg1_fixtures);
    run("loss exactness", &mut loss_exactness);
    run("yaw optimization", &mut yaw_optimization);
    run("sliding window exactness", &mut sliding_window);
    run("frontier incremental equivalence", &mut frontier_incremental);
    run("door detection", &mut door_detection);
    run("gain error direction", &mut || {
        let t = Instant::now();
        let d = gain_error_direction()?;
        let s = t.elapsed().as_secs_f64();
        ensure(s < 300.0, || format!("{d}, took {s:.0} s"))?;
        Ok(d)
    });
    let t = Instant::now();
    let worlds: Vec<World> = (1..=10).map(|s| generate_world(s, &WorldConfig::default()).unwrap()).collect();
    let bench = run_benchmark(&worlds, &[MethodKind::Frontier, MethodKind::Seer], &PredictorKind::OracleSim, &RunConfig::default());
    let bench_s = t.elapsed().as_secs_f64();
    match bench {
        Ok(reports) => {
            run("benchmark direction", &mut || {
                let d = benchmark_direction(&reports)?;
                ensure(bench_s < 600.0, || format!("{d}, took {bench_s:.0} s"))?;
                Ok(format!("{d}, 10 worlds in {bench_s:.0} s"))
            });
            run("safety and success definition", &mut || safety(&reports));
        }
        Err(e) => {
            run("benchmark direction", &mut || Err(e.to_string()));
            run("safety and success definition", &mut || Err(e.to_string()));
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
