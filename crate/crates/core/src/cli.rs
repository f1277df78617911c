//! Command-line entry points.
//!
//! Every subcommand writes only under `--out`. Settings come from flags,
//! then from an optional flat `key=value` config file, then defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::block::{OccupancyBlock, OCCUPIED};
use crate::geom::Vec3;
use crate::occ_predict::{self, LossWeights, PredictorKind, TinyNet};
use crate::runtime::{self, MethodKind, RunConfig};
use crate::sim_world::{generate_world, CameraModel, GroundTruth, World, WorldConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn cfg_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn rt_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "seer", version, about = "Autonomous exploration of simulated indoor worlds")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a corridor+rooms world file.
    GenWorld(Common),
    /// Explore one world and write the report, run log and trajectory.
    Explore(Common),
    /// Run methods over seeded worlds and write a CSV.
    Benchmark(Common),
    /// Compare classical and predicted gain against the ground truth.
    EvalGain(Common),
    /// Export (input, target) occupancy block pairs.
    TrainData(Common),
    /// Losses of a predictor over exported pairs.
    PredictEval(Common),
    /// Top-down map slice with trajectory overlay as a PPM image.
    Plot(Common),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated list for `benchmark`.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    predictor: Option<String>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "max-vel")]
    max_vel: Option<f64>,
    #[arg(long = "max-acc")]
    max_acc: Option<f64>,
    #[arg(long = "timeout-s")]
    timeout_s: Option<f64>,
    /// Flat key=value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Samples for `eval-gain`, pairs for `train-data`.
    #[arg(long)]
    samples: Option<usize>,
    /// Directory of `.in`/`.tar` pairs for `predict-eval`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Trajectory rows (`t x y z yaw`) to overlay in `plot`.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

/// Parses flat `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected key=value", n + 1));
        };
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

const CONFIG_KEYS: &[&str] = &[
    "seed",
    "world",
    "method",
    "methods",
    "predictor",
    "weights",
    "repeats",
    "out",
    "max_vel",
    "max_acc",
    "timeout_s",
    "samples",
    "data",
    "trajectory",
    "length",
    "corridor_width",
    "room_depth",
    "rooms",
    "door_width_min",
    "door_width_max",
    "pillars_per_room",
];

/// Flags layered over the config file.
struct Settings {
    flags: Common,
    file: BTreeMap<String, String>,
}

impl Settings {
    fn new(flags: Common) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| cfg_err(format!("{}: {e}", p.display())))?;
                parse_config(&text).map_err(cfg_err)?
            }
            None => BTreeMap::new(),
        };
        if let Some(k) = file.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(cfg_err(format!("unknown config key {k:?}")));
        }
        Ok(Self { flags, file })
    }

    fn get<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(v) => v.parse().map(Some).map_err(|e| cfg_err(format!("{key}: {e}"))),
            None => Ok(None),
        }
    }

    fn seed(&self) -> Result<u64, CliError> {
        Ok(self.get(self.flags.seed, "seed")?.unwrap_or(1))
    }

    fn out(&self) -> Result<PathBuf, CliError> {
        let out = self.get(self.flags.out.clone(), "out")?.unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out).map_err(|e| rt_err(format!("{}: {e}", out.display())))?;
        Ok(out)
    }

    fn repeats(&self) -> Result<usize, CliError> {
        let r = self.get(self.flags.repeats, "repeats")?.unwrap_or(1);
        if r == 0 {
            return Err(cfg_err("repeats must be >= 1"));
        }
        Ok(r)
    }

    fn method(&self) -> Result<MethodKind, CliError> {
        self.get(self.flags.method.clone(), "method")?
            .map_or(Ok(MethodKind::Seer), |s: String| s.parse().map_err(cfg_err))
    }

    fn methods(&self) -> Result<Vec<MethodKind>, CliError> {
        match self.get(self.flags.methods.clone(), "methods")? {
            Some(list) => list.split(',').map(|s| s.trim().parse().map_err(cfg_err)).collect(),
            None => Ok(vec![MethodKind::Frontier, MethodKind::Seer]),
        }
    }

    fn predictor(&self) -> Result<PredictorKind, CliError> {
        let name: String = self.get(self.flags.predictor.clone(), "predictor")?.unwrap_or_else(|| "oracle".into());
        let weights: Option<PathBuf> = self.get(self.flags.weights.clone(), "weights")?;
        match name.as_str() {
            "null" => Ok(PredictorKind::Null),
            "oracle" => Ok(PredictorKind::OracleSim),
            "slab" => Ok(PredictorKind::SlabExtrapolation),
            "tinynet" => {
                let p = weights.ok_or_else(|| cfg_err("tinynet needs --weights"))?;
                if !p.exists() {
                    return Err(cfg_err(format!("weights file {} not found", p.display())));
                }
                Ok(PredictorKind::TinyConvNet(TinyNet::load(&p).map_err(rt_err)?))
            }
            other => Err(cfg_err(format!("unknown predictor {other:?}"))),
        }
    }

    fn world_config(&self) -> Result<WorldConfig, CliError> {
        let mut w = WorldConfig::default();
        let f = |k: &str| self.get::<f64>(None, k);
        if let Some(v) = f("length")? {
            w.length = v;
        }
        if let Some(v) = f("corridor_width")? {
            w.corridor_width = v;
        }
        if let Some(v) = f("room_depth")? {
            w.room_depth = v;
        }
        if let Some(v) = f("door_width_min")? {
            w.door_width_min = v;
        }
        if let Some(v) = f("door_width_max")? {
            w.door_width_max = v;
        }
        if let Some(v) = self.get::<usize>(None, "rooms")? {
            w.rooms = v;
        }
        if let Some(v) = self.get::<usize>(None, "pillars_per_room")? {
            w.pillars_per_room = v;
        }
        Ok(w)
    }

    /// The world file if given, else a world generated from the seed.
    fn world(&self, seed: u64) -> Result<World, CliError> {
        match self.get(self.flags.world.clone(), "world")? {
            Some(p) => {
                if !p.exists() {
                    return Err(cfg_err(format!("world file {} not found", p.display())));
                }
                World::load(&p).map_err(cfg_err)
            }
            None => generate_world(seed, &self.world_config()?).map_err(cfg_err),
        }
    }

    fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::default();
        if let Some(v) = self.get(self.flags.max_vel, "max_vel")? {
            c.limits.max_vel = v;
            c.behavior.max_vel = v;
        }
        if let Some(v) = self.get(self.flags.max_acc, "max_acc")? {
            c.limits.max_acc = v;
        }
        if let Some(v) = self.get(self.flags.timeout_s, "timeout_s")? {
            c.timeout_s = v;
        }
        c.validate().map_err(cfg_err)?;
        Ok(c)
    }

    fn samples(&self, default: usize) -> Result<usize, CliError> {
        Ok(self.get(self.flags.samples, "samples")?.unwrap_or(default))
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| rt_err(format!("{}: {e}", path.display())))
}

fn gen_world(s: &Settings) -> Result<String, CliError> {
    let seed = s.seed()?;
    let world = generate_world(seed, &s.world_config()?).map_err(cfg_err)?;
    let path = s.out()?.join(format!("world_{seed}.txt"));
    world.save(&path).map_err(rt_err)?;
    Ok(format!("wrote {}", path.display()))
}

fn explore(s: &Settings) -> Result<String, CliError> {
    let seed = s.seed()?;
    let world = s.world(seed)?;
    let (method, predictor, cfg) = (s.method()?, s.predictor()?, s.run_config()?);
    let out = s.out()?;
    let r = runtime::run_experiment(&world, method, predictor, &cfg).map_err(rt_err)?;
    let mut report = r.summary();
    report.push('\n');
    write(&out.join("report.txt"), &report)?;
    write(&out.join("run.log"), &(r.events.join("\n") + "\n"))?;
    write(&out.join("trajectory.txt"), &r.trajectory_text())?;
    let mut curve = "t,coverage\n".to_string();
    for (t, c) in &r.coverage_curve {
        let _ = writeln!(curve, "{t:.1},{c:.5}");
    }
    write(&out.join("coverage.csv"), &curve)?;
    Ok(r.summary())
}

fn benchmark(s: &Settings) -> Result<String, CliError> {
    let seed = s.seed()?;
    let (methods, predictor, cfg) = (s.methods()?, s.predictor()?, s.run_config()?);
    let wc = s.world_config()?;
    let worlds = (0..s.repeats()? as u64)
        .map(|k| generate_world(seed + k, &wc).map_err(cfg_err))
        .collect::<Result<Vec<_>, _>>()?;
    let out = s.out()?;
    let reports = runtime::run_benchmark(&worlds, &methods, &predictor, &cfg).map_err(rt_err)?;
    write(&out.join("benchmark.csv"), &runtime::benchmark_csv(&reports))?;
    let summary = runtime::summary_csv(&runtime::summarize(&reports));
    write(&out.join("summary.csv"), &summary)?;
    Ok(summary)
}

fn eval_gain(s: &Settings) -> Result<String, CliError> {
    let seed = s.seed()?;
    let (predictor, cfg) = (s.predictor()?, s.run_config()?);
    let per_world = s.samples(40)?;
    let mut all = runtime::GainErrorReport::default();
    for k in 0..s.repeats()? as u64 {
        let world = s.world(seed + k)?;
        all.extend(runtime::eval_gain_error(&world, predictor.clone(), per_world, &cfg).map_err(rt_err)?);
    }
    let fmt = |e: Option<f64>| e.map_or("nan".to_string(), |v| format!("{:.3}", 100.0 * v));
    let text = format!(
        "samples={} qualifying={}\nclassical_mean_pct_error={}\npredicted_mean_pct_error={}\n",
        all.samples.len(),
        all.qualifying(),
        fmt(all.classical_error()),
        fmt(all.predicted_error())
    );
    write(&s.out()?.join("gain_error.txt"), &text)?;
    Ok(text.trim_end().to_string())
}

fn train_data(s: &Settings) -> Result<String, CliError> {
    let seed = s.seed()?;
    let pairs = s.samples(20)?;
    let worlds = s.repeats()?;
    let out = s.out()?;
    let camera = CameraModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n = 0;
    for k in 0..worlds as u64 {
        let world = s.world(seed + k)?;
        let poses = occ_predict::survey_poses(&world, 1.0, 1.0, 4);
        if poses.is_empty() {
            return Err(rt_err("world has no free scan poses"));
        }
        let share = pairs / worlds + usize::from((k as usize) < pairs % worlds);
        for _ in 0..share {
            let (input, target) = occ_predict::make_training_pair(&world, &poses, &camera, &mut rng).map_err(rt_err)?;
            occ_predict::save_pair(&out, &format!("pair_{n:05}"), &input, &target).map_err(rt_err)?;
            n += 1;
        }
    }
    Ok(format!("wrote {n} pairs to {}", out.display()))
}

/// Ground truth standing in for the world when only pairs are available:
/// the target's occupied voxels.
fn truth_from_target(target: &OccupancyBlock) -> GroundTruth {
    let occ = target.values().iter().map(|&v| v == OCCUPIED).collect();
    GroundTruth::from_occupancy(target.origin, target.resolution, target.dims(), occ)
}

fn predict_eval(s: &Settings) -> Result<String, CliError> {
    let dir: PathBuf = s.get(s.flags.data.clone(), "data")?.ok_or_else(|| cfg_err("predict-eval needs --data"))?;
    let predictor = s.predictor()?;
    let mut stems: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| cfg_err(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "in"))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(cfg_err(format!("no .in files in {}", dir.display())));
    }
    let w = LossWeights::default();
    let mut csv = "pair,loss_occ,loss_struct,loss_total\n".to_string();
    let mut sum = 0.0;
    for p in &stems {
        let input = OccupancyBlock::load(p).map_err(rt_err)?;
        let target = OccupancyBlock::load(&p.with_extension("tar")).map_err(rt_err)?;
        let truth = truth_from_target(&target);
        let pred = predictor.predict(&input, Some(&truth)).map_err(rt_err)?;
        let lo = occ_predict::loss_occ(&pred, &target, &input, w.alpha);
        let ls = occ_predict::loss_struct(&pred, &target, w.beta);
        let lt = occ_predict::loss_total(&pred, &target, &input, &w);
        sum += lt;
        let name = p.file_stem().unwrap().to_string_lossy();
        let _ = writeln!(csv, "{name},{lo:.6},{ls:.6},{lt:.6}");
    }
    write(&s.out()?.join("losses.csv"), &csv)?;
    Ok(format!("predictor={} pairs={} mean_loss_total={:.6}", predictor.name(), stems.len(), sum / stems.len() as f64))
}

/// Binary PPM of the ground-truth slice at flight height, free space white,
/// solid grey, trajectory red, start green.
pub fn render_ppm(world: &World, trajectory: &[[f64; 5]], px_per_m: f64) -> Vec<u8> {
    let b = &world.bounds;
    let w = ((b.max.x - b.min.x) * px_per_m).ceil() as usize;
    let h = ((b.max.y - b.min.y) * px_per_m).ceil() as usize;
    let z = world.start.position.z;
    let mut img = vec![255u8; w * h * 3];
    let put = |x: usize, y: usize, c: [u8; 3], img: &mut Vec<u8>| {
        if x < w && y < h {
            // image rows run top-down, world y up
            let i = 3 * (x + w * (h - 1 - y));
            img[i..i + 3].copy_from_slice(&c);
        }
    };
    for y in 0..h {
        for x in 0..w {
            let p = Vec3::new(b.min.x + (x as f64 + 0.5) / px_per_m, b.min.y + (y as f64 + 0.5) / px_per_m, z);
            if world.is_solid(&p) {
                put(x, y, [90, 90, 90], &mut img);
            }
        }
    }
    let to_px = |v: f64, lo: f64| ((v - lo) * px_per_m).floor();
    for r in trajectory {
        let (x, y) = (to_px(r[1], b.min.x), to_px(r[2], b.min.y));
        if x >= 0.0 && y >= 0.0 {
            put(x as usize, y as usize, [220, 20, 20], &mut img);
        }
    }
    let (sx, sy) = (to_px(world.start.position.x, b.min.x), to_px(world.start.position.y, b.min.y));
    for dy in -1..=1i64 {
        for dx in -1..=1i64 {
            let (x, y) = (sx as i64 + dx, sy as i64 + dy);
            if x >= 0 && y >= 0 {
                put(x as usize, y as usize, [20, 160, 20], &mut img);
            }
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&img);
    out
}

fn parse_trajectory(text: &str) -> Result<Vec<[f64; 5]>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            let v: Vec<f64> = l.split_whitespace().map(|t| t.parse::<f64>()).collect::<Result<_, _>>().map_err(|e| format!("line {}: {e}", n + 1))?;
            <[f64; 5]>::try_from(v).map_err(|_| format!("line {}: expected 5 columns", n + 1))
        })
        .collect()
}

fn plot(s: &Settings) -> Result<String, CliError> {
    let seed = s.seed()?;
    let world = s.world(seed)?;
    let traj = match s.get(s.flags.trajectory.clone(), "trajectory")? {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| cfg_err(format!("{}: {e}", p.display())))?;
            parse_trajectory(&text).map_err(cfg_err)?
        }
        None => Vec::new(),
    };
    let path = s.out()?.join("plot.ppm");
    fs::write(&path, render_ppm(&world, &traj, 20.0)).map_err(rt_err)?;
    Ok(format!("wrote {}", path.display()))
}

fn run(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::GenWorld(c) => gen_world(&Settings::new(c)?),
        Command::Explore(c) => explore(&Settings::new(c)?),
        Command::Benchmark(c) => benchmark(&Settings::new(c)?),
        Command::EvalGain(c) => eval_gain(&Settings::new(c)?),
        Command::TrainData(c) => train_data(&Settings::new(c)?),
        Command::PredictEval(c) => predict_eval(&Settings::new(c)?),
        Command::Plot(c) => plot(&Settings::new(c)?),
    }
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code.
pub fn dispatch(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.cmd) {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn config_parsing() {
        let c = parse_config("# comment\nseed = 7\n\nmethod=seer # trailing\n").unwrap();
        assert_eq!(c["seed"], "7");
        assert_eq!(c["method"], "seer");
        assert!(parse_config("novalue\n").is_err());
    }

    #[test]
    fn bad_usage_exits_2() {
        assert_eq!(dispatch(&argv("seer explore --bogus")), EXIT_CONFIG);
        assert_eq!(dispatch(&argv("seer nope")), EXIT_CONFIG);
    }

    #[test]
    fn gen_world_is_deterministic() {
        let d = tempfile::tempdir().unwrap();
        let a = d.path().join("a");
        let b = d.path().join("b");
        for o in [&a, &b] {
            assert_eq!(dispatch(&argv(&format!("seer gen-world --seed 7 --out {}", o.display()))), EXIT_OK);
        }
        assert_eq!(fs::read(a.join("world_7.txt")).unwrap(), fs::read(b.join("world_7.txt")).unwrap());
    }

    #[test]
    fn config_file_and_flag_override() {
        let d = tempfile::tempdir().unwrap();
        let cfg = d.path().join("run.cfg");
        fs::write(&cfg, format!("seed=3\nout={}\n", d.path().join("o").display())).unwrap();
        assert_eq!(dispatch(&argv(&format!("seer gen-world --config {}", cfg.display()))), EXIT_OK);
        assert!(d.path().join("o/world_3.txt").exists());
        assert_eq!(dispatch(&argv(&format!("seer gen-world --config {} --seed 4", cfg.display()))), EXIT_OK);
        assert!(d.path().join("o/world_4.txt").exists());
        fs::write(&cfg, "colour=blue\n").unwrap();
        assert_eq!(dispatch(&argv(&format!("seer gen-world --config {}", cfg.display()))), EXIT_CONFIG);
    }

    #[test]
    fn missing_files_are_config_errors() {
        let d = tempfile::tempdir().unwrap();
        let o = d.path().display();
        assert_eq!(dispatch(&argv(&format!("seer explore --world /nonexistent/w.txt --out {o}"))), EXIT_CONFIG);
        assert_eq!(dispatch(&argv(&format!("seer explore --predictor tinynet --weights /nonexistent.bin --out {o}"))), EXIT_CONFIG);
        assert_eq!(dispatch(&argv(&format!("seer explore --method fuel --out {o}"))), EXIT_CONFIG);
    }

    #[test]
    fn ppm_header_and_size() {
        let w = generate_world(2, &WorldConfig::default()).unwrap();
        let img = render_ppm(&w, &[[0.0, 1.0, 1.0, 1.0, 0.0]], 10.0);
        let header = format!("P6\n{} {}\n255\n", 120, 84);
        assert!(img.starts_with(header.as_bytes()));
        assert_eq!(img.len(), header.len() + 120 * 84 * 3);
    }
}
