//! The exploration loop, planner variants, benchmark statistics and the
//! information-gain error study.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use log::{debug, warn};
use thiserror::Error;

use crate::behavior::{self, BehaviorParams, BgsmState, Mode, NavGoal, PathLengths};
use crate::frontier::{update_frontiers, FrontierLabel, FrontierParams, FrontierRegistry};
use crate::geom::{angle_diff, Pose, Vec3, Voxel};
use crate::info_gain::{
    classical_gain_ray, fov_gain_from_slices, predicted_gain_ray, true_gain_ray, NoPrediction, PredictionMap, SamplerError,
    SamplerParams, ViewSampler, Viewpoint,
};
use crate::nav::NavGrid;
use crate::occ_predict::{PredictError, PredictorKind};
use crate::semantics::{self, classify_frontier, reachable_region, DoorParams, ObjectStatus, SemanticRegistry};
use crate::sim_world::{coverage, render_depth, CameraModel, CoverageError, GroundTruth, World, ROBOT_RADIUS};
use crate::traj_opt::{optimize_yaw, plan_position, search_yaw, Limits, PlanError, State, Trajectory, YawParams, YawPlan, YawProblem};
use crate::voxel_map::{MapError, MapParams, Trinary, VoxelMap};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("bad config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    Frontier,
    FrontierUtil,
    FrontierPred,
    Seer,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [MethodKind::Frontier, MethodKind::FrontierUtil, MethodKind::FrontierPred, MethodKind::Seer];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Frontier => "frontier",
            MethodKind::FrontierUtil => "frontier-util",
            MethodKind::FrontierPred => "frontier-pred",
            MethodKind::Seer => "seer",
        }
    }

    fn uses_prediction(self) -> bool {
        matches!(self, MethodKind::FrontierPred | MethodKind::Seer)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "frontier" => Ok(MethodKind::Frontier),
            "frontier-util" | "frontierutil" => Ok(MethodKind::FrontierUtil),
            "frontier-pred" | "frontierpred" => Ok(MethodKind::FrontierPred),
            "seer" => Ok(MethodKind::Seer),
            _ => Err(format!("unknown method {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub limits: Limits,
    pub dt: f64,
    pub timeout_s: f64,
    pub replan_period: f64,
    /// Stop as soon as coverage reaches this.
    pub stop_coverage: f64,
    pub success_coverage: f64,
    pub resolution: f64,
    pub map: MapParams,
    pub camera: CameraModel,
    pub sampler: SamplerParams,
    pub doors: DoorParams,
    pub yaw: YawParams,
    pub behavior: BehaviorParams,
    pub frontier: FrontierParams,
    /// Yaw rate of the initial turn in place (rad/s).
    pub spin_rate: f64,
    /// Samples of the executed trajectory per second in the report.
    pub export_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            limits: Limits::default(),
            dt: 0.1,
            timeout_s: 600.0,
            replan_period: 2.0,
            stop_coverage: 0.99,
            success_coverage: 0.95,
            resolution: 0.1,
            map: MapParams::default(),
            camera: CameraModel::default(),
            sampler: SamplerParams::default(),
            doors: DoorParams::default(),
            yaw: YawParams::default(),
            behavior: BehaviorParams::default(),
            frontier: FrontierParams::default(),
            spin_rate: 1.5,
            export_rate: 50.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |m: &str| Err(RuntimeError::Config(m.to_string()));
        if !(self.limits.max_vel > 0.0 && self.limits.max_acc > 0.0) {
            return bad("limits must be positive");
        }
        if !(self.dt > 0.0 && self.timeout_s > 0.0 && self.replan_period > 0.0) {
            return bad("dt, timeout and replan period must be positive");
        }
        if !(self.spin_rate > 0.0 && self.export_rate > 0.0) {
            return bad("spin and export rates must be positive");
        }
        if self.behavior.max_vel <= 0.0 {
            return bad("behaviour max_vel must be positive");
        }
        ViewSampler::new(self.sampler.clone(), self.camera)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    Done,
    Coverage,
    Collision,
    Timeout,
}

impl fmt::Display for EndReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndReason::Done => "done",
            EndReason::Coverage => "coverage",
            EndReason::Collision => "collision",
            EndReason::Timeout => "timeout",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplanReason {
    Initial,
    GoalReached,
    Invalidated,
    Periodic,
}

impl fmt::Display for ReplanReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplanReason::Initial => "initial",
            ReplanReason::GoalReached => "goal-reached",
            ReplanReason::Invalidated => "invalidated",
            ReplanReason::Periodic => "periodic",
        })
    }
}

/// Wall-clock cost of decision cycles. Not part of the deterministic
/// output.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CycleStats {
    pub cycles: usize,
    pub mean_ms: f64,
    pub max_ms: f64,
}

impl CycleStats {
    fn add(&mut self, ms: f64) {
        self.mean_ms = (self.mean_ms * self.cycles as f64 + ms) / (self.cycles + 1) as f64;
        self.cycles += 1;
        self.max_ms = self.max_ms.max(ms);
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub method: MethodKind,
    pub predictor: String,
    pub seed: u64,
    pub time_s: f64,
    pub path_m: f64,
    pub success: bool,
    pub coverage: f64,
    pub coverage_curve: Vec<(f64, f64)>,
    pub collision: bool,
    pub min_clearance: f64,
    pub reason: EndReason,
    /// Largest position/velocity/acceleration knot mismatch over every
    /// planned trajectory.
    pub max_knot_residual: f64,
    pub events: Vec<String>,
    /// `t x y z yaw` at the export rate.
    pub trajectory: Vec<[f64; 5]>,
    pub timing: CycleStats,
}

impl ExperimentReport {
    pub fn csv_row(&self) -> String {
        format!("{},{},{:.2},{:.3},{},{:.4}", self.method, self.seed, self.time_s, self.path_m, self.success, self.coverage)
    }

    pub fn trajectory_text(&self) -> String {
        let mut s = String::new();
        for r in &self.trajectory {
            let _ = writeln!(s, "{:.2} {:.4} {:.4} {:.4} {:.4}", r[0], r[1], r[2], r[3], r[4]);
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "method={} predictor={} seed={} time_s={:.2} path_m={:.3} success={} coverage={:.4} collision={} min_clearance={:.3} reason={} max_knot_residual={:.3e}",
            self.method,
            self.predictor,
            self.seed,
            self.time_s,
            self.path_m,
            self.success,
            self.coverage,
            self.collision,
            self.min_clearance,
            self.reason,
            self.max_knot_residual
        )
    }
}

struct ActivePlan {
    traj: Trajectory,
    yaw: YawPlan,
    t0: f64,
    goal: NavGoal,
    /// Frontier cells of the goal cluster when the plan was made.
    goal_cells: Vec<Voxel>,
}

impl ActivePlan {
    fn end_time(&self) -> f64 {
        self.t0 + self.traj.duration()
    }

    fn pose(&self, t: f64) -> Pose {
        let tl = (t - self.t0).clamp(0.0, self.traj.duration());
        Pose::new(self.traj.position(tl), self.yaw.yaw(tl))
    }

    fn state(&self, t: f64) -> State {
        self.traj.state((t - self.t0).clamp(0.0, self.traj.duration()))
    }
}

/// Outcome of one simulation tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tick {
    Running { replanned: bool },
    Ended(EndReason),
}

/// Closed-loop exploration of one world with one method.
pub struct Explorer<'w> {
    world: &'w World,
    pub truth: GroundTruth,
    pub cfg: RunConfig,
    pub method: MethodKind,
    predictor: PredictorKind,
    pub map: VoxelMap,
    pub frontiers: FrontierRegistry,
    pub pred: PredictionMap,
    pub sois: SemanticRegistry,
    pub sampler: ViewSampler,
    pub bgsm: BgsmState,
    pub time: f64,
    pub pose: Pose,
    plan: Option<ActivePlan>,
    deferred: std::collections::BTreeSet<u32>,
    /// Viewpoint-less clusters already approached.
    approached: std::collections::BTreeSet<u32>,
    /// Decision count at which each cluster's viewpoints were sampled.
    fresh: std::collections::BTreeMap<u32, u64>,
    decision: u64,
    failed_decisions: usize,
    path_m: f64,
    collision: bool,
    min_clearance: f64,
    coverage: f64,
    coverage_curve: Vec<(f64, f64)>,
    max_knot_residual: f64,
    events: Vec<String>,
    trajectory: Vec<[f64; 5]>,
    timing: CycleStats,
    last_mode: Option<Mode>,
    ended: Option<EndReason>,
    spin_left: f64,
}

const STUCK_LIMIT: usize = 5;
const HOLD_S: f64 = 0.1;

impl<'w> Explorer<'w> {
    pub fn new(world: &'w World, method: MethodKind, predictor: PredictorKind, cfg: RunConfig) -> Result<Self, RuntimeError> {
        cfg.validate()?;
        let mut map = world.empty_map(cfg.resolution, cfg.map)?;
        let truth = world.ground_truth(cfg.resolution);
        let sampler = ViewSampler::new(cfg.sampler.clone(), cfg.camera)?;
        let pose = world.start;
        // the volume the robot sits in is free by construction
        let r = ROBOT_RADIUS + cfg.resolution;
        let lo = map.voxel_of(&(pose.position - Vec3::new(r, r, r)));
        let hi = map.voxel_of(&(pose.position + Vec3::new(r, r, r)));
        for v in crate::voxel_map::Aabb::new(lo, hi).voxels().collect::<Vec<_>>() {
            if truth.occupied(v) == Some(false) {
                map.set_state(v, Trinary::Free);
            }
        }
        let frontiers = FrontierRegistry::new(cfg.frontier);
        let pred = PredictionMap::new(&map);
        let coverage = coverage(&map, &truth)?;
        let spin_left = std::f64::consts::TAU;
        let mut ex = Self {
            world,
            truth,
            method,
            predictor,
            frontiers,
            pred,
            sois: SemanticRegistry::new(),
            sampler,
            bgsm: BgsmState::default(),
            time: 0.0,
            pose,
            plan: None,
            deferred: Default::default(),
            approached: Default::default(),
            fresh: Default::default(),
            decision: 0,
            failed_decisions: 0,
            path_m: 0.0,
            collision: false,
            min_clearance: world.clearance(&pose.position),
            coverage,
            coverage_curve: Vec::new(),
            max_knot_residual: 0.0,
            events: Vec::new(),
            trajectory: Vec::new(),
            timing: CycleStats::default(),
            last_mode: None,
            ended: None,
            spin_left,
            cfg,
            map,
        };
        ex.event(format!("start method={} predictor={} seed={}", method, ex.predictor.name(), world.seed));
        ex.sense()?;
        ex.record_coverage()?;
        Ok(ex)
    }

    fn event(&mut self, msg: String) {
        debug!("t={:.1} {}", self.time, msg);
        self.events.push(format!("t={:.1} {}", self.time, msg));
    }

    fn sense(&mut self) -> Result<(), RuntimeError> {
        let rays = render_depth(self.world, &self.pose, &self.cfg.camera);
        if let Some(b) = self.map.integrate_scan(&self.pose.position, &rays)? {
            update_frontiers(&self.map, &b.dilate(1), &mut self.frontiers);
        }
        Ok(())
    }

    fn record_coverage(&mut self) -> Result<(), RuntimeError> {
        let c = coverage(&self.map, &self.truth)?;
        // beliefs only ever gain knowledge in a static world; keep the curve
        // monotone against log-odds flicker
        self.coverage = self.coverage.max(c);
        self.coverage_curve.push((self.time, self.coverage));
        Ok(())
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn path_length(&self) -> f64 {
        self.path_m
    }

    pub fn events(&self) -> &[String] {
        &self.events
    }

    pub fn map(&self) -> &VoxelMap {
        &self.map
    }

    /// Simulated time (s).
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    fn nav(&self) -> NavGrid {
        NavGrid::build(&self.map, self.world.start.position.z - self.map.origin().z, ROBOT_RADIUS)
    }

    /// Predicts blocks for new clusters, samples their viewpoints and looks
    /// for doors around them.
    fn refresh_clusters(&mut self) -> Result<(), RuntimeError> {
        let pending: Vec<u32> = self.frontiers.clusters().filter(|c| !c.viewpoints_ready).map(|c| c.id).collect();
        if self.method.uses_prediction() {
            for &id in &pending {
                let centre = self.frontiers.get(id).unwrap().centroid;
                let input = self.map.extract_block(&centre);
                let p = self.predictor.predict(&input, Some(&self.truth))?;
                self.pred.insert(&self.map, &p);
            }
        }
        // clusters left without viewpoints are retried, since the space
        // around them may have become known since they were sampled
        let empty: Vec<u32> = self.frontiers.clusters().filter(|c| c.viewpoints_ready && c.viewpoints.is_empty()).map(|c| c.id).collect();
        for id in pending.into_iter().chain(empty) {
            self.resample(id);
        }
        if self.method == MethodKind::Seer {
            let unchecked: Vec<u32> = self.frontiers.clusters().filter(|c| !c.doors_checked).map(|c| c.id).collect();
            for id in unchecked {
                let c = self.frontiers.get(id).unwrap();
                let cands = semantics::detect_doors(&self.map, c, &self.cfg.doors);
                self.frontiers.get_mut(id).unwrap().doors_checked = true;
                for new in self.sois.add_candidates(cands, self.cfg.doors.dedupe) {
                    let o = self.sois.get(new).unwrap();
                    let p = o.position;
                    self.event(format!("soi-detected id={} pos=({:.2},{:.2}) width={:.2}", new, p.x, p.y, o.width));
                }
            }
            for id in self.sois.recheck_objects(&self.map, &self.cfg.doors) {
                self.event(format!("soi-dropped id={id}"));
            }
        }
        Ok(())
    }

    /// Samples the cluster's viewpoints against the current map.
    fn resample(&mut self, id: u32) {
        let Some(c) = self.frontiers.get(id) else { return };
        let vps = if self.method.uses_prediction() {
            self.sampler.sample_viewpoints(c, &self.map, &self.pred)
        } else {
            self.sampler.sample_viewpoints(c, &self.map, &NoPrediction)
        };
        let c = self.frontiers.get_mut(id).unwrap();
        c.viewpoints = vps;
        c.viewpoints_ready = true;
        self.fresh.insert(id, self.decision);
    }

    fn is_fresh(&self, id: u32) -> bool {
        self.fresh.get(&id) == Some(&self.decision)
    }

    fn label_clusters(&mut self) {
        let in_room = match (self.bgsm.mode, self.bgsm.active_soi.or(self.bgsm.active_aoi)) {
            (Mode::EnterAoi | Mode::ExploreAoi, Some(id)) => self.sois.get(id).is_some_and(|d| {
                let rel = self.pose.position - d.position;
                rel.x * d.direction.x + rel.y * d.direction.y > 0.0
            }),
            _ => false,
        };
        let reach = if in_room { reachable_region(&self.map, &self.pose.position, &self.sois) } else { Vec::new() };
        let labels: Vec<(u32, FrontierLabel)> =
            self.frontiers.clusters().map(|c| (c.id, classify_frontier(c, in_room, &self.map, &reach))).collect();
        for (id, l) in labels {
            self.frontiers.get_mut(id).unwrap().label = l;
        }
    }

    /// Candidate goals, best first. Gains only shrink as the map fills in,
    /// so stale viewpoints are an upper bound: resample the leading cluster
    /// until the leader is fresh.
    fn candidates(&mut self, paths: &PathLengths) -> Vec<NavGoal> {
        let state = self.bgsm.clone();
        loop {
            self.bgsm = state.clone();
            let cands = self.rank_goals(paths);
            match cands.first().and_then(|g| g.cluster) {
                Some(id) if !self.is_fresh(id) => self.resample(id),
                _ if cands.is_empty() => return self.approach_goals(paths),
                _ => return cands,
            }
        }
    }

    /// Goals for clusters without any viewpoint, e.g. behind unobserved
    /// speckle that fails the clearance test: the closest reachable flight
    /// cell next to the cluster, facing it. Each cluster is approached once.
    fn approach_goals(&self, paths: &PathLengths) -> Vec<NavGoal> {
        let z = self.world.start.position.z;
        let mut out: Vec<NavGoal> = Vec::new();
        for c in self.frontiers.clusters() {
            if !c.viewpoints.is_empty() || self.approached.contains(&c.id) || self.deferred.contains(&c.id) {
                continue;
            }
            let step = (c.cells.len() / 64).max(1);
            let best = c
                .cells
                .iter()
                .step_by(step)
                .filter_map(|&v| {
                    let p = self.map.center_of(v);
                    let q = paths.nav.center(paths.nav.nearest_traversable(&Vec3::new(p.x, p.y, z), 1.0)?);
                    paths.to(&q).map(|d| (d, q))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((d, q)) = best {
                let yaw = (c.centroid.y - q.y).atan2(c.centroid.x - q.x);
                out.push(NavGoal { mode: Mode::CorridorExplore, pose: Pose::new(q, yaw), cluster: Some(c.id), soi: None, utility: -d });
            }
        }
        out.sort_by(|a, b| b.utility.total_cmp(&a.utility));
        out
    }

    fn rank_goals(&mut self, paths: &PathLengths) -> Vec<NavGoal> {
        let usable = |c: &&crate::frontier::FrontierCluster| !self.deferred.contains(&c.id);
        match self.method {
            MethodKind::Frontier => {
                let mut best: Vec<(f64, u32, Viewpoint)> = Vec::new();
                for c in self.frontiers.clusters().filter(usable) {
                    if let Some((id, len, vp)) = behavior::nearest_viewpoint(std::iter::once(c), paths) {
                        best.push((len, id, vp));
                    }
                }
                best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                best.into_iter()
                    .map(|(len, id, vp)| NavGoal {
                        mode: Mode::CorridorExplore,
                        pose: Pose::new(vp.position, vp.yaw),
                        cluster: Some(id),
                        soi: None,
                        utility: -len,
                    })
                    .collect()
            }
            MethodKind::FrontierUtil | MethodKind::FrontierPred => {
                behavior::rank_clusters(self.frontiers.clusters().filter(usable), paths, &self.cfg.behavior)
                    .into_iter()
                    .map(|(id, u, vp)| NavGoal {
                        mode: Mode::CorridorExplore,
                        pose: Pose::new(vp.position, vp.yaw),
                        cluster: Some(id),
                        soi: None,
                        utility: u,
                    })
                    .collect()
            }
            MethodKind::Seer => {
                let (state, goal) =
                    behavior::step_bgsm(&self.bgsm, &self.frontiers, &self.sois, &self.pose, paths, &self.cfg.behavior);
                self.bgsm = state;
                goal.into_iter().collect()
            }
        }
    }

    fn plan_to(&mut self, goal: &NavGoal, nav: &NavGrid) -> Result<ActivePlan, RuntimeError> {
        let start = match &self.plan {
            Some(p) if self.time < p.end_time() => p.state(self.time),
            _ => State::at_rest(self.pose.position),
        };
        let mut traj = plan_position(&start, &goal.pose.position, nav, &self.cfg.limits)?.traj;
        let mut yaw = self.plan_yaw(&traj, goal)?;
        // keep the yaw rate feasible by slowing both down together
        let peak = yaw.peak_rate(0.02);
        if peak > self.cfg.yaw.max_rate {
            let f = peak / self.cfg.yaw.max_rate * 1.001;
            traj = traj.scaled(f);
            yaw = yaw.scaled(f);
        }
        self.max_knot_residual = self.max_knot_residual.max(traj.knot_residual()).max(yaw.knot_residual());
        let goal_cells = goal.cluster.and_then(|id| self.frontiers.get(id)).map(|c| c.cells.clone()).unwrap_or_default();
        Ok(ActivePlan { traj, yaw, t0: self.time, goal: *goal, goal_cells })
    }

    fn plan_yaw(&self, traj: &Trajectory, goal: &NavGoal) -> Result<YawPlan, RuntimeError> {
        let psi0 = self.pose.yaw;
        let durations = traj.durations.clone();
        let m = durations.len();
        let goal_yaw = psi0 + angle_diff(goal.pose.yaw, psi0);
        let mut gamma: Vec<f64> = if self.method == MethodKind::Seer && m > 1 {
            let n = self.cfg.yaw.samples;
            let starts = traj.knot_times();
            let slices: Vec<Vec<Vec<usize>>> = (0..m)
                .map(|i| {
                    (0..n)
                        .map(|k| {
                            let t = starts[i] + (k + 1) as f64 / n as f64 * durations[i];
                            self.sampler.circle_slices(&self.map, &self.pred, &traj.position(t))
                        })
                        .collect()
                })
                .collect();
            let sw = self.sampler.params.slice_width;
            let hfov = self.cfg.camera.hfov;
            let rays = self.sampler.rays_per_view() as f64;
            let soi = goal.soi.and_then(|id| self.sois.get(id)).map(|o| o.position);
            let prob = YawProblem::along(
                traj,
                Box::new(move |i, k, yaw| fov_gain_from_slices(&slices[i][k], sw, hfov, yaw) as f64 / rays),
                soi,
                hfov,
                psi0,
            );
            search_yaw(&prob, &self.cfg.yaw).1
        } else {
            let total = traj.duration().max(1e-9);
            let knots = traj.knot_times();
            knots[1..].iter().map(|t| psi0 + (goal_yaw - psi0) * t / total).collect()
        };
        // arrive with the goal's heading
        let prev = if m > 1 { gamma[m - 2] } else { psi0 };
        gamma[m - 1] = prev + angle_diff(goal.pose.yaw, prev);
        Ok(optimize_yaw(&gamma, &durations, &self.cfg.yaw, psi0)?)
    }

    fn hold_plan(&self) -> ActivePlan {
        let traj = Trajectory::hold(self.pose.position, HOLD_S);
        let yaw = YawPlan {
            knots: vec![self.pose.yaw, self.pose.yaw],
            durations: vec![HOLD_S],
            coeffs: vec![[self.pose.yaw, 0.0, 0.0, 0.0, 0.0, 0.0]],
            iterations: 0,
            cost: 0.0,
            reference_cost: 0.0,
        };
        let goal = NavGoal { mode: self.bgsm.mode, pose: self.pose, cluster: None, soi: None, utility: 0.0 };
        ActivePlan { traj, yaw, t0: self.time, goal, goal_cells: Vec::new() }
    }

    fn replan_reason(&self) -> Option<ReplanReason> {
        let Some(p) = &self.plan else { return Some(ReplanReason::Initial) };
        if self.time >= p.end_time() - 1e-9 {
            return Some(ReplanReason::GoalReached);
        }
        if let Some(id) = p.goal.soi {
            if self.sois.get(id).map_or(true, |o| o.status == ObjectStatus::Rejected) {
                return Some(ReplanReason::Invalidated);
            }
        }
        if !p.goal_cells.is_empty() && p.goal_cells.iter().all(|&v| self.frontiers.cluster_of(v).is_none()) {
            return Some(ReplanReason::Invalidated);
        }
        if self.time - p.t0 >= self.cfg.replan_period - 1e-9 {
            return Some(ReplanReason::Periodic);
        }
        None
    }

    /// Chooses a goal and plans to it. Returns false when there is nothing
    /// left to explore.
    fn decide(&mut self, reason: ReplanReason) -> Result<bool, RuntimeError> {
        let started = Instant::now();
        self.decision += 1;
        if reason == ReplanReason::GoalReached {
            if let Some(id) = self.plan.as_ref().and_then(|p| p.goal.cluster) {
                if self.frontiers.get(id).is_some_and(|c| c.viewpoints.is_empty()) {
                    self.approached.insert(id);
                }
            }
        }
        self.refresh_clusters()?;
        let nav = self.nav();
        if self.method == MethodKind::Seer {
            self.label_clusters();
            if self.bgsm.mode == Mode::ConfirmSoi {
                if let Some(id) = self.bgsm.active_soi {
                    let status = self.sois.try_confirm(id, &self.map, &self.pose, &self.cfg.camera, &self.cfg.doors);
                    if let Some(s) = status {
                        self.event(format!("soi-{} id={}", if s == ObjectStatus::Confirmed { "confirmed" } else { "rejected" }, id));
                    }
                    self.label_clusters();
                }
            }
        }
        let paths = PathLengths::from(&nav, &self.pose.position);
        let mut attempts = 0;
        let result = loop {
            let cands = self.candidates(&paths);
            if self.method == MethodKind::Seer && self.last_mode != Some(self.bgsm.mode) {
                self.last_mode = Some(self.bgsm.mode);
                self.event(format!("mode {}", self.bgsm.mode));
            }
            let Some(goal) = cands.first().copied() else { break false };
            let tries: Vec<NavGoal> = if self.method == MethodKind::Seer { vec![goal] } else { cands.into_iter().take(4).collect() };
            let mut planned = None;
            for g in &tries {
                match self.plan_to(g, &nav) {
                    Ok(p) => {
                        planned = Some(p);
                        break;
                    }
                    Err(e) => {
                        debug!("plan to {g} failed: {e}");
                        if let Some(id) = g.cluster {
                            self.deferred.insert(id);
                            self.bgsm.deferred_clusters.insert(id);
                        } else if let Some(id) = g.soi {
                            self.bgsm.deferred_sois.insert(id);
                        }
                    }
                }
            }
            if let Some(p) = planned {
                self.event(format!("replan reason={} {}", reason, p.goal));
                self.plan = Some(p);
                break true;
            }
            attempts += 1;
            if attempts >= 8 {
                break false;
            }
        };
        self.timing.add(started.elapsed().as_secs_f64() * 1e3);
        if result {
            self.failed_decisions = 0;
            return Ok(true);
        }
        let current_ok = self.plan.as_ref().is_some_and(|p| self.time < p.end_time());
        if current_ok {
            // keep following the previous trajectory
            return Ok(true);
        }
        let any_goal = self.frontiers.clusters().any(|c| !c.viewpoints.is_empty()) || self.sois.pending().next().is_some();
        if any_goal && self.failed_decisions < STUCK_LIMIT {
            self.failed_decisions += 1;
            self.deferred.clear();
            self.bgsm.deferred_clusters.clear();
            self.plan = Some(self.hold_plan());
            return Ok(true);
        }
        if any_goal {
            warn!("all goals deferred; stopping");
            self.event("all-goals-deferred".to_string());
        }
        Ok(false)
    }

    fn advance(&mut self) {
        let dt = self.cfg.dt;
        let t1 = self.time + dt;
        let steps = (self.cfg.export_rate * dt).round().max(1.0) as usize;
        let prev = self.pose.position;
        let mut next = self.pose;
        for s in 1..=steps {
            let t = self.time + dt * s as f64 / steps as f64;
            let p = match &self.plan {
                Some(plan) => plan.pose(t),
                None => self.pose,
            };
            self.trajectory.push([t, p.position.x, p.position.y, p.position.z, p.yaw]);
            let c = self.world.clearance(&p.position);
            self.min_clearance = self.min_clearance.min(c);
            if c < ROBOT_RADIUS - 1e-9 {
                self.collision = true;
            }
            next = p;
        }
        self.path_m += (next.position - prev).norm();
        self.pose = next;
        self.time = t1;
    }

    fn spin_tick(&mut self) {
        let dt = self.cfg.dt;
        let step = (self.cfg.spin_rate * dt).min(self.spin_left);
        let steps = (self.cfg.export_rate * dt).round().max(1.0) as usize;
        for s in 1..=steps {
            let y = self.pose.yaw + step * s as f64 / steps as f64;
            let p = self.pose.position;
            self.trajectory.push([self.time + dt * s as f64 / steps as f64, p.x, p.y, p.z, y]);
        }
        self.pose.yaw += step;
        self.spin_left -= step;
        self.time += dt;
    }

    /// One tick of the loop: decide if needed, move, sense.
    pub fn tick(&mut self) -> Result<Tick, RuntimeError> {
        if let Some(r) = self.ended {
            return Ok(Tick::Ended(r));
        }
        let mut replanned = false;
        if self.coverage >= self.cfg.stop_coverage {
            return Ok(self.finish(EndReason::Coverage));
        }
        if self.time >= self.cfg.timeout_s - 1e-9 {
            return Ok(self.finish(EndReason::Timeout));
        }
        if self.spin_left > 1e-12 {
            self.spin_tick();
        } else {
            if let Some(reason) = self.replan_reason() {
                if !self.decide(reason)? {
                    return Ok(self.finish(EndReason::Done));
                }
                replanned = true;
            }
            self.advance();
        }
        self.sense()?;
        self.record_coverage()?;
        if self.collision {
            self.event(format!("collision pos=({:.2},{:.2},{:.2})", self.pose.position.x, self.pose.position.y, self.pose.position.z));
            return Ok(self.finish(EndReason::Collision));
        }
        Ok(Tick::Running { replanned })
    }

    fn finish(&mut self, reason: EndReason) -> Tick {
        if self.ended.is_none() {
            self.event(format!("end reason={} coverage={:.4} path_m={:.3}", reason, self.coverage, self.path_m));
            self.ended = Some(reason);
        }
        Tick::Ended(reason)
    }

    pub fn run(mut self) -> Result<ExperimentReport, RuntimeError> {
        let reason = loop {
            if let Tick::Ended(r) = self.tick()? {
                break r;
            }
        };
        Ok(self.into_report(reason))
    }

    fn into_report(self, reason: EndReason) -> ExperimentReport {
        let success = !self.collision && self.coverage >= self.cfg.success_coverage;
        ExperimentReport {
            method: self.method,
            predictor: self.predictor.name().to_string(),
            seed: self.world.seed,
            time_s: self.time,
            path_m: self.path_m,
            success,
            coverage: self.coverage,
            coverage_curve: self.coverage_curve,
            collision: self.collision,
            min_clearance: self.min_clearance,
            reason,
            max_knot_residual: self.max_knot_residual,
            events: self.events,
            trajectory: self.trajectory,
            timing: self.timing,
        }
    }
}

/// Runs one exploration to completion.
pub fn run_experiment(world: &World, method: MethodKind, predictor: PredictorKind, cfg: &RunConfig) -> Result<ExperimentReport, RuntimeError> {
    Explorer::new(world, method, predictor, cfg.clone())?.run()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub avg: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let avg = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / n;
        Some(Self {
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            avg,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: MethodKind,
    pub runs: usize,
    pub successes: usize,
    /// Over successful runs only.
    pub time: Option<Stats>,
    pub path: Option<Stats>,
}

impl MethodSummary {
    pub fn success_rate(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.successes as f64 / self.runs as f64
        }
    }
}

pub const BENCH_HEADER: &str = "method,seed,time_s,path_m,success,coverage";

pub fn benchmark_csv(reports: &[ExperimentReport]) -> String {
    let mut s = format!("{BENCH_HEADER}\n");
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Per-method statistics in the order methods first appear.
pub fn summarize(reports: &[ExperimentReport]) -> Vec<MethodSummary> {
    let mut methods: Vec<MethodKind> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let runs: Vec<&ExperimentReport> = reports.iter().filter(|r| r.method == m).collect();
            let ok: Vec<&&ExperimentReport> = runs.iter().filter(|r| r.success).collect();
            let times: Vec<f64> = ok.iter().map(|r| r.time_s).collect();
            let paths: Vec<f64> = ok.iter().map(|r| r.path_m).collect();
            MethodSummary { method: m, runs: runs.len(), successes: ok.len(), time: Stats::of(&times), path: Stats::of(&paths) }
        })
        .collect()
}

pub fn summary_csv(summaries: &[MethodSummary]) -> String {
    let cell = |s: &Option<Stats>| match s {
        Some(s) => format!("{:.3},{:.3},{:.3},{:.3}", s.min, s.max, s.avg, s.std),
        None => ",,,".to_string(),
    };
    let mut out = "method,time_min,time_max,time_avg,time_std,path_min,path_max,path_avg,path_std,succ_pct\n".to_string();
    for m in summaries {
        let _ = writeln!(out, "{},{},{},{:.1}", m.method, cell(&m.time), cell(&m.path), 100.0 * m.success_rate());
    }
    out
}

/// Every method on every world, worlds in the outer loop.
pub fn run_benchmark(
    worlds: &[World],
    methods: &[MethodKind],
    predictor: &PredictorKind,
    cfg: &RunConfig,
) -> Result<Vec<ExperimentReport>, RuntimeError> {
    let mut out = Vec::new();
    for w in worlds {
        for &m in methods {
            let r = run_experiment(w, m, predictor.clone(), cfg)?;
            log::info!("{}", r.summary());
            out.push(r);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSample {
    pub truth: usize,
    pub classical: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GainErrorReport {
    pub samples: Vec<GainSample>,
}

impl GainErrorReport {
    fn mean_error(&self, f: impl Fn(&GainSample) -> usize) -> Option<f64> {
        let q: Vec<f64> = self
            .samples
            .iter()
            .filter(|s| s.truth > 0)
            .map(|s| (f(s) as f64 - s.truth as f64).abs() / s.truth as f64)
            .collect();
        (!q.is_empty()).then(|| q.iter().sum::<f64>() / q.len() as f64)
    }

    /// Mean |g_cls - g_gt| / g_gt over samples with g_gt > 0.
    pub fn classical_error(&self) -> Option<f64> {
        self.mean_error(|s| s.classical)
    }

    pub fn predicted_error(&self) -> Option<f64> {
        self.mean_error(|s| s.predicted)
    }

    pub fn qualifying(&self) -> usize {
        self.samples.iter().filter(|s| s.truth > 0).count()
    }

    pub fn extend(&mut self, other: GainErrorReport) {
        self.samples.extend(other.samples);
    }
}

/// Classical, predicted and true gain of a camera view, on the same rays.
pub fn view_gains(ex: &Explorer, p: &Vec3, yaw: f64) -> GainSample {
    let cam = &ex.cfg.camera;
    let mut s = GainSample { truth: 0, classical: 0, predicted: 0 };
    for d in cam.ray_directions(yaw, ex.sampler.params.ray_stride) {
        let end = p + d * cam.max_range;
        s.truth += true_gain_ray(&ex.map, &ex.truth, p, &end);
        s.classical += classical_gain_ray(&ex.map, p, &end);
        s.predicted += predicted_gain_ray(&ex.map, &ex.pred, p, &end);
    }
    s
}

/// Explores `world` with predicted utilities and, at every decision,
/// compares the gains of each new cluster's best viewpoint against the
/// ground truth. Stops after `n_samples` samples or when exploration ends.
pub fn eval_gain_error(world: &World, predictor: PredictorKind, n_samples: usize, cfg: &RunConfig) -> Result<GainErrorReport, RuntimeError> {
    let mut ex = Explorer::new(world, MethodKind::FrontierPred, predictor, cfg.clone())?;
    let mut seen = std::collections::BTreeSet::new();
    let mut report = GainErrorReport::default();
    while report.samples.len() < n_samples {
        match ex.tick()? {
            Tick::Ended(_) => break,
            Tick::Running { replanned: false } => continue,
            Tick::Running { replanned: true } => {}
        }
        let vps: Vec<(u32, Viewpoint)> = ex
            .frontiers
            .clusters()
            .filter(|c| !seen.contains(&c.id))
            .filter_map(|c| c.viewpoints.first().map(|v| (c.id, *v)))
            .collect();
        for (id, vp) in vps {
            seen.insert(id);
            report.samples.push(view_gains(&ex, &vp.position, vp.yaw));
            if report.samples.len() >= n_samples {
                break;
            }
        }
    }
    Ok(report)
}
