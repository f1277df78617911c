//! Behaviour goal state machine and the frontier utility.
//!
//! The machine explores the corridor until a door candidate shows up, flies
//! to it, confirms it, enters the room behind it, explores the room until
//! no room frontiers are left and then leaves through the same door.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::frontier::{FrontierCluster, FrontierLabel, FrontierRegistry};
use crate::geom::{angle_diff, Pose, Vec3};
use crate::info_gain::Viewpoint;
use crate::nav::NavGrid;
use crate::semantics::{ObjectStatus, SemanticObject, SemanticRegistry};

#[derive(Debug, Error, PartialEq)]
pub enum BehaviorError {
    #[error("cluster unreachable")]
    Unreachable,
    #[error("cluster has no viewpoints")]
    NoViewpoints,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorParams {
    /// Maximum speed used in the utility (m/s).
    pub max_vel: f64,
    /// Distance of the approach pose in front of a door (m).
    pub approach: f64,
    /// Distance of the entry pose past the door plane (m).
    pub entry: f64,
    pub arrive_dist: f64,
    pub arrive_yaw: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        Self { max_vel: 1.0, approach: 1.0, entry: 0.5, arrive_dist: 0.3, arrive_yaw: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    CorridorExplore,
    NavigateToSoi,
    ConfirmSoi,
    EnterAoi,
    ExploreAoi,
    ExitAoi,
    Done,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::CorridorExplore => "CorridorExplore",
            Mode::NavigateToSoi => "NavigateToSOI",
            Mode::ConfirmSoi => "ConfirmSOI",
            Mode::EnterAoi => "EnterAOI",
            Mode::ExploreAoi => "ExploreAOI",
            Mode::ExitAoi => "ExitAOI",
            Mode::Done => "Done",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BgsmState {
    pub mode: Mode,
    pub active_soi: Option<u32>,
    /// Door of the room being explored.
    pub active_aoi: Option<u32>,
    pub deferred_clusters: BTreeSet<u32>,
    pub deferred_sois: BTreeSet<u32>,
}

impl Default for BgsmState {
    fn default() -> Self {
        Self {
            mode: Mode::CorridorExplore,
            active_soi: None,
            active_aoi: None,
            deferred_clusters: BTreeSet::new(),
            deferred_sois: BTreeSet::new(),
        }
    }
}

impl BgsmState {
    fn with_mode(&self, mode: Mode, soi: Option<u32>, aoi: Option<u32>) -> Self {
        Self { mode, active_soi: soi, active_aoi: aoi, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavGoal {
    pub mode: Mode,
    pub pose: Pose,
    pub cluster: Option<u32>,
    pub soi: Option<u32>,
    pub utility: f64,
}

impl fmt::Display for NavGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id = |o: Option<u32>| o.map_or("-".to_string(), |v| v.to_string());
        let p = self.pose.position;
        write!(
            f,
            "mode={} goal=({:.2},{:.2},{:.2},{:.3}) cluster={} soi={} utility={:.4}",
            self.mode,
            p.x,
            p.y,
            p.z,
            self.pose.yaw,
            id(self.cluster),
            id(self.soi),
            self.utility
        )
    }
}

/// Shortest path lengths on the navigation grid from one start cell.
pub struct PathLengths<'a> {
    pub nav: &'a NavGrid,
    pub dist: Vec<f64>,
}

impl<'a> PathLengths<'a> {
    pub fn from(nav: &'a NavGrid, start: &Vec3) -> Self {
        let c = nav.cell_of(start);
        let dist = if nav.is_traversable(c) {
            nav.distance_field(c)
        } else {
            match nav.nearest_traversable(start, 0.5) {
                Some(n) => nav.distance_field(n),
                None => vec![f64::INFINITY; nav.dims()[0] * nav.dims()[1]],
            }
        };
        Self { nav, dist }
    }

    /// Path length to the cell containing `p`; `None` if unreachable.
    pub fn to(&self, p: &Vec3) -> Option<f64> {
        let c = self.nav.cell_of(p);
        if !self.nav.in_bounds(c) {
            return None;
        }
        let d = self.dist[self.nav.index(c)];
        d.is_finite().then_some(d)
    }
}

/// Best `v_max / len * g` over the cluster's viewpoints. Path lengths below
/// one cell count as one cell.
pub fn utility(cluster: &FrontierCluster, paths: &PathLengths, params: &BehaviorParams) -> Result<(f64, Viewpoint), BehaviorError> {
    if cluster.viewpoints.is_empty() {
        return Err(BehaviorError::NoViewpoints);
    }
    let res = paths.nav.resolution();
    let mut best: Option<(f64, Viewpoint)> = None;
    for vp in &cluster.viewpoints {
        let Some(len) = paths.to(&vp.position) else { continue };
        let u = params.max_vel / len.max(res) * vp.gain as f64;
        if best.map_or(true, |(b, _)| u > b) {
            best = Some((u, *vp));
        }
    }
    best.ok_or(BehaviorError::Unreachable)
}

/// Reachable viewpoint with the shortest path, over all clusters.
pub fn nearest_viewpoint<'c>(clusters: impl Iterator<Item = &'c FrontierCluster>, paths: &PathLengths) -> Option<(u32, f64, Viewpoint)> {
    let mut best: Option<(u32, f64, Viewpoint)> = None;
    for c in clusters {
        for vp in &c.viewpoints {
            let Some(len) = paths.to(&vp.position) else { continue };
            if best.map_or(true, |(_, b, _)| len < b) {
                best = Some((c.id, len, *vp));
            }
        }
    }
    best
}

/// Clusters ranked by decreasing utility; ties keep the smaller id first.
pub fn rank_clusters<'c>(
    clusters: impl Iterator<Item = &'c FrontierCluster>,
    paths: &PathLengths,
    params: &BehaviorParams,
) -> Vec<(u32, f64, Viewpoint)> {
    let mut out: Vec<(u32, f64, Viewpoint)> = clusters
        .filter_map(|c| utility(c, paths, params).ok().map(|(u, vp)| (c.id, u, vp)))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

pub fn approach_pose(door: &SemanticObject, z: f64, params: &BehaviorParams) -> Pose {
    let d = door.direction;
    let p = door.position - d * params.approach;
    Pose::new(Vec3::new(p.x, p.y, z), d.y.atan2(d.x))
}

pub fn entry_pose(door: &SemanticObject, z: f64, params: &BehaviorParams) -> Pose {
    let d = door.direction;
    let p = door.position + d * params.entry;
    Pose::new(Vec3::new(p.x, p.y, z), d.y.atan2(d.x))
}

/// Leaving a room: the approach pose, facing back along the corridor side.
pub fn exit_pose(door: &SemanticObject, z: f64, params: &BehaviorParams) -> Pose {
    let d = door.direction;
    let p = door.position - d * params.approach;
    Pose::new(Vec3::new(p.x, p.y, z), (-d.y).atan2(-d.x))
}

/// Moves a pose onto the nearest traversable cell centre.
pub fn snap_pose(nav: &NavGrid, pose: &Pose) -> Option<Pose> {
    let c = nav.cell_of(&pose.position);
    let c = if nav.is_traversable(c) { c } else { nav.nearest_traversable(&pose.position, 0.6)? };
    Some(Pose::new(nav.center(c), pose.yaw))
}

pub fn arrived(robot: &Pose, goal: &Pose, params: &BehaviorParams) -> bool {
    (robot.position - goal.position).norm() <= params.arrive_dist && angle_diff(robot.yaw, goal.yaw).abs() <= params.arrive_yaw
}

fn best_cluster(
    state: &BgsmState,
    frontiers: &FrontierRegistry,
    label: FrontierLabel,
    paths: &PathLengths,
    params: &BehaviorParams,
    mode: Mode,
) -> Option<NavGoal> {
    let cands = frontiers.clusters().filter(|c| c.label == label && !state.deferred_clusters.contains(&c.id));
    rank_clusters(cands, paths, params).first().map(|&(id, u, vp)| NavGoal {
        mode,
        pose: Pose::new(vp.position, vp.yaw),
        cluster: Some(id),
        soi: None,
        utility: u,
    })
}

/// One decision of the state machine. Pure: the returned state carries
/// everything needed for the next call. `None` as the goal means there is
/// nothing left to do (mode `Done`).
pub fn step_bgsm(
    state: &BgsmState,
    frontiers: &FrontierRegistry,
    sois: &SemanticRegistry,
    robot: &Pose,
    paths: &PathLengths,
    params: &BehaviorParams,
) -> (BgsmState, Option<NavGoal>) {
    let nav = paths.nav;
    let z = nav.z;
    let soi_goal = |mode: Mode, id: u32, pose: Pose| NavGoal { mode, pose, cluster: None, soi: Some(id), utility: 0.0 };
    let reachable = |pose: &Pose| snap_pose(nav, pose).filter(|p| paths.to(&p.position).is_some());
    match state.mode {
        Mode::CorridorExplore | Mode::Done => {
            let pending: Vec<&SemanticObject> = sois.pending().filter(|o| !state.deferred_sois.contains(&o.id)).collect();
            // nearest reachable pending door first
            let mut best: Option<(f64, u32, Pose)> = None;
            let mut unreachable = Vec::new();
            for o in pending {
                match reachable(&approach_pose(o, z, params)) {
                    Some(p) => {
                        let len = paths.to(&p.position).unwrap();
                        if best.map_or(true, |(b, _, _)| len < b) {
                            best = Some((len, o.id, p));
                        }
                    }
                    None => unreachable.push(o.id),
                }
            }
            let mut next = state.clone();
            next.deferred_sois.extend(unreachable);
            if let Some((_, id, pose)) = best {
                let next = next.with_mode(Mode::NavigateToSoi, Some(id), None);
                return (next, Some(soi_goal(Mode::NavigateToSoi, id, pose)));
            }
            match best_cluster(&next, frontiers, FrontierLabel::Corridor, paths, params, Mode::CorridorExplore)
                .or_else(|| best_cluster(&next, frontiers, FrontierLabel::Room, paths, params, Mode::CorridorExplore))
                .or_else(|| best_cluster(&next, frontiers, FrontierLabel::Unlabeled, paths, params, Mode::CorridorExplore))
            {
                Some(g) => (next.with_mode(Mode::CorridorExplore, None, None), Some(g)),
                None => (next.with_mode(Mode::Done, None, None), None),
            }
        }
        Mode::NavigateToSoi | Mode::ConfirmSoi => {
            let id = state.active_soi.expect("active soi");
            let back = || step_bgsm(&state.with_mode(Mode::CorridorExplore, None, None), frontiers, sois, robot, paths, params);
            let Some(o) = sois.get(id) else { return back() };
            match o.status {
                ObjectStatus::Rejected => back(),
                ObjectStatus::Confirmed => match reachable(&entry_pose(o, z, params)) {
                    Some(p) => (state.with_mode(Mode::EnterAoi, Some(id), None), Some(soi_goal(Mode::EnterAoi, id, p))),
                    None => {
                        let mut s = state.with_mode(Mode::CorridorExplore, None, None);
                        s.deferred_sois.insert(id);
                        step_bgsm(&s, frontiers, sois, robot, paths, params)
                    }
                },
                ObjectStatus::ToBeConfirmed => match reachable(&approach_pose(o, z, params)) {
                    Some(p) if state.mode == Mode::ConfirmSoi || arrived(robot, &p, params) => {
                        (state.with_mode(Mode::ConfirmSoi, Some(id), None), Some(soi_goal(Mode::ConfirmSoi, id, p)))
                    }
                    Some(p) => (state.clone(), Some(soi_goal(Mode::NavigateToSoi, id, p))),
                    None => {
                        let mut s = state.with_mode(Mode::CorridorExplore, None, None);
                        s.deferred_sois.insert(id);
                        step_bgsm(&s, frontiers, sois, robot, paths, params)
                    }
                },
            }
        }
        Mode::EnterAoi => {
            let id = state.active_soi.expect("active soi");
            let Some(o) = sois.get(id) else {
                return step_bgsm(&state.with_mode(Mode::CorridorExplore, None, None), frontiers, sois, robot, paths, params);
            };
            match reachable(&entry_pose(o, z, params)) {
                Some(p) if !arrived(robot, &p, params) => (state.clone(), Some(soi_goal(Mode::EnterAoi, id, p))),
                _ => step_bgsm(&state.with_mode(Mode::ExploreAoi, None, Some(id)), frontiers, sois, robot, paths, params),
            }
        }
        Mode::ExploreAoi => {
            let door = state.active_aoi.expect("active aoi");
            if let Some(g) = best_cluster(state, frontiers, FrontierLabel::Room, paths, params, Mode::ExploreAoi) {
                return (state.clone(), Some(g));
            }
            step_bgsm(&state.with_mode(Mode::ExitAoi, None, Some(door)), frontiers, sois, robot, paths, params)
        }
        Mode::ExitAoi => {
            let door = state.active_aoi.expect("active aoi");
            let leave = || step_bgsm(&state.with_mode(Mode::CorridorExplore, None, None), frontiers, sois, robot, paths, params);
            let Some(o) = sois.get(door) else { return leave() };
            match reachable(&exit_pose(o, z, params)) {
                Some(p) if !arrived(robot, &p, params) => {
                    (state.clone(), Some(NavGoal { mode: Mode::ExitAoi, pose: p, cluster: None, soi: Some(door), utility: 0.0 }))
                }
                _ => leave(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontier::FrontierParams;
    use crate::semantics::ObjectClass;
    use crate::voxel_map::{MapParams, Trinary, VoxelMap};

    fn open_map() -> VoxelMap {
        let mut m = VoxelMap::new(Vec3::zeros(), 0.1, [80, 40, 20], MapParams::default()).unwrap();
        for v in m.bounds().voxels().collect::<Vec<_>>() {
            let border = v[0] == 0 || v[1] == 0 || v[0] == 79 || v[1] == 39;
            m.set_state(v, if border { Trinary::Occupied } else { Trinary::Free });
        }
        m
    }

    fn cluster(id: u32, map: &VoxelMap, vps: &[(Vec3, usize)], label: FrontierLabel) -> FrontierCluster {
        let mut c = FrontierCluster::from_cells(id, vec![map.voxel_of(&vps[0].0)], map);
        c.label = label;
        c.viewpoints = vps.iter().map(|&(p, g)| Viewpoint { position: p, yaw: 0.0, gain: g }).collect();
        c.viewpoints_ready = true;
        c
    }

    fn registry(clusters: Vec<FrontierCluster>) -> FrontierRegistry {
        let m = open_map();
        let mut r = FrontierRegistry::new(FrontierParams::default());
        for c in clusters {
            r.insert_cluster(c, &m);
        }
        r
    }

    #[test]
    fn utility_is_inverse_in_path_length() {
        let m = open_map();
        let nav = NavGrid::build(&m, 1.0, 0.3);
        let robot = nav.center([10, 20]);
        let paths = PathLengths::from(&nav, &robot);
        let near = cluster(0, &m, &[(nav.center([30, 20]), 50)], FrontierLabel::Corridor);
        let far = cluster(1, &m, &[(nav.center([50, 20]), 50)], FrontierLabel::Corridor);
        let p = BehaviorParams::default();
        let (un, _) = utility(&near, &paths, &p).unwrap();
        let (uf, _) = utility(&far, &paths, &p).unwrap();
        assert!((un / uf - 2.0).abs() < 1e-12);
        let zero = cluster(2, &m, &[(nav.center([30, 20]), 0)], FrontierLabel::Corridor);
        assert_eq!(utility(&zero, &paths, &p).unwrap().0, 0.0);
        // scaling the speed scales the value, not the choice
        let fast = BehaviorParams { max_vel: 3.0, ..p };
        assert!((utility(&near, &paths, &fast).unwrap().0 - 3.0 * un).abs() < 1e-9);
    }

    #[test]
    fn unreachable_cluster_errors() {
        let m = open_map();
        let nav = NavGrid::build(&m, 1.0, 0.3);
        let paths = PathLengths::from(&nav, &nav.center([10, 20]));
        let c = cluster(0, &m, &[(nav.center([1, 1]), 5)], FrontierLabel::Corridor);
        assert_eq!(utility(&c, &paths, &BehaviorParams::default()), Err(BehaviorError::Unreachable));
    }

    #[test]
    fn nothing_left_is_done() {
        let m = open_map();
        let nav = NavGrid::build(&m, 1.0, 0.3);
        let robot = Pose::new(nav.center([10, 20]), 0.0);
        let paths = PathLengths::from(&nav, &robot.position);
        let (s, g) = step_bgsm(&BgsmState::default(), &registry(vec![]), &SemanticRegistry::new(), &robot, &paths, &BehaviorParams::default());
        assert_eq!(s.mode, Mode::Done);
        assert!(g.is_none());
    }

    #[test]
    fn argmax_matches_exhaustive() {
        let m = open_map();
        let nav = NavGrid::build(&m, 1.0, 0.3);
        let robot = Pose::new(nav.center([10, 20]), 0.0);
        let paths = PathLengths::from(&nav, &robot.position);
        let cs = vec![
            cluster(0, &m, &[(nav.center([20, 20]), 10), (nav.center([25, 25]), 12)], FrontierLabel::Corridor),
            cluster(1, &m, &[(nav.center([60, 20]), 80)], FrontierLabel::Corridor),
            cluster(2, &m, &[(nav.center([40, 10]), 30), (nav.center([40, 30]), 31)], FrontierLabel::Corridor),
        ];
        // exhaustive: every viewpoint's value with its own Dijkstra length
        let dist = nav.distance_field([10, 20]);
        let mut best = (f64::NEG_INFINITY, 0u32, Vec3::zeros());
        for c in &cs {
            for vp in &c.viewpoints {
                let d = dist[nav.index(nav.cell_of(&vp.position))];
                let u = 1.0 / d * vp.gain as f64;
                if u > best.0 {
                    best = (u, c.id, vp.position);
                }
            }
        }
        let (s, g) = step_bgsm(&BgsmState::default(), &registry(cs), &SemanticRegistry::new(), &robot, &paths, &BehaviorParams::default());
        let g = g.unwrap();
        assert_eq!(s.mode, Mode::CorridorExplore);
        assert_eq!(g.cluster, Some(best.1));
        assert_eq!(g.pose.position, best.2);
        assert!((g.utility - best.0).abs() < 1e-12);
    }

    fn door(reg: &mut SemanticRegistry, pos: Vec3) -> u32 {
        reg.insert(SemanticObject {
            id: 0,
            class: ObjectClass::Door,
            position: pos,
            direction: Vec3::new(0.0, 1.0, 0.0),
            width: 0.9,
            status: ObjectStatus::ToBeConfirmed,
        })
    }

    #[test]
    fn pending_door_takes_priority() {
        let m = open_map();
        let nav = NavGrid::build(&m, 1.0, 0.3);
        let robot = Pose::new(nav.center([10, 10]), 0.0);
        let paths = PathLengths::from(&nav, &robot.position);
        let mut sois = SemanticRegistry::new();
        let id = door(&mut sois, Vec3::new(4.05, 2.55, 1.0));
        let cs = vec![cluster(0, &m, &[(nav.center([20, 20]), 100)], FrontierLabel::Corridor)];
        let p = BehaviorParams::default();
        let (s, g) = step_bgsm(&BgsmState::default(), &registry(cs), &sois, &robot, &paths, &p);
        let g = g.unwrap();
        assert_eq!(s.mode, Mode::NavigateToSoi);
        assert_eq!(s.active_soi, Some(id));
        assert_eq!(g.soi, Some(id));
        let want = approach_pose(sois.get(id).unwrap(), nav.z, &p);
        assert!((g.pose.position - want.position).norm() < 0.1);
        assert!((g.pose.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn full_room_cycle() {
        let m = open_map();
        let nav = NavGrid::build(&m, 1.0, 0.3);
        let p = BehaviorParams::default();
        let mut sois = SemanticRegistry::new();
        let id = door(&mut sois, Vec3::new(4.05, 2.05, 1.0));
        let o = *sois.get(id).unwrap();
        let room = cluster(3, &m, &[(nav.center([40, 32]), 20)], FrontierLabel::Room);
        let corr = cluster(4, &m, &[(nav.center([70, 8]), 20)], FrontierLabel::Corridor);
        let frontiers = registry(vec![room, corr]);

        // arrive at the approach pose
        let at = snap_pose(&nav, &approach_pose(&o, nav.z, &p)).unwrap();
        let paths = PathLengths::from(&nav, &at.position);
        let s = BgsmState { mode: Mode::NavigateToSoi, active_soi: Some(id), ..Default::default() };
        let (s, _) = step_bgsm(&s, &frontiers, &sois, &at, &paths, &p);
        assert_eq!(s.mode, Mode::ConfirmSoi);

        // confirmed: go in
        let mut c = SemanticRegistry::new();
        c.insert(SemanticObject { status: ObjectStatus::Confirmed, ..o });
        let (s2, g) = step_bgsm(&s, &frontiers, &c, &at, &paths, &p);
        assert_eq!(s2.mode, Mode::EnterAoi);
        assert_eq!(g.unwrap().soi, Some(id));

        // inside: only room clusters
        let inside = snap_pose(&nav, &entry_pose(&o, nav.z, &p)).unwrap();
        let paths = PathLengths::from(&nav, &inside.position);
        let (s3, g) = step_bgsm(&s2, &frontiers, &c, &inside, &paths, &p);
        assert_eq!(s3.mode, Mode::ExploreAoi);
        assert_eq!(s3.active_soi, None);
        assert_eq!(g.unwrap().cluster, Some(3));

        // room done: leave, then back to the corridor cluster
        let only_corr = registry(vec![cluster(4, &m, &[(nav.center([70, 8]), 20)], FrontierLabel::Corridor)]);
        let (s4, g) = step_bgsm(&s3, &only_corr, &c, &inside, &paths, &p);
        assert_eq!(s4.mode, Mode::ExitAoi);
        let exit = g.unwrap().pose;
        let paths = PathLengths::from(&nav, &exit.position);
        let (s5, g) = step_bgsm(&s4, &only_corr, &c, &exit, &paths, &p);
        assert_eq!(s5.mode, Mode::CorridorExplore);
        assert_eq!(g.unwrap().cluster, Some(4));

        // rejection drops straight back to the corridor
        let mut r = SemanticRegistry::new();
        r.insert(SemanticObject { status: ObjectStatus::Rejected, ..o });
        let (s6, _) = step_bgsm(&s, &frontiers, &r, &at, &paths, &p);
        assert_eq!(s6.mode, Mode::CorridorExplore);
        assert_eq!(s6.active_soi, None);
    }

    #[test]
    fn pure_function() {
        let m = open_map();
        let nav = NavGrid::build(&m, 1.0, 0.3);
        let robot = Pose::new(nav.center([10, 20]), 0.0);
        let paths = PathLengths::from(&nav, &robot.position);
        let f = registry(vec![cluster(0, &m, &[(nav.center([20, 20]), 10)], FrontierLabel::Corridor)]);
        let sois = SemanticRegistry::new();
        let s = BgsmState::default();
        let a = step_bgsm(&s, &f, &sois, &robot, &paths, &BehaviorParams::default());
        let b = step_bgsm(&s, &f, &sois, &robot, &paths, &BehaviorParams::default());
        assert_eq!(a, b);
    }
}
