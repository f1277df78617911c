//! Position and yaw trajectories.
//!
//! Positions: grid path, line-of-sight shortcut, axis-aligned box corridor,
//! then a piecewise quintic through the waypoints minimising squared jerk
//! (C4 at interior knots), with trapezoidal time allocation and uniform
//! time scaling for the velocity and acceleration limits.
//!
//! Yaw: dynamic programming over discrete headings at the knots, followed by
//! a smooth refinement of the knot yaws with L-BFGS.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geom::{angle_diff, Vec3};
use crate::nav::NavGrid;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("unreachable goal")]
    Unreachable,
    #[error("corridor failure")]
    CorridorFailure,
    #[error("singular trajectory system")]
    Singular,
    #[error("non-finite cost")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub max_vel: f64,
    pub max_acc: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_vel: 1.0, max_acc: 1.0 }
    }
}

/// Position, velocity and acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
}

impl State {
    pub fn at_rest(pos: Vec3) -> Self {
        Self { pos, vel: Vec3::zeros(), acc: Vec3::zeros() }
    }
}

/// `d`-th derivative of `sum c_k t^k` at `t`.
#[inline]
pub fn poly_deriv(c: &[f64; 6], t: f64, d: usize) -> f64 {
    let mut s = 0.0;
    let mut tp = 1.0;
    for k in d..6 {
        s += falling(k, d) * c[k] * tp;
        tp *= t;
    }
    s
}

#[inline]
fn falling(k: usize, d: usize) -> f64 {
    (0..d).map(|j| (k - j) as f64).product()
}

/// Coefficients of the piecewise quintic minimising the integral of squared
/// jerk through `knots` with the given boundary derivatives. One column of
/// `knots` per dimension; returns one coefficient set per segment and
/// dimension.
fn min_jerk_system(durations: &[f64]) -> DMatrix<f64> {
    let m = durations.len();
    let n = 6 * m;
    let mut a = DMatrix::zeros(n, n);
    let mut row = 0;
    // start position, velocity, acceleration
    for d in 0..3 {
        a[(row, d)] = falling(d, d);
        row += 1;
    }
    for j in 1..m {
        let t = durations[j - 1];
        let (l, r) = (6 * (j - 1), 6 * j);
        for k in 0..6 {
            a[(row, l + k)] = t.powi(k as i32);
        }
        row += 1;
        a[(row, r)] = 1.0;
        row += 1;
        for d in 1..5 {
            for k in d..6 {
                a[(row, l + k)] = falling(k, d) * t.powi((k - d) as i32);
            }
            a[(row, r + d)] = -falling(d, d);
            row += 1;
        }
    }
    let t = durations[m - 1];
    let l = 6 * (m - 1);
    for d in 0..3 {
        for k in d..6 {
            a[(row, l + k)] = falling(k, d) * t.powi((k - d) as i32);
        }
        row += 1;
    }
    a
}

fn min_jerk_rhs(knots: &[f64], start: [f64; 2], end: [f64; 2]) -> DVector<f64> {
    let m = knots.len() - 1;
    let mut b = DVector::zeros(6 * m);
    b[0] = knots[0];
    b[1] = start[0];
    b[2] = start[1];
    let mut row = 3;
    for j in 1..m {
        b[row] = knots[j];
        b[row + 1] = knots[j];
        row += 6;
    }
    b[row] = knots[m];
    b[row + 1] = end[0];
    b[row + 2] = end[1];
    b
}

/// One-dimensional min-jerk spline; `start`/`end` are (velocity,
/// acceleration).
pub fn min_jerk_1d(knots: &[f64], durations: &[f64], start: [f64; 2], end: [f64; 2]) -> Result<Vec<[f64; 6]>, PlanError> {
    assert_eq!(knots.len(), durations.len() + 1);
    let a = min_jerk_system(durations);
    let b = min_jerk_rhs(knots, start, end);
    let x = a.lu().solve(&b).ok_or(PlanError::Singular)?;
    Ok((0..durations.len()).map(|i| std::array::from_fn(|k| x[6 * i + k])).collect())
}

/// Integral of the squared third derivative over `[0, t]`.
pub fn jerk_energy(c: &[f64; 6], t: f64) -> f64 {
    let mut e = 0.0;
    for k in 3..6 {
        for l in 3..6 {
            let p = (k + l - 5) as i32;
            e += falling(k, 3) * falling(l, 3) * c[k] * c[l] * t.powi(p) / p as f64;
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Per segment, per axis.
    pub coeffs: Vec<[[f64; 6]; 3]>,
    pub durations: Vec<f64>,
}

impl Trajectory {
    pub fn from_waypoints(points: &[Vec3], durations: &[f64], start: &State, end_vel: Vec3) -> Result<Self, PlanError> {
        let mut axes = Vec::with_capacity(3);
        for ax in 0..3 {
            let knots: Vec<f64> = points.iter().map(|p| p[ax]).collect();
            axes.push(min_jerk_1d(&knots, durations, [start.vel[ax], start.acc[ax]], [end_vel[ax], 0.0])?);
        }
        let coeffs = (0..durations.len()).map(|i| [axes[0][i], axes[1][i], axes[2][i]]).collect();
        Ok(Self { coeffs, durations: durations.to_vec() })
    }

    /// A trajectory that holds `p` for `t` seconds.
    pub fn hold(p: Vec3, t: f64) -> Self {
        let c = |v: f64| [v, 0.0, 0.0, 0.0, 0.0, 0.0];
        Self { coeffs: vec![[c(p.x), c(p.y), c(p.z)]], durations: vec![t] }
    }

    pub fn segment_count(&self) -> usize {
        self.durations.len()
    }

    pub fn duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    pub fn knot_times(&self) -> Vec<f64> {
        let mut t = vec![0.0];
        for d in &self.durations {
            t.push(t.last().unwrap() + d);
        }
        t
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let mut t = t.max(0.0);
        for (i, &d) in self.durations.iter().enumerate() {
            if t <= d || i + 1 == self.durations.len() {
                return (i, t.min(d));
            }
            t -= d;
        }
        unreachable!()
    }

    /// `d`-th derivative at time `t`, clamped to the trajectory span.
    pub fn eval(&self, t: f64, d: usize) -> Vec3 {
        let (i, tl) = self.locate(t);
        let c = &self.coeffs[i];
        Vec3::new(poly_deriv(&c[0], tl, d), poly_deriv(&c[1], tl, d), poly_deriv(&c[2], tl, d))
    }

    pub fn position(&self, t: f64) -> Vec3 {
        self.eval(t, 0)
    }

    pub fn state(&self, t: f64) -> State {
        State { pos: self.eval(t, 0), vel: self.eval(t, 1), acc: self.eval(t, 2) }
    }

    /// Largest mismatch of position, velocity and acceleration across
    /// interior knots.
    pub fn knot_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for i in 1..self.segment_count() {
            let t = self.durations[i - 1];
            for ax in 0..3 {
                for d in 0..3 {
                    let a = poly_deriv(&self.coeffs[i - 1][ax], t, d);
                    let b = poly_deriv(&self.coeffs[i][ax], 0.0, d);
                    r = r.max((a - b).abs());
                }
            }
        }
        r
    }

    /// Stretches time by `f`; the geometric path is unchanged.
    pub fn scaled(&self, f: f64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|seg| seg.map(|c| std::array::from_fn(|k| c[k] / f.powi(k as i32))))
            .collect();
        Self { coeffs, durations: self.durations.iter().map(|d| d * f).collect() }
    }

    /// Peak speed and acceleration norm over samples every `dt`.
    pub fn peaks(&self, dt: f64) -> (f64, f64) {
        let n = (self.duration() / dt).ceil() as usize;
        (0..=n).fold((0.0f64, 0.0f64), |(v, a), k| {
            let t = (k as f64 * dt).min(self.duration());
            (v.max(self.eval(t, 1).norm()), a.max(self.eval(t, 2).norm()))
        })
    }

    pub fn length(&self, dt: f64) -> f64 {
        let n = (self.duration() / dt).ceil().max(1.0) as usize;
        (1..=n)
            .map(|k| {
                let t0 = ((k - 1) as f64 * dt).min(self.duration());
                let t1 = (k as f64 * dt).min(self.duration());
                (self.position(t1) - self.position(t0)).norm()
            })
            .sum()
    }
}

/// Axis-aligned horizontal box on the flight layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorridorBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl CorridorBox {
    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        p.x >= self.min[0] - tol && p.x <= self.max[0] + tol && p.y >= self.min[1] - tol && p.y <= self.max[1] + tol
    }
}

/// True if every point of the box is clear on `nav`.
pub fn box_clear(nav: &NavGrid, b: &CorridorBox) -> bool {
    let [nx, ny] = nav.dims();
    let res = nav.resolution();
    let o = nav.origin();
    let r = nav.radius;
    let lo = [b.min[0] - o.x, b.min[1] - o.y];
    let hi = [b.max[0] - o.x, b.max[1] - o.y];
    if lo[0] < 0.0 || lo[1] < 0.0 || hi[0] >= nx as f64 * res || hi[1] >= ny as f64 * res {
        return false;
    }
    let x0 = ((lo[0] - r) / res).floor() as i32;
    let x1 = ((hi[0] + r) / res).floor() as i32;
    let y0 = ((lo[1] - r) / res).floor() as i32;
    let y1 = ((hi[1] + r) / res).floor() as i32;
    for y in y0..=y1 {
        let cy0 = y as f64 * res;
        let dy = (cy0 - hi[1]).max(lo[1] - cy0 - res).max(0.0);
        for x in x0..=x1 {
            let cx0 = x as f64 * res;
            let dx = (cx0 - hi[0]).max(lo[0] - cx0 - res).max(0.0);
            if dx * dx + dy * dy >= r * r {
                continue;
            }
            if !nav.in_bounds([x, y]) || nav.column_blocked([x, y]) {
                return false;
            }
        }
    }
    true
}

/// Grows a box around the segment while it stays clear, up to `max_grow`
/// per side: whole cells first, then halving steps. `None` if the
/// segment's own bounding box is not clear.
fn grow_box(nav: &NavGrid, a: &Vec3, b: &Vec3, max_grow: f64) -> Option<CorridorBox> {
    let mut bx = CorridorBox { min: [a.x.min(b.x), a.y.min(b.y)], max: [a.x.max(b.x), a.y.max(b.y)] };
    if !box_clear(nav, &bx) {
        return None;
    }
    let res = nav.resolution();
    let mut grown = [0.0f64; 4];
    for step in [res, res / 2.0, res / 4.0, res / 8.0] {
        let mut open = [true; 4];
        while open.iter().any(|&o| o) {
            for side in 0..4 {
                if !open[side] || grown[side] + step > max_grow + 1e-9 {
                    open[side] = false;
                    continue;
                }
                let mut t = bx;
                match side {
                    0 => t.min[0] -= step,
                    1 => t.max[0] += step,
                    2 => t.min[1] -= step,
                    _ => t.max[1] += step,
                }
                if box_clear(nav, &t) {
                    bx = t;
                    grown[side] += step;
                } else {
                    open[side] = false;
                }
            }
        }
    }
    Some(bx)
}

/// The segment can be covered by clear bounding boxes of its halves.
fn boxable(nav: &NavGrid, a: &Vec3, b: &Vec3) -> bool {
    let bx = CorridorBox { min: [a.x.min(b.x), a.y.min(b.y)], max: [a.x.max(b.x), a.y.max(b.y)] };
    if box_clear(nav, &bx) {
        return true;
    }
    if (b - a).norm() < MIN_SPLIT {
        return false;
    }
    let mid = (a + b) / 2.0;
    boxable(nav, a, &mid) && boxable(nav, &mid, b)
}

/// Greedy shortcutting of a cell path keeping every segment boxable.
fn shortcut_boxable(nav: &NavGrid, cells: &[[i32; 2]]) -> Vec<Vec3> {
    let pts: Vec<Vec3> = cells.iter().map(|&c| nav.center(c)).collect();
    let mut out = vec![pts[0]];
    let mut i = 0;
    while i + 1 < pts.len() {
        let mut j = pts.len() - 1;
        while j > i + 1 && !boxable(nav, &pts[i], &pts[j]) {
            j -= 1;
        }
        out.push(pts[j]);
        i = j;
    }
    out
}

#[derive(Debug, Clone)]
pub struct PositionPlan {
    pub traj: Trajectory,
    pub waypoints: Vec<Vec3>,
    pub corridor: Vec<CorridorBox>,
}

/// Knot times of a trapezoidal speed profile along the polyline, starting
/// at `v0` and ending at rest.
pub fn trapezoid_durations(points: &[Vec3], v0: f64, lim: &Limits) -> Vec<f64> {
    let seg: Vec<f64> = points.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = seg.iter().sum();
    let (v, a) = (lim.max_vel, lim.max_acc);
    let v0 = v0.min(v);
    // distances spent accelerating and braking; shrink the peak if short
    let mut vp = v;
    let mut d_acc = (vp * vp - v0 * v0) / (2.0 * a);
    let mut d_dec = vp * vp / (2.0 * a);
    if d_acc + d_dec > total {
        vp = ((2.0 * a * total + v0 * v0) / 2.0).sqrt().max(v0);
        d_acc = ((vp * vp - v0 * v0) / (2.0 * a)).max(0.0);
        d_dec = (total - d_acc).max(0.0);
    }
    let t_acc = (vp - v0) / a;
    let t_cruise = (total - d_acc - d_dec).max(0.0) / vp.max(1e-9);
    let time_at = |s: f64| -> f64 {
        if s <= d_acc {
            // s = v0 t + a t^2 / 2
            (-v0 + (v0 * v0 + 2.0 * a * s).sqrt()) / a
        } else if s <= total - d_dec {
            t_acc + (s - d_acc) / vp
        } else {
            let sd = (s - (total - d_dec)).min(d_dec);
            // braking from vp: sd = vp t - a t^2 / 2
            let disc = (vp * vp - 2.0 * a * sd).max(0.0);
            t_acc + t_cruise + (vp - disc.sqrt()) / a
        }
    };
    let mut out = Vec::with_capacity(seg.len());
    let mut s = 0.0;
    let mut prev = 0.0;
    for l in seg {
        s += l;
        let t = time_at(s);
        out.push((t - prev).max(1e-3));
        prev = t;
    }
    out
}

fn split_long(points: &[Vec3], max_len: f64) -> Vec<Vec3> {
    let mut out = vec![points[0]];
    for w in points.windows(2) {
        let n = ((w[1] - w[0]).norm() / max_len).ceil().max(1.0) as usize;
        for k in 1..=n {
            out.push(w[0] + (w[1] - w[0]) * (k as f64 / n as f64));
        }
    }
    out
}

const SAMPLE_DT: f64 = 0.02;
const MAX_REFINE: usize = 10;
const MAX_SEGMENT: f64 = 1.0;
const MIN_SPLIT: f64 = 0.02;


/// One box per segment; segments whose bounding box touches an obstacle
/// are halved until it does not.
fn corridor_for(nav: &NavGrid, pts: &[Vec3]) -> Option<(Vec<Vec3>, Vec<CorridorBox>)> {
    fn push(nav: &NavGrid, a: Vec3, b: Vec3, out: &mut Vec<Vec3>, boxes: &mut Vec<CorridorBox>) -> Option<()> {
        if let Some(bx) = grow_box(nav, &a, &b, 1.0) {
            out.push(b);
            boxes.push(bx);
            return Some(());
        }
        if (b - a).norm() < MIN_SPLIT {
            return None;
        }
        let mid = (a + b) / 2.0;
        push(nav, a, mid, out, boxes)?;
        push(nav, mid, b, out, boxes)
    }
    let mut out = vec![pts[0]];
    let mut boxes = Vec::new();
    for w in pts.windows(2) {
        push(nav, w[0], w[1], &mut out, &mut boxes)?;
    }
    Some((out, boxes))
}

fn fit_in_corridor(pts: Vec<Vec3>, start: &State, lim: &Limits, nav: &NavGrid) -> Result<PositionPlan, PlanError> {
    let Some((mut pts, mut corridor)) = corridor_for(nav, &pts) else {
        return Err(PlanError::CorridorFailure);
    };
    for _ in 0..=MAX_REFINE {
        let durations = trapezoid_durations(&pts, start.vel.norm(), lim);
        let mut traj = Trajectory::from_waypoints(&pts, &durations, start, Vec3::zeros())?;
        let (vp, ap) = traj.peaks(SAMPLE_DT);
        let f = (vp / lim.max_vel).max((ap / lim.max_acc).sqrt());
        if f > 1.0 {
            traj = traj.scaled(f * 1.001);
        }
        // first sample outside every box, if any
        let knots = traj.knot_times();
        let n = (traj.duration() / SAMPLE_DT).ceil() as usize;
        let bad = (0..=n).map(|k| (k as f64 * SAMPLE_DT).min(traj.duration())).find(|&t| {
            let p = traj.position(t);
            !corridor.iter().any(|b| b.contains(&p, 1e-9))
        });
        match bad {
            None => return Ok(PositionPlan { traj, waypoints: pts, corridor }),
            Some(t) => {
                let seg = knots.windows(2).position(|w| t <= w[1]).unwrap_or(pts.len() - 2);
                let mid = (pts[seg] + pts[seg + 1]) / 2.0;
                pts.insert(seg + 1, mid);
                let b = corridor[seg];
                corridor.insert(seg + 1, b);
            }
        }
    }
    Err(PlanError::CorridorFailure)
}

/// Plans a corridor-constrained min-jerk trajectory from `start` to `goal`
/// on the flight layer of `nav`.
pub fn plan_position(start: &State, goal: &Vec3, nav: &NavGrid, lim: &Limits) -> Result<PositionPlan, PlanError> {
    let s = nav.cell_of(&start.pos);
    let g = nav.cell_of(goal);
    if !nav.point_clear(&start.pos) || !nav.point_clear(goal) {
        return Err(PlanError::Unreachable);
    }
    if (goal - start.pos).norm() < 1e-9 && start.vel.norm() < 1e-12 {
        return Ok(PositionPlan {
            traj: Trajectory::hold(start.pos, 0.1),
            waypoints: vec![start.pos],
            corridor: vec![CorridorBox { min: [start.pos.x, start.pos.y], max: [start.pos.x, start.pos.y] }],
        });
    }
    let cells = nav.astar(s, g).ok_or(PlanError::Unreachable)?;
    let short = attach_ends(nav, shortcut_boxable(nav, &cells), start.pos, *goal);
    let pts = split_long(&short, MAX_SEGMENT);
    if let Ok(plan) = fit_in_corridor(pts, start, lim, nav) {
        return Ok(plan);
    }
    // dense fallback: the grid path with straight runs merged
    let raw: Vec<Vec3> = cells.iter().map(|&c| nav.center(c)).collect();
    let thinned = attach_ends(nav, thin_collinear(&raw), start.pos, *goal);
    fit_in_corridor(thinned, start, lim, nav)
}

/// Replaces the end cell centres by the exact endpoints, or prepends and
/// appends them when the replaced segment would not be boxable.
fn attach_ends(nav: &NavGrid, mut pts: Vec<Vec3>, start: Vec3, goal: Vec3) -> Vec<Vec3> {
    if pts.len() >= 2 && boxable(nav, &start, &pts[1]) {
        pts[0] = start;
    } else {
        pts.insert(0, start);
    }
    let n = pts.len();
    if n >= 3 && boxable(nav, &pts[n - 2], &goal) {
        pts[n - 1] = goal;
    } else {
        pts.push(goal);
    }
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-9);
    if pts.len() < 2 {
        pts.push(goal);
    }
    pts
}

/// Drops interior points lying on a straight run of the grid path.
fn thin_collinear(pts: &[Vec3]) -> Vec<Vec3> {
    let mut out = vec![pts[0]];
    for i in 1..pts.len().saturating_sub(1) {
        let a = pts[i] - out[out.len() - 1];
        let b = pts[i + 1] - pts[i];
        let cross = a.x * b.y - a.y * b.x;
        if cross.abs() > 1e-9 || a.dot(&b) < 0.0 {
            out.push(pts[i]);
        }
    }
    if pts.len() > 1 {
        out.push(pts[pts.len() - 1]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawParams {
    pub beta_psi: f64,
    pub beta_s: f64,
    pub beta_u: f64,
    pub samples: usize,
    pub rho_p: f64,
    pub rho_v: f64,
    pub rho_a: f64,
    pub max_rate: f64,
    pub max_acc: f64,
    pub bins: usize,
}

impl Default for YawParams {
    fn default() -> Self {
        Self {
            beta_psi: 1.0,
            beta_s: 3.0,
            beta_u: 0.5,
            samples: 5,
            rho_p: 10.0,
            rho_v: 100.0,
            rho_a: 100.0,
            max_rate: 1.5,
            max_acc: 2.0,
            bins: 12,
        }
    }
}

/// Rest-to-rest cubic yaw between bins: value at fraction `s` of the
/// segment.
#[inline]
fn cubic_blend(a: f64, delta: f64, s: f64) -> f64 {
    a + delta * s * s * (3.0 - 2.0 * s)
}

/// Everything the yaw search needs about one trajectory.
pub struct YawProblem<'a> {
    pub durations: Vec<f64>,
    /// Position at fraction `s` of segment `i`.
    pub position: Box<dyn Fn(usize, f64) -> Vec3 + 'a>,
    /// Gain per ray for a camera at the given pose.
    pub gain: Box<dyn Fn(usize, usize, f64) -> f64 + 'a>,
    pub soi: Option<Vec3>,
    pub hfov: f64,
    pub start_yaw: f64,
}

impl<'a> YawProblem<'a> {
    /// Builds a problem along `traj`. `gain(segment, sample, yaw)` must
    /// describe the sample points `(k + 1) / N` of each segment.
    pub fn along(traj: &'a Trajectory, gain: Box<dyn Fn(usize, usize, f64) -> f64 + 'a>, soi: Option<Vec3>, hfov: f64, start_yaw: f64) -> Self {
        let starts = traj.knot_times();
        let durations = traj.durations.clone();
        Self {
            position: Box::new(move |i, s| traj.position(starts[i] + s * traj.durations[i])),
            durations,
            gain,
            soi,
            hfov,
            start_yaw,
        }
    }

    pub fn soi_term(&self, p: &Vec3, yaw: f64) -> f64 {
        match self.soi {
            Some(s) => {
                let d = s - p;
                (self.hfov / 2.0 - angle_diff(yaw, d.y.atan2(d.x)).abs()).max(0.0)
            }
            None => 0.0,
        }
    }

    /// Cost of moving from yaw `a` to `a + delta` over segment `i`.
    pub fn edge_cost(&self, i: usize, a: f64, delta: f64, p: &YawParams) -> f64 {
        let t = self.durations[i];
        let c = 12.0 * p.beta_psi * delta * delta / t.powi(3);
        let n = p.samples;
        let mut reward = 0.0;
        for k in 0..n {
            let s = (k + 1) as f64 / n as f64;
            let yaw = cubic_blend(a, delta, s);
            let pos = (self.position)(i, s);
            let fs = if self.soi.is_some() { p.beta_s * self.soi_term(&pos, yaw) } else { 0.0 };
            let ge = if p.beta_u != 0.0 { p.beta_u * (self.gain)(i, k, yaw) } else { 0.0 };
            reward += fs + ge;
        }
        c - t / n as f64 * reward
    }

    pub fn bin_yaw(&self, b: usize, p: &YawParams) -> f64 {
        self.start_yaw + b as f64 * std::f64::consts::TAU / p.bins as f64
    }

    /// Total cost of a bin sequence (one bin per knot after the start).
    pub fn sequence_cost(&self, bins: &[usize], p: &YawParams) -> f64 {
        let mut prev = self.start_yaw;
        let mut total = 0.0;
        for (i, &b) in bins.iter().enumerate() {
            let delta = angle_diff(self.bin_yaw(b, p), prev);
            total += self.edge_cost(i, prev, delta, p);
            prev += delta;
        }
        total
    }

    /// Unwrapped reference yaws for a bin sequence.
    pub fn unwrap_bins(&self, bins: &[usize], p: &YawParams) -> Vec<f64> {
        let mut prev = self.start_yaw;
        bins.iter()
            .map(|&b| {
                prev += angle_diff(self.bin_yaw(b, p), prev);
                prev
            })
            .collect()
    }
}

/// Dynamic programming over yaw bins at every knot. Returns the bin
/// sequence and the unwrapped reference yaws. Ties go to smaller bins.
pub fn search_yaw(prob: &YawProblem, p: &YawParams) -> (Vec<usize>, Vec<f64>) {
    let m = prob.durations.len();
    let k = p.bins;
    // the start yaw is bin 0 exactly; yaw values inside a bin are the
    // wrapped bin angle, unwrapped relative to the predecessor
    let mut cost = vec![vec![f64::INFINITY; k]; m];
    let mut from = vec![vec![0usize; k]; m];
    let mut yaw_at = vec![vec![0.0; k]; m];
    for b in 0..k {
        let delta = angle_diff(prob.bin_yaw(b, p), prob.start_yaw);
        cost[0][b] = prob.edge_cost(0, prob.start_yaw, delta, p);
        yaw_at[0][b] = prob.start_yaw + delta;
    }
    for i in 1..m {
        for b in 0..k {
            for a in 0..k {
                let ya = yaw_at[i - 1][a];
                let delta = angle_diff(prob.bin_yaw(b, p), ya);
                let c = cost[i - 1][a] + prob.edge_cost(i, ya, delta, p);
                if c < cost[i][b] {
                    cost[i][b] = c;
                    from[i][b] = a;
                    yaw_at[i][b] = ya + delta;
                }
            }
        }
    }
    let mut best = 0;
    for b in 1..k {
        if cost[m - 1][b] < cost[m - 1][best] {
            best = b;
        }
    }
    let mut bins = vec![0; m];
    bins[m - 1] = best;
    for i in (1..m).rev() {
        bins[i - 1] = from[i][bins[i]];
    }
    let gamma = prob.unwrap_bins(&bins, p);
    (bins, gamma)
}

/// Yaw refinement objective over the interior knot yaws.
#[derive(Debug, Clone)]
pub struct YawObjective {
    pub gamma: Vec<f64>,
    pub durations: Vec<f64>,
    pub psi0: f64,
    pub psi_end: f64,
    pub params: YawParams,
    /// Jerk energy as a quadratic form over all knot values.
    q: DMatrix<f64>,
}

fn hinge3(x: f64) -> (f64, f64) {
    if x > 0.0 {
        (x * x * x, 3.0 * x * x)
    } else {
        (0.0, 0.0)
    }
}

impl YawObjective {
    /// `gamma` holds references for knots 1..M; the last one is also the
    /// fixed end yaw.
    pub fn new(gamma: &[f64], durations: &[f64], psi0: f64, params: YawParams) -> Result<Self, PlanError> {
        let m = durations.len();
        assert_eq!(gamma.len(), m);
        let a = min_jerk_system(durations).lu();
        // coefficients as a linear map of the knot values
        let mut basis = Vec::with_capacity(m + 1);
        for j in 0..=m {
            let mut knots = vec![0.0; m + 1];
            knots[j] = 1.0;
            let x = a.solve(&min_jerk_rhs(&knots, [0.0, 0.0], [0.0, 0.0])).ok_or(PlanError::Singular)?;
            basis.push(x);
        }
        let mut q = DMatrix::zeros(m + 1, m + 1);
        for (i, &t) in durations.iter().enumerate() {
            // Gram matrix of jerk over segment i
            let mut g = [[0.0; 6]; 6];
            for k in 3..6 {
                for l in 3..6 {
                    let pw = (k + l - 5) as i32;
                    g[k][l] = falling(k, 3) * falling(l, 3) * t.powi(pw) / pw as f64;
                }
            }
            for r in 0..=m {
                for c in 0..=m {
                    let mut s = 0.0;
                    for k in 3..6 {
                        for l in 3..6 {
                            s += basis[r][6 * i + k] * g[k][l] * basis[c][6 * i + l];
                        }
                    }
                    q[(r, c)] += s;
                }
            }
        }
        Ok(Self { gamma: gamma.to_vec(), durations: durations.to_vec(), psi0, psi_end: gamma[m - 1], params, q })
    }

    fn knots(&self, x: &[f64]) -> Vec<f64> {
        let mut k = Vec::with_capacity(x.len() + 2);
        k.push(self.psi0);
        k.extend_from_slice(x);
        k.push(self.psi_end);
        k
    }

    /// Cost and gradient at interior yaws `x` (knots 1..M-1).
    pub fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let p = &self.params;
        let k = self.knots(x);
        let m = self.durations.len();
        let kv = DVector::from_column_slice(&k);
        let qk = &self.q * &kv;
        let mut cost = kv.dot(&qk);
        let mut grad = vec![0.0; k.len()];
        for j in 0..k.len() {
            grad[j] += 2.0 * qk[j];
        }
        let t = &self.durations;
        for i in 1..m {
            let d = k[i] - self.gamma[i - 1];
            cost += p.rho_p * d * d;
            grad[i] += 2.0 * p.rho_p * d;

            // durations: t[i-1] into knot i, t[i] out of it
            let span = t[i] + t[i - 1];
            let u = (k[i + 1] - k[i - 1]) / span;
            let (h, dh) = hinge3(u.abs() - p.max_rate);
            cost += p.rho_v * h;
            let g = p.rho_v * dh * u.signum() / span;
            grad[i + 1] += g;
            grad[i - 1] -= g;

            let w = ((k[i + 1] - k[i]) / t[i] - (k[i] - k[i - 1]) / t[i - 1]) / (span / 2.0);
            let (h, dh) = hinge3(w.abs() - p.max_acc);
            cost += p.rho_a * h;
            let g = p.rho_a * dh * w.signum() / (span / 2.0);
            grad[i + 1] += g / t[i];
            grad[i] -= g * (1.0 / t[i] + 1.0 / t[i - 1]);
            grad[i - 1] += g / t[i - 1];
        }
        (cost, grad[1..m].to_vec())
    }

    pub fn cost(&self, x: &[f64]) -> f64 {
        self.eval(x).0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YawPlan {
    /// Knot yaws 0..M, unwrapped.
    pub knots: Vec<f64>,
    pub durations: Vec<f64>,
    pub coeffs: Vec<[f64; 6]>,
    pub iterations: usize,
    pub cost: f64,
    pub reference_cost: f64,
}

impl YawPlan {
    pub fn yaw(&self, t: f64) -> f64 {
        self.eval(t, 0)
    }

    pub fn eval(&self, t: f64, d: usize) -> f64 {
        let mut t = t.max(0.0);
        for (i, &dur) in self.durations.iter().enumerate() {
            if t <= dur || i + 1 == self.durations.len() {
                return poly_deriv(&self.coeffs[i], t.min(dur), d);
            }
            t -= dur;
        }
        self.knots[0]
    }

    pub fn duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// Stretches time by `f`, like [`Trajectory::scaled`].
    pub fn scaled(&self, f: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| std::array::from_fn(|k| c[k] / f.powi(k as i32))).collect(),
            durations: self.durations.iter().map(|d| d * f).collect(),
            ..self.clone()
        }
    }

    /// Peak yaw rate over samples every `dt`.
    pub fn peak_rate(&self, dt: f64) -> f64 {
        let n = (self.duration() / dt).ceil() as usize;
        (0..=n).map(|k| self.eval((k as f64 * dt).min(self.duration()), 1).abs()).fold(0.0, f64::max)
    }

    pub fn knot_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for i in 1..self.durations.len() {
            for d in 0..3 {
                r = r.max((poly_deriv(&self.coeffs[i - 1], self.durations[i - 1], d) - poly_deriv(&self.coeffs[i], 0.0, d)).abs());
            }
        }
        r
    }
}

/// L-BFGS with Armijo backtracking from `x0`; stops when the gradient norm
/// drops below `tol` or after `max_iter` iterations.
pub fn lbfgs<F: Fn(&[f64]) -> (f64, Vec<f64>)>(f: F, x0: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize), PlanError> {
    const HISTORY: usize = 8;
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return Err(PlanError::NonFinite);
    }
    if n == 0 {
        return Ok((x, fx, 0));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iter = 0;
    while iter < max_iter && dot(&g, &g).sqrt() >= tol {
        iter += 1;
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    Ok((x, fx, iter))
}

/// Refines the interior knot yaws starting from the reference and
/// interpolates them with a min-jerk quintic.
pub fn optimize_yaw(gamma: &[f64], durations: &[f64], params: &YawParams, psi0: f64) -> Result<YawPlan, PlanError> {
    let obj = YawObjective::new(gamma, durations, psi0, *params)?;
    let m = durations.len();
    let x0 = gamma[..m - 1].to_vec();
    let reference_cost = obj.cost(&x0);
    let (x, cost, iterations) = lbfgs(|x| obj.eval(x), &x0, 1e-6, 500)?;
    let knots = obj.knots(&x);
    let coeffs = min_jerk_1d(&knots, durations, [0.0, 0.0], [0.0, 0.0])?;
    Ok(YawPlan { knots, durations: durations.to_vec(), coeffs, iterations, cost, reference_cost })
}

/// Rows `t x y z yaw` every `dt` seconds, `t` offset by `t0`.
pub fn export_rows(traj: &Trajectory, yaw: &dyn Fn(f64) -> f64, t0: f64, dt: f64) -> String {
    let n = (traj.duration() / dt).floor() as usize;
    let mut out = String::new();
    for k in 0..=n {
        let t = k as f64 * dt;
        let p = traj.position(t);
        out.push_str(&format!("{:.3} {:.4} {:.4} {:.4} {:.4}\n", t0 + t, p.x, p.y, p.z, yaw(t)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel_map::{MapParams, Trinary, VoxelMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn free_map(dims: [usize; 3], wall: impl Fn([i32; 3]) -> bool) -> VoxelMap {
        let mut m = VoxelMap::new(Vec3::zeros(), 0.1, dims, MapParams::default()).unwrap();
        for v in m.bounds().voxels().collect::<Vec<_>>() {
            let border = v[0] == 0 || v[1] == 0 || v[0] == dims[0] as i32 - 1 || v[1] == dims[1] as i32 - 1;
            m.set_state(v, if border || wall(v) { Trinary::Occupied } else { Trinary::Free });
        }
        m
    }

    #[test]
    fn goal_equals_start() {
        let m = free_map([20, 20, 20], |_| false);
        let nav = NavGrid::build(&m, 1.0, 0.3);
        let p = nav.center([10, 10]);
        let plan = plan_position(&State::at_rest(p), &p, &nav, &Limits::default()).unwrap();
        assert_eq!(plan.traj.segment_count(), 1);
        for d in 1..4 {
            assert_eq!(plan.traj.eval(0.05, d), Vec3::zeros());
        }
        assert_eq!(plan.traj.position(0.05), p);
    }

    #[test]
    fn straight_corridor_near_euclidean() {
        let m = free_map([110, 20, 20], |_| false);
        let nav = NavGrid::build(&m, 1.0, 0.3);
        let a = nav.center([5, 10]);
        let b = nav.center([105, 10]);
        let lim = Limits::default();
        let plan = plan_position(&State::at_rest(a), &b, &nav, &lim).unwrap();
        let len = plan.traj.length(0.01);
        assert!((len - 10.0).abs() <= 0.5, "{len}");
        assert!(plan.traj.knot_residual() < 1e-6);
        let (v, acc) = plan.traj.peaks(0.01);
        assert!(v <= lim.max_vel + 1e-6 && acc <= lim.max_acc + 1e-6, "{v} {acc}");
        assert!((plan.traj.position(plan.traj.duration()) - b).norm() < 1e-9);
    }

    #[test]
    fn l_shaped_corridor_is_collision_free() {
        // free: x < 1.2 column and y < 1.2 row of a 5 m square
        let m = free_map([50, 50, 20], |v| v[0] >= 12 && v[1] >= 12);
        let nav = NavGrid::build(&m, 1.0, 0.3);
        let a = nav.center([6, 44]);
        let b = nav.center([44, 6]);
        let plan = plan_position(&State::at_rest(a), &b, &nav, &Limits::default()).unwrap();
        let t_end = plan.traj.duration();
        let mut t = 0.0;
        while t <= t_end {
            let p = plan.traj.position(t);
            // brute-force sphere-vs-occupied-voxel-box test
            for v in m.bounds().voxels() {
                if m.state(v) != Some(Trinary::Occupied) {
                    continue;
                }
                let lo = m.center_of(v) - Vec3::new(0.05, 0.05, 0.05);
                let hi = lo + Vec3::new(0.1, 0.1, 0.1);
                let d = Vec3::new(
                    (lo.x - p.x).max(p.x - hi.x).max(0.0),
                    (lo.y - p.y).max(p.y - hi.y).max(0.0),
                    (lo.z - p.z).max(p.z - hi.z).max(0.0),
                );
                assert!(d.norm() >= 0.3 - 1e-9, "t={t} p={p:?} v={v:?}");
            }
            t += 0.05;
        }
    }

    #[test]
    fn time_scaling_keeps_path() {
        let pts = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.5, 1.0), Vec3::new(2.0, 0.0, 1.0)];
        let tr = Trajectory::from_waypoints(&pts, &[1.0, 1.5], &State::at_rest(pts[0]), Vec3::zeros()).unwrap();
        let sc = tr.scaled(2.5);
        for k in 0..=50 {
            let s = k as f64 / 50.0;
            let a = tr.position(s * tr.duration());
            let b = sc.position(s * sc.duration());
            assert!((a - b).norm() < 1e-9);
        }
        assert!((sc.eval(1.0, 1) - tr.eval(0.4, 1) / 2.5).norm() < 1e-9);
    }

    #[test]
    fn min_jerk_single_segment_closed_form() {
        // rest-to-rest: x(s) = 10 s^3 - 15 s^4 + 6 s^5
        let c = min_jerk_1d(&[0.0, 1.0], &[2.0], [0.0, 0.0], [0.0, 0.0]).unwrap();
        for k in 0..=10 {
            let s = k as f64 / 10.0;
            let want = 10.0 * s.powi(3) - 15.0 * s.powi(4) + 6.0 * s.powi(5);
            assert!((poly_deriv(&c[0], 2.0 * s, 0) - want).abs() < 1e-12);
        }
        // energy 720 / T^5 for unit displacement
        assert!((jerk_energy(&c[0], 2.0) - 720.0 / 32.0).abs() < 1e-9);
    }

    #[test]
    fn interior_knots_are_c4() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let knots: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let durs: Vec<f64> = (0..5).map(|_| rng.gen_range(0.3..2.0)).collect();
        let c = min_jerk_1d(&knots, &durs, [0.3, -0.1], [0.0, 0.0]).unwrap();
        for i in 1..5 {
            for d in 0..5 {
                let a = poly_deriv(&c[i - 1], durs[i - 1], d);
                let b = poly_deriv(&c[i], 0.0, d);
                assert!((a - b).abs() < 1e-8, "knot {i} d {d}");
            }
        }
    }

    fn yaw_problem(durs: Vec<f64>, soi: Option<Vec3>) -> YawProblem<'static> {
        YawProblem {
            position: Box::new(|i, s| Vec3::new(i as f64 + s, 0.0, 1.0)),
            gain: Box::new(|i, k, yaw| ((yaw * (1.0 + i as f64) + k as f64).sin() + 1.0) * 0.7),
            durations: durs,
            soi,
            hfov: std::f64::consts::FRAC_PI_2,
            start_yaw: 0.3,
        }
    }

    #[test]
    fn pure_smoothness_keeps_start_bin() {
        let p = YawParams { beta_s: 0.0, beta_u: 0.0, ..Default::default() };
        let prob = yaw_problem(vec![1.0, 1.2, 0.8], Some(Vec3::new(0.0, 5.0, 1.0)));
        let (bins, gamma) = search_yaw(&prob, &p);
        assert_eq!(bins, vec![0, 0, 0]);
        assert!(gamma.iter().all(|&g| (g - 0.3).abs() < 1e-12));
    }

    #[test]
    fn faces_soi_ahead() {
        let p = YawParams { beta_u: 0.0, beta_psi: 0.01, bins: 8, ..Default::default() };
        let mut prob = yaw_problem(vec![2.0, 2.0], Some(Vec3::new(1.0, 50.0, 1.0)));
        prob.start_yaw = 0.0;
        let (bins, _) = search_yaw(&prob, &p);
        // bin 2 of 8 is +90 degrees, the bearing to the SOI
        assert_eq!(bins, vec![2, 2]);
        assert!((prob.soi_term(&Vec3::new(1.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2) - prob.hfov / 2.0).abs() < 1e-3);
    }

    #[test]
    fn dp_matches_exhaustive() {
        let p = YawParams { bins: 8, ..Default::default() };
        let prob = yaw_problem(vec![0.7, 1.1, 0.9], Some(Vec3::new(2.0, -1.0, 1.0)));
        let (bins, _) = search_yaw(&prob, &p);
        let mut best = (f64::INFINITY, vec![]);
        for a in 0..8 {
            for b in 0..8 {
                for c in 0..8 {
                    let s = vec![a, b, c];
                    let cost = prob.sequence_cost(&s, &p);
                    if cost < best.0 - 1e-12 {
                        best = (cost, s);
                    }
                }
            }
        }
        assert!((prob.sequence_cost(&bins, &p) - best.0).abs() < 1e-9);
        assert_eq!(bins, best.1);
    }

    #[test]
    fn constant_reference_is_optimal() {
        let plan = optimize_yaw(&[0.4; 4], &[1.0, 0.5, 2.0, 1.0], &YawParams::default(), 0.4).unwrap();
        assert!(plan.cost.abs() < 1e-12);
        assert!(plan.knots.iter().all(|&k| (k - 0.4).abs() < 1e-9));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let durs = vec![0.6, 0.9, 0.4, 1.3];
        let gamma = vec![0.5, 2.0, -0.4, 1.0];
        let obj = YawObjective::new(&gamma, &durs, 0.0, YawParams::default()).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, g) = obj.eval(&x);
        for i in 0..3 {
            let h = 1e-5;
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (obj.cost(&a) - obj.cost(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1.0), "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn optimised_no_worse_than_reference() {
        let durs = vec![0.5, 0.5, 0.5, 0.5];
        let gamma = vec![1.5, -1.0, 2.5, 0.0];
        let plan = optimize_yaw(&gamma, &durs, &YawParams::default(), 0.0).unwrap();
        assert!(plan.cost <= plan.reference_cost);
        assert!(plan.knot_residual() < 1e-6);
        assert!((plan.yaw(0.0) - 0.0).abs() < 1e-12);
        assert!((plan.yaw(2.0) - 0.0).abs() < 1e-9);
    }

    #[test]
    fn energy_quadratic_form_matches_direct() {
        let durs = vec![0.8, 1.2, 0.5];
        let obj = YawObjective::new(&[0.0, 0.0, 0.7], &durs, 0.2, YawParams { rho_p: 0.0, rho_v: 0.0, rho_a: 0.0, ..Default::default() }).unwrap();
        let x = [1.0, -0.5];
        let c = min_jerk_1d(&[0.2, 1.0, -0.5, 0.7], &durs, [0.0, 0.0], [0.0, 0.0]).unwrap();
        let direct: f64 = c.iter().zip(&durs).map(|(c, &t)| jerk_energy(c, t)).sum();
        assert!((obj.cost(&x) - direct).abs() < 1e-9 * direct.max(1.0));
    }
}
