//! Door detection on the occupancy map and the lifecycle of detected doors.
//!
//! Stage one looks at a horizontal occupancy projection around a frontier
//! cluster: Sobel edges, a progressive probabilistic Hough transform, then
//! pairs of collinear segments separated by a door-sized gap. Stage two
//! checks the vertical plane through each gap for a free span between two
//! occupied jambs that is tall enough to fly through.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::frontier::{FrontierCluster, FrontierLabel};
use crate::geom::{Vec3, Voxel};
use crate::sim_world::CameraModel;
use crate::voxel_map::{Trinary, VoxelMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoorParams {
    pub w_min: f64,
    pub w_max: f64,
    pub h_min: f64,
    pub band: (f64, f64),
    /// Half-size of the projection window (m).
    pub window: f64,
    pub edge_ratio: f64,
    pub min_line_len: usize,
    pub line_gap: usize,
    pub hough_threshold: usize,
    /// Plane offsets tried along the normal in stage two (voxels).
    pub plane_search: i32,
    /// Candidates closer than this are merged (m).
    pub dedupe: f64,
    /// Height at which jambs and the free span are measured (m above floor).
    pub probe_height: f64,
    pub confirm_radius: f64,
}

impl Default for DoorParams {
    fn default() -> Self {
        Self {
            w_min: 0.7,
            w_max: 1.1,
            h_min: 1.8,
            band: (0.3, 1.8),
            window: 2.5,
            edge_ratio: 0.5,
            min_line_len: 10,
            line_gap: 2,
            hough_threshold: 8,
            plane_search: 3,
            dedupe: 0.6,
            probe_height: 1.0,
            confirm_radius: 1.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectClass {
    Door,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectStatus {
    ToBeConfirmed,
    Confirmed,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticObject {
    pub id: u32,
    pub class: ObjectClass,
    /// Centre of the opening at probe height.
    pub position: Vec3,
    /// Horizontal unit normal of the door plane, pointing to the side that
    /// was less explored at detection time.
    pub direction: Vec3,
    pub width: f64,
    pub status: ObjectStatus,
}

impl SemanticObject {
    /// Horizontal unit vector along the door plane.
    pub fn along(&self) -> Vec3 {
        Vec3::new(-self.direction.y, self.direction.x, 0.0)
    }
}

/// A 2-D line segment in window pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    fn dir(&self) -> [f64; 2] {
        let (dx, dy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let n = (dx * dx + dy * dy).sqrt().max(1e-12);
        [dx / n, dy / n]
    }

    pub fn len(&self) -> f64 {
        ((self.b[0] - self.a[0]).powi(2) + (self.b[1] - self.a[1]).powi(2)).sqrt()
    }
}

/// Binary image, row-major with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub w: usize,
    pub h: usize,
    pub px: Vec<bool>,
}

impl Image {
    pub fn new(w: usize, h: usize) -> Self {
        Self { w, h, px: vec![false; w * h] }
    }

    pub fn get(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h && self.px[x as usize + self.w * y as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.px[x + self.w * y] = v;
    }
}

/// Sobel gradient magnitude, thinned to one pixel by non-maximum
/// suppression along the gradient and thresholded at `ratio` of its maximum.
/// Borders replicate the edge pixels.
pub fn sobel_edges(img: &Image, ratio: f64) -> Image {
    let (w, h) = (img.w as i64, img.h as i64);
    let at = |x: i64, y: i64| img.get(x.clamp(0, w - 1), y.clamp(0, h - 1)) as i32 as f64;
    let mut grad = vec![(0.0, 0.0); img.w * img.h];
    for y in 0..h {
        for x in 0..w {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            grad[(x + w * y) as usize] = (gx, gy);
        }
    }
    let mag: Vec<f64> = grad.iter().map(|(gx, gy)| (gx * gx + gy * gy).sqrt()).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let mut out = Image::new(img.w, img.h);
    if max <= 0.0 {
        return out;
    }
    // neighbour magnitude, ignored when its gradient points the other way
    // (the two faces of a thin wall)
    let m = |x: i64, y: i64, g: (f64, f64)| {
        if x < 0 || y < 0 || x >= w || y >= h {
            return 0.0;
        }
        let j = (x + w * y) as usize;
        if grad[j].0 * g.0 + grad[j].1 * g.1 > 0.0 { mag[j] } else { 0.0 }
    };
    for y in 0..h {
        for x in 0..w {
            let i = (x + w * y) as usize;
            if mag[i] < ratio * max {
                continue;
            }
            let (gx, gy) = grad[i];
            // gradient direction quantized to 0/45/90/135 degrees
            let ang = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let (dx, dy) = match ang {
                a if !(22.5..157.5).contains(&a) => (1, 0),
                a if a < 67.5 => (1, 1),
                a if a < 112.5 => (0, 1),
                _ => (-1, 1),
            };
            // strict on one side so flat-topped ridges keep a single pixel
            if mag[i] > m(x - dx, y - dy, (gx, gy)) && mag[i] >= m(x + dx, y + dy, (gx, gy)) {
                out.px[i] = true;
            }
        }
    }
    out
}

const THETA_BINS: usize = 180;
const HOUGH_SEED: u64 = 0x5eed;

/// Progressive probabilistic Hough transform. Points are visited in a
/// shuffled order from a fixed seed, so results are deterministic.
pub fn hough_segments(edges: &Image, threshold: usize, min_len: usize, max_gap: usize) -> Vec<Segment> {
    let (w, h) = (edges.w as i64, edges.h as i64);
    let num_rho = 2 * (edges.w + edges.h) + 1;
    let rho_off = (edges.w + edges.h) as f64;
    let trig: Vec<(f64, f64)> = (0..THETA_BINS).map(|t| {
        let th = t as f64 * PI / THETA_BINS as f64;
        (th.cos(), th.sin())
    }).collect();
    let mut acc = vec![0usize; THETA_BINS * num_rho];
    let mut mask = edges.px.clone();
    let rho_bin = |x: i64, y: i64, t: usize| ((x as f64 * trig[t].0 + y as f64 * trig[t].1) + rho_off).round() as usize;
    let mut points: Vec<(i64, i64)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| edges.get(x, y)).collect();
    points.shuffle(&mut ChaCha8Rng::seed_from_u64(HOUGH_SEED));
    let mut voted = vec![false; edges.px.len()];
    let mut out = Vec::new();
    for &(x0, y0) in &points {
        let idx0 = (x0 + w * y0) as usize;
        if !mask[idx0] {
            continue;
        }
        let mut best = (0usize, 0usize);
        for t in 0..THETA_BINS {
            let r = rho_bin(x0, y0, t);
            acc[t * num_rho + r] += 1;
            if acc[t * num_rho + r] > best.0 {
                best = (acc[t * num_rho + r], t);
            }
        }
        voted[idx0] = true;
        if best.0 < threshold {
            continue;
        }
        // walk along the line direction both ways from the seed
        let (c, s) = trig[best.1];
        let (dx, dy) = (-s, c);
        let (sx, sy) = if dx.abs() >= dy.abs() { (dx.signum(), dy / dx.abs()) } else { (dx / dy.abs(), dy.signum()) };
        let mut ends = [(x0, y0); 2];
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut gap = 0;
            let mut step = 1.0;
            loop {
                let px = (x0 as f64 + sign * sx * step).round() as i64;
                let py = (y0 as f64 + sign * sy * step).round() as i64;
                if px < 0 || py < 0 || px >= w || py >= h {
                    break;
                }
                if mask[(px + w * py) as usize] {
                    gap = 0;
                    ends[k] = (px, py);
                } else {
                    gap += 1;
                    if gap > max_gap {
                        break;
                    }
                }
                step += 1.0;
            }
        }
        let len = (((ends[0].0 - ends[1].0).pow(2) + (ends[0].1 - ends[1].1).pow(2)) as f64).sqrt();
        let good = len + 1.0 >= min_len as f64;
        if !good {
            // a short walk usually means a poor angle estimate; leave its
            // pixels for a later seed
            mask[idx0] = false;
            continue;
        }
        // clear the walked pixels and give back their votes
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut step = if k == 0 { 0.0 } else { 1.0 };
            loop {
                let px = (x0 as f64 + sign * sx * step).round() as i64;
                let py = (y0 as f64 + sign * sy * step).round() as i64;
                if px < 0 || py < 0 || px >= w || py >= h {
                    break;
                }
                let i = (px + w * py) as usize;
                if mask[i] {
                    if voted[i] {
                        for t in 0..THETA_BINS {
                            let r = rho_bin(px, py, t);
                            acc[t * num_rho + r] -= 1;
                        }
                        voted[i] = false;
                    }
                    mask[i] = false;
                }
                if (px, py) == ends[k] {
                    break;
                }
                step += 1.0;
            }
        }
        out.push(Segment {
            a: [ends[1].0 as f64, ends[1].1 as f64],
            b: [ends[0].0 as f64, ends[0].1 as f64],
        });
    }
    out
}

/// Gaps between collinear segments, returned as (centre, unit direction
/// along the line, gap length), all in pixels.
pub fn collinear_gaps(segs: &[Segment], min_gap: f64, max_gap: f64) -> Vec<([f64; 2], [f64; 2], f64)> {
    let mut out = Vec::new();
    for i in 0..segs.len() {
        for j in i + 1..segs.len() {
            let (si, sj) = (&segs[i], &segs[j]);
            let di = si.dir();
            let dj = sj.dir();
            let cross = (di[0] * dj[1] - di[1] * dj[0]).abs();
            if cross > (6f64).to_radians().sin() {
                continue;
            }
            let normal = [-di[1], di[0]];
            let off = |p: [f64; 2]| (p[0] - si.a[0]) * normal[0] + (p[1] - si.a[1]) * normal[1];
            let mid = [(sj.a[0] + sj.b[0]) / 2.0, (sj.a[1] + sj.b[1]) / 2.0];
            if off(mid).abs() > 2.0 {
                continue;
            }
            let proj = |p: [f64; 2]| (p[0] - si.a[0]) * di[0] + (p[1] - si.a[1]) * di[1];
            let (a0, a1) = (0.0f64, proj(si.b));
            let (b0, b1) = {
                let (u, v) = (proj(sj.a), proj(sj.b));
                (u.min(v), v.max(u))
            };
            let (gap_lo, gap_hi) = if b0 > a1 { (a1, b0) } else if a0 > b1 { (b1, a0) } else { continue };
            // pixel endpoints sit inside the solid run, so the opening is one
            // pixel narrower than the endpoint distance
            let gap = gap_hi - gap_lo - 1.0;
            if gap < min_gap || gap > max_gap {
                continue;
            }
            let t = (gap_lo + gap_hi) / 2.0;
            let centre = [si.a[0] + di[0] * t, si.a[1] + di[1] * t];
            out.push((centre, di, gap));
        }
    }
    out
}

fn probe_state(map: &VoxelMap, q: &Vec3) -> Option<Trinary> {
    map.state(map.voxel_of(q))
}

/// Longest run of known-free voxels in the column at `q` that contains
/// height `z` (m).
fn free_run(map: &VoxelMap, q: &Vec3, z: f64) -> f64 {
    let base = map.voxel_of(&Vec3::new(q.x, q.y, z));
    if map.state(base) != Some(Trinary::Free) {
        return 0.0;
    }
    let mut n = 1;
    for dir in [1, -1] {
        let mut v = base;
        loop {
            v[2] += dir;
            if map.state(v) != Some(Trinary::Free) {
                break;
            }
            n += 1;
        }
    }
    n as f64 * map.resolution()
}

fn jamb_occupied(map: &VoxelMap, q: &Vec3, band: (f64, f64)) -> bool {
    let z0 = map.origin().z;
    let lo = map.voxel_of(&Vec3::new(q.x, q.y, z0 + band.0))[2];
    let hi = map.voxel_of(&Vec3::new(q.x, q.y, z0 + band.1))[2];
    let v = map.voxel_of(q);
    let total = (hi - lo + 1).max(1);
    let occ = (lo..=hi).filter(|&z| map.state([v[0], v[1], z]) == Some(Trinary::Occupied)).count() as i32;
    3 * occ >= 2 * total
}

/// Stage-two check in the vertical plane through `centre` spanned by
/// `along` and the vertical. Returns the refined centre and the measured
/// width. Nearby parallel planes are tried too, since the first stage may
/// place the gap on the face of the wall rather than inside it.
pub fn verify_door(map: &VoxelMap, centre: &Vec3, along: &Vec3, p: &DoorParams) -> Option<(Vec3, f64)> {
    let res = map.resolution();
    let along = Vec3::new(along.x, along.y, 0.0).normalize();
    let normal = Vec3::new(-along.y, along.x, 0.0);
    let zref = map.origin().z + p.probe_height;
    let max_steps = (p.w_max / res).ceil() as i32 + 2;
    let mut offsets = vec![0];
    for o in 1..=p.plane_search {
        offsets.push(o);
        offsets.push(-o);
    }
    for o in offsets {
        let mut c = centre + normal * (o as f64 * res);
        c.z = zref;
        if probe_state(map, &c) != Some(Trinary::Free) {
            continue;
        }
        let walk = |sign: f64| -> Option<i32> {
            for s in 1..=max_steps {
                match probe_state(map, &(c + along * (sign * s as f64 * res))) {
                    Some(Trinary::Free) => continue,
                    Some(Trinary::Occupied) => return Some(s),
                    _ => return None,
                }
            }
            None
        };
        let (Some(l), Some(r)) = (walk(-1.0), walk(1.0)) else { continue };
        let width = (l + r - 1) as f64 * res;
        if width < p.w_min - 1e-9 || width > p.w_max + 1e-9 {
            continue;
        }
        let jl = c - along * (l as f64 * res);
        let jr = c + along * (r as f64 * res);
        if !jamb_occupied(map, &jl, p.band) || !jamb_occupied(map, &jr, p.band) {
            continue;
        }
        let height = (1 - l..r)
            .map(|s| free_run(map, &(c + along * (s as f64 * res)), zref))
            .fold(0.0, f64::max);
        if height < p.h_min - 1e-9 {
            continue;
        }
        let mid = c + along * ((r - l) as f64 / 2.0 * res);
        return Some((mid, width));
    }
    None
}

/// Unknown voxels in a box on one side of the door plane.
fn unknown_on_side(map: &VoxelMap, centre: &Vec3, normal: &Vec3, along: &Vec3, width: f64) -> usize {
    let res = map.resolution();
    let mut n = 0;
    let steps_d = (1.5 / res) as i32;
    let steps_w = (width / 2.0 / res) as i32;
    let [_, _, nz] = map.dims();
    for s in 2..=steps_d {
        for t in -steps_w..=steps_w {
            let q = centre + normal * (s as f64 * res) + along * (t as f64 * res);
            let v = map.voxel_of(&q);
            for z in 0..nz as i32 {
                if map.state([v[0], v[1], z]) == Some(Trinary::Unknown) {
                    n += 1;
                }
            }
        }
    }
    n
}

/// Horizontal occupancy projection of the band around `centre`.
pub fn project_window(map: &VoxelMap, centre: &Vec3, p: &DoorParams) -> (Image, [i32; 2]) {
    let res = map.resolution();
    let half = (p.window / res).round() as i32;
    let c = map.voxel_of(centre);
    let x0 = c[0] - half;
    let y0 = c[1] - half;
    let side = (2 * half + 1) as usize;
    let zl = (p.band.0 / res).floor() as i32;
    let zh = (p.band.1 / res).ceil() as i32 - 1;
    let layers = (zh - zl + 1).max(1);
    let mut img = Image::new(side, side);
    for y in 0..side as i32 {
        for x in 0..side as i32 {
            let occ = (zl..=zh).filter(|&z| map.state([x0 + x, y0 + y, z]) == Some(Trinary::Occupied)).count() as i32;
            img.set(x as usize, y as usize, 3 * occ >= layers);
        }
    }
    (img, [x0, y0])
}

/// Door candidates near a frontier cluster; every returned object passed
/// stage two. Ids are left at 0.
pub fn detect_doors(map: &VoxelMap, cluster: &FrontierCluster, p: &DoorParams) -> Vec<SemanticObject> {
    let res = map.resolution();
    let (img, origin) = project_window(map, &cluster.centroid, p);
    let edges = sobel_edges(&img, p.edge_ratio);
    let segs = hough_segments(&edges, p.hough_threshold, p.min_line_len, p.line_gap);
    // line ends come out a few pixels short around the jambs; stage two
    // measures the real width
    let slack = 5.0;
    let gaps = collinear_gaps(&segs, p.w_min / res - slack, p.w_max / res + slack);
    let mut out: Vec<SemanticObject> = Vec::new();
    let mo = map.origin();
    for (c, d, _) in gaps {
        let centre = Vec3::new(
            mo.x + (origin[0] as f64 + c[0] + 0.5) * res,
            mo.y + (origin[1] as f64 + c[1] + 0.5) * res,
            mo.z + p.probe_height,
        );
        let along = Vec3::new(d[0], d[1], 0.0);
        let Some((pos, width)) = verify_door(map, &centre, &along, p) else { continue };
        if out.iter().any(|o| (o.position - pos).norm() < p.dedupe) {
            continue;
        }
        let along = snap_axis(&along);
        let normal = Vec3::new(-along.y, along.x, 0.0);
        let fwd = unknown_on_side(map, &pos, &normal, &along, width);
        let back = unknown_on_side(map, &pos, &(-normal), &along, width);
        let direction = if fwd >= back { normal } else { -normal };
        out.push(SemanticObject {
            id: 0,
            class: ObjectClass::Door,
            position: pos,
            direction,
            width,
            status: ObjectStatus::ToBeConfirmed,
        });
    }
    out
}

/// Rounds a direction within 3 degrees of a grid axis onto it.
fn snap_axis(d: &Vec3) -> Vec3 {
    let a = d.y.atan2(d.x);
    let q = (a / (PI / 2.0)).round() * (PI / 2.0);
    if (a - q).abs() < 3f64.to_radians() {
        Vec3::new(q.cos().round(), q.sin().round(), 0.0)
    } else {
        Vec3::new(d.x, d.y, 0.0).normalize()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SemanticRegistry {
    objects: BTreeMap<u32, SemanticObject>,
    next_id: u32,
}

impl SemanticRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&SemanticObject> {
        self.objects.get(&id)
    }

    pub fn objects(&self) -> impl Iterator<Item = &SemanticObject> {
        self.objects.values()
    }

    pub fn pending(&self) -> impl Iterator<Item = &SemanticObject> {
        self.objects.values().filter(|o| o.status == ObjectStatus::ToBeConfirmed)
    }

    /// Adds candidates that are not within `dedupe` of a known object and
    /// returns the new ids.
    pub fn add_candidates(&mut self, cands: Vec<SemanticObject>, dedupe: f64) -> Vec<u32> {
        let mut ids = Vec::new();
        for mut c in cands {
            if self.objects.values().any(|o| (o.position - c.position).norm() < dedupe) {
                continue;
            }
            c.id = self.next_id;
            self.next_id += 1;
            ids.push(c.id);
            self.objects.insert(c.id, c);
        }
        ids
    }

    /// Drops unconfirmed objects that no longer pass stage two.
    pub fn recheck_objects(&mut self, map: &VoxelMap, p: &DoorParams) -> Vec<u32> {
        let stale: Vec<u32> = self
            .objects
            .values()
            .filter(|o| o.status == ObjectStatus::ToBeConfirmed)
            .filter(|o| verify_door(map, &o.position, &o.along(), p).is_none())
            .map(|o| o.id)
            .collect();
        for id in &stale {
            self.objects.remove(id);
        }
        stale
    }

    /// Confirms the object if the robot is close, sees it and it still
    /// verifies; otherwise rejects it. Only unconfirmed objects change.
    pub fn try_confirm(&mut self, id: u32, map: &VoxelMap, robot: &crate::geom::Pose, camera: &CameraModel, p: &DoorParams) -> Option<ObjectStatus> {
        let o = self.objects.get_mut(&id)?;
        if o.status != ObjectStatus::ToBeConfirmed {
            return Some(o.status);
        }
        let near = (o.position - robot.position).xy().norm() <= p.confirm_radius;
        let seen = camera.sees_bearing(robot, &o.position);
        o.status = match verify_door(map, &o.position, &o.along(), p) {
            Some((pos, width)) if near && seen => {
                o.position = pos;
                o.width = width;
                ObjectStatus::Confirmed
            }
            _ => ObjectStatus::Rejected,
        };
        Some(o.status)
    }

    pub fn reject(&mut self, id: u32) {
        if let Some(o) = self.objects.get_mut(&id) {
            if o.status == ObjectStatus::ToBeConfirmed {
                o.status = ObjectStatus::Rejected;
            }
        }
    }

    /// Inserts an object as given, assigning a fresh id.
    pub fn insert(&mut self, o: SemanticObject) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        self.objects.insert(id, SemanticObject { id, ..o });
        id
    }
}

/// Known-free voxels reachable from `start` by 6-connected moves that never
/// step into the plane of a confirmed door.
pub fn reachable_region(map: &VoxelMap, start: &Vec3, reg: &SemanticRegistry) -> Vec<bool> {
    let mut seen = vec![false; map.len()];
    let s = map.voxel_of(start);
    if map.state(s) != Some(Trinary::Free) {
        return seen;
    }
    let res = map.resolution();
    let doors: Vec<&SemanticObject> = reg.objects().filter(|o| o.status == ObjectStatus::Confirmed).collect();
    let in_door_plane = |v: Voxel| {
        let c = map.center_of(v);
        doors.iter().any(|d| {
            let rel = c - d.position;
            let across = rel.x * d.direction.x + rel.y * d.direction.y;
            let along = rel.dot(&d.along());
            (-res / 2.0..res / 2.0).contains(&across) && along.abs() <= d.width / 2.0 + 0.3
        })
    };
    seen[map.index(s)] = true;
    let mut q = VecDeque::from([s]);
    while let Some(v) = q.pop_front() {
        for d in [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]] {
            let n = [v[0] + d[0], v[1] + d[1], v[2] + d[2]];
            if map.state(n) != Some(Trinary::Free) {
                continue;
            }
            let i = map.index(n);
            if seen[i] || in_door_plane(n) {
                continue;
            }
            seen[i] = true;
            q.push_back(n);
        }
    }
    seen
}

/// Room label iff exploring a room and some cluster cell touches the region
/// reachable from the robot without crossing a confirmed door.
pub fn classify_frontier(cluster: &FrontierCluster, in_room_mode: bool, map: &VoxelMap, reach: &[bool]) -> FrontierLabel {
    if !in_room_mode {
        return FrontierLabel::Corridor;
    }
    let same_room = cluster.cells.iter().any(|&c| map.in_bounds(c) && reach[map.index(c)]);
    if same_room {
        FrontierLabel::Room
    } else {
        FrontierLabel::Corridor
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel_map::MapParams;

    /// Wall along x at y in [2.0, 2.2), full height, with an opening of
    /// `gap` voxels starting at x index `gx`, lintel above 2.0 m. Room side
    /// (y > 2.2) is unknown beyond 1 m.
    pub(crate) fn wall_map(gap: i32, gx: i32) -> VoxelMap {
        let mut m = VoxelMap::new(Vec3::zeros(), 0.1, [60, 50, 24], MapParams::default()).unwrap();
        for v in m.bounds().voxels().collect::<Vec<_>>() {
            let [x, y, z] = v;
            let in_wall = (20..22).contains(&y);
            let opening = gap > 0 && (gx..gx + gap).contains(&x) && z < 20;
            let state = if z == 0 || z == 23 {
                Trinary::Occupied
            } else if in_wall && !opening {
                Trinary::Occupied
            } else if y >= 32 {
                Trinary::Unknown
            } else {
                Trinary::Free
            };
            m.set_state(v, state);
        }
        m
    }

    fn cluster_at(m: &VoxelMap, p: Vec3) -> FrontierCluster {
        FrontierCluster::from_cells(0, vec![m.voxel_of(&p)], m)
    }

    #[test]
    fn finds_eight_decimetre_gap() {
        let m = wall_map(8, 26);
        let c = cluster_at(&m, Vec3::new(3.0, 2.7, 1.0));
        let doors = detect_doors(&m, &c, &DoorParams::default());
        assert_eq!(doors.len(), 1, "{doors:?}");
        let d = doors[0];
        assert!((d.position.x - 3.0).abs() <= 0.1 + 1e-9, "{d:?}");
        assert!((d.position.y - 2.1).abs() <= 0.1 + 1e-9, "{d:?}");
        assert!((d.width - 0.8).abs() < 1e-9);
        // normal perpendicular to the wall, into the unexplored side
        assert!((d.direction - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn solid_wall_and_wide_opening_rejected() {
        let p = DoorParams::default();
        let m = wall_map(0, 0);
        assert!(detect_doors(&m, &cluster_at(&m, Vec3::new(3.0, 2.7, 1.0)), &p).is_empty());
        let m = wall_map(25, 18);
        assert!(detect_doors(&m, &cluster_at(&m, Vec3::new(3.05, 2.7, 1.0)), &p).is_empty());
    }

    #[test]
    fn recheck_lifecycle() {
        let p = DoorParams::default();
        let m = wall_map(9, 25);
        let c = cluster_at(&m, Vec3::new(3.0, 2.7, 1.0));
        let mut reg = SemanticRegistry::new();
        let ids = reg.add_candidates(detect_doors(&m, &c, &p), p.dedupe);
        assert_eq!(ids.len(), 1);
        assert!(reg.recheck_objects(&m, &p).is_empty());
        // adding the same candidates again is deduplicated
        assert!(reg.add_candidates(detect_doors(&m, &c, &p), p.dedupe).is_empty());
        // opening later seen as occupied
        let closed = wall_map(0, 0);
        assert_eq!(reg.recheck_objects(&closed, &p), ids);
        assert!(reg.is_empty());

        // confirmed objects persist through a noisy map
        let ids = reg.add_candidates(detect_doors(&m, &c, &p), p.dedupe);
        let o = *reg.get(ids[0]).unwrap();
        let robot = crate::geom::Pose::new(o.position - o.direction * 1.0, o.direction.y.atan2(o.direction.x));
        let cam = CameraModel::default();
        assert_eq!(reg.try_confirm(ids[0], &m, &robot, &cam, &p), Some(ObjectStatus::Confirmed));
        assert!(reg.recheck_objects(&closed, &p).is_empty());
        assert_eq!(reg.get(ids[0]).unwrap().status, ObjectStatus::Confirmed);
    }

    #[test]
    fn confirmation_needs_view() {
        let p = DoorParams::default();
        let m = wall_map(8, 26);
        let mut reg = SemanticRegistry::new();
        let ids = reg.add_candidates(detect_doors(&m, &cluster_at(&m, Vec3::new(3.0, 2.7, 1.0)), &p), p.dedupe);
        let o = *reg.get(ids[0]).unwrap();
        // facing away
        let robot = crate::geom::Pose::new(o.position - o.direction, -PI / 2.0);
        assert_eq!(reg.try_confirm(ids[0], &m, &robot, &CameraModel::default(), &p), Some(ObjectStatus::Rejected));
        // rejected stays rejected
        let robot = crate::geom::Pose::new(o.position - o.direction, PI / 2.0);
        assert_eq!(reg.try_confirm(ids[0], &m, &robot, &CameraModel::default(), &p), Some(ObjectStatus::Rejected));
    }

    #[test]
    fn door_plane_splits_regions() {
        let p = DoorParams::default();
        let m = wall_map(8, 26);
        let mut reg = SemanticRegistry::new();
        let ids = reg.add_candidates(detect_doors(&m, &cluster_at(&m, Vec3::new(3.0, 2.7, 1.0)), &p), p.dedupe);
        let start = Vec3::new(3.0, 1.0, 1.0);
        let room = FrontierCluster::from_cells(1, vec![m.voxel_of(&Vec3::new(3.0, 3.0, 1.0))], &m);
        let reach = reachable_region(&m, &start, &reg);
        assert_eq!(classify_frontier(&room, true, &m, &reach), FrontierLabel::Room);
        assert_eq!(classify_frontier(&room, false, &m, &reach), FrontierLabel::Corridor);
        let o = *reg.get(ids[0]).unwrap();
        let robot = crate::geom::Pose::new(o.position - o.direction, PI / 2.0);
        reg.try_confirm(ids[0], &m, &robot, &CameraModel::default(), &p);
        let reach = reachable_region(&m, &start, &reg);
        assert_eq!(classify_frontier(&room, true, &m, &reach), FrontierLabel::Corridor);
    }

    #[test]
    fn hough_finds_straight_line() {
        let mut img = Image::new(30, 30);
        for x in 3..25 {
            img.set(x, 10, true);
        }
        let segs = hough_segments(&img, 8, 10, 2);
        assert_eq!(segs.len(), 1);
        let s = segs[0];
        assert!((s.len() - 21.0).abs() < 1e-9, "{s:?}");
    }
}
