//! Planar navigation on one horizontal flight layer of the voxel map.
//!
//! A point is clear when every voxel within the robot radius of it (a
//! vertical cylinder of that radius and half-height) is known free. Clear
//! cell centres form the traversable grid; the convex hull of any
//! axis-aligned square of clear centres is itself clear, which is what lets
//! corridor boxes be grown cell by cell.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geom::Vec3;
use crate::voxel_map::{Trinary, VoxelMap};

pub type Cell = [i32; 2];

const MOVES: [(i32, i32); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// True if every voxel whose box lies closer than `r` horizontally and
/// vertically to `p` is known free, and `p` is inside the map.
pub fn is_clear(map: &VoxelMap, p: &Vec3, r: f64) -> bool {
    if !map.contains_point(p) {
        return false;
    }
    let res = map.resolution();
    let o = map.origin();
    let lo = map.voxel_of(&(p - Vec3::new(r, r, r)));
    let hi = map.voxel_of(&(p + Vec3::new(r, r, r)));
    for z in lo[2]..=hi[2] {
        let dz = axis_gap(p.z - o.z, z, res);
        if dz >= r {
            continue;
        }
        for y in lo[1]..=hi[1] {
            let dy = axis_gap(p.y - o.y, y, res);
            for x in lo[0]..=hi[0] {
                let dx = axis_gap(p.x - o.x, x, res);
                if dx * dx + dy * dy < r * r && map.state([x, y, z]) != Some(Trinary::Free) {
                    return false;
                }
            }
        }
    }
    true
}

/// Distance from coordinate `q` to the interval of voxel `i`.
#[inline]
fn axis_gap(q: f64, i: i32, res: f64) -> f64 {
    let lo = i as f64 * res;
    (lo - q).max(q - lo - res).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Debug, Clone)]
pub struct NavGrid {
    origin: Vec3,
    res: f64,
    nx: usize,
    ny: usize,
    /// Height of the flight layer (voxel centre).
    pub z: f64,
    pub radius: f64,
    /// Column has a non-free voxel within the radius of the layer.
    blocked: Vec<bool>,
    traversable: Vec<bool>,
}

impl NavGrid {
    /// Builds the grid for the layer containing `height` above the map floor.
    pub fn build(map: &VoxelMap, height: f64, radius: f64) -> Self {
        let [nx, ny, nz] = map.dims();
        let res = map.resolution();
        let origin = map.origin();
        let layer = ((height / res).floor() as i32).clamp(0, nz as i32 - 1);
        let z = origin.z + (layer as f64 + 0.5) * res;
        let mut blocked = vec![false; nx * ny];
        for zi in 0..nz as i32 {
            if axis_gap(z - origin.z, zi, res) >= radius {
                continue;
            }
            for y in 0..ny as i32 {
                for x in 0..nx as i32 {
                    if map.state([x, y, zi]) != Some(Trinary::Free) {
                        blocked[x as usize + nx * y as usize] = true;
                    }
                }
            }
        }
        let mut g = Self { origin, res, nx, ny, z, radius, blocked, traversable: vec![false; nx * ny] };
        let trav: Vec<bool> = (0..nx * ny)
            .map(|i| {
                let c = [(i % nx) as i32, (i / nx) as i32];
                g.point_clear(&g.center(c))
            })
            .collect();
        g.traversable = trav;
        g
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.nx, self.ny]
    }

    pub fn resolution(&self) -> f64 {
        self.res
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c[0] >= 0 && c[1] >= 0 && (c[0] as usize) < self.nx && (c[1] as usize) < self.ny
    }

    #[inline]
    pub fn index(&self, c: Cell) -> usize {
        c[0] as usize + self.nx * c[1] as usize
    }

    pub fn cell_at(&self, i: usize) -> Cell {
        [(i % self.nx) as i32, (i / self.nx) as i32]
    }

    /// Cell containing the horizontal position of `p`.
    pub fn cell_of(&self, p: &Vec3) -> Cell {
        [((p.x - self.origin.x) / self.res).floor() as i32, ((p.y - self.origin.y) / self.res).floor() as i32]
    }

    pub fn center(&self, c: Cell) -> Vec3 {
        Vec3::new(
            self.origin.x + (c[0] as f64 + 0.5) * self.res,
            self.origin.y + (c[1] as f64 + 0.5) * self.res,
            self.z,
        )
    }

    /// Column has a non-free voxel near the flight layer.
    pub fn column_blocked(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.blocked[self.index(c)]
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn is_traversable(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.traversable[self.index(c)]
    }

    pub fn traversable_count(&self) -> usize {
        self.traversable.iter().filter(|&&t| t).count()
    }

    /// Continuous clearance test of a point on the layer.
    pub fn point_clear(&self, p: &Vec3) -> bool {
        let r = self.radius;
        let qx = p.x - self.origin.x;
        let qy = p.y - self.origin.y;
        if qx < 0.0 || qy < 0.0 || qx >= self.nx as f64 * self.res || qy >= self.ny as f64 * self.res {
            return false;
        }
        let x0 = ((qx - r) / self.res).floor() as i32;
        let x1 = ((qx + r) / self.res).floor() as i32;
        let y0 = ((qy - r) / self.res).floor() as i32;
        let y1 = ((qy + r) / self.res).floor() as i32;
        for y in y0..=y1 {
            let dy = axis_gap(qy, y, self.res);
            for x in x0..=x1 {
                let dx = axis_gap(qx, x, self.res);
                if dx * dx + dy * dy >= r * r {
                    continue;
                }
                if !self.in_bounds([x, y]) || self.blocked[self.index([x, y])] {
                    return false;
                }
            }
        }
        true
    }

    /// Samples the segment every fifth of a cell.
    pub fn segment_clear(&self, a: &Vec3, b: &Vec3) -> bool {
        let d = b - a;
        let len = (d.x * d.x + d.y * d.y).sqrt();
        let n = (len / (self.res / 5.0)).ceil().max(1.0) as usize;
        (0..=n).all(|i| self.point_clear(&(a + d * (i as f64 / n as f64))))
    }

    fn neighbours(&self, c: Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
        MOVES.iter().filter_map(move |&(dx, dy)| {
            let n = [c[0] + dx, c[1] + dy];
            if !self.is_traversable(n) {
                return None;
            }
            if dx != 0 && dy != 0 && !(self.is_traversable([c[0] + dx, c[1]]) && self.is_traversable([c[0], c[1] + dy])) {
                return None;
            }
            let cost = if dx != 0 && dy != 0 { self.res * std::f64::consts::SQRT_2 } else { self.res };
            Some((n, cost))
        })
    }

    /// Shortest path lengths from `start` to every cell; unreachable cells
    /// hold infinity.
    pub fn distance_field(&self, start: Cell) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.nx * self.ny];
        if !self.is_traversable(start) {
            return dist;
        }
        let s = self.index(start);
        dist[s] = 0.0;
        let mut heap = BinaryHeap::from([Entry(0.0, s)]);
        while let Some(Entry(d, i)) = heap.pop() {
            if d > dist[i] {
                continue;
            }
            for (n, w) in self.neighbours(self.cell_at(i)) {
                let j = self.index(n);
                let nd = d + w;
                if nd < dist[j] {
                    dist[j] = nd;
                    heap.push(Entry(nd, j));
                }
            }
        }
        dist
    }

    /// A* over the same graph as [`Self::distance_field`].
    pub fn astar(&self, start: Cell, goal: Cell) -> Option<Vec<Cell>> {
        if !self.is_traversable(start) || !self.is_traversable(goal) {
            return None;
        }
        let h = |c: Cell| {
            let dx = (c[0] - goal[0]).abs() as f64;
            let dy = (c[1] - goal[1]).abs() as f64;
            self.res * (dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy))
        };
        let n = self.nx * self.ny;
        let mut g = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let s = self.index(start);
        let t = self.index(goal);
        g[s] = 0.0;
        let mut heap = BinaryHeap::from([Entry(h(start), s)]);
        while let Some(Entry(f, i)) = heap.pop() {
            if i == t {
                break;
            }
            let c = self.cell_at(i);
            if f > g[i] + h(c) + 1e-9 {
                continue;
            }
            for (nb, w) in self.neighbours(c) {
                let j = self.index(nb);
                let ng = g[i] + w;
                if ng < g[j] - 1e-12 {
                    g[j] = ng;
                    parent[j] = i;
                    heap.push(Entry(ng + h(nb), j));
                }
            }
        }
        if !g[t].is_finite() {
            return None;
        }
        let mut path = vec![goal];
        let mut i = t;
        while i != s {
            i = parent[i];
            path.push(self.cell_at(i));
        }
        path.reverse();
        Some(path)
    }

    /// Traversable cell nearest to `p` within `max_dist`, by centre distance.
    pub fn nearest_traversable(&self, p: &Vec3, max_dist: f64) -> Option<Cell> {
        let c = self.cell_of(p);
        if self.is_traversable(c) {
            return Some(c);
        }
        let k = (max_dist / self.res).ceil() as i32;
        let mut best: Option<(f64, Cell)> = None;
        for dy in -k..=k {
            for dx in -k..=k {
                let n = [c[0] + dx, c[1] + dy];
                if !self.is_traversable(n) {
                    continue;
                }
                let q = self.center(n);
                let d = ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt();
                if d <= max_dist && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, n));
                }
            }
        }
        best.map(|b| b.1)
    }

    /// Greedy line-of-sight shortcutting of a cell path.
    pub fn shortcut(&self, path: &[Cell]) -> Vec<Vec3> {
        if path.is_empty() {
            return Vec::new();
        }
        let pts: Vec<Vec3> = path.iter().map(|&c| self.center(c)).collect();
        let mut out = vec![pts[0]];
        let mut i = 0;
        while i + 1 < pts.len() {
            let mut j = pts.len() - 1;
            while j > i + 1 && !self.segment_clear(&pts[i], &pts[j]) {
                j -= 1;
            }
            out.push(pts[j]);
            i = j;
        }
        out
    }
}
