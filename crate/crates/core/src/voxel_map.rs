//! Log-odds occupancy grid: the robot's belief about the world.
//!
//! Voxels are stored in x-fastest order. Each voxel holds a clamped log-odds
//! value that is cut into `{-1, 0, 1}` (unknown, free, occupied) by two
//! thresholds. Rays are integrated with an exact voxel walk so every voxel a
//! segment passes through is visited exactly once.

use thiserror::Error;

use crate::block::{OccupancyBlock, BLOCK_DIMS, BLOCK_RESOLUTION};
use crate::geom::{Vec3, Voxel};

/// Stored values stay this far inside the clamp interval.
pub const CLAMP_EPS: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i8)]
pub enum Trinary {
    Unknown = -1,
    Free = 0,
    Occupied = 1,
}

impl Trinary {
    pub fn as_i8(self) -> i8 {
        self as i8
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Trinary::Unknown),
            0 => Some(Trinary::Free),
            1 => Some(Trinary::Occupied),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("sensor outside map")]
    SensorOutsideMap,
    #[error("invalid map dimensions {0:?}")]
    BadDims([usize; 3]),
}

/// Inclusive voxel-index box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Aabb {
    pub min: Voxel,
    pub max: Voxel,
}

impl Aabb {
    pub fn new(min: Voxel, max: Voxel) -> Self {
        assert!((0..3).all(|i| min[i] <= max[i]), "Aabb min {min:?} > max {max:?}");
        Self { min, max }
    }

    pub fn point(v: Voxel) -> Self {
        Self { min: v, max: v }
    }

    pub fn extend(&mut self, v: Voxel) {
        for i in 0..3 {
            self.min[i] = self.min[i].min(v[i]);
            self.max[i] = self.max[i].max(v[i]);
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut r = *self;
        r.extend(other.min);
        r.extend(other.max);
        r
    }

    pub fn dilate(&self, n: i32) -> Aabb {
        Aabb {
            min: [self.min[0] - n, self.min[1] - n, self.min[2] - n],
            max: [self.max[0] + n, self.max[1] + n, self.max[2] + n],
        }
    }

    pub fn contains(&self, v: Voxel) -> bool {
        (0..3).all(|i| v[i] >= self.min[i] && v[i] <= self.max[i])
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= o.max[i] && o.min[i] <= self.max[i])
    }

    /// Intersection with `[0, dims)`; `None` if disjoint.
    pub fn clip(&self, dims: [usize; 3]) -> Option<Aabb> {
        let mut r = *self;
        for i in 0..3 {
            r.min[i] = r.min[i].max(0);
            r.max[i] = r.max[i].min(dims[i] as i32 - 1);
            if r.min[i] > r.max[i] {
                return None;
            }
        }
        Some(r)
    }

    pub fn volume(&self) -> usize {
        (0..3).map(|i| (self.max[i] - self.min[i] + 1) as usize).product()
    }

    pub fn voxels(&self) -> impl Iterator<Item = Voxel> + '_ {
        let b = *self;
        (b.min[2]..=b.max[2]).flat_map(move |z| {
            (b.min[1]..=b.max[1]).flat_map(move |y| (b.min[0]..=b.max[0]).map(move |x| [x, y, z]))
        })
    }
}

/// Sensor inverse model and trinary cut levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapParams {
    pub hit_logodds: f32,
    pub miss_logodds: f32,
    pub clamp_min: f32,
    pub clamp_max: f32,
    pub occ_threshold: f32,
    pub free_threshold: f32,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            hit_logodds: 0.85,
            miss_logodds: -0.4,
            clamp_min: -2.0,
            clamp_max: 3.5,
            occ_threshold: 0.5,
            free_threshold: -0.5,
        }
    }
}

impl MapParams {
    pub fn trinary(&self, l: f32) -> Trinary {
        if l >= self.occ_threshold {
            Trinary::Occupied
        } else if l <= self.free_threshold {
            Trinary::Free
        } else {
            Trinary::Unknown
        }
    }

    fn clamp(&self, l: f32) -> f32 {
        l.clamp(self.clamp_min + CLAMP_EPS, self.clamp_max - CLAMP_EPS)
    }
}

/// A single depth-camera return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayEndpoint {
    pub point: Vec3,
    pub hit: bool,
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    origin: Vec3,
    resolution: f64,
    dims: [usize; 3],
    logodds: Vec<f32>,
    params: MapParams,
}

impl VoxelMap {
    pub fn new(origin: Vec3, resolution: f64, dims: [usize; 3], params: MapParams) -> Result<Self, MapError> {
        if dims.iter().any(|&d| d == 0 || d > i32::MAX as usize / 4) || resolution <= 0.0 {
            return Err(MapError::BadDims(dims));
        }
        Ok(Self {
            origin,
            resolution,
            dims,
            logodds: vec![0.0; dims.iter().product()],
            params,
        })
    }

    /// Map covering the metric box `[min, max)`.
    pub fn with_extent(min: Vec3, max: Vec3, resolution: f64, params: MapParams) -> Result<Self, MapError> {
        let size = max - min;
        let dims = [
            (size.x / resolution).round().max(0.0) as usize,
            (size.y / resolution).round().max(0.0) as usize,
            (size.z / resolution).round().max(0.0) as usize,
        ];
        Self::new(min, resolution, dims, params)
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn params(&self) -> &MapParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.logodds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logodds.is_empty()
    }

    /// Metric max corner.
    pub fn extent_max(&self) -> Vec3 {
        self.origin + Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.resolution
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::new([0, 0, 0], [self.dims[0] as i32 - 1, self.dims[1] as i32 - 1, self.dims[2] as i32 - 1])
    }

    #[inline]
    pub fn voxel_of(&self, p: &Vec3) -> Voxel {
        let q = (p - self.origin) / self.resolution;
        [q.x.floor() as i32, q.y.floor() as i32, q.z.floor() as i32]
    }

    #[inline]
    pub fn center_of(&self, v: Voxel) -> Vec3 {
        self.origin + Vec3::new(v[0] as f64 + 0.5, v[1] as f64 + 0.5, v[2] as f64 + 0.5) * self.resolution
    }

    #[inline]
    pub fn in_bounds(&self, v: Voxel) -> bool {
        (0..3).all(|i| v[i] >= 0 && (v[i] as usize) < self.dims[i])
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        self.in_bounds(self.voxel_of(p))
    }

    /// Linear index; caller guarantees `in_bounds(v)`.
    #[inline]
    pub fn index(&self, v: Voxel) -> usize {
        v[0] as usize + self.dims[0] * (v[1] as usize + self.dims[1] * v[2] as usize)
    }

    #[inline]
    pub fn voxel_at(&self, i: usize) -> Voxel {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        [x as i32, y as i32, z as i32]
    }

    pub fn logodds(&self, v: Voxel) -> Option<f32> {
        self.in_bounds(v).then(|| self.logodds[self.index(v)])
    }

    /// Trinary state; `None` outside the map.
    #[inline]
    pub fn state(&self, v: Voxel) -> Option<Trinary> {
        if self.in_bounds(v) {
            Some(self.params.trinary(self.logodds[self.index(v)]))
        } else {
            None
        }
    }

    #[inline]
    pub fn state_at(&self, i: usize) -> Trinary {
        self.params.trinary(self.logodds[i])
    }

    pub fn is_free(&self, v: Voxel) -> bool {
        self.state(v) == Some(Trinary::Free)
    }

    /// Overwrites a voxel's belief (clamped). Used for fixtures and for the
    /// take-off bubble.
    pub fn set_logodds(&mut self, v: Voxel, l: f32) {
        if self.in_bounds(v) {
            let i = self.index(v);
            self.logodds[i] = self.params.clamp(l);
        }
    }

    /// Sets a voxel to a saturated belief matching `t`.
    pub fn set_state(&mut self, v: Voxel, t: Trinary) {
        let l = match t {
            Trinary::Unknown => 0.0,
            Trinary::Free => self.params.clamp_min,
            Trinary::Occupied => self.params.clamp_max,
        };
        self.set_logodds(v, l);
    }

    /// Whole-map trinary snapshot in x-fastest order.
    pub fn trinary_snapshot(&self) -> Vec<i8> {
        self.logodds.iter().map(|&l| self.params.trinary(l).as_i8()).collect()
    }

    /// Lazily walks the voxels crossed by the segment `start -> end`.
    pub fn walk(&self, start: &Vec3, end: &Vec3) -> VoxelWalk {
        VoxelWalk::new(self, start, end)
    }

    /// Ordered voxels crossed by the segment, clipped at the map boundary.
    pub fn traverse(&self, start: &Vec3, end: &Vec3) -> Vec<Voxel> {
        self.walk(start, end).collect()
    }

    /// Integrates one scan. Voxels crossed before an endpoint get a miss;
    /// hit endpoints get a hit. Each voxel is updated at most once per scan
    /// and a hit wins over a miss. Returns the tight box of voxels whose
    /// stored value changed.
    pub fn integrate_scan(&mut self, sensor: &Vec3, rays: &[RayEndpoint]) -> Result<Option<Aabb>, MapError> {
        let sv = self.voxel_of(sensor);
        if !self.in_bounds(sv) {
            return Err(MapError::SensorOutsideMap);
        }
        // per voxel: 1 = crossed, 2 = hit endpoint
        let mut mark = vec![0u8; self.len()];
        let mut seen = Vec::new();
        for ray in rays {
            let end_voxel = self.voxel_of(&ray.point);
            for v in self.walk(sensor, &ray.point) {
                let i = self.index(v);
                let m = if ray.hit && v == end_voxel { 2 } else { 1 };
                if mark[i] == 0 {
                    seen.push(i);
                }
                mark[i] = mark[i].max(m);
            }
        }

        let mut changed: Option<Aabb> = None;
        let (hit, miss) = (self.params.hit_logodds, self.params.miss_logodds);
        for i in seen {
            let old = self.logodds[i];
            let new = self.params.clamp(old + if mark[i] == 2 { hit } else { miss });
            if new != old {
                self.logodds[i] = new;
                let v = self.voxel_at(i);
                match changed.as_mut() {
                    Some(b) => b.extend(v),
                    None => changed = Some(Aabb::point(v)),
                }
            }
        }
        Ok(changed)
    }

    /// Crops an 8 m x 8 m x 2.4 m trinary block centred horizontally on
    /// `center`, with its bottom on the map's ground plane. Cells outside the
    /// map are unknown.
    pub fn extract_block(&self, center: &Vec3) -> OccupancyBlock {
        self.extract_block_with_dims(center, BLOCK_DIMS)
    }

    pub fn extract_block_with_dims(&self, center: &Vec3, dims: [usize; 3]) -> OccupancyBlock {
        let res = BLOCK_RESOLUTION;
        let half = Vec3::new(dims[0] as f64 * res / 2.0, dims[1] as f64 * res / 2.0, 0.0);
        let mut corner = center - half;
        corner.z = self.origin.z;
        // snap onto the map lattice so block voxels coincide with map voxels
        for i in 0..2 {
            let k = ((corner[i] - self.origin[i]) / self.resolution).round();
            corner[i] = self.origin[i] + k * self.resolution;
        }
        let mut block = OccupancyBlock::unknown(dims);
        block.origin = corner;
        block.resolution = res;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let c = block.center(x, y, z);
                    if let Some(t) = self.state(self.voxel_of(&c)) {
                        block.set(x, y, z, t.as_i8());
                    }
                }
            }
        }
        block
    }
}

/// Amanatides-Woo voxel walk in map index space.
pub struct VoxelWalk {
    current: Voxel,
    step: [i32; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    dims: [usize; 3],
    done: bool,
}

impl VoxelWalk {
    fn new(map: &VoxelMap, start: &Vec3, end: &Vec3) -> Self {
        let p0 = (start - map.origin) / map.resolution;
        let p1 = (end - map.origin) / map.resolution;
        let d = p1 - p0;
        let current = [p0.x.floor() as i32, p0.y.floor() as i32, p0.z.floor() as i32];
        let mut step = [0; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for i in 0..3 {
            if d[i] > 0.0 {
                step[i] = 1;
                t_delta[i] = 1.0 / d[i];
                t_max[i] = ((current[i] + 1) as f64 - p0[i]) / d[i];
            } else if d[i] < 0.0 {
                step[i] = -1;
                t_delta[i] = -1.0 / d[i];
                t_max[i] = (current[i] as f64 - p0[i]) / d[i];
            }
        }
        let in_bounds = map.in_bounds(current);
        Self {
            current,
            step,
            t_max,
            t_delta,
            dims: map.dims,
            done: !in_bounds,
        }
    }

    #[inline]
    fn in_bounds(&self, v: Voxel) -> bool {
        (0..3).all(|i| v[i] >= 0 && (v[i] as usize) < self.dims[i])
    }
}

impl Iterator for VoxelWalk {
    type Item = Voxel;

    #[inline]
    fn next(&mut self) -> Option<Voxel> {
        if self.done {
            return None;
        }
        let out = self.current;
        let axis = if self.t_max[0] < self.t_max[1] {
            if self.t_max[0] < self.t_max[2] { 0 } else { 2 }
        } else if self.t_max[1] < self.t_max[2] {
            1
        } else {
            2
        };
        if self.t_max[axis] > 1.0 {
            self.done = true;
        } else {
            self.current[axis] += self.step[axis];
            self.t_max[axis] += self.t_delta[axis];
            if !self.in_bounds(self.current) {
                self.done = true;
            }
        }
        Some(out)
    }
}
