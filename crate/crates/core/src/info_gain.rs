//! Information gain along rays and two-stage viewpoint sampling.
//!
//! Viewpoint yaws are evaluated with a sliding window: the sweep around the
//! direction to the cluster is cut into narrow slices whose gains are cast
//! once, and each yaw's gain is the sum over the slices inside its field of
//! view. The slice grid is aligned with the camera's column grid so the sum
//! is exactly what casting every yaw separately would give.

use thiserror::Error;

use crate::frontier::FrontierCluster;
use crate::geom::{ray_direction, wrap_angle, Vec3, Voxel};
use crate::nav;
use crate::occ_predict::PredictedBlock;
use crate::sim_world::{CameraModel, ROBOT_RADIUS};
use crate::voxel_map::{Trinary, VoxelMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewpoint {
    pub position: Vec3,
    /// Wrapped to (-pi, pi].
    pub yaw: f64,
    pub gain: usize,
}

/// Resolves a map voxel to its predicted trinary state, if any block
/// predicted it.
pub trait PredLookup {
    fn lookup(&self, v: Voxel) -> Option<Trinary>;
}

/// No predicted blocks at all.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoPrediction;

impl PredLookup for NoPrediction {
    fn lookup(&self, _v: Voxel) -> Option<Trinary> {
        None
    }
}

const NOT_PREDICTED: i8 = i8::MIN;

/// Map-sized layer holding the latest prediction for each voxel. Inserting a
/// block overwrites the voxels it predicts, so overlaps resolve to the most
/// recent block.
#[derive(Debug, Clone)]
pub struct PredictionMap {
    dims: [usize; 3],
    values: Vec<i8>,
}

impl PredictionMap {
    pub fn new(map: &VoxelMap) -> Self {
        Self { dims: map.dims(), values: vec![NOT_PREDICTED; map.len()] }
    }

    pub fn clear(&mut self) {
        self.values.fill(NOT_PREDICTED);
    }

    pub fn predicted_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != NOT_PREDICTED).count()
    }

    pub fn insert(&mut self, map: &VoxelMap, pred: &PredictedBlock) {
        assert_eq!(map.dims(), self.dims);
        let [nx, ny, nz] = pred.dims();
        let res = pred.resolution;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = x + nx * (y + ny * z);
                    let Some(t) = pred.trinary(i) else { continue };
                    let c = pred.origin + Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * res;
                    let v = map.voxel_of(&c);
                    if map.in_bounds(v) {
                        self.values[map.index(v)] = t;
                    }
                }
            }
        }
    }

    fn value(&self, v: Voxel) -> Option<i8> {
        let inb = (0..3).all(|i| v[i] >= 0 && (v[i] as usize) < self.dims[i]);
        if !inb {
            return None;
        }
        let i = v[0] as usize + self.dims[0] * (v[1] as usize + self.dims[1] * v[2] as usize);
        let val = self.values[i];
        (val != NOT_PREDICTED).then_some(val)
    }
}

impl PredLookup for PredictionMap {
    fn lookup(&self, v: Voxel) -> Option<Trinary> {
        self.value(v).and_then(Trinary::from_i8)
    }
}

/// Counts unknown voxels a ray would observe, letting predicted-occupied
/// voxels end the ray after being counted.
pub fn predicted_gain_ray<P: PredLookup + ?Sized>(map: &VoxelMap, pred: &P, start: &Vec3, end: &Vec3) -> usize {
    let mut gain = 0;
    for vox in map.walk(start, end) {
        match map.state(vox) {
            None | Some(Trinary::Occupied) => break,
            Some(Trinary::Free) => {}
            Some(Trinary::Unknown) => {
                let Some(pred_vox) = pred.lookup(vox) else {
                    gain += 1;
                    continue;
                };
                if pred_vox == Trinary::Unknown {
                    gain += 1;
                } else if pred_vox == Trinary::Occupied {
                    gain += 1;
                    break;
                } else {
                    gain += 1;
                }
            }
        }
    }
    gain
}

/// Counts unknown voxels until the ray meets a known-occupied voxel or
/// leaves the map.
pub fn classical_gain_ray(map: &VoxelMap, start: &Vec3, end: &Vec3) -> usize {
    map.traverse(start, end)
        .into_iter()
        .map(|v| map.state(v))
        .take_while(|s| matches!(s, Some(Trinary::Free) | Some(Trinary::Unknown)))
        .filter(|s| *s == Some(Trinary::Unknown))
        .count()
}

/// Ground-truth gain: voxels along the ray, up to the first truly occupied
/// one, whose belief is unknown.
pub fn true_gain_ray(map: &VoxelMap, truth: &crate::sim_world::GroundTruth, start: &Vec3, end: &Vec3) -> usize {
    let mut gain = 0;
    for v in map.walk(start, end) {
        let unknown = map.state(v) == Some(Trinary::Unknown);
        gain += unknown as usize;
        if truth.occupied(v).unwrap_or(true) {
            break;
        }
    }
    gain
}

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("sampler parameter out of range: {0}")]
    BadParam(&'static str),
    #[error("{0} is not a whole multiple of {1}")]
    Misaligned(&'static str, &'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerParams {
    pub radii: Vec<f64>,
    /// Spacing of candidate positions around the cluster (rad).
    pub angle_step: f64,
    /// Heights above the map floor (m).
    pub heights: Vec<f64>,
    /// Yaw candidates per position, centred on the direction to the cluster.
    pub yaw_count: usize,
    pub yaw_spacing: f64,
    pub slice_width: f64,
    pub ray_stride: usize,
    pub n_vp: usize,
    pub clearance: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            radii: vec![1.0, 1.5, 2.0],
            angle_step: 20f64.to_radians(),
            heights: vec![1.0],
            yaw_count: 9,
            yaw_spacing: 20f64.to_radians(),
            slice_width: 10f64.to_radians(),
            ray_stride: 2,
            n_vp: 8,
            clearance: ROBOT_RADIUS,
        }
    }
}

fn whole_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let n = r.round();
    ((r - n).abs() < 1e-6 && n >= 1.0).then_some(n as usize)
}

/// Precomputed geometry of the slice grid for one camera.
#[derive(Debug, Clone)]
pub struct ViewSampler {
    pub params: SamplerParams,
    pub camera: CameraModel,
    elevations: Vec<f64>,
    /// Strided columns per camera image.
    cols_per_view: usize,
    /// Strided columns between neighbouring yaws.
    cols_per_yaw: usize,
    cols_per_slice: usize,
    total_cols: usize,
}

impl ViewSampler {
    pub fn new(params: SamplerParams, camera: CameraModel) -> Result<Self, SamplerError> {
        if params.radii.is_empty() || params.radii.iter().any(|&r| r <= 0.0) {
            return Err(SamplerError::BadParam("radii"));
        }
        if params.heights.is_empty() || params.heights.iter().any(|&h| h <= 0.0) {
            return Err(SamplerError::BadParam("heights"));
        }
        if params.angle_step <= 0.0 {
            return Err(SamplerError::BadParam("angle_step"));
        }
        if params.yaw_count == 0 {
            return Err(SamplerError::BadParam("yaw_count"));
        }
        if params.n_vp == 0 {
            return Err(SamplerError::BadParam("n_vp"));
        }
        if params.ray_stride == 0 || camera.cols % params.ray_stride != 0 {
            return Err(SamplerError::Misaligned("camera columns", "ray stride"));
        }
        if !camera.is_valid() {
            return Err(SamplerError::BadParam("camera"));
        }
        let col = camera.col_spacing() * params.ray_stride as f64;
        let cols_per_view = camera.cols / params.ray_stride;
        let cols_per_slice = whole_ratio(params.slice_width, col).ok_or(SamplerError::Misaligned("slice width", "column spacing"))?;
        let cols_per_yaw = if params.yaw_count > 1 {
            whole_ratio(params.yaw_spacing, col).ok_or(SamplerError::Misaligned("yaw spacing", "column spacing"))?
        } else {
            cols_per_slice
        };
        if cols_per_yaw % cols_per_slice != 0 {
            return Err(SamplerError::Misaligned("yaw spacing", "slice width"));
        }
        if cols_per_view % cols_per_slice != 0 {
            return Err(SamplerError::Misaligned("field of view", "slice width"));
        }
        let total_cols = (params.yaw_count - 1) * cols_per_yaw + cols_per_view;
        Ok(Self {
            elevations: camera.elevations(params.ray_stride),
            params,
            camera,
            cols_per_view,
            cols_per_yaw,
            cols_per_slice,
            total_cols,
        })
    }

    pub fn slice_count(&self) -> usize {
        self.total_cols / self.cols_per_slice
    }

    pub fn rays_per_view(&self) -> usize {
        self.cols_per_view * self.elevations.len()
    }

    /// Yaw offset of candidate `k` from the centre direction.
    pub fn yaw_offset(&self, k: usize) -> f64 {
        let half = 2 * (k * self.cols_per_yaw) as i64 - ((self.params.yaw_count - 1) * self.cols_per_yaw) as i64;
        half as f64 * self.strided_spacing() / 2.0
    }

    fn strided_spacing(&self) -> f64 {
        self.camera.col_spacing() * self.params.ray_stride as f64
    }

    /// Azimuth offset of global strided column `j` from the centre
    /// direction. Computed from integers so every yaw that sees the column
    /// gets a bit-identical ray.
    fn column_offset(&self, j: usize) -> f64 {
        let sp = self.camera.col_spacing();
        let s = self.params.ray_stride as i64;
        let span = ((self.params.yaw_count - 1) * self.cols_per_yaw) as i64;
        let h = 2 * s * j as i64 - s * span + 1 - self.camera.cols as i64;
        h as f64 * sp / 2.0
    }

    fn cast_column<P: PredLookup + ?Sized>(&self, map: &VoxelMap, pred: &P, p: &Vec3, azimuth: f64) -> usize {
        self.elevations
            .iter()
            .map(|&el| {
                let end = p + ray_direction(azimuth, el) * self.camera.max_range;
                predicted_gain_ray(map, pred, p, &end)
            })
            .sum()
    }

    /// Gain of every slice of the sweep centred on `centre_yaw`.
    pub fn slice_gains<P: PredLookup + ?Sized>(&self, map: &VoxelMap, pred: &P, p: &Vec3, centre_yaw: f64) -> Vec<usize> {
        (0..self.slice_count())
            .map(|s| {
                (s * self.cols_per_slice..(s + 1) * self.cols_per_slice)
                    .map(|j| self.cast_column(map, pred, p, centre_yaw + self.column_offset(j)))
                    .sum()
            })
            .collect()
    }

    /// Windowed gain for each yaw candidate.
    pub fn window_gains(&self, slices: &[usize]) -> Vec<usize> {
        let per_window = self.cols_per_view / self.cols_per_slice;
        let shift = self.cols_per_yaw / self.cols_per_slice;
        let mut out = Vec::with_capacity(self.params.yaw_count);
        let mut sum: usize = slices[..per_window].iter().sum();
        out.push(sum);
        for k in 1..self.params.yaw_count {
            let a = (k - 1) * shift;
            let b = k * shift;
            sum -= slices[a..b].iter().sum::<usize>();
            sum += slices[a + per_window..b + per_window].iter().sum::<usize>();
            out.push(sum);
        }
        out
    }

    /// Casts every ray of yaw candidate `k` directly, with no slice sharing.
    pub fn direct_yaw_gain<P: PredLookup + ?Sized>(&self, map: &VoxelMap, pred: &P, p: &Vec3, centre_yaw: f64, k: usize) -> usize {
        let first = k * self.cols_per_yaw;
        (first..first + self.cols_per_view)
            .map(|j| self.cast_column(map, pred, p, centre_yaw + self.column_offset(j)))
            .sum()
    }

    /// Best yaw and its gain at `p`; ties go to the yaw nearest the centre.
    pub fn best_yaw<P: PredLookup + ?Sized>(&self, map: &VoxelMap, pred: &P, p: &Vec3, centre_yaw: f64) -> (f64, usize) {
        let gains = self.window_gains(&self.slice_gains(map, pred, p, centre_yaw));
        let mid = (self.params.yaw_count - 1) as i64;
        let k = (0..gains.len())
            .max_by_key(|&k| (gains[k], -(2 * k as i64 - mid).abs(), std::cmp::Reverse(k)))
            .unwrap();
        (wrap_angle(centre_yaw + self.yaw_offset(k)), gains[k])
    }

    /// Candidate positions on cylindrical shells around the cluster centroid
    /// that are known free with clearance, snapped to voxel centres.
    pub fn candidate_positions(&self, cluster: &FrontierCluster, map: &VoxelMap) -> Vec<Vec3> {
        let c = cluster.centroid;
        let n_ang = (std::f64::consts::TAU / self.params.angle_step).round().max(1.0) as usize;
        let mut out = Vec::new();
        for &h in &self.params.heights {
            for &r in &self.params.radii {
                for a in 0..n_ang {
                    let ang = a as f64 * self.params.angle_step;
                    let raw = Vec3::new(c.x + r * ang.cos(), c.y + r * ang.sin(), map.origin().z + h);
                    if !map.contains_point(&raw) {
                        continue;
                    }
                    let p = map.center_of(map.voxel_of(&raw));
                    if nav::is_clear(map, &p, self.params.clearance) && !out.contains(&p) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    /// Viewpoints with positive gain, sorted by decreasing gain and truncated
    /// to `n_vp`.
    pub fn sample_viewpoints<P: PredLookup + ?Sized>(&self, cluster: &FrontierCluster, map: &VoxelMap, pred: &P) -> Vec<Viewpoint> {
        let mut vps: Vec<Viewpoint> = self
            .candidate_positions(cluster, map)
            .into_iter()
            .filter_map(|p| {
                let d = cluster.centroid - p;
                let centre = d.y.atan2(d.x);
                let (yaw, gain) = self.best_yaw(map, pred, &p, centre);
                (gain > 0).then_some(Viewpoint { position: p, yaw, gain })
            })
            .collect();
        vps.sort_by(|a, b| b.gain.cmp(&a.gain));
        vps.truncate(self.params.n_vp);
        vps
    }

    /// Gain of a full camera view at an arbitrary pose.
    pub fn view_gain<P: PredLookup + ?Sized>(&self, map: &VoxelMap, pred: &P, p: &Vec3, yaw: f64) -> usize {
        self.camera
            .ray_directions(yaw, self.params.ray_stride)
            .into_iter()
            .map(|d| predicted_gain_ray(map, pred, p, &(p + d * self.camera.max_range)))
            .sum()
    }

    /// Per-slice gains over the full circle around `p` for yaw planning:
    /// `slices[i]` covers azimuths `[i, i+1) * slice_width`.
    pub fn circle_slices<P: PredLookup + ?Sized>(&self, map: &VoxelMap, pred: &P, p: &Vec3) -> Vec<usize> {
        let n = (std::f64::consts::TAU / self.params.slice_width).round() as usize;
        let per = self.cols_per_slice;
        let col = self.strided_spacing();
        (0..n)
            .map(|s| {
                (0..per)
                    .map(|j| {
                        let az = s as f64 * self.params.slice_width + (j as f64 + 0.5) * col;
                        self.cast_column(map, pred, p, az)
                    })
                    .sum()
            })
            .collect()
    }
}

/// Sum of `slices` (as produced by [`ViewSampler::circle_slices`]) whose
/// centre lies inside the field of view at `yaw`.
pub fn fov_gain_from_slices(slices: &[usize], slice_width: f64, hfov: f64, yaw: f64) -> usize {
    slices
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let c = (*i as f64 + 0.5) * slice_width;
            crate::geom::angle_diff(c, yaw).abs() < hfov / 2.0
        })
        .map(|(_, g)| *g)
        .sum()
}
