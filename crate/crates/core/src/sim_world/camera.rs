use crate::geom::{ray_direction, Pose, Vec3};
use crate::voxel_map::RayEndpoint;

use super::World;

/// Hit points are pushed this far past the surface so the endpoint voxel is
/// the surface voxel rather than the free voxel in front of it.
pub const HIT_NUDGE: f64 = 1e-4;

/// Level-mounted depth camera with a regular angular ray grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub hfov: f64,
    pub vfov: f64,
    pub max_range: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            hfov: 90f64.to_radians(),
            vfov: 60f64.to_radians(),
            max_range: 5.0,
            rows: 24,
            cols: 54,
        }
    }
}

impl CameraModel {
    pub fn is_valid(&self) -> bool {
        self.hfov > 0.0
            && self.hfov < std::f64::consts::PI
            && self.vfov > 0.0
            && self.vfov < std::f64::consts::PI
            && self.max_range > 0.0
            && self.rows > 0
            && self.cols > 0
    }

    pub fn col_spacing(&self) -> f64 {
        self.hfov / self.cols as f64
    }

    /// Azimuth of column `c` relative to the optical axis; columns sweep
    /// from right (-hfov/2) to left.
    pub fn col_offset(&self, c: usize) -> f64 {
        -self.hfov / 2.0 + (c as f64 + 0.5) * self.col_spacing()
    }

    pub fn row_elevation(&self, r: usize) -> f64 {
        -self.vfov / 2.0 + (r as f64 + 0.5) * self.vfov / self.rows as f64
    }

    /// Elevations of the rows kept at `stride`.
    pub fn elevations(&self, stride: usize) -> Vec<f64> {
        (0..self.rows).step_by(stride.max(1)).map(|r| self.row_elevation(r)).collect()
    }

    /// Unit ray directions for a camera at `yaw`, subsampled by `stride` in
    /// both image axes.
    pub fn ray_directions(&self, yaw: f64, stride: usize) -> Vec<Vec3> {
        let els = self.elevations(stride);
        let mut out = Vec::with_capacity(els.len() * self.cols.div_ceil(stride.max(1)));
        for c in (0..self.cols).step_by(stride.max(1)) {
            let az = yaw + self.col_offset(c);
            for &el in &els {
                out.push(ray_direction(az, el));
            }
        }
        out
    }

    /// True if the horizontal bearing from `pose` to `target` lies inside the
    /// horizontal field of view.
    pub fn sees_bearing(&self, pose: &Pose, target: &Vec3) -> bool {
        let d = target - pose.position;
        let bearing = d.y.atan2(d.x);
        crate::geom::angle_diff(bearing, pose.yaw).abs() <= self.hfov / 2.0
    }
}

/// Casts every camera ray against the world boxes. Rays report the first
/// surface within range as a hit, otherwise the max-range point as a miss.
pub fn render_depth(world: &World, pose: &Pose, camera: &CameraModel) -> Vec<RayEndpoint> {
    let origin = pose.position;
    camera
        .ray_directions(pose.yaw, 1)
        .into_iter()
        .map(|dir| {
            let t = world
                .boxes
                .iter()
                .filter_map(|b| b.ray_entry(&origin, &dir))
                .fold(f64::INFINITY, f64::min);
            if t <= camera.max_range {
                RayEndpoint { point: origin + dir * (t + HIT_NUDGE), hit: true }
            } else {
                RayEndpoint { point: origin + dir * camera.max_range, hit: false }
            }
        })
        .collect()
}
