use thiserror::Error;

use crate::geom::{Vec3, Voxel};
use crate::voxel_map::{Trinary, VoxelMap};

use super::World;

#[derive(Debug, Error, PartialEq)]
pub enum CoverageError {
    #[error("map and ground truth disagree on {0}")]
    Mismatch(&'static str),
}

/// Voxelised ground truth: a voxel is occupied iff its centre lies inside a
/// world box.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub origin: Vec3,
    pub resolution: f64,
    pub dims: [usize; 3],
    occupied: Vec<bool>,
    observable: Vec<bool>,
    observable_count: usize,
}

impl GroundTruth {
    pub fn from_world(world: &World, resolution: f64) -> Self {
        let size = world.bounds.max - world.bounds.min;
        let dims = [
            (size.x / resolution).round() as usize,
            (size.y / resolution).round() as usize,
            (size.z / resolution).round() as usize,
        ];
        let origin = world.bounds.min;
        let n = dims.iter().product();
        let mut occupied = vec![false; n];
        for (i, occ) in occupied.iter_mut().enumerate() {
            let v = unflatten(i, dims);
            let c = origin + Vec3::new(v[0] as f64 + 0.5, v[1] as f64 + 0.5, v[2] as f64 + 0.5) * resolution;
            *occ = world.is_solid(&c);
        }
        Self::from_occupancy(origin, resolution, dims, occupied)
    }

    pub fn from_occupancy(origin: Vec3, resolution: f64, dims: [usize; 3], occupied: Vec<bool>) -> Self {
        // free voxels plus the one-voxel occupied shell touching free space
        let mut observable = vec![false; occupied.len()];
        for i in 0..occupied.len() {
            if !occupied[i] {
                observable[i] = true;
                continue;
            }
            let v = unflatten(i, dims);
            observable[i] = neighbors6(v).any(|n| in_bounds(n, dims) && !occupied[flatten(n, dims)]);
        }
        let observable_count = observable.iter().filter(|&&o| o).count();
        Self { origin, resolution, dims, occupied, observable, observable_count }
    }

    #[inline]
    pub fn index(&self, v: Voxel) -> usize {
        flatten(v, self.dims)
    }

    pub fn in_bounds(&self, v: Voxel) -> bool {
        in_bounds(v, self.dims)
    }

    #[inline]
    pub fn is_occupied_at(&self, i: usize) -> bool {
        self.occupied[i]
    }

    /// `None` outside the grid.
    pub fn occupied(&self, v: Voxel) -> Option<bool> {
        self.in_bounds(v).then(|| self.occupied[flatten(v, self.dims)])
    }

    pub fn occupied_at_point(&self, p: &Vec3) -> Option<bool> {
        let q = (p - self.origin) / self.resolution;
        self.occupied([q.x.floor() as i32, q.y.floor() as i32, q.z.floor() as i32])
    }

    pub fn is_observable_at(&self, i: usize) -> bool {
        self.observable[i]
    }

    pub fn observable_count(&self) -> usize {
        self.observable_count
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    /// Trinary value as a perfect map would hold it.
    pub fn trinary_at(&self, i: usize) -> Trinary {
        if self.occupied[i] {
            Trinary::Occupied
        } else {
            Trinary::Free
        }
    }

    pub fn check_compatible(&self, map: &VoxelMap) -> Result<(), CoverageError> {
        if map.dims() != self.dims {
            return Err(CoverageError::Mismatch("dimensions"));
        }
        if (map.resolution() - self.resolution).abs() > 1e-9 {
            return Err(CoverageError::Mismatch("resolution"));
        }
        if (map.origin() - self.origin).norm() > 1e-9 {
            return Err(CoverageError::Mismatch("origin"));
        }
        Ok(())
    }
}

/// Fraction of ground-truth-observable voxels whose belief is known.
pub fn coverage(map: &VoxelMap, truth: &GroundTruth) -> Result<f64, CoverageError> {
    truth.check_compatible(map)?;
    if truth.observable_count == 0 {
        return Ok(1.0);
    }
    let known = (0..truth.len())
        .filter(|&i| truth.observable[i] && map.state_at(i) != Trinary::Unknown)
        .count();
    Ok(known as f64 / truth.observable_count as f64)
}

#[inline]
pub(crate) fn flatten(v: Voxel, dims: [usize; 3]) -> usize {
    v[0] as usize + dims[0] * (v[1] as usize + dims[1] * v[2] as usize)
}

#[inline]
pub(crate) fn unflatten(i: usize, dims: [usize; 3]) -> Voxel {
    [(i % dims[0]) as i32, ((i / dims[0]) % dims[1]) as i32, (i / (dims[0] * dims[1])) as i32]
}

#[inline]
pub(crate) fn in_bounds(v: Voxel, dims: [usize; 3]) -> bool {
    (0..3).all(|i| v[i] >= 0 && (v[i] as usize) < dims[i])
}

pub(crate) fn neighbors6(v: Voxel) -> impl Iterator<Item = Voxel> {
    const D: [[i32; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    D.into_iter().map(move |d| [v[0] + d[0], v[1] + d[1], v[2] + d[2]])
}
