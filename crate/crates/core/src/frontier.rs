//! Incremental frontier detection and clustering.
//!
//! A frontier cell is a known-free voxel with at least one unknown
//! 6-neighbour. After each map update only the changed box (plus the boxes
//! of clusters invalidated by it) is searched. Connected components are
//! grown with 26-connectivity and always cover the whole component: a new
//! component that touches an existing cluster absorbs it. Components below
//! the minimum size are dropped as sensor-shadow noise; the rest are split
//! recursively along their principal axis until the largest covariance
//! eigenvalue is under the split threshold.

use std::collections::{BTreeMap, HashSet, VecDeque};

use nalgebra::Matrix3;

use crate::geom::{Vec3, Voxel};
use crate::info_gain::Viewpoint;
use crate::voxel_map::{Aabb, Trinary, VoxelMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierParams {
    /// Largest allowed covariance eigenvalue (m^2); 1.0 is a 1 m standard
    /// deviation along the principal axis.
    pub split_eigenvalue: f64,
    pub min_cluster_size: usize,
}

impl Default for FrontierParams {
    fn default() -> Self {
        Self { split_eigenvalue: 1.0, min_cluster_size: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrontierLabel {
    Unlabeled,
    Room,
    Corridor,
}

#[derive(Debug, Clone)]
pub struct FrontierCluster {
    pub id: u32,
    pub cells: Vec<Voxel>,
    pub centroid: Vec3,
    pub bbox: Aabb,
    pub label: FrontierLabel,
    pub viewpoints: Vec<Viewpoint>,
    /// Viewpoints have been sampled (the list may still be empty).
    pub viewpoints_ready: bool,
    /// Door detection has run on this cluster.
    pub doors_checked: bool,
}

impl FrontierCluster {
    pub fn from_cells(id: u32, mut cells: Vec<Voxel>, map: &VoxelMap) -> Self {
        cells.sort_unstable();
        let mut bbox = Aabb::point(cells[0]);
        let mut sum = Vec3::zeros();
        for &c in &cells {
            bbox.extend(c);
            sum += map.center_of(c);
        }
        Self {
            id,
            centroid: sum / cells.len() as f64,
            cells,
            bbox,
            label: FrontierLabel::Unlabeled,
            viewpoints: Vec::new(),
            viewpoints_ready: false,
            doors_checked: false,
        }
    }

    /// The cell closest to the centroid.
    pub fn central_cell(&self, map: &VoxelMap) -> Voxel {
        *self
            .cells
            .iter()
            .min_by(|a, b| {
                let da = (map.center_of(**a) - self.centroid).norm_squared();
                let db = (map.center_of(**b) - self.centroid).norm_squared();
                da.total_cmp(&db)
            })
            .unwrap()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrontierUpdate {
    pub removed: Vec<u32>,
    pub added: Vec<u32>,
}

/// Dense per-voxel cluster ids, sized to the map on first use.
#[derive(Debug, Clone, Default)]
struct OwnerGrid {
    dims: [usize; 3],
    ids: Vec<u32>,
}

const NO_OWNER: u32 = u32::MAX;

impl OwnerGrid {
    fn fit(&mut self, dims: [usize; 3]) {
        if self.dims != dims {
            assert!(self.ids.iter().all(|&i| i == NO_OWNER), "registry reused with a different map");
            self.dims = dims;
            self.ids = vec![NO_OWNER; dims.iter().product()];
        }
    }

    fn index(&self, v: Voxel) -> Option<usize> {
        let d = self.dims;
        let inb = (0..3).all(|i| v[i] >= 0 && (v[i] as usize) < d[i]);
        inb.then(|| v[0] as usize + d[0] * (v[1] as usize + d[1] * v[2] as usize))
    }

    fn get(&self, v: Voxel) -> Option<u32> {
        self.index(v).map(|i| self.ids[i]).filter(|&id| id != NO_OWNER)
    }

    fn set(&mut self, v: Voxel, id: u32) {
        let i = self.index(v).expect("cluster cell outside the map");
        self.ids[i] = id;
    }
}

#[derive(Debug, Clone, Default)]
pub struct FrontierRegistry {
    clusters: BTreeMap<u32, FrontierCluster>,
    owner: OwnerGrid,
    next_id: u32,
    pub params: FrontierParams,
}

pub fn is_frontier(map: &VoxelMap, v: Voxel) -> bool {
    if map.state(v) != Some(Trinary::Free) {
        return false;
    }
    NEIGHBORS6
        .iter()
        .any(|d| map.state([v[0] + d[0], v[1] + d[1], v[2] + d[2]]) == Some(Trinary::Unknown))
}

/// Memoised `is_frontier` over one update, indexed like the map.
struct FrontierMemo(Vec<u8>);

impl FrontierMemo {
    fn new(map: &VoxelMap) -> Self {
        Self(vec![0; map.len()])
    }

    fn get(&mut self, map: &VoxelMap, v: Voxel) -> bool {
        let i = map.index(v);
        if self.0[i] == 0 {
            self.0[i] = if is_frontier(map, v) { 1 } else { 2 };
        }
        self.0[i] == 1
    }
}

const NEIGHBORS6: [[i32; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

fn neighbors26(v: Voxel) -> impl Iterator<Item = Voxel> {
    (-1..=1).flat_map(move |dz| {
        (-1..=1).flat_map(move |dy| {
            (-1..=1).filter_map(move |dx| {
                if dx == 0 && dy == 0 && dz == 0 {
                    None
                } else {
                    Some([v[0] + dx, v[1] + dy, v[2] + dz])
                }
            })
        })
    })
}

impl FrontierRegistry {
    pub fn new(params: FrontierParams) -> Self {
        Self { params, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&FrontierCluster> {
        self.clusters.get(&id)
    }

    pub fn get_mut(&mut self, id: u32) -> Option<&mut FrontierCluster> {
        self.clusters.get_mut(&id)
    }

    /// Clusters in ascending id order.
    pub fn clusters(&self) -> impl Iterator<Item = &FrontierCluster> {
        self.clusters.values()
    }

    pub fn clusters_mut(&mut self) -> impl Iterator<Item = &mut FrontierCluster> {
        self.clusters.values_mut()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.clusters.keys().copied().collect()
    }

    pub fn cluster_of(&self, v: Voxel) -> Option<u32> {
        self.owner.get(v)
    }

    /// Union of all cluster cells.
    pub fn cell_union(&self) -> HashSet<Voxel> {
        self.clusters.values().flat_map(|c| c.cells.iter().copied()).collect()
    }

    fn remove(&mut self, id: u32) -> Option<FrontierCluster> {
        let c = self.clusters.remove(&id)?;
        for &cell in &c.cells {
            self.owner.set(cell, NO_OWNER);
        }
        Some(c)
    }

    fn insert(&mut self, cells: Vec<Voxel>, map: &VoxelMap) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        for &c in &cells {
            self.owner.set(c, id);
        }
        self.clusters.insert(id, FrontierCluster::from_cells(id, cells, map));
        id
    }

    /// Adds a prebuilt cluster of `map` under its own id, replacing any
    /// cluster with that id.
    pub fn insert_cluster(&mut self, c: FrontierCluster, map: &VoxelMap) -> u32 {
        self.owner.fit(map.dims());
        let id = c.id;
        self.remove(id);
        self.next_id = self.next_id.max(id + 1);
        for &v in &c.cells {
            self.owner.set(v, id);
        }
        self.clusters.insert(id, c);
        id
    }

    /// From-scratch detection over the whole map.
    pub fn rebuild(&mut self, map: &VoxelMap) -> FrontierUpdate {
        let old: Vec<u32> = self.ids();
        for id in &old {
            self.remove(*id);
        }
        let mut upd = update_frontiers(map, &map.bounds(), self);
        let mut removed = old;
        removed.append(&mut upd.removed);
        upd.removed = removed;
        upd
    }
}

/// Re-evaluates clusters touching `changed` and grows new clusters from
/// frontier cells inside it. `changed` should be the integrated scan's box
/// dilated by one voxel.
pub fn update_frontiers(map: &VoxelMap, changed: &Aabb, reg: &mut FrontierRegistry) -> FrontierUpdate {
    let mut upd = FrontierUpdate::default();
    reg.owner.fit(map.dims());
    let Some(region) = changed.clip(map.dims()) else {
        return upd;
    };

    let stale: Vec<u32> = reg
        .clusters
        .values()
        .filter(|c| c.bbox.intersects(&region))
        .filter(|c| c.cells.iter().any(|&v| region.contains(v) && !is_frontier(map, v)))
        .map(|c| c.id)
        .collect();
    let mut search = vec![region];
    for id in stale {
        if let Some(c) = reg.remove(id) {
            search.push(c.bbox);
            upd.removed.push(id);
        }
    }

    let mut visited = vec![false; map.len()];
    let mut memo = FrontierMemo::new(map);
    let mut k = 0;
    while k < search.len() {
        let bx = search[k];
        k += 1;
        for seed in bx.voxels() {
            if visited[map.index(seed)] || reg.owner.get(seed).is_some() || !memo.get(map, seed) {
                continue;
            }
            visited[map.index(seed)] = true;
            let mut component = vec![seed];
            let mut touched = grow(map, &mut component, reg, &mut visited, &mut memo);
            // a piece too small to stand alone joins its neighbours, as it
            // would in a from-scratch pass
            while component.len() < reg.params.min_cluster_size && !touched.is_empty() {
                for id in touched {
                    if let Some(c) = reg.remove(id) {
                        search.push(c.bbox);
                        upd.removed.push(id);
                    }
                }
                touched = grow(map, &mut component, reg, &mut visited, &mut memo);
            }
            if component.len() < reg.params.min_cluster_size {
                continue;
            }
            for part in split(component, map, reg.params.split_eigenvalue) {
                upd.added.push(reg.insert(part, map));
            }
        }
    }
    upd.added.retain(|id| reg.clusters.contains_key(id));
    upd
}

/// Breadth-first growth of `cells` over frontier cells not owned by any
/// cluster. Returns the ids of clusters met on the way.
fn grow(map: &VoxelMap, cells: &mut Vec<Voxel>, reg: &FrontierRegistry, visited: &mut [bool], memo: &mut FrontierMemo) -> Vec<u32> {
    let mut touched = Vec::new();
    let mut queue: VecDeque<Voxel> = cells.iter().copied().collect();
    while let Some(v) = queue.pop_front() {
        for n in neighbors26(v) {
            if !map.in_bounds(n) || visited[map.index(n)] {
                continue;
            }
            if let Some(id) = reg.owner.get(n) {
                if !touched.contains(&id) {
                    touched.push(id);
                }
                continue;
            }
            if !memo.get(map, n) {
                continue;
            }
            visited[map.index(n)] = true;
            cells.push(n);
            queue.push_back(n);
        }
    }
    touched.sort_unstable();
    touched
}

/// Covariance of the cell centres and its largest eigenpair.
pub fn principal_axis(cells: &[Voxel], map: &VoxelMap) -> (Vec3, f64, Vec3) {
    let n = cells.len() as f64;
    let pts: Vec<Vec3> = cells.iter().map(|&c| map.center_of(c)).collect();
    let mean = pts.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let (k, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    (mean, lambda, eig.eigenvectors.column(k).into_owned())
}

fn split(cells: Vec<Voxel>, map: &VoxelMap, threshold: f64) -> Vec<Vec<Voxel>> {
    let mut done = Vec::new();
    let mut stack = vec![cells];
    while let Some(cells) = stack.pop() {
        if cells.len() < 2 {
            done.push(cells);
            continue;
        }
        let (mean, lambda, axis) = principal_axis(&cells, map);
        if lambda <= threshold {
            done.push(cells);
            continue;
        }
        let (a, b): (Vec<Voxel>, Vec<Voxel>) =
            cells.into_iter().partition(|&c| (map.center_of(c) - mean).dot(&axis) <= 0.0);
        if a.is_empty() || b.is_empty() {
            done.push(if a.is_empty() { b } else { a });
            continue;
        }
        stack.push(b);
        stack.push(a);
    }
    done
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel_map::MapParams;

    fn known_free_map(dims: [usize; 3]) -> VoxelMap {
        let mut m = VoxelMap::new(Vec3::zeros(), 0.1, dims, MapParams::default()).unwrap();
        for v in m.bounds().voxels().collect::<Vec<_>>() {
            m.set_state(v, Trinary::Free);
        }
        m
    }

    #[test]
    fn fully_known_map_has_no_frontier() {
        let m = known_free_map([10, 10, 4]);
        let mut reg = FrontierRegistry::new(FrontierParams::default());
        let upd = update_frontiers(&m, &m.bounds(), &mut reg);
        assert!(upd.added.is_empty());
        assert!(reg.is_empty());
    }

    #[test]
    fn opening_gives_one_cluster_and_empty_update_is_noop() {
        // known room x<15, unknown slab beyond a wall with an opening
        let mut m = known_free_map([20, 12, 6]);
        for v in m.bounds().voxels().collect::<Vec<_>>() {
            if v[0] >= 15 {
                m.set_state(v, Trinary::Unknown);
            } else if v[0] == 14 && !(4..8).contains(&v[1]) {
                m.set_state(v, Trinary::Occupied);
            }
        }
        let mut reg = FrontierRegistry::new(FrontierParams::default());
        update_frontiers(&m, &m.bounds(), &mut reg);
        assert_eq!(reg.len(), 1);
        let c = reg.clusters().next().unwrap();
        assert!(c.cells.iter().all(|v| v[0] == 14 && (4..8).contains(&v[1])));
        assert_eq!(c.cells.len(), 4 * 6);

        let before: Vec<_> = reg.ids();
        // a box entirely outside the map is an empty change set
        let upd = update_frontiers(&m, &Aabb::new([100, 100, 100], [101, 101, 101]), &mut reg);
        assert_eq!(upd, FrontierUpdate::default());
        assert_eq!(reg.ids(), before);
    }

    #[test]
    fn long_line_splits_in_two() {
        // 40 frontier cells along x: free row with unknown above
        let mut m = VoxelMap::new(Vec3::zeros(), 0.1, [40, 3, 3], MapParams::default()).unwrap();
        for x in 0..40 {
            m.set_state([x, 1, 1], Trinary::Free);
        }
        // variance along the line: (40^2 - 1)/12 * 0.01 = 1.3325 m^2
        let mut reg = FrontierRegistry::new(FrontierParams { split_eigenvalue: 1.0, min_cluster_size: 5 });
        update_frontiers(&m, &m.bounds(), &mut reg);
        assert_eq!(reg.len(), 2);
        for c in reg.clusters() {
            assert_eq!(c.cells.len(), 20);
            // brute-force covariance along x
            let xs: Vec<f64> = c.cells.iter().map(|v| m.center_of(*v).x).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!((var - 0.3325).abs() < 1e-9, "{var}");
            let (_, lambda, _) = principal_axis(&c.cells, &m);
            assert!((lambda - var).abs() < 1e-9);
            assert!(lambda <= 1.0);
        }
    }

    #[test]
    fn small_components_dropped() {
        let mut m = VoxelMap::new(Vec3::zeros(), 0.1, [10, 3, 3], MapParams::default()).unwrap();
        for x in 0..3 {
            m.set_state([x, 1, 1], Trinary::Free);
        }
        let mut reg = FrontierRegistry::new(FrontierParams::default());
        update_frontiers(&m, &m.bounds(), &mut reg);
        assert!(reg.is_empty());
    }
}
