//! Autonomous exploration for a simulated aerial robot in structured indoor
//! worlds.
//!
//! The pipeline runs sense -> map -> detect/predict -> decide -> plan ->
//! execute:
//!
//! * [`voxel_map`] integrates depth scans into a log-odds grid,
//! * [`frontier`] maintains clustered frontiers incrementally,
//! * [`occ_predict`] predicts occupancy beyond the frontiers,
//! * [`info_gain`] turns predictions into per-viewpoint information gain,
//! * [`semantics`] finds doors and labels frontiers as room or corridor,
//! * [`behavior`] picks the next goal with a behaviour state machine,
//! * [`traj_opt`] plans min-jerk position and informative yaw trajectories,
//! * [`runtime`] closes the loop against [`sim_world`] and benchmarks it.

pub mod behavior;
pub mod block;
pub mod cli;
pub mod frontier;
pub mod geom;
pub mod info_gain;
pub mod nav;
pub mod occ_predict;
pub mod runtime;
pub mod semantics;
pub mod sim_world;
pub mod traj_opt;
pub mod voxel_map;

pub use geom::{Pose, Vec3, Voxel};
pub use voxel_map::{Aabb, MapParams, RayEndpoint, Trinary, VoxelMap};
