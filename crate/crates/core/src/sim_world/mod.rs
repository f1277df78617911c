//! Procedural corridor-and-rooms worlds used as ground truth.
//!
//! Every coordinate is generated on a 0.1 m lattice (integer decimetres) so
//! that walls coincide with voxel faces and the world file round-trips
//! exactly.

mod camera;
mod coverage;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::{Box3, Pose, Vec3};
use crate::voxel_map::{MapError, MapParams, VoxelMap};

pub use camera::{render_depth, CameraModel, HIT_NUDGE};
pub use coverage::{coverage, CoverageError, GroundTruth};

/// Radius of the robot body used for every collision check.
pub const ROBOT_RADIUS: f64 = 0.3;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("infeasible world config: {dimension} ({detail})")]
    Infeasible { dimension: &'static str, detail: String },
    #[error("world file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Interior extent of a room, in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Room {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Room {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

/// Door opening in a corridor wall. `normal` points from the corridor into
/// the room.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Door {
    pub center: [f64; 2],
    pub normal: [f64; 2],
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub bounds: Box3,
    pub boxes: Vec<Box3>,
    pub rooms: Vec<Room>,
    pub doors: Vec<Door>,
    pub start: Pose,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    /// Extent along x (corridor direction), metres.
    pub length: f64,
    pub corridor_width: f64,
    pub room_depth: f64,
    pub height: f64,
    pub rooms: usize,
    pub door_width_min: f64,
    pub door_width_max: f64,
    pub door_height: f64,
    pub wall_thickness: f64,
    /// Full-height square pillars placed inside each room.
    pub pillars_per_room: usize,
    pub flight_height: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            length: 12.0,
            corridor_width: 1.6,
            room_depth: 3.0,
            height: 2.4,
            rooms: 4,
            door_width_min: 0.8,
            door_width_max: 1.0,
            door_height: 2.0,
            wall_thickness: 0.2,
            pillars_per_room: 0,
            flight_height: 1.0,
        }
    }
}

impl WorldConfig {
    /// Outer width along y implied by the layout.
    pub fn width(&self) -> f64 {
        let (south, north) = self.rooms_per_side();
        let t = self.wall_thickness;
        let mut w = 2.0 * t + self.corridor_width;
        if south > 0 {
            w += self.room_depth + t;
        }
        if north > 0 {
            w += self.room_depth + t;
        }
        w
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width() * self.height
    }

    fn rooms_per_side(&self) -> (usize, usize) {
        (self.rooms.div_ceil(2), self.rooms / 2)
    }
}

fn dm(x: f64) -> i64 {
    (x * 10.0).round() as i64
}

fn m(d: i64) -> f64 {
    d as f64 / 10.0
}

fn infeasible(dimension: &'static str, detail: String) -> WorldError {
    WorldError::Infeasible { dimension, detail }
}

const MIN_ROOM_SIDE_DM: i64 = 20;
const DOOR_JAMB_MARGIN_DM: i64 = 3;

/// Generates a corridor along x with `rooms` rooms off it, each with one
/// door onto the corridor. Deterministic in `(seed, config)`.
pub fn generate_world(seed: u64, cfg: &WorldConfig) -> Result<World, WorldError> {
    let vol = cfg.volume();
    if !(50.0..=500.0).contains(&vol) {
        return Err(infeasible("volume", format!("{vol:.1} m^3 outside [50, 500]")));
    }
    let t = dm(cfg.wall_thickness);
    let h = dm(cfg.height);
    let door_h = dm(cfg.door_height);
    let len = dm(cfg.length);
    let cw = dm(cfg.corridor_width);
    let depth = dm(cfg.room_depth);
    let (wmin, wmax) = (dm(cfg.door_width_min), dm(cfg.door_width_max));
    if t < 1 {
        return Err(infeasible("wall_thickness", "must be >= 0.1 m".into()));
    }
    if h < 22 || door_h >= h - 1 || door_h < 19 {
        return Err(infeasible("height", format!("height {} with door height {}", cfg.height, cfg.door_height)));
    }
    if cw < 12 {
        return Err(infeasible("corridor_width", format!("{} m < 1.2 m", cfg.corridor_width)));
    }
    if wmin < 5 || wmax < wmin {
        return Err(infeasible("door_width", format!("[{}, {}]", cfg.door_width_min, cfg.door_width_max)));
    }
    if cfg.rooms > 0 && depth < MIN_ROOM_SIDE_DM {
        return Err(infeasible("room_depth", format!("{} m < 2.0 m", cfg.room_depth)));
    }
    let (south, north) = cfg.rooms_per_side();
    let interior = len - 2 * t;
    if south > 0 {
        let per_room = (interior - (south as i64 - 1) * t) / south as i64;
        if per_room < MIN_ROOM_SIDE_DM.max(wmax + 2 * DOOR_JAMB_MARGIN_DM) {
            return Err(infeasible(
                "length",
                format!("{} rooms per side leave {:.1} m per room", south, m(per_room)),
            ));
        }
    }
    if interior < 20 {
        return Err(infeasible("length", format!("{} m too short", cfg.length)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = dm(cfg.width());
    let mut boxes: Vec<[i64; 6]> = Vec::new();
    let mut rooms = Vec::new();
    let mut doors = Vec::new();

    // floor, ceiling, outer walls
    boxes.push([0, 0, 0, len, width, 1]);
    boxes.push([0, 0, h - 1, len, width, h]);
    boxes.push([0, 0, 0, len, t, h]);
    boxes.push([0, width - t, 0, len, width, h]);
    boxes.push([0, 0, 0, t, width, h]);
    boxes.push([len - t, 0, 0, len, width, h]);

    let corridor_y0 = if south > 0 { t + depth + t } else { t };
    let corridor_y1 = corridor_y0 + cw;

    let mut sides = Vec::new();
    if south > 0 {
        // rooms span [t, t+depth], door wall at [t+depth, corridor_y0]
        sides.push((south, t, t + depth, t + depth, corridor_y0, 1.0));
    }
    if north > 0 {
        sides.push((north, corridor_y1 + t, corridor_y1 + t + depth, corridor_y1, corridor_y1 + t, -1.0));
    }

    for (count, ry0, ry1, wall_y0, wall_y1, corridor_dir) in sides {
        let count = count as i64;
        let base = (interior - (count - 1) * t) / count;
        // partition x with jitter, keeping every room wide enough
        let mut xs = vec![t];
        for i in 1..count {
            let nominal = i * (base + t);
            let jitter = rng.gen_range(-5..=5);
            let prev = *xs.last().unwrap();
            let lo = prev + (if i > 1 { t } else { 0 }) + MIN_ROOM_SIDE_DM.max(wmax + 2 * DOOR_JAMB_MARGIN_DM);
            let x = (nominal + jitter).max(lo);
            xs.push(x);
        }
        xs.push(len - t);
        for i in 0..count as usize {
            let x0 = if i == 0 { xs[0] } else { xs[i] + t };
            let x1 = xs[i + 1];
            if i > 0 {
                // runs through the door wall too, or the corner is left open
                boxes.push([xs[i], ry0.min(wall_y0), 0, xs[i] + t, ry1.max(wall_y1), h]);
            }
            let room_w = x1 - x0;
            let w = rng.gen_range(wmin..=wmax).min(room_w - 2 * DOOR_JAMB_MARGIN_DM);
            let lo = x0 + DOOR_JAMB_MARGIN_DM;
            let hi = x1 - DOOR_JAMB_MARGIN_DM - w;
            let d0 = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let d1 = d0 + w;
            // wall segments either side of the door, plus the lintel
            if d0 > x0 {
                boxes.push([x0, wall_y0, 0, d0, wall_y1, h]);
            }
            if x1 > d1 {
                boxes.push([d1, wall_y0, 0, x1, wall_y1, h]);
            }
            boxes.push([d0, wall_y0, door_h, d1, wall_y1, h]);
            rooms.push(Room { min: [m(x0), m(ry0)], max: [m(x1), m(ry1)] });
            // normal points from the corridor into the room
            let ny = -corridor_dir;
            doors.push(Door {
                center: [m(d0 + d1) / 2.0, m(wall_y0 + wall_y1) / 2.0],
                normal: [0.0, ny],
                width: m(w),
            });
            for _ in 0..cfg.pillars_per_room {
                // 0.4 m pillar, kept clear of the door approach
                let px_lo = x0 + 8;
                let px_hi = x1 - 12;
                let py_lo = ry0 + 8;
                let py_hi = ry1 - 12;
                if px_hi <= px_lo || py_hi <= py_lo {
                    continue;
                }
                let px = rng.gen_range(px_lo..=px_hi);
                let py = rng.gen_range(py_lo..=py_hi);
                let door_mid = (d0 + d1) / 2;
                let near_door_x = (px + 2 - door_mid).abs() < 12;
                let near_door_y = (py + 2 - wall_y0).abs().min((py + 2 - wall_y1).abs()) < 14;
                if near_door_x && near_door_y {
                    continue;
                }
                boxes.push([px, py, 0, px + 4, py + 4, h]);
            }
        }
    }

    let to_box = |b: &[i64; 6]| {
        Box3::new(Vec3::new(m(b[0]), m(b[1]), m(b[2])), Vec3::new(m(b[3]), m(b[4]), m(b[5])))
    };
    let start = Pose::new(
        Vec3::new(m(t + 10) + 0.05, m((corridor_y0 + corridor_y1) / 2) + 0.05, cfg.flight_height + 0.05),
        0.0,
    );
    Ok(World {
        bounds: Box3::new(Vec3::zeros(), Vec3::new(m(len), m(width), m(h))),
        boxes: boxes.iter().map(to_box).collect(),
        rooms,
        doors,
        start,
        seed,
    })
}

impl World {
    /// Distance from `p` to the nearest solid box.
    pub fn clearance(&self, p: &Vec3) -> f64 {
        self.boxes.iter().map(|b| b.distance(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn is_solid(&self, p: &Vec3) -> bool {
        self.boxes.iter().any(|b| b.contains(p))
    }

    /// Empty belief map sharing the world's bounds.
    pub fn empty_map(&self, resolution: f64, params: MapParams) -> Result<VoxelMap, MapError> {
        VoxelMap::with_extent(self.bounds.min, self.bounds.max, resolution, params)
    }

    pub fn ground_truth(&self, resolution: f64) -> GroundTruth {
        GroundTruth::from_world(self, resolution)
    }

    /// Index of the room containing the horizontal point, if any.
    pub fn room_at(&self, x: f64, y: f64) -> Option<usize> {
        self.rooms.iter().position(|r| r.contains(x, y))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let b = &self.bounds;
        let _ = writeln!(
            s,
            "BOUNDS {:.3} {:.3} {:.3} {:.3} {:.3} {:.3}",
            b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
        );
        let _ = writeln!(s, "SEED {}", self.seed);
        let p = &self.start;
        let _ = writeln!(
            s,
            "START {:.3} {:.3} {:.3} {:.4}",
            p.position.x, p.position.y, p.position.z, p.yaw
        );
        for r in &self.rooms {
            let _ = writeln!(s, "ROOM {:.3} {:.3} {:.3} {:.3}", r.min[0], r.min[1], r.max[0], r.max[1]);
        }
        for d in &self.doors {
            let _ = writeln!(
                s,
                "DOOR {:.3} {:.3} {:.3} {:.3} {:.3}",
                d.center[0], d.center[1], d.normal[0], d.normal[1], d.width
            );
        }
        for b in &self.boxes {
            let _ = writeln!(
                s,
                "BOX {:.3} {:.3} {:.3} {:.3} {:.3} {:.3}",
                b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<World, WorldError> {
        let mut bounds = None;
        let mut seed = 0;
        let mut start = None;
        let mut boxes = Vec::new();
        let mut rooms = Vec::new();
        let mut doors = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tok = line.split_whitespace();
            let kind = tok.next().unwrap();
            let nums: Vec<&str> = tok.collect();
            let err = |msg: String| WorldError::Parse { line: ln + 1, msg };
            let floats = |n: usize| -> Result<Vec<f64>, WorldError> {
                if nums.len() != n {
                    return Err(err(format!("{kind} expects {n} values, got {}", nums.len())));
                }
                nums.iter()
                    .map(|s| s.parse::<f64>().map_err(|e| err(format!("{s}: {e}"))))
                    .collect()
            };
            match kind {
                "BOUNDS" => {
                    let v = floats(6)?;
                    bounds = Some(Box3::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])));
                }
                "SEED" => {
                    if nums.len() != 1 {
                        return Err(err("SEED expects 1 value".into()));
                    }
                    seed = nums[0].parse().map_err(|e| err(format!("seed: {e}")))?;
                }
                "START" => {
                    let v = floats(4)?;
                    start = Some(Pose::new(Vec3::new(v[0], v[1], v[2]), v[3]));
                }
                "ROOM" => {
                    let v = floats(4)?;
                    rooms.push(Room { min: [v[0], v[1]], max: [v[2], v[3]] });
                }
                "DOOR" => {
                    let v = floats(5)?;
                    doors.push(Door { center: [v[0], v[1]], normal: [v[2], v[3]], width: v[4] });
                }
                "BOX" => {
                    let v = floats(6)?;
                    boxes.push(Box3::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])));
                }
                other => return Err(err(format!("unknown record {other}"))),
            }
        }
        let bounds = bounds.ok_or(WorldError::Parse { line: 0, msg: "missing BOUNDS".into() })?;
        let start = start.unwrap_or_else(|| {
            let c = (bounds.min + bounds.max) / 2.0;
            Pose::new(Vec3::new(c.x, c.y, 1.05), 0.0)
        });
        Ok(World { bounds, boxes, rooms, doors, start, seed })
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<World, WorldError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
