//! Occupancy prediction over [`OccupancyBlock`]s, the training losses and
//! training-pair generation.

use std::f64::consts::PI;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::block::{OccupancyBlock, FREE, OCCUPIED, UNKNOWN};
use crate::geom::{Pose, Vec3};
use crate::sim_world::{render_depth, CameraModel, GroundTruth, World, ROBOT_RADIUS};
use crate::voxel_map::{MapError, MapParams};

const WEIGHTS_MAGIC: &[u8; 8] = b"SEERNET1";
const PROB_EPS: f64 = 1e-7;
/// Probabilities above this read as occupied when a prediction is turned
/// back into trinary form.
pub const PRED_OCC_PROB: f64 = 0.65;
pub const PRED_FREE_PROB: f64 = 0.35;
/// Horizon of the slab extrapolator in voxels (2.0 m at 0.1 m).
pub const SLAB_MAX_STEPS: usize = 20;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("oracle predictor needs ground truth")]
    MissingContext,
    #[error("layer {layer}: {msg}")]
    Weights { layer: usize, msg: String },
    #[error("bad weights header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-voxel occupancy probabilities plus the set of voxels actually
/// predicted. Outside the mask the probabilities mirror the input block.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedBlock {
    dims: [usize; 3],
    pub origin: Vec3,
    pub resolution: f64,
    probs: Vec<f64>,
    mask: Vec<bool>,
}

fn input_prob(v: i8) -> f64 {
    match v {
        OCCUPIED => 1.0,
        FREE => 0.0,
        _ => 0.5,
    }
}

impl PredictedBlock {
    /// A prediction that predicts nothing.
    pub fn passthrough(input: &OccupancyBlock) -> Self {
        Self {
            dims: input.dims(),
            origin: input.origin,
            resolution: input.resolution,
            probs: input.values().iter().map(|&v| input_prob(v)).collect(),
            mask: vec![false; input.len()],
        }
    }

    /// Panics if the lengths do not match `dims` or a probability lies
    /// outside [0, 1].
    pub fn from_parts(dims: [usize; 3], probs: Vec<f64>, mask: Vec<bool>) -> Self {
        let n = dims.iter().product();
        assert!(probs.len() == n && mask.len() == n, "length mismatch");
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)), "probability outside [0, 1]");
        Self { dims, origin: Vec3::zeros(), resolution: crate::block::BLOCK_RESOLUTION, probs, mask }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn predict(&mut self, i: usize, p: f64) {
        self.probs[i] = p;
        self.mask[i] = true;
    }

    /// Trinary reading of a predicted voxel; `None` when not predicted.
    pub fn trinary(&self, i: usize) -> Option<i8> {
        self.mask[i].then(|| prob_to_trinary(self.probs[i]))
    }
}

pub fn prob_to_trinary(p: f64) -> i8 {
    if p > PRED_OCC_PROB {
        OCCUPIED
    } else if p < PRED_FREE_PROB {
        FREE
    } else {
        UNKNOWN
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorKind {
    Null,
    OracleSim,
    SlabExtrapolation,
    TinyConvNet(TinyNet),
}

impl PredictorKind {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorKind::Null => "null",
            PredictorKind::OracleSim => "oracle",
            PredictorKind::SlabExtrapolation => "slab",
            PredictorKind::TinyConvNet(_) => "tinynet",
        }
    }

    /// `truth` is only consulted by the oracle.
    pub fn predict(&self, input: &OccupancyBlock, truth: Option<&GroundTruth>) -> Result<PredictedBlock, PredictError> {
        Ok(match self {
            PredictorKind::Null => PredictedBlock::passthrough(input),
            PredictorKind::OracleSim => predict_oracle(input, truth.ok_or(PredictError::MissingContext)?),
            PredictorKind::SlabExtrapolation => predict_slab(input),
            PredictorKind::TinyConvNet(net) => net.forward(input),
        })
    }
}

fn predict_oracle(input: &OccupancyBlock, truth: &GroundTruth) -> PredictedBlock {
    let mut out = PredictedBlock::passthrough(input);
    let [nx, ny, nz] = input.dims();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = input.index(x, y, z);
                if input.values()[i] != UNKNOWN {
                    continue;
                }
                if let Some(occ) = truth.occupied_at_point(&input.center(x, y, z)) {
                    out.predict(i, if occ { 1.0 } else { 0.0 });
                }
            }
        }
    }
    out
}

/// Copies, for each unknown voxel, the first known value met when stepping
/// toward the block centre along the dominant horizontal axis.
fn predict_slab(input: &OccupancyBlock) -> PredictedBlock {
    let mut out = PredictedBlock::passthrough(input);
    let [nx, ny, nz] = input.dims();
    let (cx, cy) = (nx as f64 / 2.0, ny as f64 / 2.0);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = input.index(x, y, z);
                if input.values()[i] != UNKNOWN {
                    continue;
                }
                let dx = cx - (x as f64 + 0.5);
                let dy = cy - (y as f64 + 0.5);
                let (sx, sy) = if dx.abs() >= dy.abs() { (dx.signum() as i64, 0) } else { (0, dy.signum() as i64) };
                let (mut px, mut py) = (x as i64, y as i64);
                for _ in 0..SLAB_MAX_STEPS {
                    px += sx;
                    py += sy;
                    if px < 0 || py < 0 || px >= nx as i64 || py >= ny as i64 {
                        break;
                    }
                    let v = input.get(px as usize, py as usize, z);
                    if v != UNKNOWN {
                        out.predict(i, input_prob(v));
                        break;
                    }
                }
            }
        }
    }
    out
}

/// One 3-D convolution layer with "same" zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: [usize; 3],
    /// Index `x + kx*(y + ky*(z + kz*(i + in*o)))`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn zeros(out_ch: usize, in_ch: usize, kernel: [usize; 3]) -> Self {
        Self {
            out_ch,
            in_ch,
            kernel,
            weights: vec![0.0; out_ch * in_ch * kernel.iter().product::<usize>()],
            bias: vec![0.0; out_ch],
        }
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    #[inline]
    pub fn weight_index(&self, o: usize, i: usize, k: [usize; 3]) -> usize {
        k[0] + self.kernel[0] * (k[1] + self.kernel[1] * (k[2] + self.kernel[2] * (i + self.in_ch * o)))
    }

    /// `input` holds `in_ch` channel volumes of `dims`, x fastest.
    fn apply(&self, input: &[f32], dims: [usize; 3]) -> Vec<f32> {
        let n = dims.iter().product::<usize>();
        let [nx, ny, nz] = dims;
        let mut out = vec![0.0f32; self.out_ch * n];
        let pad = [self.kernel[0] / 2, self.kernel[1] / 2, self.kernel[2] / 2];
        for o in 0..self.out_ch {
            let dst = &mut out[o * n..(o + 1) * n];
            dst.fill(self.bias[o]);
            for i in 0..self.in_ch {
                let src = &input[i * n..(i + 1) * n];
                for kz in 0..self.kernel[2] {
                    for ky in 0..self.kernel[1] {
                        for kx in 0..self.kernel[0] {
                            let w = self.weights[self.weight_index(o, i, [kx, ky, kz])];
                            if w == 0.0 {
                                continue;
                            }
                            let ox = kx as isize - pad[0] as isize;
                            let oy = ky as isize - pad[1] as isize;
                            let oz = kz as isize - pad[2] as isize;
                            let x0 = (-ox).max(0) as usize;
                            let x1 = (nx as isize - ox).min(nx as isize).max(0) as usize;
                            if x0 >= x1 {
                                continue;
                            }
                            for z in 0..nz {
                                let sz = z as isize + oz;
                                if sz < 0 || sz >= nz as isize {
                                    continue;
                                }
                                for y in 0..ny {
                                    let sy = y as isize + oy;
                                    if sy < 0 || sy >= ny as isize {
                                        continue;
                                    }
                                    let drow = (z * ny + y) * nx;
                                    let srow = (sz as usize * ny + sy as usize) * nx;
                                    let d = &mut dst[drow + x0..drow + x1];
                                    let s = &src[(srow as isize + x0 as isize + ox) as usize..];
                                    for (a, b) in d.iter_mut().zip(s) {
                                        *a += w * b;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Three-layer 3-D conv net: one-hot(unknown, free, occupied) → 8 → 8 → 1,
/// ReLU between layers, logistic output.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet {
    pub layers: Vec<ConvLayer>,
}

/// (out, in, kernel edge) of each layer.
pub const TINYNET_SHAPES: [(usize, usize, usize); 3] = [(8, 3, 3), (8, 8, 3), (1, 8, 1)];

impl TinyNet {
    pub fn zeros() -> Self {
        Self { layers: TINYNET_SHAPES.iter().map(|&(o, i, k)| ConvLayer::zeros(o, i, [k; 3])).collect() }
    }

    /// Small random weights, uniform in ±0.3.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mut net = Self::zeros();
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = rng.gen_range(-0.3..0.3));
            l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
        }
        net
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        if self.layers.len() != TINYNET_SHAPES.len() {
            return Err(PredictError::Header(format!("expected 3 layers, found {}", self.layers.len())));
        }
        for (idx, (l, &(o, i, k))) in self.layers.iter().zip(&TINYNET_SHAPES).enumerate() {
            if l.out_ch != o || l.in_ch != i || l.kernel != [k; 3] {
                return Err(PredictError::Weights {
                    layer: idx,
                    msg: format!(
                        "shape ({},{},{},{},{}) does not match ({o},{i},{k},{k},{k})",
                        l.out_ch, l.in_ch, l.kernel[0], l.kernel[1], l.kernel[2]
                    ),
                });
            }
            if l.weights.len() != o * i * l.taps() || l.bias.len() != o {
                return Err(PredictError::Weights { layer: idx, msg: "parameter count mismatch".into() });
            }
            if l.weights.iter().chain(&l.bias).any(|w| !w.is_finite()) {
                return Err(PredictError::Weights { layer: idx, msg: "non-finite parameter".into() });
            }
        }
        Ok(())
    }

    /// Raw output probabilities for every voxel, x fastest.
    pub fn forward_probs(&self, input: &OccupancyBlock) -> Vec<f64> {
        let dims = input.dims();
        let n = input.len();
        let mut x = vec![0.0f32; 3 * n];
        for (i, &v) in input.values().iter().enumerate() {
            let ch = match v {
                UNKNOWN => 0,
                FREE => 1,
                _ => 2,
            };
            x[ch * n + i] = 1.0;
        }
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            x = layer.apply(&x, dims);
            if k < last {
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        x.iter().map(|&v| 1.0 / (1.0 + (-(v as f64)).exp())).collect()
    }

    pub fn forward(&self, input: &OccupancyBlock) -> PredictedBlock {
        let probs = self.forward_probs(input);
        let mask = input.values().iter().map(|&v| v == UNKNOWN).collect();
        let mut out = PredictedBlock::from_parts(input.dims(), probs, mask);
        out.origin = input.origin;
        out.resolution = input.resolution;
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            for d in [l.out_ch, l.in_ch, l.kernel[0], l.kernel[1], l.kernel[2]] {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in l.weights.iter().chain(&l.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Parses and validates a weights file.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, PredictError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| PredictError::Header("truncated".into()))?;
        if &magic != WEIGHTS_MAGIC {
            return Err(PredictError::Header("bad magic".into()));
        }
        let count = read_u32(&mut r).map_err(|_| PredictError::Header("truncated".into()))? as usize;
        if count != TINYNET_SHAPES.len() {
            return Err(PredictError::Header(format!("expected 3 layers, found {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for idx in 0..count {
            let trunc = |_| PredictError::Weights { layer: idx, msg: "truncated".into() };
            let mut shape = [0usize; 5];
            for s in &mut shape {
                *s = read_u32(&mut r).map_err(trunc)? as usize;
            }
            let (o, i, k) = TINYNET_SHAPES[idx];
            if shape != [o, i, k, k, k] {
                return Err(PredictError::Weights {
                    layer: idx,
                    msg: format!("shape {shape:?} does not match ({o},{i},{k},{k},{k})"),
                });
            }
            let mut layer = ConvLayer::zeros(o, i, [k; 3]);
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(trunc)?;
                *v = f32::from_le_bytes(b);
            }
            layers.push(layer);
        }
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)
    }

    pub fn load(path: &Path) -> Result<Self, PredictError> {
        Self::read_from(io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub omega_occ: f64,
    pub omega_struct: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { omega_occ: 2.0, omega_struct: 1.0, alpha: 5.0, beta: 2.0 }
    }
}

/// Weighted binary cross-entropy. Target-unknown voxels carry no weight;
/// voxels unknown in the input but occupied in the target weigh `alpha`.
pub fn loss_occ(pred: &PredictedBlock, target: &OccupancyBlock, input: &OccupancyBlock, alpha: f64) -> f64 {
    assert_eq!(pred.dims(), target.dims());
    assert_eq!(input.dims(), target.dims());
    let n = target.len();
    let mut sum = 0.0;
    for i in 0..n {
        let t = target.values()[i];
        if t == UNKNOWN {
            continue;
        }
        let lambda = if input.values()[i] == UNKNOWN && t == OCCUPIED { alpha } else { 1.0 };
        let p = pred.probs[i].clamp(PROB_EPS, 1.0 - PROB_EPS);
        let term = if t == OCCUPIED { p.ln() } else { (1.0 - p).ln() };
        sum += lambda * term;
    }
    -sum / n as f64
}

/// Weighted L1 distance between per-column occupied counts; predicted
/// occupancy is `prob > 0.5`.
pub fn loss_struct(pred: &PredictedBlock, target: &OccupancyBlock, beta: f64) -> f64 {
    assert_eq!(pred.dims(), target.dims());
    let [nx, ny, nz] = target.dims();
    let mut sum = 0.0;
    for y in 0..ny {
        for x in 0..nx {
            let (mut cp, mut ct) = (0i64, 0i64);
            for z in 0..nz {
                let i = target.index(x, y, z);
                cp += (pred.probs[i] > 0.5) as i64;
                ct += (target.values()[i] == OCCUPIED) as i64;
            }
            let phi = if 2 * ct > nz as i64 { beta } else { 1.0 };
            sum += phi * (cp - ct).abs() as f64;
        }
    }
    sum / (nx * ny) as f64
}

pub fn loss_total(pred: &PredictedBlock, target: &OccupancyBlock, input: &OccupancyBlock, w: &LossWeights) -> f64 {
    w.omega_occ * loss_occ(pred, target, input, w.alpha) + w.omega_struct * loss_struct(pred, target, w.beta)
}

/// Sets every column on the positive side of the vertical plane through the
/// block centre with horizontal normal at `angle` to unknown.
pub fn mask_half_plane(block: &mut OccupancyBlock, angle: f64) {
    let [nx, ny, nz] = block.dims();
    let (c, s) = (angle.cos(), angle.sin());
    for y in 0..ny {
        for x in 0..nx {
            let rx = x as f64 + 0.5 - nx as f64 / 2.0;
            let ry = y as f64 + 0.5 - ny as f64 / 2.0;
            if rx * c + ry * s > 1e-9 {
                for z in 0..nz {
                    block.set(x, y, z, UNKNOWN);
                }
            }
        }
    }
}

/// Scan poses on a regular grid over the world's free space, `yaws` headings
/// at each position.
pub fn survey_poses(world: &World, spacing: f64, height: f64, yaws: usize) -> Vec<Pose> {
    let mut out = Vec::new();
    let b = &world.bounds;
    let mut y = b.min.y + spacing / 2.0;
    while y < b.max.y {
        let mut x = b.min.x + spacing / 2.0;
        while x < b.max.x {
            let p = Vec3::new(x, y, b.min.z + height);
            if world.clearance(&p) >= ROBOT_RADIUS {
                for k in 0..yaws {
                    out.push(Pose::new(p, -PI + (k as f64 + 0.5) * 2.0 * PI / yaws as f64));
                }
            }
            x += spacing;
        }
        y += spacing;
    }
    out
}

/// Builds one (input, target) pair centred on a randomly chosen scan pose.
/// The target integrates every scan; the input integrates a random half of
/// them and then loses one side of a random plane through the centre.
/// Input voxels are also forced unknown wherever the target is unknown, so
/// the input never knows more than the target.
pub fn make_training_pair<R: Rng>(
    world: &World,
    scan_poses: &[Pose],
    camera: &CameraModel,
    rng: &mut R,
) -> Result<(OccupancyBlock, OccupancyBlock), MapError> {
    assert!(!scan_poses.is_empty(), "no scan poses");
    let center = scan_poses[rng.gen_range(0..scan_poses.len())].position;
    let mut order: Vec<usize> = (0..scan_poses.len()).collect();
    order.shuffle(rng);
    let keep = order[..scan_poses.len().div_ceil(2)].to_vec();
    let angle = rng.gen_range(0.0..2.0 * PI);

    let mut full = world.empty_map(crate::block::BLOCK_RESOLUTION, MapParams::default())?;
    let mut half = full.clone();
    let mut in_half = vec![false; scan_poses.len()];
    keep.iter().for_each(|&i| in_half[i] = true);
    for (i, pose) in scan_poses.iter().enumerate() {
        let rays = render_depth(world, pose, camera);
        full.integrate_scan(&pose.position, &rays)?;
        if in_half[i] {
            half.integrate_scan(&pose.position, &rays)?;
        }
    }
    let target = full.extract_block(&center);
    let mut input = half.extract_block(&center);
    mask_half_plane(&mut input, angle);
    for i in 0..target.len() {
        if target.values()[i] == UNKNOWN {
            input.set_index(i, UNKNOWN);
        }
    }
    Ok((input, target))
}

/// Writes `<stem>.in` and `<stem>.tar` into `dir`.
pub fn save_pair(dir: &Path, stem: &str, input: &OccupancyBlock, target: &OccupancyBlock) -> Result<(), crate::block::BlockError> {
    input.save(&dir.join(format!("{stem}.in")))?;
    target.save(&dir.join(format!("{stem}.tar")))
}
