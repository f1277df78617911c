//! Trinary occupancy blocks: the fixed-size local crops fed to occupancy
//! predictors, plus their `SEERBLK1` on-disk format.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geom::Vec3;

/// Horizontal extent 8 m x 8 m, vertical 2.4 m, at 0.1 m.
pub const BLOCK_DIMS: [usize; 3] = [80, 80, 24];
pub const BLOCK_RESOLUTION: f64 = 0.1;

const BLOCK_MAGIC: &[u8; 8] = b"SEERBLK1";

pub const UNKNOWN: i8 = -1;
pub const FREE: i8 = 0;
pub const OCCUPIED: i8 = 1;

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic, expected SEERBLK1")]
    BadMagic,
    #[error("value {value} at index {index} is not trinary")]
    NotTrinary { index: usize, value: i8 },
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("block dims must be nonzero, got {0:?}")]
    ZeroDims([usize; 3]),
}

/// Trinary grid in x-fastest order. `origin` is the metric min corner the
/// block was cropped at; it is not persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyBlock {
    dims: [usize; 3],
    values: Vec<i8>,
    pub origin: Vec3,
    pub resolution: f64,
}

impl OccupancyBlock {
    pub fn unknown(dims: [usize; 3]) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            values: vec![UNKNOWN; n],
            origin: Vec3::zeros(),
            resolution: BLOCK_RESOLUTION,
        }
    }

    pub fn from_values(dims: [usize; 3], values: Vec<i8>) -> Result<Self, BlockError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(BlockError::ZeroDims(dims));
        }
        let expected: usize = dims.iter().product();
        if values.len() != expected {
            return Err(BlockError::Length { expected, got: values.len() });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(-1..=1).contains(*v)) {
            return Err(BlockError::NotTrinary { index, value });
        }
        Ok(Self {
            dims,
            values,
            origin: Vec3::zeros(),
            resolution: BLOCK_RESOLUTION,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> i8 {
        self.values[self.index(x, y, z)]
    }

    /// Panics on a non-trinary value.
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: i8) {
        assert!((-1..=1).contains(&v), "non-trinary value {v}");
        let i = self.index(x, y, z);
        self.values[i] = v;
    }

    pub fn set_index(&mut self, i: usize, v: i8) {
        assert!((-1..=1).contains(&v), "non-trinary value {v}");
        self.values[i] = v;
    }

    /// Metric center of block voxel `(x, y, z)`.
    pub fn center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin
            + Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * self.resolution
    }

    pub fn count(&self, v: i8) -> usize {
        self.values.iter().filter(|&&x| x == v).count()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(BLOCK_MAGIC)?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let bytes: Vec<u8> = self.values.iter().map(|&v| v as u8).collect();
        w.write_all(&bytes)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, BlockError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BLOCK_MAGIC {
            return Err(BlockError::BadMagic);
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n];
        r.read_exact(&mut raw)?;
        Self::from_values(dims, raw.into_iter().map(|b| b as i8).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), BlockError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BlockError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let mut b = OccupancyBlock::unknown([2, 1, 1]);
        b.set(1, 0, 0, OCCUPIED);
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        let mut expected = b"SEERBLK1".to_vec();
        expected.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0xff, 0x01]);
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            OccupancyBlock::read_from(&b"SEERBLK2xxxxxxxxxxxx"[..]),
            Err(BlockError::BadMagic)
        ));
        let mut buf = b"SEERBLK1".to_vec();
        buf.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 7]);
        assert!(matches!(
            OccupancyBlock::read_from(&buf[..]),
            Err(BlockError::NotTrinary { index: 0, value: 7 })
        ));
        assert!(OccupancyBlock::from_values([2, 2, 1], vec![0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn file_round_trip(dims in (1usize..6, 1usize..6, 1usize..6), seed in any::<u64>()) {
            let dims = [dims.0, dims.1, dims.2];
            let n = dims.iter().product::<usize>();
            let values: Vec<i8> = (0..n).map(|i| ((seed >> (i % 60)) % 3) as i8 - 1).collect();
            let b = OccupancyBlock::from_values(dims, values).unwrap();
            let mut buf = Vec::new();
            b.write_to(&mut buf).unwrap();
            prop_assert_eq!(buf.len(), 8 + 12 + n);
            let back = OccupancyBlock::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back, b);
        }
    }
}
