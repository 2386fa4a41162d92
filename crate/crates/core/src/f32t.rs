//! `.f32t` raster files: `b"F32T"`, then `C`, `H`, `W` as little-endian `u32`,
//! then `C·H·W` little-endian `f32` values in planar channel order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Image, Tensor2D};

pub const MAGIC: &[u8; 4] = b"F32T";

/// A decoded `.f32t` payload.
#[derive(Clone, Debug, PartialEq)]
pub struct F32Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl F32Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dim(format!(
                "f32t shape {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn from_map<T: Scalar>(map: &Tensor2D<T>) -> Self {
        Self {
            channels: 1,
            height: map.height(),
            width: map.width(),
            data: map.data().iter().map(|v| v.as_f32()).collect(),
        }
    }

    pub fn from_maps<T: Scalar>(maps: &[Tensor2D<T>]) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::dim("empty map stack"))?;
        if maps.iter().any(|m| m.dims() != first.dims()) {
            return Err(Error::dim("maps in a stack must share one size"));
        }
        Ok(Self {
            channels: maps.len(),
            height: first.height(),
            width: first.width(),
            data: maps.iter().flat_map(|m| m.data().iter().map(|v| v.as_f32())).collect(),
        })
    }

    pub fn from_image<T: Scalar>(image: &Image<T>) -> Self {
        Self {
            channels: image.channels(),
            height: image.height(),
            width: image.width(),
            data: image.data().iter().map(|v| v.as_f32()).collect(),
        }
    }

    pub fn to_map<T: Scalar>(&self) -> Result<Tensor2D<T>> {
        if self.channels != 1 {
            return Err(Error::dim(format!("expected a single map, file has {} channels", self.channels)));
        }
        Tensor2D::new(self.width, self.height, self.data.iter().map(|&v| T::lit(v as f64)).collect())
    }

    pub fn to_maps<T: Scalar>(&self) -> Result<Vec<Tensor2D<T>>> {
        let n = self.width * self.height;
        if n == 0 {
            return Err(Error::dim("zero-sized maps"));
        }
        self.data
            .chunks_exact(n)
            .map(|c| Tensor2D::new(self.width, self.height, c.iter().map(|&v| T::lit(v as f64)).collect()))
            .collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for d in [self.channels, self.height, self.width] {
            let d = u32::try_from(d).map_err(|_| Error::dim("f32t dimension exceeds u32"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("missing F32T magic".into()));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [channels, height, width] = dims;
        let n = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Format("f32t shape overflows".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n * 4 {
            return Err(Error::Format(format!(
                "f32t payload has {} bytes, shape needs {}",
                bytes.len(),
                n * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { channels, height, width, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
