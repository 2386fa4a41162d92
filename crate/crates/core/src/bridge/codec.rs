//! Tensor payloads: `{"shape":[..],"data":"<base64 of little-endian f32>"}`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::detector::MapStack;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Image, Tensor2D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorPayload {
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorPayload {
    pub fn encode(shape: Vec<usize>, values: &[f32]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self { shape, data: STANDARD.encode(bytes) }
    }

    pub fn decode(&self) -> Result<Vec<f32>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Protocol(format!("bad base64 payload: {e}")))?;
        let n: usize = self.shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(Error::Protocol(format!(
                "payload of shape {:?} carries {} bytes, expected {}",
                self.shape,
                bytes.len(),
                n * 4
            )));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol("non-finite value in tensor payload".into()));
        }
        Ok(values)
    }

    /// `[C, H, W]`, or an error for any other rank.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            s => Err(Error::Protocol(format!("expected a rank-3 shape, got {s:?}"))),
        }
    }

    pub fn from_image<T: Scalar>(image: &Image<T>) -> Self {
        let values: Vec<f32> = image.data().iter().map(|v| v.as_f32()).collect();
        Self::encode(vec![image.channels(), image.height(), image.width()], &values)
    }

    pub fn to_image<T: Scalar>(&self) -> Result<Image<T>> {
        let (c, h, w) = self.dims3()?;
        let values = self.decode()?;
        Image::new(w, h, c, values.into_iter().map(|v| T::lit(v as f64)).collect())
            .map_err(|e| Error::Protocol(format!("invalid image payload: {e}")))
    }

    pub fn from_stack<T: Scalar>(stack: &MapStack<T>) -> Self {
        let (w, h) = stack.dims();
        let values: Vec<f32> = stack.iter().flat_map(|m| m.data().iter().map(|v| v.as_f32())).collect();
        Self::encode(vec![stack.len(), h, w], &values)
    }

    pub fn to_stack<T: Scalar>(&self) -> Result<MapStack<T>> {
        let (n, h, w) = self.dims3()?;
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::Protocol(format!("empty map stack shape {:?}", self.shape)));
        }
        let values = self.decode()?;
        let maps = values
            .chunks_exact(h * w)
            .map(|c| Tensor2D::from_raw(w, h, c.iter().map(|&v| T::lit(v as f64)).collect()))
            .collect();
        MapStack::new(maps)
    }
}
