use std::path::Path;

use image::{DynamicImage, ImageReader};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{bilinear_resize, Image, Tensor2D};

/// Square side every input is resized to.
pub const DEFAULT_INPUT_SIZE: usize = 512;

/// Loads an 8/16-bit grayscale or RGB PNG, scales it to `[0, 1]`, replicates
/// single-channel data to three channels and bilinearly resizes each channel
/// to `width × height`.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Image<T>> {
    let path = path.as_ref();
    let decoded = ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Format(format!("{}: {other}", path.display())),
        })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, values): (usize, Vec<T>) = match &decoded {
        DynamicImage::ImageLuma8(b) => (1, scale(b.as_raw().iter().map(|&v| v as f64), 255.0)),
        DynamicImage::ImageLuma16(b) => (1, scale(b.as_raw().iter().map(|&v| v as f64), 65535.0)),
        DynamicImage::ImageRgb8(b) => (3, scale(b.as_raw().iter().map(|&v| v as f64), 255.0)),
        DynamicImage::ImageRgb16(b) => (3, scale(b.as_raw().iter().map(|&v| v as f64), 65535.0)),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported pixel layout {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let planes = (0..channels)
        .map(|c| {
            let plane = Tensor2D::from_raw(w, h, values.iter().skip(c).step_by(channels).copied().collect());
            bilinear_resize(&plane, width, height)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Image::from_planes(&planes)?.to_rgb())
}

fn scale<T: Scalar>(values: impl Iterator<Item = f64>, max: f64) -> Vec<T> {
    values.map(|v| T::lit(v / max)).collect()
}
