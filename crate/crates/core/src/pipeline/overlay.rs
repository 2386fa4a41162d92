use std::path::Path;
use std::sync::OnceLock;

use image::{Rgb, RgbImage};

use crate::detector::BBox;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{minmax_normalize, Image, Tensor2D};

/// Colour of the target box outline.
pub const BOX_COLOR: [u8; 3] = [0, 255, 0];

/// Number of entries in the colour table.
pub const COLORMAP: usize = 256;

/// The jet table: entry `i` at `t = i/255` is
/// `(clamp(1.5-|4t-3|), clamp(1.5-|4t-2|), clamp(1.5-|4t-1|))`, scaled to
/// `0..=255` and rounded. Entry 0 is dark blue, entry 255 dark red.
pub fn colormap() -> &'static [[u8; 3]; COLORMAP] {
    static TABLE: OnceLock<[[u8; 3]; COLORMAP]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0u8; 3]; COLORMAP];
        for (i, e) in t.iter_mut().enumerate() {
            let x = i as f64 / 255.0;
            let ch = |c: f64| ((1.5 - (4.0 * x - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
            *e = [ch(3.0), ch(2.0), ch(1.0)];
        }
        t
    })
}

/// Normalizes the saliency, maps it through [`colormap`], blends it at 50%
/// over the image and outlines `target` with a 2-pixel rectangle.
pub fn render_overlay<T: Scalar>(image: &Image<T>, saliency: &Tensor2D<T>, target: &BBox<T>) -> Result<RgbImage> {
    if image.dims() != saliency.dims() {
        return Err(Error::dim("saliency and image differ in size"));
    }
    let (w, h) = image.dims();
    let rgb = image.to_rgb();
    let norm = minmax_normalize(saliency);
    let table = colormap();
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let idx = (norm.get(x, y).as_f64() * 255.0).round() as usize;
            let color = table[idx.min(255)];
            let mut px = [0u8; 3];
            for c in 0..3 {
                let base = rgb.get(c, x, y).as_f64() * 255.0;
                px[c] = (0.5 * base + 0.5 * color[c] as f64).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    draw_box(&mut out, target);
    Ok(out)
}

fn draw_box<T: Scalar>(img: &mut RgbImage, b: &BBox<T>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = b.x1.as_f64().floor() as i64;
    let y0 = b.y1.as_f64().floor() as i64;
    let x1 = b.x2.as_f64().ceil() as i64 - 1;
    let y1 = b.y2.as_f64().ceil() as i64 - 1;
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, Rgb(BOX_COLOR));
        }
    };
    for t in 0..2 {
        for x in x0..=x1 {
            put(x, y0 + t);
            put(x, y1 - t);
        }
        for y in y0..=y1 {
            put(x0 + t, y);
            put(x1 - t, y);
        }
    }
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    img.save(path.as_ref()).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    })
}
