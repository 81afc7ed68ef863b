//! Array aliases and small resampling helpers shared across modules.

use ndarray::{Array2, Array3};

/// Image-like tensor laid out as (channels, height, width).
pub type Tensor = Array3<f64>;

/// Single-channel spatial map laid out as (height, width).
pub type Map2 = Array2<f64>;

/// Spatial resolution as (height, width).
pub type Grid = (usize, usize);

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn bilinear_resize(src: &Map2, (h, w): Grid) -> Map2 {
    let (sh, sw) = src.dim();
    if (sh, sw) == (h, w) {
        return src.clone();
    }
    let sample = |dst: usize, dst_len: usize, src_len: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, pos - lo as f64)
    };
    Map2::from_shape_fn((h, w), |(y, x)| {
        let (y0, y1, fy) = sample(y, h, sh);
        let (x0, x1, fx) = sample(x, w, sw);
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Broadcasts a (H, W) map across the channels of a (C, H, W) tensor and
/// multiplies elementwise.
pub fn mul_map(t: &Tensor, m: &Map2) -> Tensor {
    let mut out = t.clone();
    for mut ch in out.outer_iter_mut() {
        ch *= m;
    }
    out
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Converts a (3, H, W) tensor in [0, 1] to 8-bit RGB, clamping out-of-range
/// values.
pub fn to_rgb8(t: &Tensor) -> image::RgbImage {
    let (c, h, w) = t.dim();
    assert_eq!(c, 3, "expected an RGB tensor");
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| (t[[ch, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// PNG bytes of [`to_rgb8`]; a non-RGB tensor is an error.
pub fn encode_rgb_png(t: &Tensor) -> crate::Result<Vec<u8>> {
    if t.dim().0 != 3 {
        return Err(crate::Error::Shape(format!(
            "expected an RGB tensor, got {:?}",
            t.dim()
        )));
    }
    let mut out = std::io::Cursor::new(Vec::new());
    to_rgb8(t)
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| crate::Error::Image {
            reference: "generated image".into(),
            message: e.to_string(),
        })?;
    Ok(out.into_inner())
}

pub fn from_rgb8(img: &image::RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    Tensor::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
    })
}
