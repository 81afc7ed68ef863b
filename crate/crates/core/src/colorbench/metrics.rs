use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Map2, Tensor};

/// Mask values above this count as inside the region.
pub const MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorMetricsReport {
    pub mean_distance: f64,
    pub min_distance: f64,
    pub region_pixel_count: usize,
}

/// Per-pixel L2 distance to `target` over the binarized mask, divided by
/// `sqrt(3)` so colors in `[0, 1]` give distances in `[0, 1]`.
pub fn region_color_distance(image: &Tensor, mask: &Map2, target: [f64; 3]) -> Result<ColorMetricsReport> {
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected an RGB image, got {c} channels")));
    }
    if mask.dim() != (h, w) {
        return Err(Error::Shape(format!("mask is {:?}, image is {:?}", mask.dim(), (h, w))));
    }
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut count = 0;
    for ((y, x), &m) in mask.indexed_iter() {
        if m <= MASK_THRESHOLD {
            continue;
        }
        let d2: f64 = (0..3).map(|k| (image[[k, y, x]] - target[k]).powi(2)).sum();
        let d = (d2 / 3.0).sqrt();
        sum += d;
        min = min.min(d);
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput("color region is empty".into()));
    }
    Ok(ColorMetricsReport {
        mean_distance: sum / count as f64,
        min_distance: min,
        region_pixel_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::uniform_image;

    #[test]
    fn region_at_target() {
        let img = uniform_image((4, 4), [0.2, 0.4, 0.6]);
        let r = region_color_distance(&img, &Map2::ones((4, 4)), [0.2, 0.4, 0.6]).unwrap();
        assert_eq!((r.mean_distance, r.min_distance, r.region_pixel_count), (0.0, 0.0, 16));
    }

    #[test]
    fn white_against_black_is_one() {
        let img = uniform_image((2, 3), [1.0; 3]);
        let r = region_color_distance(&img, &Map2::ones((2, 3)), [0.0; 3]).unwrap();
        assert!((r.mean_distance - 1.0).abs() < 1e-15);
        assert!((r.min_distance - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_pixel_region() {
        let mut img = uniform_image((1, 3), [0.7; 3]);
        for c in 0..3 {
            img[[c, 0, 0]] = 0.0;
            img[[c, 0, 1]] = 1.0;
        }
        let mask = ndarray::array![[1.0, 0.9, 0.5]];
        let r = region_color_distance(&img, &mask, [0.0; 3]).unwrap();
        assert_eq!(r.region_pixel_count, 2);
        assert_eq!(r.min_distance, 0.0);
        assert!((r.mean_distance - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_region_and_shape_errors() {
        let img = uniform_image((2, 2), [0.0; 3]);
        assert!(region_color_distance(&img, &Map2::from_elem((2, 2), 0.5), [0.0; 3]).is_err());
        assert!(region_color_distance(&img, &Map2::ones((3, 2)), [0.0; 3]).is_err());
    }
}
