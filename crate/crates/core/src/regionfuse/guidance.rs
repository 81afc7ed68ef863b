use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{predict_x0, NoiseSchedule};
use crate::tensor::{mul_map, Map2, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceSpec {
    pub lambda_color: f64,
    pub lambda_texture: f64,
    /// Step size of the guided update.
    pub lambda_step: f64,
    pub cfg_scale: f64,
}

impl Default for GuidanceSpec {
    fn default() -> Self {
        GuidanceSpec {
            lambda_color: 1.0,
            lambda_texture: 0.2,
            lambda_step: 1.0,
            cfg_scale: 7.5,
        }
    }
}

impl GuidanceSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_color", self.lambda_color),
            ("lambda_texture", self.lambda_texture),
            ("lambda_step", self.lambda_step),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be a nonnegative number, got {v}"
                )));
            }
        }
        if !(self.cfg_scale >= 1.0 && self.cfg_scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "cfg_scale must be at least 1, got {}",
                self.cfg_scale
            )));
        }
        Ok(())
    }
}

/// Squared distance between the map-weighted mean color of `x̂_0` and
/// `target`, with its gradient with respect to `x_t`. The noise estimate is
/// held constant, so `∂x̂_0/∂x_t = 1/√ᾱ_t`.
pub fn color_gradient(
    x: &Tensor,
    eps: &Tensor,
    map: &Map2,
    target: [f64; 3],
    sched: &NoiseSchedule,
    t: usize,
) -> Result<(f64, Tensor)> {
    if x.dim().0 != 3 || (x.dim().1, x.dim().2) != map.dim() {
        return Err(Error::Shape(format!("x {:?} vs map {:?}", x.dim(), map.dim())));
    }
    let total = map.sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("color guidance over an empty region".into()));
    }
    let x0 = predict_x0(x, eps, t, sched)?;
    let w = map / total;
    let mut loss = 0.0;
    let mut diff = [0.0; 3];
    for (c, ch) in x0.outer_iter().enumerate() {
        let mean = (&ch * &w).sum();
        diff[c] = mean - target[c];
        loss += diff[c] * diff[c];
    }
    let scale = 2.0 / sched.alpha_bar(t).sqrt();
    let grad = Tensor::from_shape_fn(x.dim(), |(c, y, xx)| scale * w[[y, xx]] * diff[c]);
    Ok((loss, grad))
}

/// `F Fᵀ / (C N)` for a `C x N` feature matrix.
pub fn gram_matrix(features: &Array2<f64>) -> Array2<f64> {
    let (c, n) = features.dim();
    features.dot(&features.t()) / (c * n) as f64
}

/// Differentiable feature maps used by the texture loss.
pub trait FeatureExtractor: Send + Sync {
    /// Feature matrices (channels x positions), one per layer.
    fn features(&self, img: &Tensor) -> Result<Vec<Array2<f64>>>;

    /// Vector-Jacobian product: maps per-layer feature gradients back to
    /// the input image.
    fn backward(&self, img: &Tensor, grads: &[Array2<f64>]) -> Result<Tensor>;
}

/// A single 3x3 convolution with zero padding and fixed seeded weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvExtractor {
    /// (out, in, 3, 3)
    pub weights: Array4<f64>,
}

impl ConvExtractor {
    pub fn seeded(in_channels: usize, out_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / ((in_channels * 9) as f64).sqrt();
        ConvExtractor {
            weights: Array4::from_shape_simple_fn((out_channels, in_channels, 3, 3), || {
                scale * rng.gen_range(-1.0..1.0)
            }),
        }
    }

    /// Four output channels over RGB, seed 0.
    pub fn reference() -> Self {
        Self::seeded(3, 4, 0)
    }

    fn check(&self, img: &Tensor) -> Result<()> {
        if img.dim().0 != self.weights.dim().1 {
            return Err(Error::Shape(format!(
                "extractor takes {} channels, image has {}",
                self.weights.dim().1,
                img.dim().0
            )));
        }
        Ok(())
    }
}

impl FeatureExtractor for ConvExtractor {
    fn features(&self, img: &Tensor) -> Result<Vec<Array2<f64>>> {
        self.check(img)?;
        let (cin, h, w) = img.dim();
        let cout = self.weights.dim().0;
        let mut out = Array2::zeros((cout, h * w));
        for o in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for dy in 0..3 {
                            let Some(yy) = (y + dy).checked_sub(1).filter(|&v| v < h) else {
                                continue;
                            };
                            for dx in 0..3 {
                                let Some(xx) = (x + dx).checked_sub(1).filter(|&v| v < w) else {
                                    continue;
                                };
                                acc += self.weights[[o, c, dy, dx]] * img[[c, yy, xx]];
                            }
                        }
                    }
                    out[[o, y * w + x]] = acc;
                }
            }
        }
        Ok(vec![out])
    }

    fn backward(&self, img: &Tensor, grads: &[Array2<f64>]) -> Result<Tensor> {
        self.check(img)?;
        let (cin, h, w) = img.dim();
        let cout = self.weights.dim().0;
        let [g] = grads else {
            return Err(Error::Shape(format!("expected 1 layer gradient, got {}", grads.len())));
        };
        if g.dim() != (cout, h * w) {
            return Err(Error::Shape(format!("layer gradient is {:?}", g.dim())));
        }
        let mut out = Tensor::zeros((cin, h, w));
        for o in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let go = g[[o, y * w + x]];
                    for c in 0..cin {
                        for dy in 0..3 {
                            let Some(yy) = (y + dy).checked_sub(1).filter(|&v| v < h) else {
                                continue;
                            };
                            for dx in 0..3 {
                                let Some(xx) = (x + dx).checked_sub(1).filter(|&v| v < w) else {
                                    continue;
                                };
                                out[[c, yy, xx]] += self.weights[[o, c, dy, dx]] * go;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Repeats `texture` to cover a `(h, w)` grid, anchored at the top-left.
pub fn tile_texture(texture: &Tensor, (h, w): (usize, usize)) -> Tensor {
    let (c, th, tw) = texture.dim();
    Tensor::from_shape_fn((c, h, w), |(ch, y, x)| texture[[ch, y % th, x % tw]])
}

/// Gram-matrix texture loss of the blend `M x̂_0 + (1 - M) texture` against
/// the texture itself, with its gradient with respect to `x_t`.
#[allow(clippy::too_many_arguments)]
pub fn texture_gradient(
    x: &Tensor,
    eps: &Tensor,
    map: &Map2,
    texture: &Tensor,
    extractor: &dyn FeatureExtractor,
    sched: &NoiseSchedule,
    t: usize,
) -> Result<(f64, Tensor)> {
    if texture.dim() != x.dim() || (x.dim().1, x.dim().2) != map.dim() {
        return Err(Error::Shape(format!(
            "x {:?}, texture {:?}, map {:?}",
            x.dim(),
            texture.dim(),
            map.dim()
        )));
    }
    let x0 = predict_x0(x, eps, t, sched)?;
    let mut blend = mul_map(&x0, map);
    let rest = map.mapv(|m| 1.0 - m);
    blend += &mul_map(texture, &rest);

    let fb = extractor.features(&blend)?;
    let fa = extractor.features(texture)?;
    if fb.len() != fa.len() {
        return Err(Error::Shape("extractor returned different layer counts".into()));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(fb.len());
    for (b, a) in fb.iter().zip(&fa) {
        if b.dim() != a.dim() {
            return Err(Error::Shape(format!("layer shapes {:?} vs {:?}", b.dim(), a.dim())));
        }
        let (c, n) = b.dim();
        let diff = gram_matrix(b) - gram_matrix(a);
        loss += diff.iter().map(|d| d * d).sum::<f64>();
        grads.push(diff.dot(b) * (4.0 / (c * n) as f64));
    }
    let d_blend = extractor.backward(&blend, &grads)?;
    let grad = mul_map(&d_blend, map) / sched.alpha_bar(t).sqrt();
    Ok((loss, grad))
}

/// `x_t - λ_step · M · gradient`; a non-finite gradient aborts.
pub fn apply_guidance_update(
    x: &Tensor,
    map: &Map2,
    gradient: &Tensor,
    spec: &GuidanceSpec,
    span_id: usize,
) -> Result<Tensor> {
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { span_id });
    }
    if gradient.dim() != x.dim() {
        return Err(Error::Shape(format!(
            "gradient {:?} vs x {:?}",
            gradient.dim(),
            x.dim()
        )));
    }
    let step = mul_map(gradient, map) * spec.lambda_step;
    Ok(x - &step)
}
