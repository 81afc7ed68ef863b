use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_shapes(x: &Tensor, eps: &Tensor) -> Result<()> {
    if x.dim() != eps.dim() {
        return Err(Error::Shape(format!("x is {:?} but eps is {:?}", x.dim(), eps.dim())));
    }
    Ok(())
}

/// Clean-image estimate `x̂_0 = (x - √(1-ᾱ_t) ε̂) / √ᾱ_t`.
pub fn predict_x0(x: &Tensor, eps: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    check_shapes(x, eps)?;
    if t > sched.t_max() {
        return Err(Error::InvalidInput(format!(
            "t={t} beyond schedule length {}",
            sched.t_max()
        )));
    }
    let a = sched.alpha_bar(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let mut out = x.clone();
    out.zip_mut_with(eps, |v, &e| *v = (*v - sn * e) / sa);
    Ok(out)
}

/// Forward noising `√ᾱ_t x_0 + √(1-ᾱ_t) ε`.
pub fn add_noise(x0: &Tensor, eps: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    check_shapes(x0, eps)?;
    let a = sched.alpha_bar(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let mut out = x0.clone();
    out.zip_mut_with(eps, |v, &e| *v = sa * *v + sn * e);
    Ok(out)
}

/// Standard deviation of the fresh noise added when stepping `t -> t-1`.
pub fn ddim_sigma(t: usize, sched: &NoiseSchedule) -> f64 {
    if sched.eta == 0.0 {
        return 0.0;
    }
    let (a_t, a_prev) = (sched.alpha_bar(t), sched.alpha_bar(t - 1));
    if a_t >= 1.0 {
        return 0.0;
    }
    sched.eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).sqrt()
}

/// One eta-parameterized DDIM step from `t` to `t-1`. Noise is drawn from
/// `rng` only when the step is stochastic.
pub fn reverse_step<R: Rng + ?Sized>(
    x: &Tensor,
    eps: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    if t == 0 {
        return Err(Error::InvalidInput("cannot step below t=0".into()));
    }
    let x0 = predict_x0(x, eps, t, sched)?;
    let a_prev = sched.alpha_bar(t - 1);
    let sigma = ddim_sigma(t, sched);
    let dir = (1.0 - a_prev - sigma * sigma).max(0.0).sqrt();
    let sa = a_prev.sqrt();
    let mut out = x0;
    out.zip_mut_with(eps, |v, &e| *v = sa * *v + dir * e);
    if sigma > 0.0 {
        out.mapv_inplace(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(out)
}

/// Standard normal tensor drawn in row-major order.
pub fn gaussian<R: Rng + ?Sized>(shape: (usize, usize, usize), rng: &mut R) -> Tensor {
    Tensor::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}
