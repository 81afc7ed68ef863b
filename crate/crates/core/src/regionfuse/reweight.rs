use crate::error::{Error, Result};

/// Weighted softmax `w_j e^{s_j} / Σ_k w_k e^{s_k}`.
pub fn reweight_attention(scores: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if scores.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} weights",
            scores.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::InvalidInput(format!("attention weight {w} must be positive")));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().zip(weights).map(|(s, w)| w * (s - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_weights_are_softmax() {
        let s = [0.3, -1.2, 2.0];
        let p = reweight_attention(&s, &[1.0; 3]).unwrap();
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        for (pi, si) in p.iter().zip(s) {
            assert!((pi - si.exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed() {
        let p = reweight_attention(&[0.0, 0.0], &[2.0, 1.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(reweight_attention(&[0.0], &[0.0]).is_err());
        assert!(reweight_attention(&[0.0, 1.0], &[1.0]).is_err());
    }
}
