use crate::error::{Error, Result};
use crate::tensor::{Map2, Tensor};

/// `M x_plain + (1 - M) x`, broadcasting the map over channels.
pub fn blend_plain(x: &Tensor, x_plain: &Tensor, map_unformatted: &Map2) -> Result<Tensor> {
    if x.dim() != x_plain.dim() || (x.dim().1, x.dim().2) != map_unformatted.dim() {
        return Err(Error::Shape(format!(
            "x {:?}, plain {:?}, map {:?}",
            x.dim(),
            x_plain.dim(),
            map_unformatted.dim()
        )));
    }
    let mut out = x.clone();
    for (mut o, p) in out.outer_iter_mut().zip(x_plain.outer_iter()) {
        ndarray::Zip::from(&mut o)
            .and(&p)
            .and(map_unformatted)
            .for_each(|v, &pv, &m| *v = m * pv + (1.0 - m) * *v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_and_midpoint() {
        let x = Tensor::zeros((3, 2, 2));
        let p = Tensor::from_elem((3, 2, 2), 2.0);
        assert_eq!(blend_plain(&x, &p, &Map2::ones((2, 2))).unwrap(), p);
        assert_eq!(blend_plain(&x, &p, &Map2::zeros((2, 2))).unwrap(), x);
        assert!(blend_plain(&x, &p, &Map2::from_elem((2, 2), 0.5))
            .unwrap()
            .iter()
            .all(|&v| v == 1.0));
    }
}
