use std::collections::BTreeMap;

use crate::attnmap::TokenMapSet;
use crate::error::{Error, Result};
use crate::tensor::{Map2, Tensor};

/// Token-map-weighted sum of per-span noise predictions.
pub fn fuse_noise(region_eps: &BTreeMap<usize, Tensor>, maps: &TokenMapSet) -> Result<Tensor> {
    if region_eps.len() != maps.len() || region_eps.keys().any(|id| maps.get(*id).is_none()) {
        return Err(Error::InvalidInput(format!(
            "noise for spans {:?} but maps for spans {:?}",
            region_eps.keys().collect::<Vec<_>>(),
            maps.span_ids().collect::<Vec<_>>()
        )));
    }
    let mut fused: Option<Tensor> = None;
    for (id, eps) in region_eps {
        let m = &maps.maps[id];
        if (eps.dim().1, eps.dim().2) != m.dim() {
            return Err(Error::Shape(format!(
                "noise for span {id} is {:?}, map is {:?}",
                eps.dim(),
                m.dim()
            )));
        }
        match fused.as_mut() {
            None => fused = Some(weighted(eps, m)),
            Some(acc) => {
                for (mut acc_ch, eps_ch) in acc.outer_iter_mut().zip(eps.outer_iter()) {
                    ndarray::Zip::from(&mut acc_ch)
                        .and(&eps_ch)
                        .and(m)
                        .for_each(|a, &e, &w| *a += w * e);
                }
            }
        }
    }
    fused.ok_or_else(|| Error::InvalidInput("no region noise to fuse".into()))
}

fn weighted(eps: &Tensor, m: &Map2) -> Tensor {
    crate::tensor::mul_map(eps, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(entries: Vec<(usize, f64)>) -> TokenMapSet {
        TokenMapSet {
            grid: (2, 2),
            maps: entries
                .into_iter()
                .map(|(id, v)| (id, Map2::from_elem((2, 2), v)))
                .collect(),
        }
    }

    #[test]
    fn single_span_is_identity() {
        let e = Tensor::from_shape_fn((3, 2, 2), |(c, y, x)| (c + y + x) as f64 - 1.3);
        assert_eq!(fuse_noise(&[(0, e.clone())].into(), &maps(vec![(0, 1.0)])).unwrap(), e);
    }

    #[test]
    fn halves_average() {
        let a = Tensor::from_elem((3, 2, 2), 1.0);
        let b = Tensor::from_elem((3, 2, 2), 3.0);
        let f = fuse_noise(&[(0, a), (1, b)].into(), &maps(vec![(0, 0.5), (1, 0.5)])).unwrap();
        assert!(f.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn mismatch() {
        let a = Tensor::zeros((3, 2, 2));
        assert!(fuse_noise(&[(0, a.clone())].into(), &maps(vec![(1, 1.0)])).is_err());
        assert!(fuse_noise(&[(0, Tensor::zeros((3, 3, 2)))].into(), &maps(vec![(0, 1.0)])).is_err());
    }
}
