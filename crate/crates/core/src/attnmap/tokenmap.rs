use std::collections::BTreeMap;

use super::label::SegmentAssignment;
use super::spectral::SegmentSet;
use crate::error::{Error, Result};
use crate::richdoc::UNFORMATTED_SPAN_ID;
use crate::tensor::{bilinear_resize, Grid, Map2};

pub const PARTITION_TOLERANCE: f64 = 1e-6;

/// Per-span spatial weights that sum to one at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMapSet {
    pub grid: Grid,
    pub maps: BTreeMap<usize, Map2>,
}

impl TokenMapSet {
    pub fn get(&self, span_id: usize) -> Option<&Map2> {
        self.maps.get(&span_id)
    }

    pub fn span_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.maps.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// Largest deviation of the per-pixel span sum from one.
    pub fn partition_error(&self) -> f64 {
        let mut sum = Map2::zeros(self.grid);
        for m in self.maps.values() {
            sum += m;
        }
        sum.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Checks shapes, the [0, 1] range and the partition of unity.
    pub fn validate(&self) -> Result<()> {
        for (id, m) in &self.maps {
            if m.dim() != self.grid {
                return Err(Error::Shape(format!(
                    "map for span {id} is {:?}, grid is {:?}",
                    m.dim(),
                    self.grid
                )));
            }
            if m.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Invariant(format!("map for span {id} leaves [0, 1]")));
            }
        }
        let err = self.partition_error();
        if err > PARTITION_TOLERANCE {
            return Err(Error::Invariant(format!(
                "token maps miss partition of unity by {err:e}"
            )));
        }
        Ok(())
    }
}

/// Each span's weight at a pixel is the number of its segments covering the
/// pixel divided by the total number of span claims on that pixel. Spans
/// listed in `span_ids` but absent from the assignment get an all-zero map.
pub fn build_token_maps(
    assignment: &SegmentAssignment,
    segments: &SegmentSet,
    span_ids: impl IntoIterator<Item = usize>,
) -> Result<TokenMapSet> {
    let grid = segments.grid;
    let n = grid.0 * grid.1;
    let mut counts: BTreeMap<usize, Vec<f64>> = span_ids.into_iter().map(|id| (id, vec![0.0; n])).collect();
    let mut total = vec![0.0; n];
    for (&id, segs) in assignment {
        let c = counts.entry(id).or_insert_with(|| vec![0.0; n]);
        for (p, &l) in segments.labels.iter().enumerate() {
            if segs.contains(&l) {
                c[p] += 1.0;
                total[p] += 1.0;
            }
        }
    }
    if let Some(p) = total.iter().position(|&t| t == 0.0) {
        return Err(Error::Invariant(format!("pixel {p} is claimed by no span")));
    }
    let maps = counts
        .into_iter()
        .map(|(id, c)| {
            let m = c.iter().zip(&total).map(|(c, t)| c / t).collect();
            (id, Map2::from_shape_vec(grid, m).expect("grid-sized buffer"))
        })
        .collect();
    Ok(TokenMapSet { grid, maps })
}

/// Turns externally produced region masks into token maps. Mask pixels above
/// 0.5 count as covered; a pixel claimed by several spans is split equally
/// and a pixel claimed by none goes to the unformatted span.
pub fn import_external_masks(masks: &BTreeMap<usize, Map2>, grid: Grid) -> Result<TokenMapSet> {
    for (id, m) in masks {
        if m.dim() != grid {
            return Err(Error::Shape(format!(
                "mask for span {id} is {:?}, expected {grid:?}",
                m.dim()
            )));
        }
    }
    let mut maps: BTreeMap<usize, Map2> = masks.keys().map(|&id| (id, Map2::zeros(grid))).collect();
    maps.entry(UNFORMATTED_SPAN_ID).or_insert_with(|| Map2::zeros(grid));
    for y in 0..grid.0 {
        for x in 0..grid.1 {
            let claimants: Vec<usize> = masks
                .iter()
                .filter(|(_, m)| m[[y, x]] > 0.5)
                .map(|(&id, _)| id)
                .collect();
            if claimants.is_empty() {
                maps.get_mut(&UNFORMATTED_SPAN_ID).expect("inserted above")[[y, x]] = 1.0;
            } else {
                let share = 1.0 / claimants.len() as f64;
                for id in claimants {
                    maps.get_mut(&id).expect("keyed from masks")[[y, x]] = share;
                }
            }
        }
    }
    Ok(TokenMapSet { grid, maps })
}

/// Bilinear upsampling followed by per-pixel renormalization.
pub fn resample_maps(set: &TokenMapSet, target: Grid) -> Result<TokenMapSet> {
    if target.0 < set.grid.0 || target.1 < set.grid.1 {
        return Err(Error::InvalidInput(format!(
            "cannot downsample token maps from {:?} to {target:?}",
            set.grid
        )));
    }
    if target == set.grid {
        return Ok(set.clone());
    }
    let mut maps: BTreeMap<usize, Map2> = set
        .maps
        .iter()
        .map(|(&id, m)| (id, bilinear_resize(m, target)))
        .collect();
    let mut sum = Map2::zeros(target);
    for m in maps.values() {
        sum += m;
    }
    for m in maps.values_mut() {
        m.zip_mut_with(&sum, |v, &s| *v = if s > 0.0 { *v / s } else { 0.0 });
    }
    Ok(TokenMapSet { grid: target, maps })
}
