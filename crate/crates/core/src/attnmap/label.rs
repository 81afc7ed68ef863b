use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::spectral::SegmentSet;
use crate::error::{Error, Result};
use crate::richdoc::{SpanAnnotation, UNFORMATTED_SPAN_ID};
use crate::tensor::Map2;

/// How normalized attention is pooled over a segment before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelReducer {
    /// Average over the segment's pixels; keeps the threshold independent of
    /// segment size.
    #[default]
    Mean,
    /// Sum over the segment's pixels.
    Sum,
}

/// Segments claimed by each span, keyed by span id.
pub type SegmentAssignment = BTreeMap<usize, BTreeSet<usize>>;

/// Min-max normalization to [0, 1]; a constant map normalizes to all zeros.
pub fn min_max_normalize(m: &Map2) -> Map2 {
    let lo = m.fold(f64::INFINITY, |a, &v| a.min(v));
    let hi = m.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    if !(hi > lo) {
        return Map2::zeros(m.dim());
    }
    m.mapv(|v| (v - lo) / (hi - lo))
}

/// Assigns each segment to every formatted span that has a token whose
/// pooled normalized attention over the segment exceeds `epsilon`. Segments
/// left unclaimed go to the unformatted span.
pub fn label_segments(
    segments: &SegmentSet,
    token_maps: &[Map2],
    spans: &[SpanAnnotation],
    epsilon: f64,
    reducer: LabelReducer,
) -> Result<SegmentAssignment> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let sizes = segments.sizes();
    let mut assignment: SegmentAssignment = spans.iter().map(|s| (s.span_id, BTreeSet::new())).collect();
    assignment.entry(UNFORMATTED_SPAN_ID).or_default();

    let mut normalized: BTreeMap<usize, Map2> = BTreeMap::new();
    let mut claimed = vec![false; segments.k];
    for span in spans.iter().filter(|s| !s.is_unformatted) {
        for tok in span.token_indices() {
            let map = token_maps.get(tok).ok_or_else(|| {
                Error::InvalidInput(format!("no attention map for token {tok} of span {}", span.span_id))
            })?;
            if map.dim() != segments.grid {
                return Err(Error::Shape(format!(
                    "token map {:?} does not match segment grid {:?}",
                    map.dim(),
                    segments.grid
                )));
            }
            let norm = normalized.entry(tok).or_insert_with(|| min_max_normalize(map));
            let flat = norm.as_slice().expect("standard layout");
            let mut pooled = vec![0.0; segments.k];
            for (p, &l) in segments.labels.iter().enumerate() {
                pooled[l] += flat[p];
            }
            for (seg, total) in pooled.into_iter().enumerate() {
                let score = match reducer {
                    LabelReducer::Mean => total / sizes[seg] as f64,
                    LabelReducer::Sum => total,
                };
                if score > epsilon {
                    assignment.get_mut(&span.span_id).expect("seeded above").insert(seg);
                    claimed[seg] = true;
                }
            }
        }
    }
    let unformatted = assignment.get_mut(&UNFORMATTED_SPAN_ID).expect("seeded above");
    unformatted.extend((0..segments.k).filter(|&s| !claimed[s]));
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::richdoc::AttributeSet;

    pub(crate) fn span(id: usize, tokens: std::ops::Range<usize>) -> SpanAnnotation {
        SpanAnnotation {
            span_id: id,
            token_ranges: if tokens.is_empty() { vec![] } else { vec![tokens] },
            text: String::new(),
            attributes: AttributeSet::default(),
            is_unformatted: id == 0,
            element: None,
        }
    }

    fn halves() -> SegmentSet {
        SegmentSet::from_labels((2, 2), &[0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn indicator_map_claims_segment() {
        let tok = ndarray::array![[1.0, 1.0], [0.0, 0.0]];
        let a = label_segments(
            &halves(),
            &[Map2::zeros((2, 2)), tok],
            &[span(0, 0..1), span(1, 1..2)],
            0.3,
            LabelReducer::Mean,
        )
        .unwrap();
        assert_eq!(a[&1], BTreeSet::from([0]));
        assert_eq!(a[&0], BTreeSet::from([1]));
    }

    #[test]
    fn below_threshold_falls_to_unformatted() {
        // segment 0 has mean 0.2 after normalization, segment 1 has mean 0.5
        let tok = ndarray::array![[0.0, 0.4], [0.0, 1.0]];
        let a = label_segments(&halves(), &[tok], &[span(1, 0..1)], 0.3, LabelReducer::Mean).unwrap();
        assert_eq!(a[&1], BTreeSet::from([1]));
        assert_eq!(a[&0], BTreeSet::from([0]));
    }

    #[test]
    fn segment_claimed_by_two_spans() {
        let a_map = ndarray::array![[1.0, 1.0], [0.0, 0.0]];
        let b_map = ndarray::array![[0.9, 0.8], [0.0, 0.1]];
        let a = label_segments(
            &halves(),
            &[a_map, b_map],
            &[span(1, 0..1), span(2, 1..2)],
            0.3,
            LabelReducer::Mean,
        )
        .unwrap();
        assert!(a[&1].contains(&0) && a[&2].contains(&0));
        assert!(a[&0].contains(&1));
    }

    #[test]
    fn constant_map_never_claims() {
        let a = label_segments(
            &halves(),
            &[Map2::from_elem((2, 2), 0.7)],
            &[span(1, 0..1)],
            0.3,
            LabelReducer::Mean,
        )
        .unwrap();
        assert!(a[&1].is_empty());
        assert_eq!(a[&0], BTreeSet::from([0, 1]));
    }

    #[test]
    fn sum_reducer_scales_with_size() {
        // mean 0.25 on segment 0 misses, but the sum 0.5 clears the threshold
        let tok = ndarray::array![[0.5, 0.0], [1.0, 1.0]];
        let mean = label_segments(&halves(), &[tok.clone()], &[span(1, 0..1)], 0.3, LabelReducer::Mean).unwrap();
        let sum = label_segments(&halves(), &[tok], &[span(1, 0..1)], 0.3, LabelReducer::Sum).unwrap();
        assert!(!mean[&1].contains(&0));
        assert!(sum[&1].contains(&0));
    }

    #[test]
    fn epsilon_bounds() {
        for eps in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(label_segments(&halves(), &[], &[], eps, LabelReducer::Mean).is_err());
        }
    }
}
