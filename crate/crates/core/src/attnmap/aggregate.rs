use ndarray::Array2;

use super::record::AttentionRecord;
use crate::error::{Error, Result};

/// Symmetric nonnegative pixel affinity.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    matrix: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c {
            return Err(Error::Shape(format!("similarity must be square, got {r}x{c}")));
        }
        for i in 0..r {
            for j in 0..=i {
                let (a, b) = (matrix[[i, j]], matrix[[j, i]]);
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::InvalidInput(format!("entry ({i},{j}) = {a}")));
                }
                if (a - b).abs() > 1e-8 {
                    return Err(Error::InvalidInput(format!("not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(SimilarityMatrix { matrix })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn side(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Mean of the retained self-attention maps, averaged with its transpose.
pub fn aggregate_self_attention(record: &AttentionRecord) -> Result<SimilarityMatrix> {
    if record.self_maps.is_empty() {
        return Err(Error::InvalidInput("no self-attention maps captured".into()));
    }
    let n = record.self_maps[0].probs.nrows();
    let mut acc = Array2::<f64>::zeros((n, n));
    let mut count = 0usize;
    for m in &record.self_maps {
        if m.probs.dim() != (n, n) {
            return Err(Error::Shape(format!(
                "self map is {:?}, expected {n}x{n}",
                m.probs.dim()
            )));
        }
        if !m.tag.retained() {
            continue;
        }
        acc.zip_mut_with(&m.probs, |a, &p| *a += f64::from(p));
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput(
            "every self-attention map falls in the discarded early steps".into(),
        ));
    }
    acc /= count as f64;
    let sym = (&acc + &acc.t()) * 0.5;
    SimilarityMatrix::new(sym)
}
