use super::record::{AttentionRecord, CrossAttentionScores};
use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, Map2};

/// Softmax over tokens at every pixel of one capture, as a `tokens x pixels`
/// matrix in f64.
pub fn token_softmax(c: &CrossAttentionScores) -> ndarray::Array2<f64> {
    weighted_token_softmax(c, None)
}

/// Token softmax with per-token multiplicative weights, i.e. the softmax of
/// `s_j + ln w_j`.
fn weighted_token_softmax(c: &CrossAttentionScores, log_weights: Option<&[f64]>) -> ndarray::Array2<f64> {
    let mut probs = c.scores.mapv(f64::from);
    if let Some(lw) = log_weights {
        for (mut row, &l) in probs.outer_iter_mut().zip(lw) {
            row += l;
        }
    }
    for mut col in probs.columns_mut() {
        let max = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        col.mapv_inplace(|v| (v - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    probs
}

/// Per-token attention maps at the record grid, averaged over every
/// retained capture (all layers, heads and timesteps).
pub fn averaged_token_maps(record: &AttentionRecord) -> Result<Vec<Map2>> {
    reweighted_token_maps(record, None)
}

/// [`averaged_token_maps`] with each token's attention scaled by a positive
/// weight before normalization.
pub fn reweighted_token_maps(record: &AttentionRecord, weights: Option<&[f64]>) -> Result<Vec<Map2>> {
    let retained: Vec<&CrossAttentionScores> = record.cross.iter().filter(|c| c.tag.retained()).collect();
    let Some(first) = retained.first() else {
        return Err(Error::InvalidInput("no retained cross-attention captures".into()));
    };
    let tokens = first.num_tokens();
    let log_weights = match weights {
        Some(w) if w.len() != tokens => {
            return Err(Error::Shape(format!("{} weights for {tokens} tokens", w.len())));
        }
        Some(w) if w.iter().any(|v| !(*v > 0.0)) => {
            return Err(Error::InvalidInput("token weights must be positive".into()));
        }
        Some(w) => Some(w.iter().map(|v| v.ln()).collect::<Vec<_>>()),
        None => None,
    };
    let mut acc = vec![Map2::zeros(record.grid); tokens];
    for c in &retained {
        if c.num_tokens() != tokens {
            return Err(Error::Shape(format!(
                "capture has {} tokens, expected {tokens}",
                c.num_tokens()
            )));
        }
        if c.scores.ncols() != c.grid.0 * c.grid.1 {
            return Err(Error::Shape(format!("capture scores do not match grid {:?}", c.grid)));
        }
        let probs = weighted_token_softmax(c, log_weights.as_deref());
        for (j, row) in probs.outer_iter().enumerate() {
            let map = Map2::from_shape_vec(c.grid, row.to_vec()).expect("row length checked");
            acc[j] += &bilinear_resize(&map, record.grid);
        }
    }
    let n = retained.len() as f64;
    for m in &mut acc {
        *m /= n;
    }
    Ok(acc)
}

/// Averaged attention map of a single token.
pub fn normalize_cross_scores(record: &AttentionRecord, token: usize) -> Result<Map2> {
    let mut maps = averaged_token_maps(record)?;
    if token >= maps.len() {
        return Err(Error::InvalidInput(format!(
            "token {token} not captured ({} tokens present)",
            maps.len()
        )));
    }
    Ok(maps.swap_remove(token))
}
