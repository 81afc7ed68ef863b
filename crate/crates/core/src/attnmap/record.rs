use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Grid;

/// Captures from the earliest, noisiest steps are unreliable; anything with
/// normalized time above this is dropped before averaging.
pub const DISCARD_ABOVE_T_NORM: f64 = 0.75;

/// Where a captured attention tensor came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureTag {
    pub layer: usize,
    pub head: usize,
    pub timestep: usize,
    /// `timestep / num_steps` of the sampling run.
    pub t_norm: f64,
}

impl CaptureTag {
    pub fn retained(&self) -> bool {
        self.t_norm <= DISCARD_ABOVE_T_NORM
    }
}

/// Self-attention probabilities: row `i` is the distribution of query pixel
/// `i` over key pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionMap {
    pub tag: CaptureTag,
    pub probs: Array2<f32>,
}

/// Pre-softmax cross-attention scores, one row per prompt token and one
/// column per pixel of `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionScores {
    pub tag: CaptureTag,
    pub grid: Grid,
    pub scores: Array2<f32>,
}

impl CrossAttentionScores {
    pub fn num_tokens(&self) -> usize {
        self.scores.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionRecord {
    /// Resolution of the self-attention maps and of the token maps.
    pub grid: Grid,
    pub self_maps: Vec<SelfAttentionMap>,
    pub cross: Vec<CrossAttentionScores>,
}

impl AttentionRecord {
    pub fn new(grid: Grid) -> Self {
        AttentionRecord {
            grid,
            self_maps: Vec::new(),
            cross: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.self_maps.is_empty() && self.cross.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn extend(&mut self, other: AttentionRecord) {
        self.self_maps.extend(other.self_maps);
        self.cross.extend(other.cross);
    }

    /// Checks shapes, finiteness, and that self-attention rows are
    /// probability vectors.
    pub fn validate(&self) -> Result<()> {
        let n = self.pixels();
        for (i, m) in self.self_maps.iter().enumerate() {
            if m.probs.dim() != (n, n) {
                return Err(Error::Shape(format!(
                    "self map {i} is {:?}, expected {n}x{n}",
                    m.probs.dim()
                )));
            }
            for (r, row) in m.probs.outer_iter().enumerate() {
                let mut sum = 0.0f64;
                for &v in row {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::InvalidInput(format!("self map {i} row {r} has entry {v}")));
                    }
                    sum += f64::from(v);
                }
                if (sum - 1.0).abs() > 1e-5 {
                    return Err(Error::InvalidInput(format!("self map {i} row {r} sums to {sum}")));
                }
            }
        }
        let tokens = self.cross.first().map(|c| c.num_tokens());
        for (i, c) in self.cross.iter().enumerate() {
            if c.scores.ncols() != c.grid.0 * c.grid.1 {
                return Err(Error::Shape(format!(
                    "cross entry {i} has {} columns for grid {:?}",
                    c.scores.ncols(),
                    c.grid
                )));
            }
            if Some(c.num_tokens()) != tokens {
                return Err(Error::Shape(format!(
                    "cross entry {i} has {} tokens, expected {}",
                    c.num_tokens(),
                    tokens.unwrap_or(0)
                )));
            }
            if c.scores.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("cross entry {i} has non-finite scores")));
            }
        }
        Ok(())
    }
}
