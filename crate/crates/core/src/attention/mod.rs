//! Quadrature-weighted attention on the sphere.
//!
//! Both variants evaluate, for every query point `x_i`,
//!
//! ```text
//! out(x_i) = sum_j  exp(q_i . k_j / sqrt(d)) w_j v_j  /  sum_l exp(q_i . k_l / sqrt(d)) w_l
//! ```
//!
//! over all grid points (global) or over the geodesic disk around `x_i`
//! (neighborhood). Channels are split into `heads` independent slices; queries
//! and keys carry `head_dim` channels per head, values carry `value_channels /
//! heads`.

mod global;
mod neighborhood;

pub use global::{
    attention_dense_sequence, global_attention_weights, s2_attention_forward, s2_attention_forward_logmask,
    LogMaskOutput,
};
pub use neighborhood::{
    default_cutoff, neighborhood_attention_backward, neighborhood_attention_forward, neighborhood_attention_weights,
    Neighbor, NeighborhoodGradients, NeighborhoodMap, ReverseNeighbor,
};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::SphericalGrid;

/// Head layout and logit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    heads: usize,
    head_dim: usize,
    scale: f64,
}

impl AttentionConfig {
    /// `head_dim` query/key channels per head; scale fixed to `1/sqrt(head_dim)`.
    pub fn new(heads: usize, head_dim: usize) -> Result<Self> {
        if heads == 0 || head_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "heads ({heads}) and head_dim ({head_dim}) must be positive"
            )));
        }
        Ok(Self { heads, head_dim, scale: 1.0 / (head_dim as f64).sqrt() })
    }

    /// Splits `embed` channels evenly across `heads`.
    pub fn for_embedding(embed: usize, heads: usize) -> Result<Self> {
        if heads == 0 || embed % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embedding dimension {embed} is not divisible by {heads} heads"
            )));
        }
        Self::new(heads, embed / heads)
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Sizes shared by a validated `(q, k, v)` triple.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub batch: usize,
    pub heads: usize,
    pub d: usize,
    pub e: usize,
    pub n: usize,
}

pub(crate) fn validate(q: &Field, k: &Field, v: &Field, grid: &SphericalGrid, config: &AttentionConfig) -> Result<Dims> {
    for (name, f) in [("q", q), ("k", k), ("v", v)] {
        f.check_grid(grid).map_err(|e| match e {
            Error::GridMismatch(msg) => Error::GridMismatch(format!("{name}: {msg}")),
            other => other,
        })?;
    }
    if let Some((row, &w)) = grid.weights().iter().enumerate().find(|(_, &w)| w < 0.0) {
        return Err(Error::NegativeWeight { row, weight: w });
    }
    let qk = config.heads * config.head_dim;
    if q.channels() != qk || k.channels() != qk {
        return Err(Error::ShapeMismatch(format!(
            "q/k need {qk} channels ({} heads x {}), got {} and {}",
            config.heads,
            config.head_dim,
            q.channels(),
            k.channels()
        )));
    }
    if v.channels() == 0 || v.channels() % config.heads != 0 {
        return Err(Error::ShapeMismatch(format!(
            "v has {} channels, not a positive multiple of {} heads",
            v.channels(),
            config.heads
        )));
    }
    if q.batch() != k.batch() || q.batch() != v.batch() {
        return Err(Error::ShapeMismatch(format!(
            "batch sizes differ: q={}, k={}, v={}",
            q.batch(),
            k.batch(),
            v.batch()
        )));
    }
    Ok(Dims {
        batch: q.batch(),
        heads: config.heads,
        d: config.head_dim,
        e: v.channels() / config.heads,
        n: grid.num_points(),
    })
}

/// Channels `c0..c0+width` of batch entry `b`, laid out point-major.
pub(crate) fn gather(field: &Field, b: usize, c0: usize, width: usize) -> Vec<f64> {
    let n = field.num_points();
    let mut out = vec![0.0; n * width];
    for c in 0..width {
        for (p, &x) in field.plane(b, c0 + c).iter().enumerate() {
            out[p * width + c] = x;
        }
    }
    out
}

pub(crate) fn scatter(field: &mut Field, b: usize, c0: usize, width: usize, data: &[f64]) {
    for c in 0..width {
        for (p, x) in field.plane_mut(b, c0 + c).iter_mut().enumerate() {
            *x = data[p * width + c];
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
