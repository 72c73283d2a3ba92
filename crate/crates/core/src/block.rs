//! Pre-norm spherical transformer block (forward only).
//!
//! ```text
//! y   = x + W_o MHA(W_q n, W_k n, W_v n),   n = norm(x) + pos
//! out = y + W_2 gelu(W_1 norm(y) + b_1) + b_2
//! ```
//!
//! `norm` is instance normalization with quadrature-weighted statistics, and
//! all linear maps act pointwise on the channel dimension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{neighborhood_attention_forward, s2_attention_forward, AttentionConfig, NeighborhoodMap};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::SphericalGrid;
use crate::sum::pairwise_sum;

pub const DEFAULT_MLP_RATIO: f64 = 4.0;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttentionMode {
    Global,
    Neighborhood { theta_cutoff: f64 },
}

/// Pointwise affine map over channels; `weight` is `out x in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Option<Vec<f64>>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        if weight.len() != in_dim * out_dim {
            return Err(Error::ShapeMismatch(format!(
                "weight has {} entries, expected {out_dim}x{in_dim}",
                weight.len()
            )));
        }
        if bias.as_ref().is_some_and(|b| b.len() != out_dim) {
            return Err(Error::ShapeMismatch(format!("bias length differs from output dimension {out_dim}")));
        }
        if weight.iter().chain(bias.iter().flatten()).any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("linear parameters must be finite".into()));
        }
        Ok(Self { in_dim, out_dim, weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: bias.then(|| vec![0.0; out_dim]) }
    }

    /// Entries uniform in `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`.
    pub fn uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-bound..=bound)).collect::<Vec<_>>();
        let weight = draw(in_dim * out_dim);
        let bias = bias.then(|| draw(out_dim));
        Self { in_dim, out_dim, weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn apply(&self, x: &Field) -> Result<Field> {
        if x.channels() != self.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "linear map expects {} channels, field has {}",
                self.in_dim,
                x.channels()
            )));
        }
        let n = x.num_points();
        let mut out = Field::from_spec(x.grid_spec(), x.batch(), self.out_dim, vec![0.0; x.batch() * self.out_dim * n])?;
        out.values_mut().par_chunks_mut(n).enumerate().for_each(|(bo, plane)| {
            let (b, o) = (bo / self.out_dim, bo % self.out_dim);
            let b0 = self.bias.as_ref().map_or(0.0, |bias| bias[o]);
            plane.fill(b0);
            for i in 0..self.in_dim {
                let w = self.weight[o * self.in_dim + i];
                for (y, xv) in plane.iter_mut().zip(x.plane(b, i)) {
                    *y += w * xv;
                }
            }
        });
        Ok(out)
    }
}

/// Parameters of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub heads: usize,
    pub epsilon: f64,
    pub mode: AttentionMode,
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl BlockParams {
    /// Checks the shape invariants; every constructor goes through here.
    pub fn new(
        heads: usize,
        epsilon: f64,
        mode: AttentionMode,
        [w_q, w_k, w_v, w_o]: [Linear; 4],
        mlp_in: Linear,
        mlp_out: Linear,
    ) -> Result<Self> {
        let embed = w_q.in_dim;
        for (name, l) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v), ("w_o", &w_o)] {
            if l.in_dim != embed || l.out_dim != embed {
                return Err(Error::ShapeMismatch(format!("{name} must be {embed}x{embed}")));
            }
            if l.bias.is_some() {
                return Err(Error::InvalidArgument(format!("{name} carries no bias")));
            }
        }
        if mlp_in.in_dim != embed || mlp_out.out_dim != embed || mlp_out.in_dim != mlp_in.out_dim {
            return Err(Error::ShapeMismatch("MLP layers do not chain embed -> hidden -> embed".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        if let AttentionMode::Neighborhood { theta_cutoff } = mode {
            if !(theta_cutoff > 0.0 && theta_cutoff.is_finite()) {
                return Err(Error::InvalidCutoff(theta_cutoff));
            }
        }
        AttentionConfig::for_embedding(embed, heads)?;
        Ok(Self { heads, epsilon, mode, w_q, w_k, w_v, w_o, mlp_in, mlp_out })
    }

    /// All weights and biases zero: the block is the identity.
    pub fn zeros(embed: usize, heads: usize, mlp_ratio: f64, mode: AttentionMode) -> Result<Self> {
        let hidden = hidden_dim(embed, mlp_ratio)?;
        let proj = || Linear::zeros(embed, embed, false);
        Self::new(
            heads,
            DEFAULT_EPSILON,
            mode,
            [proj(), proj(), proj(), proj()],
            Linear::zeros(embed, hidden, true),
            Linear::zeros(hidden, embed, true),
        )
    }

    /// Seeded symmetric-uniform initialization scaled by `1/sqrt(fan_in)`.
    pub fn random(embed: usize, heads: usize, mlp_ratio: f64, mode: AttentionMode, seed: u64) -> Result<Self> {
        let hidden = hidden_dim(embed, mlp_ratio)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut proj = || Linear::uniform(embed, embed, false, &mut rng);
        let projections = [proj(), proj(), proj(), proj()];
        let mlp_in = Linear::uniform(embed, hidden, true, &mut rng);
        let mlp_out = Linear::uniform(hidden, embed, true, &mut rng);
        Self::new(heads, DEFAULT_EPSILON, mode, projections, mlp_in, mlp_out)
    }

    pub fn embed(&self) -> usize {
        self.w_q.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.mlp_in.out_dim
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig::for_embedding(self.embed(), self.heads).expect("validated at construction")
    }
}

fn hidden_dim(embed: usize, mlp_ratio: f64) -> Result<usize> {
    let hidden = (embed as f64 * mlp_ratio).round();
    if !(hidden >= 1.0) {
        return Err(Error::InvalidArgument(format!("mlp ratio {mlp_ratio} gives an empty hidden layer")));
    }
    Ok(hidden as usize)
}

/// Per `(batch, channel)`: subtract the quadrature-weighted mean and divide by
/// `sqrt(weighted variance + epsilon)`.
pub fn instance_norm(field: &Field, grid: &SphericalGrid, epsilon: f64) -> Result<Field> {
    field.check_grid(grid)?;
    let w = grid.point_weights();
    let total = pairwise_sum(&w);
    let n = field.num_points();
    let mut out = field.clone();
    out.values_mut().par_chunks_mut(n).for_each_init(
        || vec![0.0; n],
        |buf, plane| {
            for ((s, x), wp) in buf.iter_mut().zip(plane.iter()).zip(&w) {
                *s = x * wp;
            }
            let mean = pairwise_sum(buf) / total;
            for ((s, x), wp) in buf.iter_mut().zip(plane.iter()).zip(&w) {
                let c = x - mean;
                *s = c * c * wp;
            }
            let var = pairwise_sum(buf) / total;
            let inv = 1.0 / (var + epsilon).sqrt();
            for x in plane.iter_mut() {
                *x = (*x - mean) * inv;
            }
        },
    );
    Ok(out)
}

/// `x * Phi(x)` with the exact Gaussian CDF.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Pointwise `W_2 gelu(W_1 x + b_1) + b_2`.
pub fn mlp_forward(x: &Field, params: &BlockParams) -> Result<Field> {
    let h = params.mlp_in.apply(x)?.map(gelu);
    params.mlp_out.apply(&h)
}

/// Multi-head spherical attention with input and output projections.
pub fn multi_head_attention(
    x: &Field,
    params: &BlockParams,
    grid: &SphericalGrid,
    map: Option<&NeighborhoodMap>,
) -> Result<Field> {
    let config = params.attention_config();
    let (q, k, v) = (params.w_q.apply(x)?, params.w_k.apply(x)?, params.w_v.apply(x)?);
    let heads = match (params.mode, map) {
        (AttentionMode::Global, None) => s2_attention_forward(&q, &k, &v, grid, &config)?,
        (AttentionMode::Neighborhood { theta_cutoff }, Some(map)) => {
            if map.theta_cutoff() != theta_cutoff {
                return Err(Error::InvalidArgument(format!(
                    "map built for cutoff {}, block expects {theta_cutoff}",
                    map.theta_cutoff()
                )));
            }
            neighborhood_attention_forward(&q, &k, &v, map, grid, &config)?
        }
        (AttentionMode::Global, Some(_)) => {
            return Err(Error::InvalidArgument("global attention takes no neighborhood map".into()))
        }
        (AttentionMode::Neighborhood { .. }, None) => {
            return Err(Error::InvalidArgument("neighborhood attention needs a neighborhood map".into()))
        }
    };
    params.w_o.apply(&heads)
}

/// One pre-norm block. `pos` has a single batch entry and is broadcast.
pub fn block_forward(
    x: &Field,
    params: &BlockParams,
    pos: Option<&Field>,
    grid: &SphericalGrid,
    map: Option<&NeighborhoodMap>,
) -> Result<Field> {
    x.check_grid(grid)?;
    if x.channels() != params.embed() {
        return Err(Error::ShapeMismatch(format!(
            "block expects {} channels, field has {}",
            params.embed(),
            x.channels()
        )));
    }
    let mut n = instance_norm(x, grid, params.epsilon)?;
    if let Some(pos) = pos {
        add_broadcast(&mut n, pos)?;
    }
    let y = x.zip_map(&multi_head_attention(&n, params, grid, map)?, |a, b| a + b)?;
    let m = mlp_forward(&instance_norm(&y, grid, params.epsilon)?, params)?;
    y.zip_map(&m, |a, b| a + b)
}

fn add_broadcast(x: &mut Field, pos: &Field) -> Result<()> {
    if pos.grid_spec() != x.grid_spec() || pos.channels() != x.channels() || pos.batch() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "positional embedding has shape {:?}, expected [1, {}, {}, {}]",
            pos.shape(),
            x.channels(),
            x.nlat(),
            x.nlon()
        )));
    }
    let len = pos.values().len();
    for chunk in x.values_mut().chunks_mut(len) {
        for (a, p) in chunk.iter_mut().zip(pos.values()) {
            *a += p;
        }
    }
    Ok(())
}

/// Where positional embeddings enter a stack of blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionPolicy {
    #[default]
    EveryBlock,
    FirstBlockOnly,
}

/// Applies `blocks` in sequence. Neighborhood blocks share `map`.
pub fn stack_forward(
    x: &Field,
    blocks: &[BlockParams],
    pos: Option<&Field>,
    policy: PositionPolicy,
    grid: &SphericalGrid,
    map: Option<&NeighborhoodMap>,
) -> Result<Field> {
    let mut h = x.clone();
    for (i, params) in blocks.iter().enumerate() {
        let p = match policy {
            PositionPolicy::EveryBlock => pos,
            PositionPolicy::FirstBlockOnly if i == 0 => pos,
            PositionPolicy::FirstBlockOnly => None,
        };
        let m = match params.mode {
            AttentionMode::Global => None,
            AttentionMode::Neighborhood { .. } => map,
        };
        h = block_forward(&h, params, p, grid, m)?;
    }
    Ok(h)
}
