use rayon::prelude::*;

use super::{dot, gather, scatter, validate, AttentionConfig, Dims};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::SphericalGrid;
use crate::sum::{pairwise_accumulate, pairwise_sum};

/// Plain scaled dot-product attention over token sequences,
/// `softmax(q k^T / sqrt(d)) v` with max subtraction.
pub fn attention_dense_sequence(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if q.len() != k.len() || k.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "token counts differ: q={}, k={}, v={}",
            q.len(),
            k.len(),
            v.len()
        )));
    }
    let Some(d) = q.first().map(Vec::len) else {
        return Ok(Vec::new());
    };
    let e = v[0].len();
    if q.iter().chain(k).any(|t| t.len() != d) || v.iter().any(|t| t.len() != e) {
        return Err(Error::ShapeMismatch("ragged token dimensions".into()));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut scratch = Vec::new();
    let out = q
        .iter()
        .map(|qi| {
            let logits: Vec<f64> = k.iter().map(|kj| scale * dot(qi, kj)).collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let a: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let g = pairwise_sum(&a);
            let mut y = vec![0.0; e];
            pairwise_accumulate(a.len(), e, &mut y, &mut scratch, |j, acc| {
                let p = a[j] / g;
                for (o, x) in acc.iter_mut().zip(&v[j]) {
                    *o += p * x;
                }
            });
            y
        })
        .collect();
    Ok(out)
}

/// Global spherical attention with quadrature weights in numerator and
/// normalizer. Zero-weight keys contribute exactly nothing.
pub fn s2_attention_forward(
    q: &Field,
    k: &Field,
    v: &Field,
    grid: &SphericalGrid,
    config: &AttentionConfig,
) -> Result<Field> {
    let dims = validate(q, k, v, grid, config)?;
    let weights = grid.point_weights();
    let mut out = Field::zeros(grid, dims.batch, dims.heads * dims.e);
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let qp = gather(q, b, h * dims.d, dims.d);
            let kp = gather(k, b, h * dims.d, dims.d);
            let vp = gather(v, b, h * dims.e, dims.e);
            let y = weighted_head(&qp, &kp, &vp, &weights, dims, config.scale());
            scatter(&mut out, b, h * dims.e, dims.e, &y);
        }
    }
    Ok(out)
}

fn weighted_head(qp: &[f64], kp: &[f64], vp: &[f64], weights: &[f64], dims: Dims, scale: f64) -> Vec<f64> {
    let Dims { n, d, e, .. } = dims;
    let mut y = vec![0.0; n * e];
    y.par_chunks_mut(e).enumerate().for_each_init(
        || (vec![0.0; n], Vec::new()),
        |(a, scratch), (i, yi)| {
            let qi = &qp[i * d..(i + 1) * d];
            let mut m = f64::NEG_INFINITY;
            for (j, aj) in a.iter_mut().enumerate() {
                *aj = scale * dot(qi, &kp[j * d..(j + 1) * d]);
                m = m.max(*aj);
            }
            for (aj, &w) in a.iter_mut().zip(weights) {
                *aj = (*aj - m).exp() * w;
            }
            let g = pairwise_sum(a);
            pairwise_accumulate(n, e, yi, scratch, |j, acc| {
                let p = a[j] / g;
                for (o, x) in acc.iter_mut().zip(&vp[j * e..(j + 1) * e]) {
                    *o += p * x;
                }
            });
        },
    );
    y
}

/// Result of the log-weight formulation.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMaskOutput {
    pub field: Field,
    /// Latitude rows dropped from the key set because their weight is zero.
    pub excluded_rows: Vec<usize>,
}

/// Global attention as an ordinary softmax over `q.k/sqrt(d) + ln(w_j)`.
///
/// Rows with zero weight have no finite log weight and are removed from the
/// key/value set, which leaves the result unchanged.
pub fn s2_attention_forward_logmask(
    q: &Field,
    k: &Field,
    v: &Field,
    grid: &SphericalGrid,
    config: &AttentionConfig,
) -> Result<LogMaskOutput> {
    let dims = validate(q, k, v, grid, config)?;
    let nlon = grid.nlon();
    let excluded_rows: Vec<usize> = (0..grid.nlat()).filter(|&r| grid.weight(r) == 0.0).collect();
    let keys: Vec<usize> = (0..dims.n).filter(|p| grid.weight(p / nlon) > 0.0).collect();
    if keys.is_empty() {
        return Err(Error::InvalidArgument("no key has positive quadrature weight".into()));
    }
    let log_w: Vec<f64> = keys.iter().map(|&p| grid.weight(p / nlon).ln()).collect();
    let Dims { n, d, e, .. } = dims;
    let scale = config.scale();
    let mut out = Field::zeros(grid, dims.batch, dims.heads * e);
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let qp = gather(q, b, h * d, d);
            let kp = gather(k, b, h * d, d);
            let vp = gather(v, b, h * e, e);
            let mut y = vec![0.0; n * e];
            y.par_chunks_mut(e).enumerate().for_each_init(
                || (vec![0.0; keys.len()], Vec::new()),
                |(a, scratch), (i, yi)| {
                    let qi = &qp[i * d..(i + 1) * d];
                    let mut m = f64::NEG_INFINITY;
                    for (t, &p) in keys.iter().enumerate() {
                        a[t] = scale * dot(qi, &kp[p * d..(p + 1) * d]) + log_w[t];
                        m = m.max(a[t]);
                    }
                    a.iter_mut().for_each(|x| *x = (*x - m).exp());
                    let g = pairwise_sum(a);
                    pairwise_accumulate(keys.len(), e, yi, scratch, |t, acc| {
                        let p = keys[t];
                        let at = a[t] / g;
                        for (o, x) in acc.iter_mut().zip(&vp[p * e..(p + 1) * e]) {
                            *o += at * x;
                        }
                    });
                },
            );
            scatter(&mut out, b, h * e, e, &y);
        }
    }
    Ok(LogMaskOutput { field: out, excluded_rows })
}

/// Products `A_ij w_j` for one query point (flattened `lat * nlon + lon`)
/// over all keys; these sum to one.
pub fn global_attention_weights(
    q: &Field,
    k: &Field,
    grid: &SphericalGrid,
    config: &AttentionConfig,
    batch: usize,
    head: usize,
    query: usize,
) -> Result<Vec<f64>> {
    validate(q, k, q, grid, config)?;
    let d = config.head_dim();
    let qp = gather(q, batch, head * d, d);
    let kp = gather(k, batch, head * d, d);
    let weights = grid.point_weights();
    let qi = &qp[query * d..(query + 1) * d];
    let logits: Vec<f64> = (0..grid.num_points()).map(|j| config.scale() * dot(qi, &kp[j * d..(j + 1) * d])).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a: Vec<f64> = logits.iter().zip(&weights).map(|(l, w)| (l - m).exp() * w).collect();
    let g = pairwise_sum(&a);
    Ok(a.into_iter().map(|x| x / g).collect())
}
