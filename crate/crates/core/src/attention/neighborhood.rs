//! Attention restricted to closed geodesic disks.
//!
//! Neighborhoods are stored once per output latitude row for the query at
//! longitude zero; the query at column `w` uses the same entries with the
//! longitude offset shifted by `w`. The backward pass recomputes attention
//! weights from three per-query scalars (max logit, normalizer, `dy . y`)
//! and accumulates key/value gradients per source point through the reverse
//! map, so every output element is written by exactly one work item.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::{dot, gather, scatter, validate, AttentionConfig, Dims};
use crate::error::{Error, Result};
use crate::field::{Field, GridSpec};
use crate::geometry::geodesic_distance;
use crate::grid::SphericalGrid;
use crate::sum::{pairwise_accumulate, pairwise_sum};

/// Cutoff `7*pi / (sqrt(pi) * nlat)`, matching a 7x7 planar window at the equator.
pub fn default_cutoff(nlat: usize) -> f64 {
    7.0 * PI / (PI.sqrt() * nlat as f64)
}

/// Key at latitude `lat`, longitude `(lon_offset + w) mod nlon` for the query
/// in column `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub lat: u32,
    pub lon_offset: u32,
}

/// Query in row `out_lat`, column `(w' - lon_offset) mod nlon`, whose disk
/// contains the key at column `w'` of this source row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReverseNeighbor {
    pub out_lat: u32,
    pub lon_offset: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodMap {
    grid: GridSpec,
    theta_cutoff: f64,
    rows: Vec<Vec<Neighbor>>,
    reverse: Vec<Vec<ReverseNeighbor>>,
}

impl NeighborhoodMap {
    /// Closed-disk neighborhoods `d(x_i, x_j) <= theta_cutoff`.
    pub fn build(grid: &SphericalGrid, theta_cutoff: f64) -> Result<Self> {
        if !(theta_cutoff > 0.0 && theta_cutoff <= PI) {
            return Err(Error::InvalidCutoff(theta_cutoff));
        }
        let colat = grid.colatitudes();
        let lons = grid.longitudes();
        let rows: Vec<Vec<Neighbor>> = (0..grid.nlat())
            .into_par_iter()
            .map(|h| {
                let theta = colat[h];
                let mut entries = Vec::new();
                for (hp, &theta_p) in colat.iter().enumerate() {
                    // distance is at least the colatitude gap
                    if (theta_p - theta).abs() > theta_cutoff * (1.0 + 1e-12) + 1e-15 {
                        continue;
                    }
                    for (wp, &phi_p) in lons.iter().enumerate() {
                        if geodesic_distance(theta, 0.0, theta_p, phi_p) <= theta_cutoff {
                            entries.push(Neighbor { lat: hp as u32, lon_offset: wp as u32 });
                        }
                    }
                }
                entries
            })
            .collect();
        Self::from_rows(grid.into(), theta_cutoff, rows)
    }

    /// Assembles a map from forward rows (e.g. read from disk) and derives the
    /// reverse map.
    pub fn from_rows(grid: GridSpec, theta_cutoff: f64, rows: Vec<Vec<Neighbor>>) -> Result<Self> {
        if rows.len() != grid.nlat {
            return Err(Error::ShapeMismatch(format!("{} rows for nlat={}", rows.len(), grid.nlat)));
        }
        let mut reverse = vec![Vec::new(); grid.nlat];
        for (h, entries) in rows.iter().enumerate() {
            for n in entries {
                if n.lat as usize >= grid.nlat || n.lon_offset as usize >= grid.nlon {
                    return Err(Error::ShapeMismatch(format!(
                        "neighbor ({}, {}) outside {}x{} grid",
                        n.lat, n.lon_offset, grid.nlat, grid.nlon
                    )));
                }
                reverse[n.lat as usize].push(ReverseNeighbor { out_lat: h as u32, lon_offset: n.lon_offset });
            }
        }
        Ok(Self { grid, theta_cutoff, rows, reverse })
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid
    }

    pub fn theta_cutoff(&self) -> f64 {
        self.theta_cutoff
    }

    pub fn row(&self, lat: usize) -> &[Neighbor] {
        &self.rows[lat]
    }

    pub fn rows(&self) -> &[Vec<Neighbor>] {
        &self.rows
    }

    pub fn reverse_row(&self, lat: usize) -> &[ReverseNeighbor] {
        &self.reverse[lat]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    /// Total number of (query, key) pairs.
    pub fn num_edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum::<usize>() * self.grid.nlon
    }

    /// Flattened key indices of the query at `(lat, lon)`, in evaluation order.
    pub fn neighbors_of(&self, lat: usize, lon: usize) -> impl Iterator<Item = usize> + '_ {
        let nlon = self.grid.nlon;
        self.rows[lat]
            .iter()
            .map(move |n| n.lat as usize * nlon + (n.lon_offset as usize + lon) % nlon)
    }

    fn check(&self, grid: &SphericalGrid) -> Result<()> {
        if self.grid != GridSpec::from(grid) {
            return Err(Error::GridMismatch(format!(
                "neighborhood map built for {} {}x{}, fields on {}",
                self.grid.family,
                self.grid.nlat,
                self.grid.nlon,
                grid.describe()
            )));
        }
        Ok(())
    }
}

struct HeadInputs<'a> {
    qp: &'a [f64],
    kp: &'a [f64],
    vp: &'a [f64],
    d: usize,
    e: usize,
    scale: f64,
}

impl HeadInputs<'_> {
    fn q(&self, i: usize) -> &[f64] {
        &self.qp[i * self.d..(i + 1) * self.d]
    }

    fn k(&self, j: usize) -> &[f64] {
        &self.kp[j * self.d..(j + 1) * self.d]
    }

    fn v(&self, j: usize) -> &[f64] {
        &self.vp[j * self.e..(j + 1) * self.e]
    }
}

/// Unnormalized weights `exp(l_ij - max) w_j` of one query and the normalizer.
struct QueryWeights {
    keys: Vec<usize>,
    a: Vec<f64>,
    max: f64,
    norm: f64,
}

impl QueryWeights {
    fn new() -> Self {
        Self { keys: Vec::new(), a: Vec::new(), max: 0.0, norm: 0.0 }
    }

    fn compute(&mut self, map: &NeighborhoodMap, grid: &SphericalGrid, x: &HeadInputs<'_>, i: usize) {
        let nlon = grid.nlon();
        self.keys.clear();
        self.keys.extend(map.neighbors_of(i / nlon, i % nlon));
        self.a.clear();
        let qi = x.q(i);
        let mut m = f64::NEG_INFINITY;
        for &j in &self.keys {
            let l = x.scale * dot(qi, x.k(j));
            m = m.max(l);
            self.a.push(l);
        }
        for (a, &j) in self.a.iter_mut().zip(&self.keys) {
            *a = (*a - m).exp() * grid.weight(j / nlon);
        }
        self.max = m;
        self.norm = pairwise_sum(&self.a);
    }
}

/// Neighborhood attention forward pass.
pub fn neighborhood_attention_forward(
    q: &Field,
    k: &Field,
    v: &Field,
    map: &NeighborhoodMap,
    grid: &SphericalGrid,
    config: &AttentionConfig,
) -> Result<Field> {
    map.check(grid)?;
    let dims = validate(q, k, v, grid, config)?;
    let mut out = Field::zeros(grid, dims.batch, dims.heads * dims.e);
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let (qp, kp, vp) = gather_head(q, k, v, b, h, dims);
            let x = HeadInputs { qp: &qp, kp: &kp, vp: &vp, d: dims.d, e: dims.e, scale: config.scale() };
            let mut y = vec![0.0; dims.n * dims.e];
            y.par_chunks_mut(dims.e).enumerate().for_each_init(
                || (QueryWeights::new(), Vec::new()),
                |(w, scratch), (i, yi)| {
                    w.compute(map, grid, &x, i);
                    weighted_values(w, &x, yi, scratch);
                },
            );
            scatter(&mut out, b, h * dims.e, dims.e, &y);
        }
    }
    Ok(out)
}

fn gather_head(q: &Field, k: &Field, v: &Field, b: usize, h: usize, dims: Dims) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        gather(q, b, h * dims.d, dims.d),
        gather(k, b, h * dims.d, dims.d),
        gather(v, b, h * dims.e, dims.e),
    )
}

/// Normalized share `a / g`. A disk made only of zero-weight points (an
/// equiangular pole query with a cutoff below the row spacing) integrates to
/// nothing, so its output and gradients are zero rather than 0/0.
fn share(a: f64, g: f64) -> f64 {
    if g == 0.0 {
        0.0
    } else {
        a / g
    }
}

fn weighted_values(w: &QueryWeights, x: &HeadInputs<'_>, yi: &mut [f64], scratch: &mut Vec<f64>) {
    let g = w.norm;
    pairwise_accumulate(w.keys.len(), x.e, yi, scratch, |t, acc| {
        let p = share(w.a[t], g);
        for (o, vj) in acc.iter_mut().zip(x.v(w.keys[t])) {
            *o += p * vj;
        }
    });
}

/// Gradients of `sum dy . out` with respect to `q`, `k` and `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodGradients {
    pub dq: Field,
    pub dk: Field,
    pub dv: Field,
}

/// Backward pass of [`neighborhood_attention_forward`].
///
/// With `p_ij = A_ij w_j`, `u_ij = dy_i . v_j` and `ubar_i = dy_i . y_i`:
///
/// ```text
/// dq_i = s * sum_j p_ij (u_ij - ubar_i) k_j
/// dk_j = s * sum_{i : j in D(i)} p_ij (u_ij - ubar_i) q_i
/// dv_j = sum_{i : j in D(i)} p_ij dy_i
/// ```
///
/// where `s = 1/sqrt(d)`.
pub fn neighborhood_attention_backward(
    q: &Field,
    k: &Field,
    v: &Field,
    dy: &Field,
    map: &NeighborhoodMap,
    grid: &SphericalGrid,
    config: &AttentionConfig,
) -> Result<NeighborhoodGradients> {
    map.check(grid)?;
    let dims = validate(q, k, v, grid, config)?;
    dy.check_grid(grid)?;
    if dy.batch() != dims.batch || dy.channels() != dims.heads * dims.e {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient has shape {:?}, forward output is [{}, {}, {}, {}]",
            dy.shape(),
            dims.batch,
            dims.heads * dims.e,
            grid.nlat(),
            grid.nlon()
        )));
    }
    let Dims { n, d, e, .. } = dims;
    let nlon = grid.nlon();
    let scale = config.scale();
    let mut dq = Field::zeros(grid, dims.batch, dims.heads * d);
    let mut dk = Field::zeros(grid, dims.batch, dims.heads * d);
    let mut dv = Field::zeros(grid, dims.batch, dims.heads * e);

    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let (qp, kp, vp) = gather_head(q, k, v, b, h, dims);
            let dyp = gather(dy, b, h * e, e);
            let x = HeadInputs { qp: &qp, kp: &kp, vp: &vp, d, e, scale };

            // per query: dq, plus (max logit, normalizer, dy . y) for the key pass
            let mut dq_h = vec![0.0; n * d];
            let mut stats = vec![[0.0f64; 3]; n];
            dq_h.par_chunks_mut(d).zip(stats.par_iter_mut()).enumerate().for_each_init(
                || (QueryWeights::new(), Vec::new(), vec![0.0; e], Vec::new()),
                |(w, scratch, yi, u), (i, (dqi, st))| {
                    w.compute(map, grid, &x, i);
                    weighted_values(w, &x, yi, scratch);
                    let dyi = &dyp[i * e..(i + 1) * e];
                    let ubar = dot(dyi, yi);
                    u.clear();
                    u.extend(w.keys.iter().map(|&j| dot(dyi, x.v(j))));
                    let g = w.norm;
                    pairwise_accumulate(w.keys.len(), d, dqi, scratch, |t, acc| {
                        let c = share(w.a[t], g) * (u[t] - ubar);
                        for (o, kj) in acc.iter_mut().zip(x.k(w.keys[t])) {
                            *o += c * kj;
                        }
                    });
                    dqi.iter_mut().for_each(|z| *z *= scale);
                    *st = [w.max, g, ubar];
                },
            );

            // per key: dk and dv through the reverse map
            let mut dkv = vec![0.0; n * (d + e)];
            dkv.par_chunks_mut(d + e).enumerate().for_each_init(Vec::new, |scratch, (j, out)| {
                let (row, col) = (j / nlon, j % nlon);
                let rev = map.reverse_row(row);
                let wj = grid.weight(row);
                let (kj, vj) = (x.k(j), x.v(j));
                pairwise_accumulate(rev.len(), d + e, out, scratch, |t, acc| {
                    let r = rev[t];
                    let i = r.out_lat as usize * nlon + (col + nlon - r.lon_offset as usize) % nlon;
                    let [m, g, ubar] = stats[i];
                    let p = share((scale * dot(x.q(i), kj) - m).exp() * wj, g);
                    let dyi = &dyp[i * e..(i + 1) * e];
                    let c = scale * p * (dot(dyi, vj) - ubar);
                    let (acc_k, acc_v) = acc.split_at_mut(d);
                    for (o, qi) in acc_k.iter_mut().zip(x.q(i)) {
                        *o += c * qi;
                    }
                    for (o, g) in acc_v.iter_mut().zip(dyi) {
                        *o += p * g;
                    }
                });
            });
            let mut dk_h = vec![0.0; n * d];
            let mut dv_h = vec![0.0; n * e];
            for (j, chunk) in dkv.chunks(d + e).enumerate() {
                dk_h[j * d..(j + 1) * d].copy_from_slice(&chunk[..d]);
                dv_h[j * e..(j + 1) * e].copy_from_slice(&chunk[d..]);
            }
            scatter(&mut dq, b, h * d, d, &dq_h);
            scatter(&mut dk, b, h * d, d, &dk_h);
            scatter(&mut dv, b, h * e, e, &dv_h);
        }
    }
    Ok(NeighborhoodGradients { dq, dk, dv })
}

/// `(key index, A_ij w_j)` over the disk of one query; the weights sum to one
/// unless the whole disk has zero quadrature weight, when they are all zero.
pub fn neighborhood_attention_weights(
    q: &Field,
    k: &Field,
    map: &NeighborhoodMap,
    grid: &SphericalGrid,
    config: &AttentionConfig,
    batch: usize,
    head: usize,
    query: usize,
) -> Result<Vec<(usize, f64)>> {
    map.check(grid)?;
    validate(q, k, q, grid, config)?;
    let d = config.head_dim();
    let qp = gather(q, batch, head * d, d);
    let kp = gather(k, batch, head * d, d);
    let x = HeadInputs { qp: &qp, kp: &kp, vp: &[], d, e: 0, scale: config.scale() };
    let mut w = QueryWeights::new();
    w.compute(map, grid, &x, query);
    Ok(w.keys.iter().zip(&w.a).map(|(&j, &a)| (j, share(a, w.norm))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::s2_attention_forward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &SphericalGrid, channels: usize, rng: &mut ChaCha8Rng) -> Field {
        Field::from_fn(grid, 1, channels, |_, _, _, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn zero_weight_disks_give_zero_not_nan() {
        let grid = SphericalGrid::equiangular(4, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (q, k, v, dy) = (
            random_field(&grid, 2, &mut rng),
            random_field(&grid, 2, &mut rng),
            random_field(&grid, 2, &mut rng),
            random_field(&grid, 2, &mut rng),
        );
        let cfg = AttentionConfig::new(1, 2).unwrap();
        // below the row spacing pi/4, pole queries only see the pole row
        let map = NeighborhoodMap::build(&grid, 0.1).unwrap();
        let y = neighborhood_attention_forward(&q, &k, &v, &map, &grid, &cfg).unwrap();
        assert!(y.is_finite());
        assert!((0..8).all(|lon| y.get(0, 0, 0, lon) == 0.0 && y.get(0, 1, 0, lon) == 0.0));
        let reference = crate::oracles::dense_reference_attention(&q, &k, &v, &grid, 1, Some(0.1));
        assert!(y.max_abs_diff(&reference) <= 1e-13);
        let g = neighborhood_attention_backward(&q, &k, &v, &dy, &map, &grid, &cfg).unwrap();
        assert!(g.dq.is_finite() && g.dk.is_finite() && g.dv.is_finite());
        let w = neighborhood_attention_weights(&q, &k, &map, &grid, &cfg, 0, 0, 3).unwrap();
        assert!(!w.is_empty() && w.iter().all(|&(_, p)| p == 0.0));
    }

    #[test]
    fn full_cutoff_covers_sphere() {
        let g = SphericalGrid::equiangular(5, 8).unwrap();
        let map = NeighborhoodMap::build(&g, PI).unwrap();
        assert!(map.counts().iter().all(|&c| c == 40));
    }

    #[test]
    fn tiny_cutoff_is_self_only() {
        let g = SphericalGrid::gaussian(5, 8).unwrap();
        let map = NeighborhoodMap::build(&g, 1e-9).unwrap();
        for h in 0..5 {
            assert_eq!(map.row(h), &[Neighbor { lat: h as u32, lon_offset: 0 }]);
        }
    }

    #[test]
    fn rejects_bad_cutoff() {
        let g = SphericalGrid::gaussian(5, 8).unwrap();
        assert!(NeighborhoodMap::build(&g, 0.0).is_err());
        assert!(NeighborhoodMap::build(&g, -1.0).is_err());
        assert!(NeighborhoodMap::build(&g, 4.0).is_err());
    }

    #[test]
    fn default_cutoff_value() {
        assert!((default_cutoff(128) - 0.0969).abs() < 1e-4);
    }

    #[test]
    fn equator_count_near_planar_window() {
        // nlat=128 equiangular: the row at theta = pi/2
        let g = SphericalGrid::equiangular(128, 256).unwrap();
        let map = NeighborhoodMap::build(&g, default_cutoff(128)).unwrap();
        let count = map.row(64).len() as f64;
        assert!((count - 49.0).abs() <= 0.2 * 49.0, "equator count {count}");
    }

    #[test]
    fn counts_grow_with_cutoff() {
        let g = SphericalGrid::gaussian(12, 24).unwrap();
        let mut prev = vec![0; 12];
        for c in [0.1, 0.3, 0.6, 1.2, 2.4, PI] {
            let counts = NeighborhoodMap::build(&g, c).unwrap().counts();
            assert!(counts.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = counts;
        }
    }

    #[test]
    fn reverse_map_is_transpose() {
        let g = SphericalGrid::equiangular(7, 14).unwrap();
        let map = NeighborhoodMap::build(&g, 0.8).unwrap();
        let mut fwd = Vec::new();
        for h in 0..7 {
            for n in map.row(h) {
                fwd.push((h as u32, n.lat, n.lon_offset));
            }
        }
        let mut rev = Vec::new();
        for hp in 0..7 {
            for r in map.reverse_row(hp) {
                rev.push((r.out_lat, hp as u32, r.lon_offset));
            }
        }
        fwd.sort();
        rev.sort();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn full_disk_equals_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = AttentionConfig::new(1, 3).unwrap();
        let g = SphericalGrid::gaussian(6, 12).unwrap();
        let map = NeighborhoodMap::build(&g, PI).unwrap();
        let (q, k, v) = (random_field(&g, 3, &mut rng), random_field(&g, 3, &mut rng), random_field(&g, 2, &mut rng));
        let a = neighborhood_attention_forward(&q, &k, &v, &map, &g, &cfg).unwrap();
        let b = s2_attention_forward(&q, &k, &v, &g, &cfg).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn self_only_returns_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = AttentionConfig::new(1, 2).unwrap();
        let g = SphericalGrid::gaussian(6, 12).unwrap();
        let map = NeighborhoodMap::build(&g, 1e-9).unwrap();
        let (q, k, v) = (random_field(&g, 2, &mut rng), random_field(&g, 2, &mut rng), random_field(&g, 2, &mut rng));
        assert_eq!(neighborhood_attention_forward(&q, &k, &v, &map, &g, &cfg).unwrap(), v);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = AttentionConfig::new(1, 2).unwrap();
        let g = SphericalGrid::equiangular(6, 12).unwrap();
        let map = NeighborhoodMap::build(&g, 1.0).unwrap();
        let (q, k, v) = (random_field(&g, 2, &mut rng), random_field(&g, 2, &mut rng), random_field(&g, 2, &mut rng));
        let grads = neighborhood_attention_backward(&q, &k, &v, &Field::zeros(&g, 1, 2), &map, &g, &cfg).unwrap();
        for f in [&grads.dq, &grads.dk, &grads.dv] {
            assert!(f.values().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn map_grid_mismatch_is_rejected() {
        let g = SphericalGrid::gaussian(6, 12).unwrap();
        let map = NeighborhoodMap::build(&SphericalGrid::equiangular(6, 12).unwrap(), 0.5).unwrap();
        let f = Field::zeros(&g, 1, 2);
        let cfg = AttentionConfig::new(1, 2).unwrap();
        assert!(matches!(
            neighborhood_attention_forward(&f, &f, &f, &map, &g, &cfg),
            Err(Error::GridMismatch(_))
        ));
    }
}
