//! Brute-force references for testing.
//!
//! Nothing here calls into the optimized kernels, the neighborhood map, the
//! geometry helpers or the pairwise summation: each reference is a literal
//! transcription of the defining formula with plain loops, so agreement with
//! the fast paths is meaningful.

use crate::field::Field;
use crate::grid::SphericalGrid;

/// Literal triple-loop evaluation of quadrature-weighted attention,
///
/// `out(x_i) = sum_j exp(q_i.k_j/sqrt(d)) w_j v_j / sum_l exp(q_i.k_l/sqrt(d)) w_l`,
///
/// optionally restricted to keys with great-circle distance `<= cutoff` from
/// the query. Channels are split evenly into `heads`.
pub fn dense_reference_attention(
    q: &Field,
    k: &Field,
    v: &Field,
    grid: &SphericalGrid,
    heads: usize,
    cutoff: Option<f64>,
) -> Field {
    let d = q.channels() / heads;
    let e = v.channels() / heads;
    let (nlat, nlon) = (grid.nlat(), grid.nlon());
    let n = nlat * nlon;
    let point = |p: usize| {
        let (t, f) = (grid.colatitudes()[p / nlon], grid.longitudes()[p % nlon]);
        [t.sin() * f.cos(), t.sin() * f.sin(), t.cos()]
    };
    let inside = |i: usize, j: usize| match cutoff {
        None => true,
        Some(c) => {
            let (a, b) = (point(i), point(j));
            let cx = a[1] * b[2] - a[2] * b[1];
            let cy = a[2] * b[0] - a[0] * b[2];
            let cz = a[0] * b[1] - a[1] * b[0];
            let s = (cx * cx + cy * cy + cz * cz).sqrt();
            let dist = if i == j { 0.0 } else { s.atan2(a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) };
            dist <= c
        }
    };
    let mut out = Field::zeros(grid, q.batch(), heads * e);
    for b in 0..q.batch() {
        for h in 0..heads {
            for i in 0..n {
                let (ilat, ilon) = (i / nlon, i % nlon);
                let logit = |j: usize| {
                    let (jlat, jlon) = (j / nlon, j % nlon);
                    let mut s = 0.0;
                    for c in 0..d {
                        s += q.get(b, h * d + c, ilat, ilon) * k.get(b, h * d + c, jlat, jlon);
                    }
                    (s / (d as f64).sqrt()).exp() * grid.weight(jlat)
                };
                let mut denom = 0.0;
                for j in 0..n {
                    if inside(i, j) {
                        denom += logit(j);
                    }
                }
                if denom == 0.0 {
                    // disk of zero-weight points only: empty integral
                    continue;
                }
                let mut numer = vec![0.0; e];
                for j in 0..n {
                    if !inside(i, j) {
                        continue;
                    }
                    let a = logit(j) / denom;
                    for (c, x) in numer.iter_mut().enumerate() {
                        *x += a * v.get(b, h * e + c, j / nlon, j % nlon);
                    }
                }
                for (c, x) in numer.iter().enumerate() {
                    out.set(b, h * e + c, ilat, ilon, *x);
                }
            }
        }
    }
    out
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every entry.
pub fn finite_difference_grad<F>(f: F, x: &Field, step: f64) -> Field
where
    F: Fn(&Field) -> f64,
{
    let mut probe = x.clone();
    let mut grad = x.clone();
    for idx in 0..x.values().len() {
        let orig = x.values()[idx];
        probe.values_mut()[idx] = orig + step;
        let plus = f(&probe);
        probe.values_mut()[idx] = orig - step;
        let minus = f(&probe);
        probe.values_mut()[idx] = orig;
        grad.values_mut()[idx] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// `max |a - b| / max |b|`, with `b` the reference.
pub fn relative_error(analytic: &Field, reference: &Field) -> f64 {
    let diff = analytic
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = reference.max_abs();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// `sum dy . y` over every entry, the scalarization used for gradient checks.
pub fn inner_product(a: &Field, b: &Field) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

/// Per-class `(T_p, F_p, F_n, T_n)` by visiting every point and adding
/// `w / (4 pi)` to the matching bucket.
pub fn brute_force_confusion(pred: &[usize], truth: &[usize], classes: usize, grid: &SphericalGrid) -> Vec<[f64; 4]> {
    let mut out = vec![[0.0; 4]; classes];
    let nlon = grid.nlon();
    for (p, (&a, &t)) in pred.iter().zip(truth).enumerate() {
        let w = grid.weight((p % grid.num_points()) / nlon) / (4.0 * std::f64::consts::PI);
        for (c, bucket) in out.iter_mut().enumerate() {
            let slot = match (a == c, t == c) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            bucket[slot] += w;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn fd_of_linear_functional_is_weight_pattern() {
        let g = SphericalGrid::gaussian(4, 8).unwrap();
        let x = Field::from_fn(&g, 1, 1, |_, _, i, j| (i * j) as f64 * 0.1);
        let f = |u: &Field| {
            let mut s = 0.0;
            for i in 0..4 {
                for j in 0..8 {
                    s += u.get(0, 0, i, j) * g.weight(i);
                }
            }
            s / (4.0 * PI)
        };
        let grad = finite_difference_grad(f, &x, 1e-5);
        for i in 0..4 {
            for j in 0..8 {
                assert!((grad.get(0, 0, i, j) - g.weight(i) / (4.0 * PI)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fd_of_squared_norm_is_twice_x() {
        let g = SphericalGrid::equiangular(3, 4).unwrap();
        let x = Field::from_fn(&g, 1, 2, |_, c, i, j| (c + i) as f64 - 0.3 * j as f64);
        let grad = finite_difference_grad(|u| u.values().iter().map(|v| v * v).sum(), &x, 1e-5);
        for (gv, xv) in grad.values().iter().zip(x.values()) {
            assert!((gv - 2.0 * xv).abs() < 1e-9);
        }
    }

    #[test]
    fn full_mask_equals_unmasked_and_self_mask_returns_v() {
        let g = SphericalGrid::gaussian(3, 6).unwrap();
        let q = Field::from_fn(&g, 1, 2, |_, c, i, j| ((c + 2 * i + j) as f64).sin());
        let k = Field::from_fn(&g, 1, 2, |_, c, i, j| ((3 * c + i + 2 * j) as f64).cos());
        let v = Field::from_fn(&g, 1, 1, |_, _, i, j| (i as f64) - (j as f64) * 0.5);
        let full = dense_reference_attention(&q, &k, &v, &g, 1, None);
        assert_eq!(dense_reference_attention(&q, &k, &v, &g, 1, Some(PI)), full);
        assert_eq!(dense_reference_attention(&q, &k, &v, &g, 1, Some(1e-9)), v);
    }
}
