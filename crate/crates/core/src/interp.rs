//! Bilinear interpolation in `(colatitude, longitude)` and field rotation.

use rayon::prelude::*;

use crate::error::Result;
use crate::field::Field;
use crate::geometry::{rotate_grid_points, wrap_longitude, Rotation};
use crate::grid::SphericalGrid;

/// Fractional offsets closer than this (in cell units) to a node snap onto it,
/// so targets that coincide with grid nodes up to trig round-off reproduce
/// node values exactly.
const SNAP: f64 = 1e-9;

/// Interpolation stencil for one target: two rows, two columns, two weights.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Stencil {
    lat: (usize, usize),
    lat_t: f64,
    lon: (usize, usize),
    lon_t: f64,
}

fn stencil(grid: &SphericalGrid, theta: f64, phi: f64) -> Stencil {
    let colat = grid.colatitudes();
    let nlat = colat.len();
    let lat = if nlat == 1 || theta <= colat[0] {
        ((0, 0), 0.0)
    } else if theta >= colat[nlat - 1] {
        ((nlat - 1, nlat - 1), 0.0)
    } else {
        // first row strictly above theta, minus one
        let upper = colat.partition_point(|&c| c <= theta);
        let i = upper - 1;
        let t = (theta - colat[i]) / (colat[i + 1] - colat[i]);
        snap((i, i + 1), t)
    };

    let nlon = grid.nlon();
    let x = wrap_longitude(phi) / grid.dlon();
    let j = (x.floor() as usize).min(nlon - 1);
    let lon = snap((j, (j + 1) % nlon), x - j as f64);
    let lon = ((lon.0 .0 % nlon, lon.0 .1 % nlon), lon.1);

    Stencil { lat: lat.0, lat_t: lat.1, lon: lon.0, lon_t: lon.1 }
}

fn snap((lo, hi): (usize, usize), t: f64) -> ((usize, usize), f64) {
    if t < SNAP {
        ((lo, lo), 0.0)
    } else if t > 1.0 - SNAP {
        ((hi, hi), 0.0)
    } else {
        ((lo, hi), t)
    }
}

fn apply(plane: &[f64], nlon: usize, s: &Stencil) -> f64 {
    let at = |i: usize, j: usize| plane[i * nlon + j];
    let row = |i: usize| {
        let a = at(i, s.lon.0);
        if s.lon_t == 0.0 {
            a
        } else {
            a + s.lon_t * (at(i, s.lon.1) - a)
        }
    };
    let top = row(s.lat.0);
    if s.lat_t == 0.0 {
        top
    } else {
        top + s.lat_t * (row(s.lat.1) - top)
    }
}

/// Values of every `(batch, channel)` plane at the target points.
///
/// Output is `[batch][channel][target]`. Targets above the first or below the
/// last latitude row take that row's (longitude-interpolated) value.
pub fn interpolate_bilinear(field: &Field, grid: &SphericalGrid, targets: &[(f64, f64)]) -> Result<Vec<f64>> {
    field.check_grid(grid)?;
    let stencils: Vec<Stencil> = targets.par_iter().map(|&(t, p)| stencil(grid, t, p)).collect();
    let nlon = grid.nlon();
    let mut out = vec![0.0; field.batch() * field.channels() * targets.len()];
    let planes = field.batch() * field.channels();
    out.par_chunks_mut(targets.len().max(1))
        .take(planes)
        .enumerate()
        .for_each(|(bc, chunk)| {
            let plane = field.plane(bc / field.channels(), bc % field.channels());
            for (o, s) in chunk.iter_mut().zip(&stencils) {
                *o = apply(plane, nlon, s);
            }
        });
    Ok(out)
}

/// Rotated field `out(x) = field(R^{-1} x)`, resampled bilinearly.
pub fn rotate_field(field: &Field, grid: &SphericalGrid, rotation: &Rotation) -> Result<Field> {
    let targets = rotate_grid_points(grid, rotation);
    let values = interpolate_bilinear(field, grid, &targets)?;
    Field::from_vec(grid, field.batch(), field.channels(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sample(grid: &SphericalGrid) -> Field {
        Field::from_fn(grid, 2, 2, |b, c, i, j| (b + 1) as f64 * (i as f64).sin() + c as f64 * (j as f64 * 0.7).cos())
    }

    #[test]
    fn reproduces_nodes_exactly() {
        let g = SphericalGrid::gaussian(5, 10).unwrap();
        let f = sample(&g);
        let targets = vec![(g.colatitudes()[3], g.longitudes()[7]), (g.colatitudes()[0], g.longitudes()[9])];
        let v = interpolate_bilinear(&f, &g, &targets).unwrap();
        assert_eq!(v[0], f.get(0, 0, 3, 7));
        assert_eq!(v[1], f.get(0, 0, 0, 9));
        assert_eq!(v[2 * 3 + 1], f.get(1, 1, 0, 9));
    }

    #[test]
    fn reproduces_constants() {
        let g = SphericalGrid::equiangular(6, 12).unwrap();
        let f = Field::filled(&g, 1, 1, 2.5);
        let targets: Vec<(f64, f64)> = (0..50).map(|k| (k as f64 * 0.0641, k as f64 * 0.37)).collect();
        for v in interpolate_bilinear(&f, &g, &targets).unwrap() {
            assert_eq!(v, 2.5);
        }
    }

    #[test]
    fn midpoint_of_linear_cell_is_mean() {
        let g = SphericalGrid::equiangular(4, 8).unwrap();
        let f = Field::from_fn(&g, 1, 1, |_, _, _, j| j as f64);
        let phi = 2.5 * g.dlon();
        let v = interpolate_bilinear(&f, &g, &[(g.colatitudes()[2], phi)]).unwrap();
        assert!((v[0] - 2.5).abs() < 1e-14);
        // wraps across 2*pi: between column 7 and column 0
        let v = interpolate_bilinear(&f, &g, &[(g.colatitudes()[2], 7.5 * g.dlon())]).unwrap();
        assert!((v[0] - 3.5).abs() < 1e-14);
    }

    #[test]
    fn clamps_beyond_last_row() {
        let g = SphericalGrid::equiangular(4, 8).unwrap();
        let f = Field::from_fn(&g, 1, 1, |_, _, i, _| i as f64);
        let v = interpolate_bilinear(&f, &g, &[(PI, 0.0), (0.0, 1.0)]).unwrap();
        assert_eq!(v, vec![3.0, 0.0]);
    }

    #[test]
    fn identity_rotation_is_bitwise() {
        let g = SphericalGrid::gaussian(8, 16).unwrap();
        let f = sample(&g);
        assert_eq!(rotate_field(&f, &g, &Rotation::identity()).unwrap(), f);
    }

    #[test]
    fn grid_aligned_z_rotation_is_a_roll() {
        for g in [SphericalGrid::gaussian(8, 16).unwrap(), SphericalGrid::equiangular(8, 16).unwrap()] {
            let f = sample(&g);
            for shift in [1, 3, 15] {
                let r = rotate_field(&f, &g, &Rotation::about_z(shift as f64 * g.dlon())).unwrap();
                assert_eq!(r.max_abs_diff(&f.roll_lon(shift)), 0.0);
            }
        }
    }
}
