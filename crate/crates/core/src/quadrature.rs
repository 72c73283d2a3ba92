use crate::error::Result;
use crate::field::Field;
use crate::grid::SphericalGrid;
use crate::sum::pairwise_sum;

/// Quadrature integral `sum_ij u_ij * w_i` of every `(batch, channel)` plane,
/// returned in batch-major order.
pub fn integrate(field: &Field, grid: &SphericalGrid) -> Result<Vec<f64>> {
    field.check_grid(grid)?;
    let mut out = Vec::with_capacity(field.batch() * field.channels());
    for b in 0..field.batch() {
        for c in 0..field.channels() {
            out.push(integrate_plane(field.plane(b, c), grid));
        }
    }
    Ok(out)
}

/// Integral of a single `nlat * nlon` plane.
pub fn integrate_plane(plane: &[f64], grid: &SphericalGrid) -> f64 {
    let nlon = grid.nlon();
    let rows: Vec<f64> = plane
        .chunks(nlon)
        .zip(grid.weights())
        .map(|(row, &w)| w * pairwise_sum(row))
        .collect();
    pairwise_sum(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_integrates_to_four_pi() {
        let g = SphericalGrid::gaussian(12, 24).unwrap();
        let f = Field::filled(&g, 2, 3, 1.0);
        for v in integrate(&f, &g).unwrap() {
            assert!((v - 4.0 * PI).abs() < 1e-12);
        }
        let e = SphericalGrid::equiangular(128, 256).unwrap();
        let v = integrate(&Field::filled(&e, 1, 1, 1.0), &e).unwrap()[0];
        assert!((v - 4.0 * PI).abs() / (4.0 * PI) < 1e-3);
    }

    #[test]
    fn y10_integrates_to_zero() {
        for nlat in 2..10 {
            let g = SphericalGrid::gaussian(nlat, 8).unwrap();
            let c = (3.0 / (4.0 * PI)).sqrt();
            let f = Field::from_fn(&g, 1, 1, |_, _, i, _| c * g.colatitudes()[i].cos());
            assert!(integrate(&f, &g).unwrap()[0].abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_foreign_grid() {
        let g = SphericalGrid::gaussian(4, 8).unwrap();
        let f = Field::filled(&SphericalGrid::gaussian(4, 6).unwrap(), 1, 1, 1.0);
        assert!(integrate(&f, &g).is_err());
    }
}
