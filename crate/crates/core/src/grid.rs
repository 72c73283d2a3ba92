//! Latitude-longitude grids on the unit sphere and their quadrature weights.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the Newton iteration on Legendre roots.
const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFamily {
    Equiangular,
    Gaussian,
}

impl GridFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            GridFamily::Equiangular => "equiangular",
            GridFamily::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for GridFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equiangular" => Ok(GridFamily::Equiangular),
            "gaussian" => Ok(GridFamily::Gaussian),
            other => Err(Error::InvalidArgument(format!("unknown grid family '{other}'"))),
        }
    }
}

impl std::fmt::Display for GridFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A tensor-product grid on S² with per-latitude quadrature weights.
///
/// Colatitudes ascend in `[0, pi]`, longitudes are `2*pi*j/nlon`. The weight of
/// point `(i, j)` is `weights[i]` for every `j`, so the grid is exactly
/// invariant under longitude shifts by whole columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalGrid {
    family: GridFamily,
    nlat: usize,
    nlon: usize,
    colatitudes: Vec<f64>,
    longitudes: Vec<f64>,
    weights: Vec<f64>,
}

impl SphericalGrid {
    /// Equiangular grid `theta_i = pi*i/nlat` (pole row included, `theta = pi` not)
    /// with trapezoidal weights `2*pi^2/(nlat*nlon) * sin(theta_i)`.
    pub fn equiangular(nlat: usize, nlon: usize) -> Result<Self> {
        if nlat < 2 || nlon < 2 {
            return Err(Error::InvalidGridSize {
                nlat,
                nlon,
                reason: "equiangular grids need nlat >= 2 and nlon >= 2",
            });
        }
        let colatitudes: Vec<f64> = (0..nlat).map(|i| PI * i as f64 / nlat as f64).collect();
        let scale = 2.0 * PI * PI / (nlat * nlon) as f64;
        let weights = colatitudes.iter().map(|t| scale * t.sin()).collect();
        Ok(Self {
            family: GridFamily::Equiangular,
            nlat,
            nlon,
            colatitudes,
            longitudes: longitudes(nlon),
            weights,
        })
    }

    /// Gaussian grid: `cos(theta_i)` are the roots of `P_nlat`, weights are the
    /// Gauss-Legendre weights scaled by `2*pi/nlon`.
    pub fn gaussian(nlat: usize, nlon: usize) -> Result<Self> {
        if nlat < 1 || nlon < 2 {
            return Err(Error::InvalidGridSize {
                nlat,
                nlon,
                reason: "gaussian grids need nlat >= 1 and nlon >= 2",
            });
        }
        let (nodes, gl_weights) = gauss_legendre(nlat)?;
        // nodes ascend in x = cos(theta); reverse so colatitude ascends
        let colatitudes = nodes.iter().rev().map(|x| x.acos()).collect();
        let scale = 2.0 * PI / nlon as f64;
        let weights = gl_weights.iter().rev().map(|w| scale * w).collect();
        Ok(Self {
            family: GridFamily::Gaussian,
            nlat,
            nlon,
            colatitudes,
            longitudes: longitudes(nlon),
            weights,
        })
    }

    pub fn new(family: GridFamily, nlat: usize, nlon: usize) -> Result<Self> {
        match family {
            GridFamily::Equiangular => Self::equiangular(nlat, nlon),
            GridFamily::Gaussian => Self::gaussian(nlat, nlon),
        }
    }

    pub fn family(&self) -> GridFamily {
        self.family
    }

    pub fn nlat(&self) -> usize {
        self.nlat
    }

    pub fn nlon(&self) -> usize {
        self.nlon
    }

    pub fn num_points(&self) -> usize {
        self.nlat * self.nlon
    }

    pub fn colatitudes(&self) -> &[f64] {
        &self.colatitudes
    }

    pub fn longitudes(&self) -> &[f64] {
        &self.longitudes
    }

    /// Per-latitude quadrature weights (steradians per point).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, lat: usize) -> f64 {
        self.weights[lat]
    }

    /// Longitude spacing `2*pi/nlon`.
    pub fn dlon(&self) -> f64 {
        2.0 * PI / self.nlon as f64
    }

    /// Total quadrature mass `sum_ij w_ij`, which approximates `4*pi`.
    pub fn total_weight(&self) -> f64 {
        crate::sum::pairwise_sum(&self.weights) * self.nlon as f64
    }

    /// Weight of every point in flattened `lat * nlon + lon` order.
    pub fn point_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_points());
        for &w in &self.weights {
            out.extend(std::iter::repeat_n(w, self.nlon));
        }
        out
    }

    /// Same shape and family; used to validate that fields and maps agree.
    pub fn same_layout(&self, other: &SphericalGrid) -> bool {
        self.family == other.family && self.nlat == other.nlat && self.nlon == other.nlon
    }

    pub fn describe(&self) -> String {
        format!("{} {}x{}", self.family, self.nlat, self.nlon)
    }
}

fn longitudes(nlon: usize) -> Vec<f64> {
    (0..nlon).map(|j| 2.0 * PI * j as f64 / nlon as f64).collect()
}

/// Gauss-Legendre nodes (ascending in `[-1, 1]`) and weights.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess for the i-th largest root
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut converged = false;
        let mut dp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= NEWTON_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NewtonNonConvergence { degree: n, index: i });
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR_PI: f64 = 4.0 * PI;

    #[test]
    fn equiangular_weight_at_equator() {
        let g = SphericalGrid::equiangular(4, 8).unwrap();
        assert_eq!(g.colatitudes()[2], PI / 2.0);
        // 2*pi^2/32 * sin(pi/2) = pi^2/16
        assert!((g.weight(2) - PI * PI / 16.0).abs() < 1e-15);
        assert!((g.weight(2) - 0.61685).abs() < 1e-5);
        assert_eq!(g.weight(0), 0.0);
    }

    #[test]
    fn equiangular_total_weight_converges() {
        let g = SphericalGrid::equiangular(128, 256).unwrap();
        assert!((g.total_weight() - FOUR_PI).abs() / FOUR_PI < 1e-3);
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(SphericalGrid::equiangular(1, 8).is_err());
        assert!(SphericalGrid::equiangular(4, 1).is_err());
        assert!(SphericalGrid::gaussian(0, 8).is_err());
        assert!(SphericalGrid::gaussian(4, 1).is_err());
    }

    #[test]
    fn longitudes_are_exact_multiples() {
        let g = SphericalGrid::gaussian(3, 12).unwrap();
        for (j, &phi) in g.longitudes().iter().enumerate() {
            assert_eq!(phi, 2.0 * PI * j as f64 / 12.0);
        }
    }

    #[test]
    fn single_node_gauss_rule() {
        let g = SphericalGrid::gaussian(1, 4).unwrap();
        assert_eq!(g.colatitudes()[0], PI / 2.0);
        assert!((g.total_weight() - FOUR_PI).abs() < 1e-12);
    }

    #[test]
    fn gaussian_weights_sum_to_four_pi() {
        for nlat in 1..=64 {
            let g = SphericalGrid::gaussian(nlat, 2 * nlat.max(2)).unwrap();
            assert!((g.total_weight() - FOUR_PI).abs() < 1e-12, "nlat={nlat}");
            assert!(g.weights().iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn gaussian_nodes_are_symmetric() {
        let g = SphericalGrid::gaussian(8, 16).unwrap();
        let t = g.colatitudes();
        for i in 0..8 {
            assert!((t[i] + t[7 - i] - PI).abs() < 1e-12);
        }
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // n nodes integrate degree 2n-1 exactly: int_{-1}^{1} x^6 = 2/7
        let (x, w) = gauss_legendre(4).unwrap();
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(6)).sum();
        assert!((s - 2.0 / 7.0).abs() < 1e-14);
    }
}
