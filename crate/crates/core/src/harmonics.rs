//! Associated Legendre functions and real spherical harmonics.
//!
//! `P_l^m` carries the Condon-Shortley phase `(-1)^m`. Real harmonics use the
//! usual orthonormal basis: `sqrt(2) c P cos(m phi)` for `m > 0`,
//! `sqrt(2) c P sin(|m| phi)` for `m < 0` and `c P` for `m = 0`.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::SphericalGrid;

/// Degree/order pair with `|m| <= l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HarmonicIndex {
    l: usize,
    m: i64,
}

impl HarmonicIndex {
    pub fn new(l: usize, m: i64) -> Result<Self> {
        if m.unsigned_abs() as usize > l {
            return Err(Error::InvalidHarmonicIndex { l, m });
        }
        Ok(Self { l, m })
    }

    /// Channel mapping `l = floor(sqrt(k))`, `m = k - l(l+1)`.
    pub fn from_channel(k: usize) -> Self {
        let mut l = (k as f64).sqrt() as usize;
        // fix up float rounding for large k
        while l * l > k {
            l -= 1;
        }
        while (l + 1) * (l + 1) <= k {
            l += 1;
        }
        let m = k as i64 - (l * (l + 1)) as i64;
        Self { l, m }
    }

    /// Inverse of [`HarmonicIndex::from_channel`].
    pub fn channel(&self) -> usize {
        ((self.l * (self.l + 1)) as i64 + self.m) as usize
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn m(&self) -> i64 {
        self.m
    }
}

/// `P_l^m(x)` by upward recurrence in `l` from the closed-form `P_m^m`.
pub fn associated_legendre(l: usize, m: usize, x: f64) -> Result<f64> {
    if m > l {
        return Err(Error::InvalidHarmonicIndex { l, m: m as i64 });
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!("Legendre argument {x} outside [-1, 1]")));
    }
    Ok(legendre_unchecked(l, m, x))
}

fn legendre_unchecked(l: usize, m: usize, x: f64) -> f64 {
    let pmm = sectoral(m, x);
    if l == m {
        return pmm;
    }
    let mut p0 = pmm;
    let mut p1 = x * (2 * m + 1) as f64 * pmm;
    for ll in (m + 2)..=l {
        let p2 = ((2 * ll - 1) as f64 * x * p1 - (ll + m - 1) as f64 * p0) / (ll - m) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// `P_m^m(x) = (-1)^m (2m-1)!! (1-x^2)^{m/2}`.
fn sectoral(m: usize, x: f64) -> f64 {
    let s = ((1.0 - x) * (1.0 + x)).sqrt();
    let mut p = 1.0;
    for k in 1..=m {
        p *= -((2 * k - 1) as f64) * s;
    }
    p
}

/// `c_l^m = sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!)`, factorials in log space.
pub fn normalization(l: usize, m: usize) -> f64 {
    let log_ratio = libm::lgamma((l - m + 1) as f64) - libm::lgamma((l + m + 1) as f64);
    ((2 * l + 1) as f64 / (4.0 * PI)).sqrt() * (0.5 * log_ratio).exp()
}

/// Real orthonormal spherical harmonic `Y_l^m(theta, phi)`.
pub fn real_sph_harmonic(l: usize, m: i64, theta: f64, phi: f64) -> Result<f64> {
    let idx = HarmonicIndex::new(l, m)?;
    Ok(eval_real(idx, theta, phi))
}

fn eval_real(idx: HarmonicIndex, theta: f64, phi: f64) -> f64 {
    let am = idx.m.unsigned_abs() as usize;
    let radial = normalization(idx.l, am) * legendre_unchecked(idx.l, am, theta.cos());
    match idx.m {
        0 => radial,
        m if m > 0 => SQRT_2 * radial * (am as f64 * phi).cos(),
        _ => SQRT_2 * radial * (am as f64 * phi).sin(),
    }
}

/// Normalized `c_l^m P_l^m(x)` for all `0 <= m <= l <= lmax`, stored at
/// `l(l+1)/2 + m`.
fn normalized_table(lmax: usize, x: f64) -> Vec<f64> {
    let mut table = vec![0.0; (lmax + 1) * (lmax + 2) / 2];
    for m in 0..=lmax {
        let c = normalization(m, m);
        let pmm = sectoral(m, x);
        table[m * (m + 1) / 2 + m] = c * pmm;
        let mut p0 = pmm;
        let mut p1 = x * (2 * m + 1) as f64 * pmm;
        for l in (m + 1)..=lmax {
            if l > m + 1 {
                let p2 = ((2 * l - 1) as f64 * x * p1 - (l + m - 1) as f64 * p0) / (l - m) as f64;
                p0 = p1;
                p1 = p2;
            }
            table[l * (l + 1) / 2 + m] = normalization(l, m) * p1;
        }
    }
    table
}

/// Spectral positional embedding: channel `k` holds `Y_l^m` with
/// `(l, m) = HarmonicIndex::from_channel(k)`.
pub fn spectral_position_embedding(grid: &SphericalGrid, num_channels: usize) -> Result<Field> {
    if num_channels == 0 {
        return Err(Error::InvalidArgument("embedding needs at least one channel".into()));
    }
    let lmax = HarmonicIndex::from_channel(num_channels - 1).l;
    let coeffs = (0..num_channels)
        .map(|k| {
            let mut c = vec![0.0; (lmax + 1) * (lmax + 1)];
            c[k] = 1.0;
            SphericalExpansion { lmax, coeffs: c }
        })
        .collect::<Vec<_>>();
    Ok(synthesize(grid, &[coeffs]))
}

/// A real band-limited function `sum_k a_k Y_k` with channel-indexed
/// coefficients `k = l(l+1) + m`, `l <= lmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalExpansion {
    lmax: usize,
    coeffs: Vec<f64>,
}

impl SphericalExpansion {
    pub fn new(lmax: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != (lmax + 1) * (lmax + 1) {
            return Err(Error::ShapeMismatch(format!(
                "expansion of degree {lmax} needs {} coefficients, got {}",
                (lmax + 1) * (lmax + 1),
                coeffs.len()
            )));
        }
        Ok(Self { lmax, coeffs })
    }

    /// Coefficients uniform in `[-1, 1]`, scaled so the field has unit
    /// mean-square amplitude on average.
    pub fn random<R: Rng + ?Sized>(lmax: usize, rng: &mut R) -> Self {
        let n = (lmax + 1) * (lmax + 1);
        // E[a^2] = 1/3; unit L2 norm per mode
        let scale = (3.0 * 4.0 * PI / n as f64).sqrt();
        let coeffs = (0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        Self { lmax, coeffs }
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, theta: f64, phi: f64) -> f64 {
        let table = normalized_table(self.lmax, theta.cos());
        self.eval_with_table(&table, phi)
    }

    fn eval_with_table(&self, table: &[f64], phi: f64) -> f64 {
        let mut acc = 0.0;
        for l in 0..=self.lmax {
            let base = l * (l + 1);
            let row = l * (l + 1) / 2;
            acc += self.coeffs[base] * table[row];
            for m in 1..=l {
                let (s, c) = (m as f64 * phi).sin_cos();
                let p = SQRT_2 * table[row + m];
                acc += p * (self.coeffs[base + m] * c + self.coeffs[base - m] * s);
            }
        }
        acc
    }
}

/// Samples `expansions[b][c]` on the grid into a `[B, C, nlat, nlon]` field.
pub fn synthesize(grid: &SphericalGrid, expansions: &[Vec<SphericalExpansion>]) -> Field {
    let batch = expansions.len();
    let channels = expansions.first().map_or(0, |e| e.len());
    let lmax = expansions.iter().flatten().map(|e| e.lmax).max().unwrap_or(0);
    let tables: Vec<Vec<f64>> = grid.colatitudes().iter().map(|t| normalized_table(lmax, t.cos())).collect();
    Field::from_fn(grid, batch, channels, |b, c, i, j| {
        expansions[b][c].eval_with_table(&tables[i], grid.longitudes()[j])
    })
}

/// Samples `expansions[b][c]` at arbitrary points, `[B][C][point]`.
pub fn synthesize_at(expansions: &[Vec<SphericalExpansion>], points: &[(f64, f64)]) -> Vec<f64> {
    use rayon::prelude::*;
    let flat: Vec<&SphericalExpansion> = expansions.iter().flatten().collect();
    let lmax = flat.iter().map(|e| e.lmax).max().unwrap_or(0);
    let per_point: Vec<Vec<f64>> = points
        .par_iter()
        .map(|&(t, p)| {
            let table = normalized_table(lmax, t.cos());
            flat.iter().map(|e| e.eval_with_table(&table, p)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(flat.len() * points.len());
    for k in 0..flat.len() {
        out.extend(per_point.iter().map(|v| v[k]));
    }
    out
}

/// Random band-limited field with independent coefficients per plane.
pub fn random_bandlimited<R: Rng + ?Sized>(
    grid: &SphericalGrid,
    batch: usize,
    channels: usize,
    lmax: usize,
    rng: &mut R,
) -> (Field, Vec<Vec<SphericalExpansion>>) {
    let exps: Vec<Vec<SphericalExpansion>> = (0..batch)
        .map(|_| (0..channels).map(|_| SphericalExpansion::random(lmax, rng)).collect())
        .collect();
    (synthesize(grid, &exps), exps)
}
