//! Batched multi-channel signals sampled on a [`SphericalGrid`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFamily, SphericalGrid};

/// Identity of the grid a field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub family: GridFamily,
    pub nlat: usize,
    pub nlon: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<SphericalGrid> {
        SphericalGrid::new(self.family, self.nlat, self.nlon)
    }
}

impl From<&SphericalGrid> for GridSpec {
    fn from(g: &SphericalGrid) -> Self {
        GridSpec { family: g.family(), nlat: g.nlat(), nlon: g.nlon() }
    }
}

/// Values indexed `(batch, channel, lat, lon)` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    batch: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &SphericalGrid, batch: usize, channels: usize) -> Self {
        Self::filled(grid, batch, channels, 0.0)
    }

    pub fn filled(grid: &SphericalGrid, batch: usize, channels: usize, value: f64) -> Self {
        Self {
            grid: grid.into(),
            batch,
            channels,
            values: vec![value; batch * channels * grid.num_points()],
        }
    }

    pub fn from_vec(grid: &SphericalGrid, batch: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_spec(grid.into(), batch, channels, values)
    }

    pub fn from_spec(grid: GridSpec, batch: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        let expected = batch * channels * grid.nlat * grid.nlon;
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} values for shape [{batch}, {channels}, {}, {}], got {}",
                grid.nlat,
                grid.nlon,
                values.len()
            )));
        }
        Ok(Self { grid, batch, channels, values })
    }

    /// Fills every entry from `f(batch, channel, lat, lon)`.
    pub fn from_fn<F>(grid: &SphericalGrid, batch: usize, channels: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize, usize, usize) -> f64,
    {
        let (nlat, nlon) = (grid.nlat(), grid.nlon());
        let mut values = Vec::with_capacity(batch * channels * nlat * nlon);
        for b in 0..batch {
            for c in 0..channels {
                for i in 0..nlat {
                    for j in 0..nlon {
                        values.push(f(b, c, i, j));
                    }
                }
            }
        }
        Self { grid: grid.into(), batch, channels, values }
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn nlat(&self) -> usize {
        self.grid.nlat
    }

    pub fn nlon(&self) -> usize {
        self.grid.nlon
    }

    pub fn num_points(&self) -> usize {
        self.grid.nlat * self.grid.nlon
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.grid.nlat, self.grid.nlon]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn index(&self, b: usize, c: usize, lat: usize, lon: usize) -> usize {
        ((b * self.channels + c) * self.grid.nlat + lat) * self.grid.nlon + lon
    }

    pub fn get(&self, b: usize, c: usize, lat: usize, lon: usize) -> f64 {
        self.values[self.index(b, c, lat, lon)]
    }

    pub fn set(&mut self, b: usize, c: usize, lat: usize, lon: usize, value: f64) {
        let idx = self.index(b, c, lat, lon);
        self.values[idx] = value;
    }

    /// The `nlat * nlon` slab of one batch entry and channel.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let n = self.num_points();
        let start = (b * self.channels + c) * n;
        &self.values[start..start + n]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let n = self.num_points();
        let start = (b * self.channels + c) * n;
        &mut self.values[start..start + n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_grid(&self, grid: &SphericalGrid) -> Result<()> {
        if self.grid != GridSpec::from(grid) {
            return Err(Error::GridMismatch(format!(
                "field on {} {}x{}, expected {}",
                self.grid.family,
                self.grid.nlat,
                self.grid.nlon,
                grid.describe()
            )));
        }
        Ok(())
    }

    pub fn check_same_shape(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid || self.batch != other.batch || self.channels != other.channels {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    /// Circular shift along longitude: `out[.., lon] = self[.., lon - shift]`.
    pub fn roll_lon(&self, shift: isize) -> Field {
        let nlon = self.grid.nlon;
        let s = shift.rem_euclid(nlon as isize) as usize;
        let mut out = self.clone();
        for (src, dst) in self.values.chunks(nlon).zip(out.values.chunks_mut(nlon)) {
            for j in 0..nlon {
                dst[(j + s) % nlon] = src[j];
            }
        }
        out
    }

    /// Keeps channels `start..start + count`.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Field> {
        if start + count > self.channels {
            return Err(Error::ShapeMismatch(format!(
                "channel range {start}..{} exceeds {} channels",
                start + count,
                self.channels
            )));
        }
        let n = self.num_points();
        let mut values = Vec::with_capacity(self.batch * count * n);
        for b in 0..self.batch {
            for c in start..start + count {
                values.extend_from_slice(self.plane(b, c));
            }
        }
        Ok(Field { grid: self.grid, batch: self.batch, channels: count, values })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        for (o, &b) in out.values.iter_mut().zip(&other.values) {
            *o = f(*o, b);
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roll_moves_columns() {
        let g = SphericalGrid::equiangular(2, 4).unwrap();
        let f = Field::from_fn(&g, 1, 1, |_, _, i, j| (10 * i + j) as f64);
        let r = f.roll_lon(1);
        assert_eq!(r.get(0, 0, 1, 1), 10.0);
        assert_eq!(r.get(0, 0, 1, 0), 13.0);
        assert_eq!(f.roll_lon(-3), r);
        assert_eq!(f.roll_lon(4), f);
    }

    #[test]
    fn shape_validation() {
        let g = SphericalGrid::gaussian(2, 4).unwrap();
        assert!(Field::from_vec(&g, 1, 2, vec![0.0; 15]).is_err());
        let f = Field::from_vec(&g, 1, 2, vec![0.0; 16]).unwrap();
        assert!(f.check_grid(&SphericalGrid::equiangular(2, 4).unwrap()).is_err());
        assert!(f.channel_slice(1, 2).is_err());
    }
}
