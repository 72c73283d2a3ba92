//! Points, geodesic distances and rotations on the unit sphere.

use std::f64::consts::PI;

use rand::Rng;

use crate::grid::SphericalGrid;

const TWO_PI: f64 = 2.0 * PI;

/// Cartesian embedding of the spherical point `(colatitude, longitude)`.
pub fn to_cartesian(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

/// Spherical coordinates of a (not necessarily normalized) vector, with the
/// longitude wrapped to `[0, 2*pi)`.
pub fn to_spherical(p: [f64; 3]) -> (f64, f64) {
    let rho = p[0].hypot(p[1]);
    let theta = rho.atan2(p[2]);
    let phi = if rho == 0.0 { 0.0 } else { wrap_longitude(p[1].atan2(p[0])) };
    (theta, phi)
}

pub fn wrap_longitude(phi: f64) -> f64 {
    let w = phi.rem_euclid(TWO_PI);
    // rem_euclid can round up to exactly 2*pi for tiny negative inputs
    if w >= TWO_PI {
        0.0
    } else {
        w
    }
}

/// Great-circle distance between `(theta1, phi1)` and `(theta2, phi2)` using the
/// haversine form evaluated through `atan2`, accurate near both 0 and pi.
pub fn geodesic_distance(theta1: f64, phi1: f64, theta2: f64, phi2: f64) -> f64 {
    let sdt = ((theta2 - theta1) * 0.5).sin();
    let sdp = ((phi2 - phi1) * 0.5).sin();
    let h = (sdt * sdt + theta1.sin() * theta2.sin() * sdp * sdp).clamp(0.0, 1.0);
    2.0 * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Great-circle distance between two unit vectors, `atan2(|a x b|, a . b)`.
pub fn geodesic_distance_vec(a: [f64; 3], b: [f64; 3]) -> f64 {
    let c = cross(a, b);
    let s = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    s.atan2(dot(a, b))
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// An element of SO(3) stored as a unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Rotation {
    pub fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Normalizes the given quaternion components. Panics on a zero quaternion.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        assert!(n > 0.0, "zero quaternion does not represent a rotation");
        Self { w: w / n, x: x / n, y: y / n, z: z / n }
    }

    pub fn about_axis(axis: [f64; 3], angle: f64) -> Self {
        let n = dot(axis, axis).sqrt();
        let (s, c) = (angle * 0.5).sin_cos();
        Self::from_quaternion(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn about_z(angle: f64) -> Self {
        Self::about_axis([0.0, 0.0, 1.0], angle)
    }

    /// ZYZ Euler angles: `R = Rz(alpha) * Ry(beta) * Rz(gamma)`.
    pub fn from_zyz(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self::about_z(alpha)
            .compose(&Self::about_axis([0.0, 1.0, 0.0], beta))
            .compose(&Self::about_z(gamma))
    }

    /// Haar-uniform random rotation (Shoemake's method).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random::<f64>() * TWO_PI;
        let u3: f64 = rng.random::<f64>() * TWO_PI;
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        Self::from_quaternion(a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos())
    }

    pub fn quaternion(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let (a, b) = (self, other);
        Rotation::from_quaternion(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn inverse(&self) -> Rotation {
        Rotation { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let Rotation { w, x, y, z } = *self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = self.matrix();
        [dot(m[0], p), dot(m[1], p), dot(m[2], p)]
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

/// Pull-back coordinates `R^{-1} x` for every grid point, in `lat * nlon + lon`
/// order. A field sampled at these coordinates is the rotated field.
pub fn rotate_grid_points(grid: &SphericalGrid, rotation: &Rotation) -> Vec<(f64, f64)> {
    let inv = rotation.inverse();
    let mut out = Vec::with_capacity(grid.num_points());
    for &theta in grid.colatitudes() {
        for &phi in grid.longitudes() {
            let p = inv.apply(to_cartesian(theta, phi));
            let (t, mut ph) = to_spherical(p);
            if p[0] == 0.0 && p[1] == 0.0 {
                // Image is a pole: take the longitude of the rotated meridian
                // direction so that z-rotations still permute pole columns.
                let d = inv.apply([phi.cos(), phi.sin(), 0.0]);
                ph = wrap_longitude(d[1].atan2(d[0]));
            }
            out.push((t, ph));
        }
    }
    out
}
