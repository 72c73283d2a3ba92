//! Attention on the two-sphere.
//!
//! Global attention weights every key by its quadrature weight; neighborhood
//! attention restricts keys to a closed geodesic disk around each query and
//! comes with an analytic backward pass. Supporting modules provide grids and
//! quadrature, real spherical harmonics, quadrature-weighted losses, a
//! pre-norm transformer block, brute-force oracles and file formats.

pub mod attention;
pub mod block;
pub mod error;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod harmonics;
pub mod interp;
pub mod io;
pub mod losses;
pub mod oracles;
pub mod quadrature;
pub mod sum;
pub mod verify;

pub use attention::{AttentionConfig, NeighborhoodMap};
pub use error::{Error, Result};
pub use field::{Field, GridSpec};
pub use geometry::Rotation;
pub use grid::{GridFamily, SphericalGrid};
