//! C ABI over the `s2attn` attention kernels.
//!
//! Grids and neighborhood maps are opaque handles created and destroyed by
//! this library. Field buffers are caller-owned, contiguous `double` arrays in
//! `[batch][channel][lat][lon]` order. Every fallible call returns an
//! [`S2Status`]; on failure the message is available from
//! [`s2_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use s2attn::attention::{neighborhood_attention_backward, neighborhood_attention_forward, s2_attention_forward};
use s2attn::io::{load_neighborhood_map, save_neighborhood_map};
use s2attn::{AttentionConfig, Error, Field, GridFamily, NeighborhoodMap, SphericalGrid};

/// Result code of every fallible call; zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum S2Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    GridMismatch = 4,
    InvalidCutoff = 5,
    Malformed = 6,
    Io = 7,
    Numerical = 8,
    Panic = 99,
}

/// Quadrature family of a grid.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum S2GridFamily {
    Equiangular = 0,
    Gaussian = 1,
}

/// Shape of an attention call: q and k carry `heads * head_dim` channels,
/// v and the output `heads * value_dim`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct S2AttentionDims {
    pub batch: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub value_dim: usize,
}

/// Opaque grid handle.
pub struct S2Grid(SphericalGrid);

/// Opaque neighborhood map handle.
pub struct S2Map(NeighborhoodMap);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> S2Status {
    match e {
        Error::ShapeMismatch(_) | Error::LabelOutOfRange { .. } => S2Status::ShapeMismatch,
        Error::GridMismatch(_) => S2Status::GridMismatch,
        Error::InvalidCutoff(_) => S2Status::InvalidCutoff,
        Error::Malformed { .. } => S2Status::Malformed,
        Error::Io(_) => S2Status::Io,
        Error::NewtonNonConvergence { .. } | Error::NegativeWeight { .. } => S2Status::Numerical,
        Error::InvalidGridSize { .. } | Error::InvalidHarmonicIndex { .. } | Error::InvalidArgument(_) => {
            S2Status::InvalidArgument
        }
    }
}

struct Failure(S2Status, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(S2Status::NullPointer, format!("{what} is null"))
}

/// Runs `f`, turning errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> S2Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => S2Status::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            S2Status::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(S2Status::InvalidArgument, "path is not valid UTF-8".into()))
}

fn field_len(grid: &SphericalGrid, batch: usize, channels: usize) -> Result<usize, Failure> {
    batch
        .checked_mul(channels)
        .and_then(|n| n.checked_mul(grid.num_points()))
        .ok_or_else(|| Failure(S2Status::InvalidArgument, "buffer size overflows".into()))
}

struct Inputs {
    config: AttentionConfig,
    q: Field,
    k: Field,
    v: Field,
}

unsafe fn inputs(grid: &SphericalGrid, dims: S2AttentionDims, q: *const f64, k: *const f64, v: *const f64) -> Result<Inputs, Failure> {
    if dims.batch == 0 || dims.value_dim == 0 {
        return Err(Failure(S2Status::InvalidArgument, "batch and value_dim must be positive".into()));
    }
    let config = AttentionConfig::new(dims.heads, dims.head_dim)?;
    let overflow = || Failure(S2Status::InvalidArgument, "channel count overflows".into());
    let qk = dims.heads.checked_mul(dims.head_dim).ok_or_else(overflow)?;
    let ve = dims.heads.checked_mul(dims.value_dim).ok_or_else(overflow)?;
    let load = |p, channels, what| -> Result<Field, Failure> {
        let values = slice(p, field_len(grid, dims.batch, channels)?, what)?.to_vec();
        Ok(Field::from_vec(grid, dims.batch, channels, values)?)
    };
    Ok(Inputs { config, q: load(q, qk, "q")?, k: load(k, qk, "k")?, v: load(v, ve, "v")? })
}

unsafe fn store(out: *mut f64, field: &Field, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    let src = field.values();
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL, or
/// 0 if no error has occurred.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn s2_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn s2_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a grid; `family` is an [`S2GridFamily`] value. On success `*out`
/// owns a handle to release with [`s2_grid_free`].
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn s2_grid_new(family: u32, nlat: usize, nlon: usize, out: *mut *mut S2Grid) -> S2Status {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let family = match family {
            f if f == S2GridFamily::Equiangular as u32 => GridFamily::Equiangular,
            f if f == S2GridFamily::Gaussian as u32 => GridFamily::Gaussian,
            f => return Err(Failure(S2Status::InvalidArgument, format!("unknown grid family {f}"))),
        };
        *out = Box::into_raw(Box::new(S2Grid(SphericalGrid::new(family, nlat, nlon)?)));
        Ok(())
    })
}

/// Releases a grid. Null is ignored.
///
/// # Safety
/// `grid` must come from [`s2_grid_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn s2_grid_free(grid: *mut S2Grid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of latitude rows, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2_grid_nlat(grid: *const S2Grid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.nlat())
}

/// Number of longitude columns, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2_grid_nlon(grid: *const S2Grid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.nlon())
}

/// Writes the `nlat * nlon` per-point quadrature weights.
///
/// # Safety
/// `grid` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn s2_grid_point_weights(grid: *const S2Grid, out: *mut f64, len: usize) -> S2Status {
    guard(|| {
        let grid = &borrow(grid, "grid")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let w = grid.point_weights();
        if len != w.len() {
            return Err(Failure(S2Status::ShapeMismatch, format!("weights need {} doubles, got {len}", w.len())));
        }
        ptr::copy_nonoverlapping(w.as_ptr(), out, w.len());
        Ok(())
    })
}

/// Builds the geodesic-disk neighborhood map for `theta_cutoff` radians.
///
/// # Safety
/// `grid` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn s2_map_new(grid: *const S2Grid, theta_cutoff: f64, out: *mut *mut S2Map) -> S2Status {
    guard(|| {
        let grid = &borrow(grid, "grid")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(S2Map(NeighborhoodMap::build(grid, theta_cutoff)?)));
        Ok(())
    })
}

/// Loads a map saved by [`s2_map_save`] or the `s2attn nbr` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn s2_map_load(path: *const c_char, out: *mut *mut S2Map) -> S2Status {
    guard(|| {
        let path = path_arg(path)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(S2Map(load_neighborhood_map(path)?)));
        Ok(())
    })
}

/// Saves a map in the binary neighborhood format.
///
/// # Safety
/// `map` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn s2_map_save(map: *const S2Map, path: *const c_char) -> S2Status {
    guard(|| {
        let map = &borrow(map, "map")?.0;
        save_neighborhood_map(path_arg(path)?, map)?;
        Ok(())
    })
}

/// Releases a map. Null is ignored.
///
/// # Safety
/// `map` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn s2_map_free(map: *mut S2Map) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Total number of (query, key) pairs, or 0 for a null handle.
///
/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2_map_num_edges(map: *const S2Map) -> usize {
    map.as_ref().map_or(0, |m| m.0.num_edges())
}

/// Cutoff angle in radians, or NaN for a null handle.
///
/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2_map_theta_cutoff(map: *const S2Map) -> f64 {
    map.as_ref().map_or(f64::NAN, |m| m.0.theta_cutoff())
}

/// Global spherical attention. `out` receives `batch * heads * value_dim`
/// planes.
///
/// # Safety
/// Buffers must hold the number of doubles implied by `dims` and the grid.
#[no_mangle]
pub unsafe extern "C" fn s2_attention_global(
    grid: *const S2Grid,
    dims: S2AttentionDims,
    q: *const f64,
    k: *const f64,
    v: *const f64,
    out: *mut f64,
) -> S2Status {
    guard(|| {
        let grid = &borrow(grid, "grid")?.0;
        let x = inputs(grid, dims, q, k, v)?;
        store(out, &s2_attention_forward(&x.q, &x.k, &x.v, grid, &x.config)?, "out")
    })
}

/// Neighborhood attention restricted to the map's geodesic disks.
///
/// # Safety
/// As [`s2_attention_global`]; `map` must be a live handle built for `grid`.
#[no_mangle]
pub unsafe extern "C" fn s2_attention_local(
    grid: *const S2Grid,
    map: *const S2Map,
    dims: S2AttentionDims,
    q: *const f64,
    k: *const f64,
    v: *const f64,
    out: *mut f64,
) -> S2Status {
    guard(|| {
        let grid = &borrow(grid, "grid")?.0;
        let map = &borrow(map, "map")?.0;
        let x = inputs(grid, dims, q, k, v)?;
        store(out, &neighborhood_attention_forward(&x.q, &x.k, &x.v, map, grid, &x.config)?, "out")
    })
}

/// Gradients of neighborhood attention given the output gradient `dy`
/// (shaped like the output). `dq`/`dk` are shaped like q/k, `dv` like v.
///
/// # Safety
/// As [`s2_attention_local`]; all gradient buffers must be sized accordingly.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn s2_attention_local_backward(
    grid: *const S2Grid,
    map: *const S2Map,
    dims: S2AttentionDims,
    q: *const f64,
    k: *const f64,
    v: *const f64,
    dy: *const f64,
    dq: *mut f64,
    dk: *mut f64,
    dv: *mut f64,
) -> S2Status {
    guard(|| {
        let grid = &borrow(grid, "grid")?.0;
        let map = &borrow(map, "map")?.0;
        let x = inputs(grid, dims, q, k, v)?;
        let ve = dims.heads * dims.value_dim;
        let dy = Field::from_vec(grid, dims.batch, ve, slice(dy, field_len(grid, dims.batch, ve)?, "dy")?.to_vec())?;
        let g = neighborhood_attention_backward(&x.q, &x.k, &x.v, &dy, map, grid, &x.config)?;
        store(dq, &g.dq, "dq")?;
        store(dk, &g.dk, "dk")?;
        store(dv, &g.dv, "dv")
    })
}
