//! Verification drivers shared by the CLI and the test suites: the rotation
//! equivariance sweep, the finite-difference gradient check and the scaling
//! benchmark.

use std::f64::consts::PI;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    default_cutoff, neighborhood_attention_backward, neighborhood_attention_forward, s2_attention_forward,
    AttentionConfig, NeighborhoodMap,
};
use crate::block::{block_forward, AttentionMode, BlockParams, DEFAULT_MLP_RATIO};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::geometry::{rotate_grid_points, Rotation};
use crate::grid::{GridFamily, SphericalGrid};
use crate::harmonics::{synthesize_at, SphericalExpansion};
use crate::interp::rotate_field;
use crate::oracles::{finite_difference_grad, inner_product, relative_error};
use crate::sum::pairwise_sum;

/// Global or neighborhood attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Global,
    Local,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Global => "global",
            Mode::Local => "local",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Mode::Global),
            "local" | "neighborhood" => Ok(Mode::Local),
            _ => Err(Error::InvalidArgument(format!("unknown attention mode {s:?}"))),
        }
    }
}

/// A neighborhood radius, either fixed or derived from the resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cutoff {
    /// `7 pi / (sqrt(pi) nlat)`.
    Auto,
    Radians(f64),
}

impl Cutoff {
    pub fn resolve(self, nlat: usize) -> f64 {
        match self {
            Cutoff::Auto => default_cutoff(nlat),
            Cutoff::Radians(r) => r,
        }
    }
}

impl FromStr for Cutoff {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Cutoff::Auto);
        }
        let r: f64 = s.parse().map_err(|_| Error::InvalidArgument(format!("cutoff {s:?} is neither auto nor a number")))?;
        if !(r > 0.0 && r <= PI) {
            return Err(Error::InvalidCutoff(r));
        }
        Ok(Cutoff::Radians(r))
    }
}

/// `sqrt(sum w (a-b)^2) / sqrt(sum w b^2)` over all planes.
pub fn relative_l2(a: &Field, b: &Field, grid: &SphericalGrid) -> Result<f64> {
    a.check_same_shape(b)?;
    b.check_grid(grid)?;
    let w = grid.point_weights();
    let n = w.len();
    let mut num = Vec::with_capacity(a.values().len());
    let mut den = Vec::with_capacity(a.values().len());
    for (idx, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
        let wp = w[idx % n];
        num.push(wp * (x - y) * (x - y));
        den.push(wp * y * y);
    }
    let (num, den) = (pairwise_sum(&num), pairwise_sum(&den));
    Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
}

/// Which rotations the equivariance sweep applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotationSet {
    /// Haar-random rotations.
    Random(usize),
    /// Rotations about the polar axis by multiples of the coarsest common
    /// longitude spacing, so they permute every grid in the sweep.
    Azimuthal(usize),
    Identity,
}

#[derive(Debug, Clone)]
pub struct EquivarianceConfig {
    pub family: GridFamily,
    pub nlats: Vec<usize>,
    pub rotations: RotationSet,
    pub seed: u64,
    pub mode: Mode,
    /// `Auto` resolves against the coarsest grid and is held fixed across the
    /// sweep, so that the continuous operator being approximated is the same.
    pub cutoff: Cutoff,
    /// Band limit of the inputs; defaults to a quarter of the coarsest `nlat`.
    pub lmax: Option<usize>,
    pub head_dim: usize,
    pub value_dim: usize,
    /// Run a full transformer block (zero positional embedding) instead of
    /// bare attention. Uses `head_dim` as the embedding width.
    pub block: bool,
}

impl Default for EquivarianceConfig {
    fn default() -> Self {
        Self {
            family: GridFamily::Gaussian,
            nlats: vec![32, 64, 128],
            rotations: RotationSet::Random(8),
            seed: 0,
            mode: Mode::Global,
            cutoff: Cutoff::Auto,
            lmax: None,
            head_dim: 4,
            value_dim: 2,
            block: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceRow {
    pub nlat: usize,
    pub nlon: usize,
    pub rotation: usize,
    /// Unit quaternion `(w, x, y, z)` of the rotation.
    pub quaternion: [f64; 4],
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceReport {
    pub cutoff: Option<f64>,
    pub lmax: usize,
    pub rows: Vec<EquivarianceRow>,
    /// `(nlat, mean error)` in sweep order.
    pub means: Vec<(usize, f64)>,
    pub strictly_decreasing: bool,
}

/// Relative L2 distance between `op(R x)` and `R op(x)` for band-limited `x`,
/// where `R x` is evaluated exactly from the harmonic expansion and `R op(x)`
/// by bilinear resampling.
pub fn equivariance_sweep(cfg: &EquivarianceConfig) -> Result<EquivarianceReport> {
    let coarsest = *cfg.nlats.iter().min().ok_or_else(|| Error::InvalidArgument("empty nlat sweep".into()))?;
    if cfg.head_dim == 0 || cfg.value_dim == 0 {
        return Err(Error::InvalidArgument("channel counts must be positive".into()));
    }
    let lmax = cfg.lmax.unwrap_or((coarsest / 4).max(1));
    let cutoff = match cfg.mode {
        Mode::Global => None,
        Mode::Local => Some(cfg.cutoff.resolve(coarsest)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rotations: Vec<Rotation> = match cfg.rotations {
        RotationSet::Random(n) => (0..n).map(|_| Rotation::random(&mut rng)).collect(),
        RotationSet::Azimuthal(n) => {
            let step = 2.0 * PI / cfg.nlats.iter().map(|&h| 2 * h).fold(0, gcd) as f64;
            (1..=n).map(|k| Rotation::about_z(k as f64 * step)).collect()
        }
        RotationSet::Identity => vec![Rotation::identity()],
    };
    if rotations.is_empty() {
        return Err(Error::InvalidArgument("no rotations requested".into()));
    }
    let (d, e) = (cfg.head_dim, cfg.value_dim);
    let channels = if cfg.block { d } else { 2 * d + e };
    let exps: Vec<SphericalExpansion> = (0..channels).map(|_| SphericalExpansion::random(lmax, &mut rng)).collect();
    let params = if cfg.block {
        let mode = match cutoff {
            None => AttentionMode::Global,
            Some(theta_cutoff) => AttentionMode::Neighborhood { theta_cutoff },
        };
        Some(BlockParams::random(d, 1, DEFAULT_MLP_RATIO, mode, rng.random())?)
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut means = Vec::new();
    for &nlat in &cfg.nlats {
        let grid = SphericalGrid::new(cfg.family, nlat, 2 * nlat)?;
        let map = cutoff.map(|c| NeighborhoodMap::build(&grid, c)).transpose()?;
        let op = |x: &Field| -> Result<Field> {
            match &params {
                Some(p) => block_forward(x, p, None, &grid, map.as_ref()),
                None => {
                    let (q, k, v) = (x.channel_slice(0, d)?, x.channel_slice(d, d)?, x.channel_slice(2 * d, e)?);
                    let config = AttentionConfig::new(1, d)?;
                    match &map {
                        None => s2_attention_forward(&q, &k, &v, &grid, &config),
                        Some(m) => neighborhood_attention_forward(&q, &k, &v, m, &grid, &config),
                    }
                }
            }
        };
        let sample = |r: &Rotation| -> Result<Field> {
            let values = synthesize_at(std::slice::from_ref(&exps), &rotate_grid_points(&grid, r));
            Field::from_vec(&grid, 1, channels, values)
        };
        let base = op(&sample(&Rotation::identity())?)?;
        let mut errors = Vec::with_capacity(rotations.len());
        for (idx, r) in rotations.iter().enumerate() {
            let lhs = op(&sample(r)?)?;
            let rhs = rotate_field(&base, &grid, r)?;
            let error = relative_l2(&lhs, &rhs, &grid)?;
            errors.push(error);
            rows.push(EquivarianceRow { nlat, nlon: 2 * nlat, rotation: idx, quaternion: r.quaternion(), error });
        }
        means.push((nlat, errors.iter().sum::<f64>() / errors.len() as f64));
    }
    let strictly_decreasing = means.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(EquivarianceReport { cutoff, lmax, rows, means, strictly_decreasing })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub family: GridFamily,
    pub nlat: usize,
    pub nlon: usize,
    pub head_dim: usize,
    pub value_dim: usize,
    pub heads: usize,
    pub cutoff: f64,
    pub seed: u64,
    pub trials: usize,
    pub step: f64,
    pub zero_dy: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            family: GridFamily::Gaussian,
            nlat: 6,
            nlon: 12,
            head_dim: 3,
            value_dim: 2,
            heads: 1,
            cutoff: 1.0,
            seed: 0,
            trials: 20,
            step: 1e-5,
            zero_dy: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradcheckTrial {
    pub dq: f64,
    pub dk: f64,
    pub dv: f64,
    /// Largest analytic gradient entry, to make all-zero results visible.
    pub max_abs_gradient: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub trials: Vec<GradcheckTrial>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

/// Entries uniform with unit variance.
fn unit_field(grid: &SphericalGrid, channels: usize, rng: &mut ChaCha8Rng) -> Field {
    let a = 3f64.sqrt();
    Field::from_fn(grid, 1, channels, |_, _, _, _| rng.random_range(-a..a))
}

/// Analytic neighborhood-attention gradients against central differences of
/// `f = sum dy . attn(q, k, v)`.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let grid = SphericalGrid::new(cfg.family, cfg.nlat, cfg.nlon)?;
    let map = NeighborhoodMap::build(&grid, cfg.cutoff)?;
    let config = AttentionConfig::new(cfg.heads, cfg.head_dim)?;
    if !(cfg.step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {}", cfg.step)));
    }
    let (hd, he) = (cfg.heads * cfg.head_dim, cfg.heads * cfg.value_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trials = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let q = unit_field(&grid, hd, &mut rng);
        let k = unit_field(&grid, hd, &mut rng);
        let v = unit_field(&grid, he, &mut rng);
        let dy = if cfg.zero_dy { Field::zeros(&grid, 1, he) } else { unit_field(&grid, he, &mut rng) };
        let g = neighborhood_attention_backward(&q, &k, &v, &dy, &map, &grid, &config)?;
        let f = |q: &Field, k: &Field, v: &Field| {
            let y = neighborhood_attention_forward(q, k, v, &map, &grid, &config).expect("validated shapes");
            inner_product(&dy, &y)
        };
        let nq = finite_difference_grad(|x| f(x, &k, &v), &q, cfg.step);
        let nk = finite_difference_grad(|x| f(&q, x, &v), &k, cfg.step);
        let nv = finite_difference_grad(|x| f(&q, &k, x), &v, cfg.step);
        trials.push(GradcheckTrial {
            dq: relative_error(&g.dq, &nq),
            dk: relative_error(&g.dk, &nk),
            dv: relative_error(&g.dv, &nv),
            max_abs_gradient: g.dq.max_abs().max(g.dk.max_abs()).max(g.dv.max_abs()),
        });
    }
    let max_relative_error = trials.iter().map(|t| t.dq.max(t.dk).max(t.dv)).fold(0.0, f64::max);
    Ok(GradcheckReport {
        trials,
        max_relative_error,
        tolerance: GRADCHECK_TOLERANCE,
        pass: max_relative_error <= GRADCHECK_TOLERANCE,
    })
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub family: GridFamily,
    pub nlats: Vec<usize>,
    pub modes: Vec<Mode>,
    /// `Auto` is resolved per resolution, which keeps the neighbor count
    /// roughly (not exactly) fixed.
    pub cutoff: Cutoff,
    /// Retune the local cutoff at every resolution so the mean number of keys
    /// per query matches the one of the first resolution in the sweep.
    pub fixed_count: bool,
    pub repeat: usize,
    pub head_dim: usize,
    pub value_dim: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            family: GridFamily::Equiangular,
            nlats: vec![32, 48, 64, 96, 128],
            modes: vec![Mode::Global, Mode::Local],
            cutoff: Cutoff::Auto,
            fixed_count: false,
            repeat: 3,
            head_dim: 4,
            value_dim: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub mode: Mode,
    pub nlat: usize,
    pub nlon: usize,
    pub points: usize,
    pub cutoff: Option<f64>,
    /// Mean keys per query.
    pub keys_per_query: f64,
    pub median_seconds: f64,
}

/// Shortest wall-clock span of one timing sample.
const MIN_SAMPLE_SECONDS: f64 = 0.05;

/// Median forward wall-clock time per configuration.
///
/// Samples are taken round-robin over all configurations, so slow phases of
/// a shared machine hit every resolution alike instead of skewing the fit.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repeat == 0 {
        return Err(Error::InvalidArgument("repeat must be positive".into()));
    }
    let config = AttentionConfig::new(1, cfg.head_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cases = Vec::new();
    let mut target_keys = None;
    for &mode in &cfg.modes {
        for &nlat in &cfg.nlats {
            let grid = SphericalGrid::new(cfg.family, nlat, 2 * nlat)?;
            let n = grid.num_points();
            let q = unit_field(&grid, cfg.head_dim, &mut rng);
            let k = unit_field(&grid, cfg.head_dim, &mut rng);
            let v = unit_field(&grid, cfg.value_dim, &mut rng);
            let (cutoff, map) = match mode {
                Mode::Global => (None, None),
                Mode::Local => {
                    let mut c = cfg.cutoff.resolve(nlat);
                    let mut map = NeighborhoodMap::build(&grid, c)?;
                    if cfg.fixed_count {
                        match target_keys {
                            None => target_keys = Some(map.num_edges() as f64 / n as f64),
                            Some(target) => (c, map) = cutoff_for_keys(&grid, target)?,
                        }
                    }
                    (Some(c), Some(map))
                }
            };
            let row = BenchRow {
                mode,
                nlat,
                nlon: 2 * nlat,
                points: n,
                cutoff,
                keys_per_query: map.as_ref().map_or(n as f64, |m| m.num_edges() as f64 / n as f64),
                median_seconds: 0.0,
            };
            cases.push(BenchCase { row, grid, q, k, v, map, inner: 1, times: Vec::with_capacity(cfg.repeat) });
        }
    }
    // short runs are repeated inside one sample so timer and scheduler
    // jitter do not dominate the small grids
    for case in &mut cases {
        let start = Instant::now();
        std::hint::black_box(case.forward(&config)?);
        case.inner = (MIN_SAMPLE_SECONDS / start.elapsed().as_secs_f64().max(1e-9)).ceil().max(1.0) as usize;
    }
    for _ in 0..cfg.repeat {
        for case in &mut cases {
            let start = Instant::now();
            for _ in 0..case.inner {
                std::hint::black_box(case.forward(&config)?);
            }
            case.times.push(start.elapsed().as_secs_f64() / case.inner as f64);
        }
    }
    Ok(cases
        .into_iter()
        .map(|mut case| {
            case.times.sort_by(f64::total_cmp);
            BenchRow { median_seconds: case.times[case.times.len() / 2], ..case.row }
        })
        .collect())
}

struct BenchCase {
    row: BenchRow,
    grid: SphericalGrid,
    q: Field,
    k: Field,
    v: Field,
    map: Option<NeighborhoodMap>,
    inner: usize,
    times: Vec<f64>,
}

impl BenchCase {
    fn forward(&self, config: &AttentionConfig) -> Result<Field> {
        match &self.map {
            None => s2_attention_forward(&self.q, &self.k, &self.v, &self.grid, config),
            Some(m) => neighborhood_attention_forward(&self.q, &self.k, &self.v, m, &self.grid, config),
        }
    }
}

/// Smallest cutoff (to bisection precision) whose mean keys per query
/// reaches `target`.
fn cutoff_for_keys(grid: &SphericalGrid, target: f64) -> Result<(f64, NeighborhoodMap)> {
    let n = grid.num_points() as f64;
    let mean = |m: &NeighborhoodMap| m.num_edges() as f64 / n;
    let (mut lo, mut hi) = (1e-9, PI);
    let mut best = NeighborhoodMap::build(grid, hi)?;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let m = NeighborhoodMap::build(grid, mid)?;
        if mean(&m) >= target {
            hi = mid;
            best = m;
        } else {
            lo = mid;
        }
    }
    Ok((hi, best))
}

/// Least-squares slope of `ln t` against `ln N` for one mode.
pub fn loglog_slope(rows: &[BenchRow], mode: Mode) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mode == mode && r.median_seconds > 0.0)
        .map(|r| ((r.points as f64).ln(), r.median_seconds.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
