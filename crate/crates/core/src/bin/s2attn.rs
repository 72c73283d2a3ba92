//! Command-line front end: grids, maps, attention runs and verification
//! reports.
//!
//! Exit codes: 0 success, 2 usage or malformed input, 3 equivariance sweep not
//! monotone, 4 gradient check failed, 5 inputs on mismatched grids.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use s2attn::attention::{
    neighborhood_attention_forward, s2_attention_forward, s2_attention_forward_logmask, AttentionConfig,
    NeighborhoodMap,
};
use s2attn::block::{stack_forward, AttentionMode, BlockParams, PositionPolicy, DEFAULT_MLP_RATIO};
use s2attn::harmonics::{random_bandlimited, spectral_position_embedding};
use s2attn::io::{load_field, load_neighborhood_map, load_params, save_field, save_neighborhood_map, save_params};
use s2attn::losses::{
    accuracy, confusion_fractions, cross_entropy, depth_loss, iou_micro, l1_distance, l2_distance_sq,
    sobolev_w11_seminorm, ClassMask, PointWeights, Ratio, DEPTH_SOBOLEV_WEIGHT,
};
use s2attn::verify::{
    bench, equivariance_sweep, gradcheck, loglog_slope, BenchConfig, Cutoff, EquivarianceConfig, GradcheckConfig,
    Mode, RotationSet,
};
use s2attn::{Error, GridFamily, SphericalGrid};

#[derive(Parser)]
#[command(name = "s2attn", version, about = "Attention on the sphere: kernels, maps and verification reports")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Describe a grid and its quadrature weights.
    Grid {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample spectral positional embeddings into an SFLD file.
    Embed {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        channels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random band-limited field into an SFLD file.
    RandomField {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 8)]
        lmax: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a neighborhood map and cache it as SNBR.
    Nbr {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "auto")]
        cutoff: Cutoff,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run attention on SFLD inputs.
    Attn(AttnArgs),
    /// Random transformer-block parameters into an SPRM file.
    InitParams {
        #[arg(long)]
        embed: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        #[arg(long, default_value_t = 1)]
        blocks: usize,
        #[arg(long, default_value_t = DEFAULT_MLP_RATIO)]
        mlp_ratio: f64,
        #[arg(long, default_value = "global")]
        mode: Mode,
        /// Neighborhood radius in radians (local mode).
        #[arg(long)]
        cutoff: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a stack of transformer blocks to an SFLD field.
    Block {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// Add spectral positional embeddings.
        #[arg(long)]
        pos: bool,
        /// Add embeddings before the first block only.
        #[arg(long)]
        pos_first_only: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Losses and segmentation metrics between two SFLD fields.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// `regression` (L1, L2, W11, depth) or `segmentation` (scores vs one-hot).
        #[arg(long, default_value = "regression")]
        task: String,
        #[arg(long, default_value_t = DEPTH_SOBOLEV_WEIGHT)]
        lambda: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rotation-equivariance sweep over resolutions (CSV).
    Equivariance {
        #[arg(long, default_value = "gaussian")]
        family: GridFamily,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
        nlat_sweep: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        rotations: usize,
        /// `random`, `azimuthal` (grid-aligned polar-axis rotations) or `identity`.
        #[arg(long, default_value = "random")]
        rotation_kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "global")]
        mode: Mode,
        #[arg(long, default_value = "auto")]
        cutoff: Cutoff,
        #[arg(long)]
        lmax: Option<usize>,
        /// Sweep a full transformer block instead of bare attention.
        #[arg(long)]
        block: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic neighborhood gradients vs central differences (JSON).
    Gradcheck {
        #[arg(long, default_value = "gaussian")]
        family: GridFamily,
        #[arg(long, default_value_t = 6)]
        nlat: usize,
        #[arg(long, default_value_t = 12)]
        nlon: usize,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        e: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        #[arg(long, default_value_t = 1.0)]
        cutoff: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Use a zero upstream gradient.
        #[arg(long)]
        zero_dy: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward timings over resolutions with fitted log-log slopes (CSV).
    Bench {
        #[arg(long, default_value = "equiangular")]
        family: GridFamily,
        #[arg(long, value_delimiter = ',', default_value = "32,48,64,96,128")]
        nlat_sweep: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "global,local")]
        modes: Vec<Mode>,
        #[arg(long, default_value = "auto")]
        cutoff: Cutoff,
        /// Retune the local cutoff so mean keys per query stay at the first
        /// resolution's value.
        #[arg(long)]
        fixed_count: bool,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value = "gaussian")]
    family: GridFamily,
    #[arg(long)]
    nlat: usize,
    #[arg(long)]
    nlon: usize,
}

impl GridArgs {
    fn build(&self) -> Result<SphericalGrid, Failure> {
        Ok(SphericalGrid::new(self.family, self.nlat, self.nlon)?)
    }
}

#[derive(Args)]
struct AttnArgs {
    #[arg(long)]
    q: PathBuf,
    #[arg(long)]
    k: PathBuf,
    #[arg(long)]
    v: PathBuf,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value = "global")]
    mode: Mode,
    #[arg(long, default_value = "auto")]
    cutoff: Cutoff,
    /// Cached SNBR map (local mode); overrides --cutoff.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Use the log-weight formulation (global mode).
    #[arg(long)]
    logmask: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::GridMismatch(_) | Error::ShapeMismatch(_) => 5,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// 17 significant digits: round-trips every f64.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    let mut w = open_out(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Grid { grid, out } => cmd_grid(&grid.build()?, out.as_deref()),
        Command::Embed { grid, channels, out } => {
            save_field(out, &spectral_position_embedding(&grid.build()?, channels)?)?;
            Ok(0)
        }
        Command::RandomField { grid, batch, channels, lmax, seed, out } => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (field, _) = random_bandlimited(&grid.build()?, batch, channels, lmax, &mut rng);
            save_field(out, &field)?;
            Ok(0)
        }
        Command::Nbr { grid, cutoff, out } => {
            let g = grid.build()?;
            let map = NeighborhoodMap::build(&g, cutoff.resolve(g.nlat()))?;
            save_neighborhood_map(out, &map)?;
            eprintln!("cutoff {} rad, {} pairs", num(map.theta_cutoff()), map.num_edges());
            Ok(0)
        }
        Command::Attn(args) => cmd_attn(&args),
        Command::InitParams { embed, heads, blocks, mlp_ratio, mode, cutoff, seed, out } => {
            let mode = match (mode, cutoff) {
                (Mode::Global, None) => AttentionMode::Global,
                (Mode::Local, Some(theta_cutoff)) => AttentionMode::Neighborhood { theta_cutoff },
                (Mode::Global, Some(_)) => return Err(usage("--cutoff only applies to local mode")),
                (Mode::Local, None) => return Err(usage("local mode needs --cutoff")),
            };
            let params = (0..blocks)
                .map(|b| BlockParams::random(embed, heads, mlp_ratio, mode, seed.wrapping_add(b as u64)))
                .collect::<Result<Vec<_>, _>>()?;
            save_params(out, &params)?;
            Ok(0)
        }
        Command::Block { input, params, pos, pos_first_only, out } => {
            let x = load_field(input)?;
            let blocks = load_params(params)?;
            let grid = x.grid_spec().build()?;
            let embedding = if pos || pos_first_only {
                Some(spectral_position_embedding(&grid, x.channels())?)
            } else {
                None
            };
            let policy = if pos_first_only { PositionPolicy::FirstBlockOnly } else { PositionPolicy::EveryBlock };
            let cutoffs: Vec<f64> = blocks
                .iter()
                .filter_map(|b| match b.mode {
                    AttentionMode::Neighborhood { theta_cutoff } => Some(theta_cutoff),
                    AttentionMode::Global => None,
                })
                .collect();
            if cutoffs.windows(2).any(|w| w[0] != w[1]) {
                return Err(usage("all neighborhood blocks must share one cutoff"));
            }
            let map = cutoffs.first().map(|&c| NeighborhoodMap::build(&grid, c)).transpose()?;
            let y = stack_forward(&x, &blocks, embedding.as_ref(), policy, &grid, map.as_ref())?;
            save_field(out, &y)?;
            Ok(0)
        }
        Command::Metrics { pred, truth, task, lambda, out } => cmd_metrics(&pred, &truth, &task, lambda, out.as_deref()),
        Command::Equivariance { family, nlat_sweep, rotations, rotation_kind, seed, mode, cutoff, lmax, block, out } => {
            let rotations = match rotation_kind.as_str() {
                "random" => RotationSet::Random(rotations),
                "azimuthal" => RotationSet::Azimuthal(rotations),
                "identity" => RotationSet::Identity,
                other => return Err(usage(format!("unknown rotation kind {other:?}"))),
            };
            let cfg = EquivarianceConfig {
                family,
                nlats: nlat_sweep,
                rotations,
                seed,
                mode,
                cutoff,
                lmax,
                block,
                ..Default::default()
            };
            cmd_equivariance(&cfg, out.as_deref())
        }
        Command::Gradcheck { family, nlat, nlon, d, e, heads, cutoff, seed, trials, step, zero_dy, out } => {
            let cfg = GradcheckConfig {
                family,
                nlat,
                nlon,
                head_dim: d,
                value_dim: e,
                heads,
                cutoff,
                seed,
                trials,
                step,
                zero_dy,
            };
            let report = gradcheck(&cfg)?;
            write_json(out.as_deref(), &report)?;
            Ok(if report.pass { 0 } else { 4 })
        }
        Command::Bench { family, nlat_sweep, modes, cutoff, fixed_count, repeat, seed, out } => {
            let cfg =
                BenchConfig { family, nlats: nlat_sweep, modes, cutoff, fixed_count, repeat, seed, ..Default::default() };
            cmd_bench(&cfg, out.as_deref())
        }
    }
}

fn cmd_grid(grid: &SphericalGrid, out: Option<&Path>) -> Result<u8, Failure> {
    #[derive(Serialize)]
    struct GridFile<'a> {
        family: GridFamily,
        nlat: usize,
        nlon: usize,
        colatitudes: &'a [f64],
        longitudes: &'a [f64],
        weights: &'a [f64],
        total_weight: f64,
        deviation_from_4pi: f64,
        relative_deviation: f64,
    }
    let total = grid.total_weight();
    let four_pi = 4.0 * std::f64::consts::PI;
    let desc = GridFile {
        family: grid.family(),
        nlat: grid.nlat(),
        nlon: grid.nlon(),
        colatitudes: grid.colatitudes(),
        longitudes: grid.longitudes(),
        weights: grid.weights(),
        total_weight: total,
        deviation_from_4pi: (total - four_pi).abs(),
        relative_deviation: (total - four_pi).abs() / four_pi,
    };
    if let Some(path) = out {
        write_json(Some(path), &desc)?;
    }
    println!("sum_weights {}", num(total));
    println!("abs_deviation {}", num(desc.deviation_from_4pi));
    println!("rel_deviation {}", num(desc.relative_deviation));
    Ok(0)
}

fn cmd_attn(args: &AttnArgs) -> Result<u8, Failure> {
    let (q, k, v) = (load_field(&args.q)?, load_field(&args.k)?, load_field(&args.v)?);
    let spec = q.grid_spec();
    if k.grid_spec() != spec || v.grid_spec() != spec {
        return Err(Error::GridMismatch("q, k and v files are on different grids".into()).into());
    }
    let grid = spec.build()?;
    if q.channels() % args.heads != 0 {
        return Err(Error::ShapeMismatch(format!("{} query channels for {} heads", q.channels(), args.heads)).into());
    }
    let config = AttentionConfig::new(args.heads, q.channels() / args.heads)?;
    let y = match args.mode {
        Mode::Global if args.logmask => {
            let out = s2_attention_forward_logmask(&q, &k, &v, &grid, &config)?;
            if !out.excluded_rows.is_empty() {
                eprintln!("note: {} query rows had no positive-weight keys", out.excluded_rows.len());
            }
            out.field
        }
        Mode::Global => s2_attention_forward(&q, &k, &v, &grid, &config)?,
        Mode::Local => {
            let map = match &args.map {
                Some(p) => load_neighborhood_map(p)?,
                None => NeighborhoodMap::build(&grid, args.cutoff.resolve(grid.nlat()))?,
            };
            neighborhood_attention_forward(&q, &k, &v, &map, &grid, &config)?
        }
    };
    save_field(&args.out, &y)?;
    Ok(0)
}

fn cmd_metrics(pred: &Path, truth: &Path, task: &str, lambda: f64, out: Option<&Path>) -> Result<u8, Failure> {
    let (u, t) = (load_field(pred)?, load_field(truth)?);
    if u.grid_spec() != t.grid_spec() {
        return Err(Error::GridMismatch("prediction and truth are on different grids".into()).into());
    }
    let grid = u.grid_spec().build()?;
    let w = PointWeights::new(&grid);
    match task {
        "regression" => {
            #[derive(Serialize)]
            struct Report {
                l1: f64,
                l2_squared: f64,
                w11: f64,
                depth: f64,
                lambda: f64,
            }
            let report = Report {
                l1: l1_distance(&u, &t, &w)?,
                l2_squared: l2_distance_sq(&u, &t, &w)?,
                w11: sobolev_w11_seminorm(&u, &t, &grid, &w)?,
                depth: depth_loss(&u, &t, &grid, &w, lambda)?,
                lambda,
            };
            write_json(out, &report)?;
        }
        "segmentation" => {
            #[derive(Serialize)]
            struct ClassRow {
                true_pos: f64,
                false_pos: f64,
                false_neg: f64,
                true_neg: f64,
            }
            #[derive(Serialize)]
            struct Report {
                cross_entropy: f64,
                iou: f64,
                iou_degenerate: bool,
                accuracy: f64,
                classes: Vec<ClassRow>,
            }
            let truth = ClassMask::from_one_hot(&t)?;
            let guess = ClassMask::argmax(&u);
            let iou = iou_micro(&guess, &truth, &w)?;
            let report = Report {
                cross_entropy: cross_entropy(&u, &truth, &w)?,
                iou: iou.value(),
                iou_degenerate: matches!(iou, Ratio::Degenerate(_)),
                accuracy: accuracy(&guess, &truth, &w)?,
                classes: confusion_fractions(&guess, &truth, &w)?
                    .into_iter()
                    .map(|c| ClassRow {
                        true_pos: c.true_pos,
                        false_pos: c.false_pos,
                        false_neg: c.false_neg,
                        true_neg: c.true_neg,
                    })
                    .collect(),
            };
            write_json(out, &report)?;
        }
        other => return Err(usage(format!("unknown task {other:?}"))),
    }
    Ok(0)
}

fn cmd_equivariance(cfg: &EquivarianceConfig, out: Option<&Path>) -> Result<u8, Failure> {
    let report = equivariance_sweep(cfg)?;
    let mut w = open_out(out)?;
    writeln!(w, "kind,nlat,nlon,rotation,qw,qx,qy,qz,error,strictly_decreasing")?;
    for r in &report.rows {
        let [a, b, c, d] = r.quaternion.map(num);
        writeln!(w, "row,{},{},{},{a},{b},{c},{d},{},", r.nlat, r.nlon, r.rotation, num(r.error))?;
    }
    for &(nlat, mean) in &report.means {
        writeln!(w, "mean,{nlat},{},,,,,,{},", 2 * nlat, num(mean))?;
    }
    writeln!(w, "summary,,,,,,,,,{}", report.strictly_decreasing)?;
    w.flush()?;
    if report.strictly_decreasing {
        Ok(0)
    } else {
        eprintln!("mean equivariance error is not strictly decreasing over the sweep");
        Ok(3)
    }
}

fn cmd_bench(cfg: &BenchConfig, out: Option<&Path>) -> Result<u8, Failure> {
    let rows = bench(cfg)?;
    let mut w = open_out(out)?;
    writeln!(w, "kind,mode,nlat,nlon,points,cutoff,keys_per_query,median_seconds,slope")?;
    for r in &rows {
        writeln!(
            w,
            "row,{},{},{},{},{},{},{},",
            r.mode.as_str(),
            r.nlat,
            r.nlon,
            r.points,
            r.cutoff.map(num).unwrap_or_default(),
            num(r.keys_per_query),
            num(r.median_seconds)
        )?;
    }
    for &mode in &cfg.modes {
        if let Some(s) = loglog_slope(&rows, mode) {
            writeln!(w, "fit,{},,,,,,,{}", mode.as_str(), num(s))?;
        }
    }
    w.flush()?;
    Ok(0)
}
