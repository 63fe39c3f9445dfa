//! `mapconv` command-line tool: sampling-map generation, mapped convolution,
//! gradient checks, spherical resampling, benchmarks and icosphere export.

mod files;
mod generate;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mapconv::bench::{run_benchmark_with_threads, write_csv, BenchConfig, BenchPass};
use mapconv::gradcheck::{analytic_gradients, compare, numeric_gradients, GradInstance};
use mapconv::icosphere::{resample_equirect_to_vertices_with, MAX_ORDER};
use mapconv::io::{load_map, save_map, save_obj, save_pfm, save_vtxt};
use mapconv::sphere::{make_cube_to_equirect_map, make_equirect_to_cube_map};
use mapconv::{
    grid_conv_reference, make_grid_map, make_icosphere_with, mapped_conv_forward, mapped_im2col,
    resample_vertices_to_equirect, ConvParams, EquirectGeometry, GridConv, KernelSpec, ResampleMode, SubdivisionRule,
    Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use files::{load_signal, load_weights, WeightsFile};
use generate::{summary, GenArgs, InterpArg, MapKind};

/// Bad flags, bad files or inconsistent dimensions: exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Largest input the finite-difference check will accept.
const GRADCHECK_MAX_INPUT: usize = 4096;

#[derive(Parser)]
#[command(name = "mapconv", version, about = "Convolution on arbitrary sampling patterns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a sampling map and write it as MAPC.
    Genmap {
        #[arg(value_enum)]
        kind: MapKind,
        #[command(flatten)]
        gen: GenArgs,
        /// Output file; without it only the summary is printed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a mapped convolution to a VTXT or PFM signal.
    Conv {
        /// Input signal, VTXT `(C, N)` or PFM image.
        #[arg(long)]
        input: PathBuf,
        /// MAPC sampling map.
        #[arg(long)]
        map: PathBuf,
        /// JSON weights file.
        #[arg(long, conflicts_with = "random_weights", required_unless_present = "random_weights")]
        weights: Option<PathBuf>,
        /// Draw uniform [-1, 1) weights and biases from this seed instead.
        #[arg(long)]
        random_weights: Option<u64>,
        /// Output channels for random weights.
        #[arg(long, default_value_t = 1)]
        c_out: usize,
        /// Write the weights used to this JSON file.
        #[arg(long)]
        save_weights: Option<PathBuf>,
        /// Compare with direct grid convolution; the map must be the grid map
        /// described by the geometry flags.
        #[arg(long)]
        check_against_grid: bool,
        #[command(flatten)]
        gen: GenArgs,
        /// Output VTXT file `(C_out, n_out)`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Generator to build the map from (alternative to --map).
        #[arg(value_enum, required_unless_present = "map")]
        kind: Option<MapKind>,
        /// MAPC sampling map.
        #[arg(long, conflicts_with = "kind")]
        map: Option<PathBuf>,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long, default_value_t = 2)]
        c_in: usize,
        #[arg(long, default_value_t = 2)]
        c_out: usize,
        /// Seed for the random instance.
        #[arg(long = "instance-seed", default_value_t = 0)]
        instance_seed: u64,
        /// Finite-difference step.
        #[arg(long, default_value_t = mapconv::gradcheck::DEFAULT_STEP)]
        step: f64,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Perturb one analytic weight gradient to exercise the failure path.
        #[arg(long, hide = true)]
        corrupt_weight_grad: bool,
    },
    /// Move signals between equirectangular images, icospheres and cube maps.
    Resample {
        #[arg(value_enum)]
        direction: Direction,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Icosphere order.
        #[arg(long)]
        order: Option<usize>,
        /// Output image height (ico2eq, cube2eq).
        #[arg(long)]
        h: Option<usize>,
        /// Output image width; defaults to twice the height.
        #[arg(long)]
        w: Option<usize>,
        /// Cube face size (eq2cube); defaults to a quarter of the image width.
        #[arg(long)]
        face_dim: Option<usize>,
        /// Vertex assignment for eq2ico.
        #[arg(long, value_enum, default_value_t = ModeArg::Scatter)]
        mode: ModeArg,
        /// Scatter only where a vertex gathers at least this much pixel weight;
        /// elsewhere sample the image directly.
        #[arg(long, default_value_t = mapconv::icosphere::DEFAULT_MIN_SCATTER_WEIGHT)]
        min_scatter_weight: f64,
        /// Interpolation for the cube directions.
        #[arg(long, value_enum, default_value_t = InterpArg::Bilinear)]
        interp: InterpArg,
    },
    /// Time grid against mapped convolution and write CSV.
    Bench {
        /// Square sizes or `HxW` entries, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = ["64", "128", "256", "512", "1024"].map(String::from))]
        sizes: Vec<String>,
        #[arg(long, default_value_t = 10)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        kh: usize,
        #[arg(long, default_value_t = 3)]
        kw: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [PassArg::Forward, PassArg::Backward, PassArg::FwdBwd])]
        passes: Vec<PassArg>,
        /// CSV file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an icosphere and write it as OBJ.
    Icosphere {
        #[arg(long)]
        order: usize,
        /// Use Loop smoothing masks instead of midpoint subdivision.
        #[arg(long = "loop")]
        loop_rule: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Direction {
    Eq2ico,
    Ico2eq,
    Eq2cube,
    Cube2eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Scatter,
    Gather,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PassArg {
    Forward,
    Backward,
    #[value(name = "fwd+bwd")]
    FwdBwd,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn cmd_genmap(kind: MapKind, gen: &GenArgs, out: Option<&Path>) -> Result<ExitCode> {
    let map = gen.build(kind)?;
    if let Some(path) = out {
        save_map(path, &map).with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!("{}", summary(&map));
    Ok(ExitCode::SUCCESS)
}

fn random_params(seed: u64, c_in: usize, c_out: usize, k: usize) -> Result<ConvParams<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uni = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let weights = uni(c_out * c_in * k);
    Ok(ConvParams::new(c_in, c_out, k, weights, uni(c_out))?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_conv(
    input: &Path,
    map: &Path,
    weights: Option<&Path>,
    random_weights: Option<u64>,
    c_out: usize,
    save_weights: Option<&Path>,
    check_against_grid: bool,
    gen: &GenArgs,
    out: &Path,
) -> Result<ExitCode> {
    let (signal, _) = load_signal(input)?;
    let map = load_map(map).with_context(|| format!("cannot load map {}", map.display()))?;
    let params = match (weights, random_weights) {
        (Some(path), _) => load_weights(path)?,
        (None, Some(seed)) => random_params(seed, signal.channels(), c_out, map.k())?,
        (None, None) => bail!(usage("either --weights or --random-weights is required")),
    };
    if let Some(path) = save_weights {
        let file = WeightsFile {
            c_in: params.c_in,
            c_out: params.c_out,
            k: params.k,
            weights: params.weights.clone(),
            bias: params.bias.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    let output = mapped_conv_forward(&signal, &map, &params)?;
    if check_against_grid {
        let (h, w) = match (gen.h, gen.w) {
            (Some(h), Some(w)) => (h, w),
            _ => bail!(usage("--check-against-grid needs --h and --w")),
        };
        let expected_map = make_grid_map(h, w, KernelSpec::new(gen.kh, gen.kw), gen.stride, gen.pad, gen.dilation)?;
        if expected_map != map {
            bail!(usage(format!(
                "map is not the grid map for h={h} w={w} kernel={}x{} stride={:?} pad={:?} dilation={:?}",
                gen.kh, gen.kw, gen.stride, gen.pad, gen.dilation
            )));
        }
        let image = signal.clone().reshape(vec![signal.channels(), h, w])?;
        let geom = GridConv::new((gen.kh, gen.kw))
            .stride(gen.stride)
            .padding(gen.pad)
            .dilation(gen.dilation);
        let grid = grid_conv_reference(&image, &params, &geom)?;
        let grid = grid.reshape(vec![params.c_out, map.n_out()])?;
        let diff = output.max_abs_diff(&grid);
        println!("grid check: max abs diff {diff:.3e}");
        if diff > 1e-12 {
            eprintln!("error: mapped and grid convolution disagree");
            return Ok(ExitCode::from(1));
        }
    }
    save_vtxt(out, &output).with_context(|| format!("cannot write {}", out.display()))?;
    println!(
        "wrote {} ({} channels x {} locations)",
        out.display(),
        output.channels(),
        output.spatial_len()
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_gradcheck(
    kind: Option<MapKind>,
    map: Option<&Path>,
    gen: &GenArgs,
    c_in: usize,
    c_out: usize,
    seed: u64,
    step: f64,
    tol: f64,
    corrupt: bool,
) -> Result<ExitCode> {
    let map = match (kind, map) {
        (_, Some(path)) => load_map(path).with_context(|| format!("cannot load map {}", path.display()))?,
        (Some(kind), None) => gen.build(kind)?,
        (None, None) => bail!(usage("give a map kind or --map")),
    };
    if map.n_in() > GRADCHECK_MAX_INPUT {
        bail!(usage(format!(
            "gradcheck is limited to n_in <= {GRADCHECK_MAX_INPUT}; this map has n_in = {}",
            map.n_in()
        )));
    }
    if c_in == 0 || c_out == 0 {
        bail!(usage("channel counts must be positive"));
    }
    let inst = GradInstance::random(&map, c_in, c_out, seed)?;
    let mut analytic = analytic_gradients(&map, &inst)?;
    if corrupt {
        analytic.weights[0] += 1e-3;
    }
    let numeric = numeric_gradients(&map, &inst, step)?;
    let report = compare(&analytic, &numeric);
    println!("{}", summary(&map));
    for (name, g) in report.groups() {
        println!(
            "{name:<8} count={:<7} max_abs={:.3e} max_rel={:.3e}",
            g.count, g.max_abs, g.max_rel
        );
    }
    if report.passes(tol) {
        println!("PASS (tolerance {tol:e})");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL (tolerance {tol:e})");
        Ok(ExitCode::from(1))
    }
}

fn image_shape(shape: Option<(usize, usize)>, what: &str) -> Result<(usize, usize)> {
    shape.ok_or_else(|| usage(format!("{what} input must be a PFM image")))
}

/// Flat `(c, n)` signal to a PFM-ready `(c, h, w)` image.
fn save_image(path: &Path, data: Tensor<f64>, h: usize, w: usize) -> Result<()> {
    let c = data.channels();
    if c != 1 && c != 3 {
        bail!(usage(format!("PFM output needs 1 or 3 channels, signal has {c}")));
    }
    save_pfm(path, &data.reshape(vec![c, h, w])?).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_resample(
    direction: Direction,
    input: &Path,
    output: &Path,
    order: Option<usize>,
    h: Option<usize>,
    w: Option<usize>,
    face_dim: Option<usize>,
    mode: ModeArg,
    min_scatter_weight: f64,
    interp: InterpArg,
) -> Result<ExitCode> {
    let (signal, shape) = load_signal(input)?;
    let out_geom = |h: Option<usize>| -> Result<EquirectGeometry> {
        let h = h.ok_or_else(|| usage("--h is required for this direction"))?;
        Ok(EquirectGeometry::new(h, w.unwrap_or(2 * h))?)
    };
    match direction {
        Direction::Eq2ico => {
            let (ih, iw) = image_shape(shape, "eq2ico")?;
            let order = order.ok_or_else(|| usage("--order is required for eq2ico"))?;
            let mesh = make_icosphere_with(order, SubdivisionRule::Midpoint)?;
            let geom = EquirectGeometry::new(ih, iw)?;
            let c = signal.channels();
            let image = signal.reshape(vec![c, ih, iw])?;
            let mode = match mode {
                ModeArg::Scatter => ResampleMode::Scatter,
                ModeArg::Gather => ResampleMode::Gather,
            };
            if min_scatter_weight.is_nan() || min_scatter_weight < 0.0 {
                bail!(usage("--min-scatter-weight must be non-negative"));
            }
            let values = resample_equirect_to_vertices_with(&image, &mesh, &geom, mode, min_scatter_weight)?;
            save_vtxt(output, &values).with_context(|| format!("cannot write {}", output.display()))?;
            println!(
                "wrote {} vertex values ({} channels)",
                values.spatial_len(),
                values.channels()
            );
        }
        Direction::Ico2eq => {
            if shape.is_some() {
                bail!(usage("ico2eq input must be a VTXT vertex tensor"));
            }
            let order = order.ok_or_else(|| usage("--order is required for ico2eq"))?;
            let mesh = make_icosphere_with(order, SubdivisionRule::Midpoint)?;
            if signal.spatial_len() != mesh.n_vertices() {
                bail!(usage(format!(
                    "vertex tensor has {} values per channel; an order-{order} icosphere has {}",
                    signal.spatial_len(),
                    mesh.n_vertices()
                )));
            }
            let geom = out_geom(h)?;
            let image = resample_vertices_to_equirect(&signal, &mesh, &geom)?;
            let c = image.channels();
            save_image(
                output,
                image.reshape(vec![c, geom.n_pixels()])?,
                geom.height,
                geom.width,
            )?;
            println!("wrote {}x{} image", geom.height, geom.width);
        }
        Direction::Eq2cube => {
            let (ih, iw) = image_shape(shape, "eq2cube")?;
            let geom = EquirectGeometry::new(ih, iw)?;
            let d = face_dim.unwrap_or((iw / 4).max(1));
            let map = make_equirect_to_cube_map(&geom, d, interp.into())?;
            save_image(output, mapped_im2col(&signal, &map)?, 6 * d, d)?;
            println!("wrote cube map, 6 faces of {d}x{d}");
        }
        Direction::Cube2eq => {
            let (rows, d) = image_shape(shape, "cube2eq")?;
            if rows != 6 * d {
                bail!(usage(format!(
                    "cube image must be {} rows by {d} columns, got {rows} rows",
                    6 * d
                )));
            }
            let geom = out_geom(h.or(Some(2 * d)))?;
            let map = make_cube_to_equirect_map(d, &geom, interp.into())?;
            save_image(output, mapped_im2col(&signal, &map)?, geom.height, geom.width)?;
            println!("wrote {}x{} image", geom.height, geom.width);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| usage(format!("bad size {s:?}")));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    sizes: &[String],
    channels: usize,
    kernel: (usize, usize),
    trials: usize,
    warmup: usize,
    seed: u64,
    threads: Option<usize>,
    passes: &[PassArg],
    out: Option<&Path>,
) -> Result<ExitCode> {
    let sizes = sizes.iter().map(|s| parse_size(s)).collect::<Result<Vec<_>>>()?;
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        bail!(usage("--threads must be positive"));
    }
    let cfg = BenchConfig {
        sizes,
        channels,
        kernel,
        trials,
        warmup,
        seed,
        passes: passes
            .iter()
            .map(|p| match p {
                PassArg::Forward => BenchPass::Forward,
                PassArg::Backward => BenchPass::Backward,
                PassArg::FwdBwd => BenchPass::ForwardBackward,
            })
            .collect(),
    };
    let records = run_benchmark_with_threads(&cfg, threads).map_err(|e| match e {
        mapconv::Error::Io(_) => anyhow::Error::from(e),
        other => usage(other.to_string()),
    })?;
    let comment = format!(
        "threads={threads} channels={channels} kernel={}x{} trials={trials} warmup={warmup} seed={seed}",
        kernel.0, kernel.1
    );
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?);
            write_csv(&mut w, &records, &comment)?;
            w.flush()?;
        }
        None => {
            let mut w = io::stdout().lock();
            write_csv(&mut w, &records, &comment)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_icosphere(order: usize, loop_rule: bool, out: Option<&Path>) -> Result<ExitCode> {
    if order > MAX_ORDER {
        bail!(usage(format!("order must be at most {MAX_ORDER}, got {order}")));
    }
    let rule = if loop_rule {
        SubdivisionRule::Loop
    } else {
        SubdivisionRule::Midpoint
    };
    let mesh = make_icosphere_with(order, rule)?;
    if let Some(path) = out {
        save_obj(path, &mesh).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let (v, e, f) = (mesh.n_vertices(), mesh.n_edges(), mesh.n_faces());
    println!(
        "V={v} E={e} F={f} V-E+F={} mean_neighbor_angle={:.6e} rad",
        v as i64 - e as i64 + f as i64,
        mesh.mean_neighbor_angle()
    );
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Genmap { kind, gen, out } => cmd_genmap(*kind, gen, out.as_deref()),
        Command::Conv {
            input,
            map,
            weights,
            random_weights,
            c_out,
            save_weights,
            check_against_grid,
            gen,
            out,
        } => cmd_conv(
            input,
            map,
            weights.as_deref(),
            *random_weights,
            *c_out,
            save_weights.as_deref(),
            *check_against_grid,
            gen,
            out,
        ),
        Command::Gradcheck {
            kind,
            map,
            gen,
            c_in,
            c_out,
            instance_seed,
            step,
            tol,
            corrupt_weight_grad,
        } => cmd_gradcheck(
            *kind,
            map.as_deref(),
            gen,
            *c_in,
            *c_out,
            *instance_seed,
            *step,
            *tol,
            *corrupt_weight_grad,
        ),
        Command::Resample {
            direction,
            input,
            output,
            order,
            h,
            w,
            face_dim,
            mode,
            min_scatter_weight,
            interp,
        } => cmd_resample(
            *direction,
            input,
            output,
            *order,
            *h,
            *w,
            *face_dim,
            *mode,
            *min_scatter_weight,
            *interp,
        ),
        Command::Bench {
            sizes,
            channels,
            kh,
            kw,
            trials,
            warmup,
            seed,
            threads,
            passes,
            out,
        } => cmd_bench(
            sizes,
            *channels,
            (*kh, *kw),
            *trials,
            *warmup,
            *seed,
            *threads,
            passes,
            out.as_deref(),
        ),
        Command::Icosphere { order, loop_rule, out } => cmd_icosphere(*order, *loop_rule, out.as_deref()),
    }
}

/// Bad input (flags, files, shapes, missing paths) gives 2; anything else,
/// including other I/O failures, gives 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    let missing = |e: &io::Error| e.kind() == io::ErrorKind::NotFound;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<mapconv::Error>() {
            return match e {
                mapconv::Error::Io(io) if !missing(io) => 1,
                _ => 2,
            };
        }
        if let Some(io) = cause.downcast_ref::<io::Error>() {
            return if missing(io) { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
