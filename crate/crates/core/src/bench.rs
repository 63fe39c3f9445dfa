//! Timing harness comparing grid convolution with mapped convolution over a
//! randomly shuffled sampling pattern.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mapped_conv::{
    grid_conv_backward_reference, grid_conv_reference, mapped_conv_backward_input_with, mapped_conv_backward_params,
    mapped_conv_forward, ConvParams, GemmKernel, GridConv, Tensor,
};
use crate::sample_map::{make_shuffle_map_interp, Interp, KernelSpec, MapTranspose, SampleMap};

pub const CSV_HEADER: &str = "pass,variant,channels,height,width,trials,mean_seconds,slowdown_vs_grid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BenchPass {
    Forward,
    Backward,
    ForwardBackward,
}

impl BenchPass {
    pub const ALL: [BenchPass; 3] = [BenchPass::Forward, BenchPass::Backward, BenchPass::ForwardBackward];

    pub fn name(self) -> &'static str {
        match self {
            BenchPass::Forward => "forward",
            BenchPass::Backward => "backward",
            BenchPass::ForwardBackward => "fwd+bwd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BenchVariant {
    Grid,
    MappedNearest,
    MappedBilinear,
}

impl BenchVariant {
    pub const ALL: [BenchVariant; 3] = [
        BenchVariant::Grid,
        BenchVariant::MappedNearest,
        BenchVariant::MappedBilinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchVariant::Grid => "grid",
            BenchVariant::MappedNearest => "mapped-nearest",
            BenchVariant::MappedBilinear => "mapped-bilinear",
        }
    }
}

/// One timed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub pass: BenchPass,
    pub variant: BenchVariant,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub trials: usize,
    pub mean_seconds: f64,
    /// Mean time relative to the grid row of the same pass and size; `None`
    /// for grid rows.
    pub slowdown_vs_grid: Option<f64>,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.9e},{}",
            self.pass.name(),
            self.variant.name(),
            self.channels,
            self.height,
            self.width,
            self.trials,
            self.mean_seconds,
            self.slowdown_vs_grid.map(|s| format!("{s:.4}")).unwrap_or_default()
        )
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// `(height, width)` pairs.
    pub sizes: Vec<(usize, usize)>,
    /// Input and output channel count.
    pub channels: usize,
    /// Odd kernel extent `(kh, kw)`.
    pub kernel: (usize, usize),
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
    pub passes: Vec<BenchPass>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![(64, 64), (128, 128), (256, 256), (512, 512), (1024, 1024)],
            channels: 10,
            kernel: (3, 3),
            trials: 100,
            warmup: 5,
            seed: 0,
            passes: BenchPass::ALL.to_vec(),
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.iter().any(|&(h, w)| h == 0 || w == 0) {
            return Err(Error::Parameter("benchmark sizes must be positive".into()));
        }
        if self.channels == 0 || self.trials == 0 {
            return Err(Error::Parameter(
                "benchmark needs at least one channel and one trial".into(),
            ));
        }
        if self.kernel.0.is_multiple_of(2) || self.kernel.1.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "benchmark kernel must have odd extents, got {}x{}",
                self.kernel.0, self.kernel.1
            )));
        }
        Ok(())
    }
}

/// Mean seconds per call for each closure. Trials are interleaved round-robin
/// so slow drift in machine load affects every variant alike.
fn time_interleaved(warmup: usize, trials: usize, fs: &mut [Box<dyn FnMut() -> Result<()> + '_>]) -> Result<Vec<f64>> {
    for f in fs.iter_mut() {
        for _ in 0..warmup {
            f()?;
        }
    }
    let mut total = vec![0.0; fs.len()];
    for _ in 0..trials {
        for (f, t) in fs.iter_mut().zip(&mut total) {
            let start = Instant::now();
            f()?;
            *t += start.elapsed().as_secs_f64();
        }
    }
    Ok(total
        .into_iter()
        .map(|t| (t / trials as f64).max(f64::MIN_POSITIVE))
        .collect())
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Times every pass and variant at every size on the current rayon pool.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let c = cfg.channels;
    let kernel = KernelSpec::new(cfg.kernel.0, cfg.kernel.1);
    let k = kernel.k();
    let geom = GridConv::same(cfg.kernel);
    let mut records = Vec::new();
    for &(h, w) in &cfg.sizes {
        log::info!("benchmarking {c}x{h}x{w}");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((h as u64) << 32 | w as u64));
        let input = Tensor::new(vec![c, h, w], random_vec(&mut rng, c * h * w))?;
        let params = ConvParams::new(c, c, k, random_vec(&mut rng, c * c * k), random_vec(&mut rng, c))?;
        let grad = Tensor::new(vec![c, h, w], random_vec(&mut rng, c * h * w))?;
        let maps = BenchVariant::ALL
            .iter()
            .map(|v| {
                let interp = match v {
                    BenchVariant::Grid => return Ok(None),
                    BenchVariant::MappedNearest => Interp::Nearest,
                    BenchVariant::MappedBilinear => Interp::Bilinear,
                };
                let map = make_shuffle_map_interp(h, w, kernel, cfg.seed, interp)?;
                let transpose = map.transpose();
                Ok(Some((map, transpose)))
            })
            .collect::<Result<Vec<_>>>()?;
        let forward = |m: &Option<(SampleMap, MapTranspose)>| -> Result<()> {
            match m {
                None => grid_conv_reference(&input, &params, &geom).map(drop),
                Some((m, _)) => mapped_conv_forward(&input, m, &params).map(drop),
            }
        };
        let backward = |m: &Option<(SampleMap, MapTranspose)>| -> Result<()> {
            match m {
                Some((m, t)) => {
                    mapped_conv_backward_input_with(&grad, t, &params, GemmKernel::default())?;
                    mapped_conv_backward_params(&grad, &input, m).map(drop)
                }
                None => grid_conv_backward_reference(&grad, &input, &params, &geom).map(drop),
            }
        };
        for &pass in &cfg.passes {
            let mut fs: Vec<Box<dyn FnMut() -> Result<()> + '_>> = maps
                .iter()
                .map(|m| -> Box<dyn FnMut() -> Result<()> + '_> {
                    match pass {
                        BenchPass::Forward => Box::new(move || forward(m)),
                        BenchPass::Backward => Box::new(move || backward(m)),
                        BenchPass::ForwardBackward => Box::new(move || {
                            forward(m)?;
                            backward(m)
                        }),
                    }
                })
                .collect();
            let means = time_interleaved(cfg.warmup, cfg.trials, &mut fs)?;
            for (variant, &mean) in BenchVariant::ALL.iter().zip(&means) {
                records.push(BenchRecord {
                    pass,
                    variant: *variant,
                    channels: c,
                    height: h,
                    width: w,
                    trials: cfg.trials,
                    mean_seconds: mean,
                    slowdown_vs_grid: (*variant != BenchVariant::Grid).then(|| mean / means[0]),
                });
            }
        }
    }
    Ok(records)
}

/// Runs [`run_benchmark`] on a dedicated pool of `threads` workers.
pub fn run_benchmark_with_threads(cfg: &BenchConfig, threads: usize) -> Result<Vec<BenchRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run_benchmark(cfg))
}

/// CSV with a leading `#` comment line describing the run.
pub fn write_csv(w: &mut impl Write, records: &[BenchRecord], comment: &str) -> Result<()> {
    writeln!(w, "# {comment}")?;
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}
