//! Sample maps: the explicit sampling function of a mapped convolution.
//!
//! A [`SampleMap`] lists, for every output location `n` and kernel index `m`,
//! the input locations to read and the interpolation weight of each one.
//! Interpolation is baked in at generation time, so the convolution kernel only
//! ever sees `(index, weight)` taps regardless of whether they came from a
//! nearest, bilinear or barycentric interpolator.
//!
//! Zero padding is expressed by omission: a tap that would fall outside the
//! input is simply not emitted, leaving the sample's weight sum below one.

use arrayvec::ArrayVec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Maximum number of taps per sample (bilinear needs four).
pub const MAX_TAPS: usize = 4;

/// One interpolation term: read `index` of the flattened input, scale by `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleTap {
    pub index: usize,
    pub weight: f64,
}

/// The evaluated interpolation at one sampling location: up to [`MAX_TAPS`] taps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sample {
    taps: ArrayVec<SampleTap, MAX_TAPS>,
}

impl Sample {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(index: usize) -> Self {
        let mut s = Self::empty();
        s.push(index, 1.0);
        s
    }

    /// Adds a tap, folding its weight into an existing tap on the same index.
    /// Zero weights are dropped.
    ///
    /// # Panics
    /// Panics if a fifth distinct index is pushed.
    pub fn push(&mut self, index: usize, weight: f64) {
        if weight == 0.0 {
            return;
        }
        if let Some(t) = self.taps.iter_mut().find(|t| t.index == index) {
            t.weight += weight;
            return;
        }
        self.taps.push(SampleTap { index, weight });
    }

    pub fn taps(&self) -> &[SampleTap] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.taps.iter().map(|t| t.weight).sum()
    }
}

/// Kernel shape, plus the angular pitch used by spherical generators.
///
/// `delta` is `None` when the generator should pick its own default pitch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub height: usize,
    pub width: usize,
    pub delta: Option<f64>,
}

impl KernelSpec {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            delta: None,
        }
    }

    pub fn square(size: usize) -> Self {
        Self::new(size, size)
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    /// Flat kernel size `K = height * width`.
    pub fn k(&self) -> usize {
        self.height * self.width
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Parameter(format!(
                "kernel must be at least 1x1, got {}x{}",
                self.height, self.width
            )));
        }
        if let Some(d) = self.delta {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Parameter(format!(
                    "kernel delta must be positive and finite, got {d}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn resolve_delta(&self, default: f64) -> f64 {
        self.delta.unwrap_or(default)
    }

    /// Angular offsets `(dx, dy)` in kernel-index order (row-major), in units
    /// of `delta`. Kernel row 0 is "up", i.e. has the largest `dy`.
    pub fn offsets(&self, delta: f64) -> Vec<(f64, f64)> {
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let mut out = Vec::with_capacity(self.k());
        for i in 0..self.height {
            for j in 0..self.width {
                out.push(((j as f64 - cx) * delta, (cy - i as f64) * delta));
            }
        }
        out
    }
}

/// Interpolation scheme used when turning a real-valued location into taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Interp {
    Nearest,
    Bilinear,
}

impl Interp {
    pub fn name(self) -> &'static str {
        match self {
            Interp::Nearest => "nearest",
            Interp::Bilinear => "bilinear",
        }
    }
}

/// What happens to lattice coordinates that leave `[0, n)` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisBoundary {
    /// Drop the tap (zero padding).
    Zero,
    /// Clamp to the nearest edge element.
    Clamp,
    /// Periodic wrap.
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Boundary {
    pub rows: AxisBoundary,
    pub cols: AxisBoundary,
}

impl Boundary {
    pub const ZERO: Boundary = Boundary {
        rows: AxisBoundary::Zero,
        cols: AxisBoundary::Zero,
    };
    pub const CLAMP: Boundary = Boundary {
        rows: AxisBoundary::Clamp,
        cols: AxisBoundary::Clamp,
    };
    /// Equirectangular images: clamp at the poles, wrap in longitude.
    pub const EQUIRECT: Boundary = Boundary {
        rows: AxisBoundary::Clamp,
        cols: AxisBoundary::Wrap,
    };
}

fn check_point(row: f64, col: f64) -> Result<()> {
    if row.is_finite() && col.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidCoordinate { row, col })
    }
}

/// Resolves an integer lattice coordinate on an axis of length `n`.
fn resolve_index(i: i64, n: usize, mode: AxisBoundary) -> Option<usize> {
    let n = n as i64;
    match mode {
        AxisBoundary::Zero => (0..n).contains(&i).then_some(i as usize),
        AxisBoundary::Clamp => Some(i.clamp(0, n - 1) as usize),
        AxisBoundary::Wrap => Some(i.rem_euclid(n) as usize),
    }
}

/// Brings a real coordinate into a range where it can be cast to `i64` safely.
/// Returns `None` when, under zero padding, no tap can land in bounds.
fn reduce_coord(x: f64, n: usize, mode: AxisBoundary) -> Option<f64> {
    let nf = n as f64;
    match mode {
        AxisBoundary::Zero => (x > -2.0 && x < nf + 1.0).then_some(x),
        AxisBoundary::Clamp => Some(x.clamp(0.0, nf - 1.0)),
        AxisBoundary::Wrap => Some(x.rem_euclid(nf)),
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Parameter(format!(
            "image must be at least 1x1, got {height}x{width}"
        )));
    }
    Ok(())
}

/// Nearest-neighbour tap at `(row, col)` with zero padding.
///
/// Rounds half away from zero on each axis.
pub fn nearest_tap(row: f64, col: f64, height: usize, width: usize) -> Result<Sample> {
    interp_taps(row, col, height, width, Interp::Nearest, Boundary::ZERO)
}

/// Bilinear taps at `(row, col)` with zero padding; clipped corners are dropped.
pub fn bilinear_taps(row: f64, col: f64, height: usize, width: usize) -> Result<Sample> {
    interp_taps(row, col, height, width, Interp::Bilinear, Boundary::ZERO)
}

/// Builds the taps for a real-valued location on an `height x width` lattice.
pub fn interp_taps(
    row: f64,
    col: f64,
    height: usize,
    width: usize,
    interp: Interp,
    boundary: Boundary,
) -> Result<Sample> {
    check_point(row, col)?;
    check_dims(height, width)?;
    let (Some(r), Some(c)) = (
        reduce_coord(row, height, boundary.rows),
        reduce_coord(col, width, boundary.cols),
    ) else {
        return Ok(Sample::empty());
    };

    let mut sample = Sample::empty();
    match interp {
        Interp::Nearest => {
            let ri = resolve_index(r.round() as i64, height, boundary.rows);
            let ci = resolve_index(c.round() as i64, width, boundary.cols);
            if let (Some(ri), Some(ci)) = (ri, ci) {
                sample.push(ri * width + ci, 1.0);
            }
        }
        Interp::Bilinear => {
            let r0 = r.floor();
            let c0 = c.floor();
            let fr = r - r0;
            let fc = c - c0;
            let (r0, c0) = (r0 as i64, c0 as i64);
            let corners = [
                (r0, c0, (1.0 - fr) * (1.0 - fc)),
                (r0, c0 + 1, (1.0 - fr) * fc),
                (r0 + 1, c0, fr * (1.0 - fc)),
                (r0 + 1, c0 + 1, fr * fc),
            ];
            for (ri, ci, w) in corners {
                if w == 0.0 {
                    continue;
                }
                let ri = resolve_index(ri, height, boundary.rows);
                let ci = resolve_index(ci, width, boundary.cols);
                if let (Some(ri), Some(ci)) = (ri, ci) {
                    sample.push(ri * width + ci, w);
                }
            }
        }
    }
    Ok(sample)
}

/// Precomputed sampling function: `n_out * k` samples in output-major order,
/// stored flat (CSR style) for cache-friendly traversal.
///
/// Immutable once built; share freely across threads.
#[derive(Debug, Clone)]
pub struct SampleMap {
    n_in: usize,
    n_out: usize,
    k: usize,
    offsets: Vec<usize>,
    taps: Vec<SampleTap>,
    descriptor: String,
}

/// Structural equality; the free-text descriptor is not compared.
impl PartialEq for SampleMap {
    fn eq(&self, other: &Self) -> bool {
        self.n_in == other.n_in
            && self.n_out == other.n_out
            && self.k == other.k
            && self.offsets == other.offsets
            && self.taps == other.taps
    }
}

impl SampleMap {
    /// Builds a map from per-location samples (`samples[n * k + m]`).
    pub fn from_samples(
        n_in: usize,
        n_out: usize,
        k: usize,
        samples: &[Sample],
        descriptor: impl Into<String>,
    ) -> Result<Self> {
        if samples.len() != n_out * k {
            return Err(Error::dim("SampleMap samples", n_out * k, samples.len()));
        }
        let mut b = SampleMapBuilder::new(n_in, n_out, k);
        for s in samples {
            b.push(s);
        }
        b.finish(descriptor)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    /// Flat kernel size.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn set_descriptor(&mut self, descriptor: impl Into<String>) {
        self.descriptor = descriptor.into();
    }

    /// Taps for output location `n`, kernel index `m`.
    #[inline]
    pub fn sample(&self, n: usize, m: usize) -> &[SampleTap] {
        self.sample_flat(n * self.k + m)
    }

    /// Taps for flat sample index `s = n * k + m`.
    #[inline]
    pub fn sample_flat(&self, s: usize) -> &[SampleTap] {
        &self.taps[self.offsets[s]..self.offsets[s + 1]]
    }

    /// Iterates all samples in output-major order.
    pub fn samples(&self) -> impl ExactSizeIterator<Item = &[SampleTap]> + '_ {
        self.offsets.windows(2).map(|w| &self.taps[w[0]..w[1]])
    }

    pub fn total_taps(&self) -> usize {
        self.taps.len()
    }

    /// Number of samples having 0, 1, 2, 3 and 4 taps.
    pub fn tap_histogram(&self) -> [usize; MAX_TAPS + 1] {
        let mut h = [0; MAX_TAPS + 1];
        for w in self.offsets.windows(2) {
            h[w[1] - w[0]] += 1;
        }
        h
    }

    /// Groups every tap by its input index, in sample order within each
    /// group. Used by the backward pass to accumulate without write conflicts.
    pub fn transpose(&self) -> MapTranspose {
        let mut counts = vec![0usize; self.n_in + 1];
        for t in &self.taps {
            counts[t.index + 1] += 1;
        }
        for i in 0..self.n_in {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut entries = vec![
            TransposeEntry {
                position: 0,
                weight: 0.0
            };
            self.taps.len()
        ];
        for (s, w) in self.offsets.windows(2).enumerate() {
            let (n, m) = (s / self.k, s % self.k);
            let position = m * self.n_out + n;
            for t in &self.taps[w[0]..w[1]] {
                entries[cursor[t.index]] = TransposeEntry {
                    position,
                    weight: t.weight,
                };
                cursor[t.index] += 1;
            }
        }
        MapTranspose {
            n_in: self.n_in,
            n_out: self.n_out,
            k: self.k,
            offsets,
            entries,
        }
    }
}

/// Incremental construction of a [`SampleMap`].
#[derive(Debug)]
pub struct SampleMapBuilder {
    n_in: usize,
    n_out: usize,
    k: usize,
    offsets: Vec<usize>,
    taps: Vec<SampleTap>,
}

impl SampleMapBuilder {
    pub fn new(n_in: usize, n_out: usize, k: usize) -> Self {
        let mut offsets = Vec::with_capacity(n_out * k + 1);
        offsets.push(0);
        Self {
            n_in,
            n_out,
            k,
            offsets,
            taps: Vec::with_capacity(n_out * k),
        }
    }

    pub fn push(&mut self, sample: &Sample) {
        self.push_taps(sample.taps());
    }

    pub fn push_taps(&mut self, taps: &[SampleTap]) {
        self.taps.extend_from_slice(taps);
        self.offsets.push(self.taps.len());
    }

    pub fn finish(self, descriptor: impl Into<String>) -> Result<SampleMap> {
        let expected = self.n_out * self.k;
        if self.offsets.len() != expected + 1 {
            return Err(Error::dim("SampleMap samples", expected, self.offsets.len() - 1));
        }
        if self.k == 0 {
            return Err(Error::Parameter("kernel size must be positive".into()));
        }
        for w in self.offsets.windows(2) {
            if w[1] - w[0] > MAX_TAPS {
                return Err(Error::Parameter(format!(
                    "sample has {} taps, at most {MAX_TAPS} allowed",
                    w[1] - w[0]
                )));
            }
        }
        for t in &self.taps {
            if t.index >= self.n_in {
                return Err(Error::Parameter(format!(
                    "tap index {} out of range for n_in = {}",
                    t.index, self.n_in
                )));
            }
            if !t.weight.is_finite() {
                return Err(Error::NonFinite("sample map weight"));
            }
        }
        Ok(SampleMap {
            n_in: self.n_in,
            n_out: self.n_out,
            k: self.k,
            offsets: self.offsets,
            taps: self.taps,
            descriptor: descriptor.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransposeEntry {
    /// Position `m * n_out + n` within one channel block of the column matrix.
    pub position: usize,
    pub weight: f64,
}

/// A [`SampleMap`] regrouped by input index.
#[derive(Debug, Clone)]
pub struct MapTranspose {
    n_in: usize,
    n_out: usize,
    k: usize,
    offsets: Vec<usize>,
    entries: Vec<TransposeEntry>,
}

impl MapTranspose {
    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Every tap that reads input index `i`.
    #[inline]
    pub fn entries(&self, i: usize) -> &[TransposeEntry] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }
}

fn output_extent(len: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = len + 2 * pad;
    (padded >= span).then(|| (padded - span) / stride + 1)
}

/// Output size `(out_h, out_w)` of a grid convolution.
pub fn grid_output_size(
    height: usize,
    width: usize,
    kernel: &KernelSpec,
    stride: (usize, usize),
    padding: (usize, usize),
    dilation: (usize, usize),
) -> Result<(usize, usize)> {
    check_dims(height, width)?;
    kernel.validate()?;
    if stride.0 == 0 || stride.1 == 0 || dilation.0 == 0 || dilation.1 == 0 {
        return Err(Error::Parameter("stride and dilation must be at least 1".into()));
    }
    let oh = output_extent(height, kernel.height, stride.0, padding.0, dilation.0);
    let ow = output_extent(width, kernel.width, stride.1, padding.1, dilation.1);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(Error::EmptyOutput(format!(
            "{}x{} kernel (dilation {:?}) does not fit {}x{} input padded by {:?}",
            kernel.height, kernel.width, dilation, height, width, padding
        ))),
    }
}

/// Expresses an ordinary strided / padded / dilated grid convolution as a map.
pub fn make_grid_map(
    height: usize,
    width: usize,
    kernel: KernelSpec,
    stride: (usize, usize),
    padding: (usize, usize),
    dilation: (usize, usize),
) -> Result<SampleMap> {
    let (oh, ow) = grid_output_size(height, width, &kernel, stride, padding, dilation)?;
    let origin = |o: usize, s: usize, p: usize| (o * s) as i64 - p as i64;
    let map = lattice_map(
        height,
        width,
        kernel,
        (oh, ow),
        |oy, ox| (origin(oy, stride.0, padding.0), origin(ox, stride.1, padding.1)),
        (dilation.0 as i64, dilation.1 as i64),
    )?;
    let mut map = map;
    map.set_descriptor(format!(
        "grid h={height} w={width} kh={} kw={} stride={},{} pad={},{} dilation={},{}",
        kernel.height, kernel.width, stride.0, stride.1, padding.0, padding.1, dilation.0, dilation.1
    ));
    Ok(map)
}

/// Integer-lattice map: output `(oy, ox)` places kernel tap `(i, j)` at
/// `origin(oy, ox) + (i, j) * dilation`.
fn lattice_map(
    height: usize,
    width: usize,
    kernel: KernelSpec,
    (oh, ow): (usize, usize),
    origin: impl Fn(usize, usize) -> (i64, i64),
    dilation: (i64, i64),
) -> Result<SampleMap> {
    let k = kernel.k();
    let mut b = SampleMapBuilder::new(height * width, oh * ow, k);
    let single = |r: i64, c: i64| -> Option<SampleTap> {
        let in_bounds = (0..height as i64).contains(&r) && (0..width as i64).contains(&c);
        in_bounds.then(|| SampleTap {
            index: r as usize * width + c as usize,
            weight: 1.0,
        })
    };
    for oy in 0..oh {
        for ox in 0..ow {
            let (r0, c0) = origin(oy, ox);
            for i in 0..kernel.height as i64 {
                for j in 0..kernel.width as i64 {
                    match single(r0 + i * dilation.0, c0 + j * dilation.1) {
                        Some(t) => b.push_taps(&[t]),
                        None => b.push_taps(&[]),
                    }
                }
            }
        }
    }
    b.finish("lattice")
}

/// Stride-1 "same" grid map: `n_out == n_in` for any kernel shape. Even
/// kernels extend one element further toward the bottom/right.
pub fn make_same_grid_map(height: usize, width: usize, kernel: KernelSpec) -> Result<SampleMap> {
    check_dims(height, width)?;
    kernel.validate()?;
    let ph = ((kernel.height - 1) / 2) as i64;
    let pw = ((kernel.width - 1) / 2) as i64;
    let mut map = lattice_map(
        height,
        width,
        kernel,
        (height, width),
        |oy, ox| (oy as i64 - ph, ox as i64 - pw),
        (1, 1),
    )?;
    map.set_descriptor(format!(
        "same-grid h={height} w={width} kh={} kw={}",
        kernel.height, kernel.width
    ));
    Ok(map)
}

/// Draws the seeded uniform permutation used by the shuffle maps.
pub fn shuffle_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Same-size grid map whose tap indices are relabelled by one uniformly random
/// permutation of the input domain. Destroys locality while keeping the tap
/// structure (and thus the arithmetic) of the grid map.
pub fn make_shuffle_map(height: usize, width: usize, kernel: KernelSpec, seed: u64) -> Result<SampleMap> {
    let grid = make_same_grid_map(height, width, kernel)?;
    let perm = shuffle_permutation(height * width, seed);
    let mut b = SampleMapBuilder::new(grid.n_in(), grid.n_out(), grid.k());
    let mut buf: ArrayVec<SampleTap, MAX_TAPS> = ArrayVec::new();
    for s in grid.samples() {
        buf.clear();
        buf.extend(s.iter().map(|t| SampleTap {
            index: perm[t.index],
            weight: t.weight,
        }));
        b.push_taps(&buf);
    }
    b.finish(format!(
        "shuffle h={height} w={width} kh={} kw={} seed={seed}",
        kernel.height, kernel.width
    ))
}

/// Shuffle map with a choice of interpolation. The bilinear variant displaces
/// every shuffled location by a seeded sub-pixel offset in `[0, 1)^2`, so
/// samples generally carry four taps (fewer where they leave the image).
pub fn make_shuffle_map_interp(
    height: usize,
    width: usize,
    kernel: KernelSpec,
    seed: u64,
    interp: Interp,
) -> Result<SampleMap> {
    let base = make_shuffle_map(height, width, kernel, seed)?;
    if interp == Interp::Nearest {
        return Ok(base);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut b = SampleMapBuilder::new(base.n_in(), base.n_out(), base.k());
    for s in base.samples() {
        match s.first() {
            Some(t) => {
                let (r, c) = ((t.index / width) as f64, (t.index % width) as f64);
                let sample = bilinear_taps(r + rng.gen::<f64>(), c + rng.gen::<f64>(), height, width)?;
                b.push(&sample);
            }
            None => b.push_taps(&[]),
        }
    }
    b.finish(format!(
        "shuffle-bilinear h={height} w={width} kh={} kw={} seed={seed}",
        kernel.height, kernel.width
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taps(s: &Sample) -> Vec<(usize, f64)> {
        s.taps().iter().map(|t| (t.index, t.weight)).collect()
    }

    #[test]
    fn nearest_examples() {
        assert_eq!(taps(&nearest_tap(1.2, 2.7, 4, 4).unwrap()), vec![(7, 1.0)]);
        assert_eq!(taps(&nearest_tap(0.0, 0.0, 4, 4).unwrap()), vec![(0, 1.0)]);
        assert!(nearest_tap(-3.0, 0.0, 4, 4).unwrap().is_empty());
    }

    #[test]
    fn nearest_rounds_half_away_from_zero() {
        // (0.5, 1.5) -> (1, 2); (-0.5, 0) -> row -1, out of bounds
        assert_eq!(taps(&nearest_tap(0.5, 1.5, 4, 4).unwrap()), vec![(6, 1.0)]);
        assert!(nearest_tap(-0.5, 0.0, 4, 4).unwrap().is_empty());
        assert_eq!(taps(&nearest_tap(-0.49, 0.0, 4, 4).unwrap()), vec![(0, 1.0)]);
    }

    #[test]
    fn non_finite_point_rejected() {
        assert!(matches!(
            nearest_tap(f64::NAN, 0.0, 4, 4),
            Err(Error::InvalidCoordinate { .. })
        ));
        assert!(matches!(
            bilinear_taps(0.0, f64::INFINITY, 4, 4),
            Err(Error::InvalidCoordinate { .. })
        ));
    }

    #[test]
    fn bilinear_examples() {
        let s = bilinear_taps(1.5, 1.5, 4, 4).unwrap();
        let mut t = taps(&s);
        t.sort_by_key(|x| x.0);
        assert_eq!(t, vec![(5, 0.25), (6, 0.25), (9, 0.25), (10, 0.25)]);

        assert_eq!(taps(&bilinear_taps(2.0, 3.0, 4, 4).unwrap()), vec![(11, 1.0)]);
        assert_eq!(taps(&bilinear_taps(-0.5, 0.0, 4, 4).unwrap()), vec![(0, 0.5)]);
        assert!(bilinear_taps(-1.0, 0.0, 4, 4).unwrap().is_empty());
        assert!(bilinear_taps(1e300, 0.0, 4, 4).unwrap().is_empty());
    }

    #[test]
    fn wrap_and_clamp_boundaries() {
        // col 3.5 on width 4 wraps its right corner to col 0
        let s = interp_taps(0.0, 3.5, 2, 4, Interp::Bilinear, Boundary::EQUIRECT).unwrap();
        let mut t = taps(&s);
        t.sort_by_key(|x| x.0);
        assert_eq!(t, vec![(0, 0.5), (3, 0.5)]);
        // row -0.3 clamps to row 0: full weight retained
        let s = interp_taps(-0.3, 1.0, 2, 4, Interp::Bilinear, Boundary::EQUIRECT).unwrap();
        assert_eq!(taps(&s), vec![(1, 1.0)]);
        let s = interp_taps(0.0, -0.6, 2, 4, Interp::Nearest, Boundary::EQUIRECT).unwrap();
        assert_eq!(taps(&s), vec![(3, 1.0)]);
    }

    #[test]
    fn grid_map_identity() {
        let m = make_grid_map(3, 3, KernelSpec::square(1), (1, 1), (0, 0), (1, 1)).unwrap();
        assert_eq!((m.n_in(), m.n_out(), m.k()), (9, 9, 1));
        for n in 0..9 {
            assert_eq!(m.sample(n, 0), &[SampleTap { index: n, weight: 1.0 }]);
        }
    }

    #[test]
    fn grid_map_centered_kernel() {
        let m = make_grid_map(3, 3, KernelSpec::square(3), (1, 1), (1, 1), (1, 1)).unwrap();
        assert_eq!(m.n_out(), 9);
        // output (1,1) = n 4, kernel (1,1) = m 4
        assert_eq!(m.sample(4, 4), &[SampleTap { index: 4, weight: 1.0 }]);
        // corner output: kernel (0,0) falls into padding
        assert!(m.sample(0, 0).is_empty());
        assert_eq!(m.tap_histogram()[1] + m.tap_histogram()[0], 81);
    }

    #[test]
    fn grid_map_strided_size() {
        let m = make_grid_map(4, 4, KernelSpec::square(3), (2, 2), (1, 1), (1, 1)).unwrap();
        assert_eq!(m.n_out(), 4);
    }

    #[test]
    fn grid_map_kernel_too_large() {
        let r = make_grid_map(2, 2, KernelSpec::square(5), (1, 1), (0, 0), (1, 1));
        assert!(matches!(r, Err(Error::EmptyOutput(_))));
        let r = make_grid_map(3, 3, KernelSpec::square(3), (1, 1), (0, 0), (2, 2));
        assert!(matches!(r, Err(Error::EmptyOutput(_))));
    }

    #[test]
    fn same_grid_keeps_size() {
        for (kh, kw) in [(1, 1), (3, 3), (5, 1), (2, 4)] {
            let m = make_same_grid_map(6, 7, KernelSpec::new(kh, kw)).unwrap();
            assert_eq!(m.n_out(), m.n_in());
        }
        let a = make_same_grid_map(5, 5, KernelSpec::square(3)).unwrap();
        let b = make_grid_map(5, 5, KernelSpec::square(3), (1, 1), (1, 1), (1, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shuffle_map_deterministic() {
        let a = make_shuffle_map(8, 8, KernelSpec::square(3), 42).unwrap();
        let b = make_shuffle_map(8, 8, KernelSpec::square(3), 42).unwrap();
        let c = make_shuffle_map(8, 8, KernelSpec::square(3), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn shuffle_map_1x1_is_permutation() {
        let m = make_shuffle_map(7, 9, KernelSpec::square(1), 3).unwrap();
        let mut seen = [false; 63];
        for s in m.samples() {
            assert_eq!(s.len(), 1);
            assert!(!seen[s[0].index]);
            seen[s[0].index] = true;
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn shuffle_tap_histogram_uniform() {
        // position 0 of a 1x1 shuffle over 16 elements: each target equally
        // likely. Chi-square with 15 dof; 99.9% quantile is 37.7.
        let n = 16;
        let trials = 4000;
        let mut counts = vec![0usize; n];
        for seed in 0..trials {
            let m = make_shuffle_map(4, 4, KernelSpec::square(1), seed).unwrap();
            counts[m.sample(0, 0)[0].index] += 1;
        }
        let expected = trials as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 37.7, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn shuffle_bilinear_has_four_taps_inside() {
        let m = make_shuffle_map_interp(16, 16, KernelSpec::square(3), 1, Interp::Bilinear).unwrap();
        let h = m.tap_histogram();
        assert!(h[4] > h[1] + h[2] + h[3]);
        for s in m.samples() {
            let w: f64 = s.iter().map(|t| t.weight).sum();
            assert!(w <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn builder_rejects_out_of_range_tap() {
        let mut b = SampleMapBuilder::new(4, 1, 1);
        b.push(&Sample::single(4));
        assert!(b.finish("bad").is_err());
    }

    #[test]
    fn transpose_groups_by_input() {
        let m = make_grid_map(3, 3, KernelSpec::square(3), (1, 1), (1, 1), (1, 1)).unwrap();
        let t = m.transpose();
        // centre pixel is read by all 9 outputs
        assert_eq!(t.entries(4).len(), 9);
        // corner pixel read by 4 outputs
        assert_eq!(t.entries(0).len(), 4);
        let total: usize = (0..9).map(|i| t.entries(i).len()).sum();
        assert_eq!(total, m.total_taps());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bilinear_interior_partition_of_unity(
                h in 2usize..20, w in 2usize..20, fr in 0.0f64..1.0, fc in 0.0f64..1.0
            ) {
                let row = fr * (h - 1) as f64;
                let col = fc * (w - 1) as f64;
                let s = bilinear_taps(row, col, h, w).unwrap();
                prop_assert!((s.weight_sum() - 1.0).abs() < 1e-12);
                for t in s.taps() {
                    prop_assert!(t.index < h * w);
                }
            }

            #[test]
            fn clipped_weights_bounded(
                h in 1usize..10, w in 1usize..10, row in -3.0f64..12.0, col in -3.0f64..12.0
            ) {
                let s = bilinear_taps(row, col, h, w).unwrap();
                let ws = s.weight_sum();
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ws));
                prop_assert!(s.len() <= MAX_TAPS);
            }

            #[test]
            fn grid_map_taps_in_bounds(
                h in 1usize..12, w in 1usize..12, kh in 1usize..4, kw in 1usize..4,
                sh in 1usize..3, sw in 1usize..3, ph in 0usize..3, pw in 0usize..3,
                dh in 1usize..3, dw in 1usize..3,
            ) {
                let kernel = KernelSpec::new(kh, kw);
                if let Ok(m) = make_grid_map(h, w, kernel, (sh, sw), (ph, pw), (dh, dw)) {
                    let (oh, ow) = grid_output_size(h, w, &kernel, (sh, sw), (ph, pw), (dh, dw)).unwrap();
                    prop_assert_eq!(m.n_out(), oh * ow);
                    for s in m.samples() {
                        prop_assert!(s.len() <= 1);
                        for t in s {
                            prop_assert!(t.index < m.n_in());
                            prop_assert_eq!(t.weight, 1.0);
                        }
                    }
                }
            }

            #[test]
            fn same_padding_preserves_size(h in 1usize..15, w in 1usize..15, half in 0usize..3) {
                let k = 2 * half + 1;
                if h + 2 * half >= k && w + 2 * half >= k {
                    let m = make_grid_map(h, w, KernelSpec::square(k), (1, 1), (half, half), (1, 1)).unwrap();
                    prop_assert_eq!(m.n_out(), m.n_in());
                }
            }
        }
    }
}
