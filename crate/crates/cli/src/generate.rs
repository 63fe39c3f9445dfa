//! Map generator flags shared by `genmap` and `gradcheck`.

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use mapconv::{
    make_cubemap_map, make_equirect_map, make_grid_map, make_icosphere, make_isea_map, make_shuffle_map_interp,
    EquirectGeometry, Interp, KernelSpec, SampleMap, SphereProjection,
};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapKind {
    Grid,
    Shuffle,
    EquirectGnomonic,
    EquirectEquirect,
    Cubemap,
    Isea,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterpArg {
    Nearest,
    Bilinear,
}

impl From<InterpArg> for Interp {
    fn from(i: InterpArg) -> Self {
        match i {
            InterpArg::Nearest => Interp::Nearest,
            InterpArg::Bilinear => Interp::Bilinear,
        }
    }
}

/// `N` or `N,M`.
pub fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("not a non-negative integer: {t:?}"))
    };
    match s.split_once(',') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let v = parse(s)?;
            Ok((v, v))
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Image height in pixels.
    #[arg(long)]
    pub h: Option<usize>,
    /// Image width in pixels.
    #[arg(long)]
    pub w: Option<usize>,
    /// Kernel rows.
    #[arg(long, default_value_t = 3)]
    pub kh: usize,
    /// Kernel columns.
    #[arg(long, default_value_t = 3)]
    pub kw: usize,
    /// Stride, `N` or `ROWS,COLS` (grid only).
    #[arg(long, value_parser = parse_pair, default_value = "1")]
    pub stride: (usize, usize),
    /// Zero padding, `N` or `ROWS,COLS` (grid only).
    #[arg(long, value_parser = parse_pair, default_value = "0")]
    pub pad: (usize, usize),
    /// Dilation, `N` or `ROWS,COLS` (grid only).
    #[arg(long, value_parser = parse_pair, default_value = "1")]
    pub dilation: (usize, usize),
    /// Shuffle seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Interpolation; defaults to nearest for grid and shuffle maps and
    /// bilinear for spherical maps.
    #[arg(long, value_enum)]
    pub interp: Option<InterpArg>,
    /// Cube face size in pixels.
    #[arg(long)]
    pub face_dim: Option<usize>,
    /// Icosphere order of the input mesh.
    #[arg(long)]
    pub order: Option<usize>,
    /// Icosphere order of the output mesh (defaults to `--order`).
    #[arg(long)]
    pub order_out: Option<usize>,
    /// Angular kernel step in radians for spherical maps.
    #[arg(long)]
    pub delta: Option<f64>,
}

fn need<T: Copy>(v: Option<T>, flag: &str, kind: MapKind) -> Result<T> {
    match v {
        Some(v) => Ok(v),
        None => Err(UsageError(format!("--{flag} is required for {kind:?} maps")).into()),
    }
}

impl GenArgs {
    fn kernel(&self) -> Result<KernelSpec> {
        let mut k = KernelSpec::new(self.kh, self.kw);
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                bail!(UsageError(format!("--delta must be positive, got {d}")));
            }
            k = k.with_delta(d);
        }
        Ok(k)
    }

    pub fn build(&self, kind: MapKind) -> Result<SampleMap> {
        let kernel = self.kernel()?;
        let spherical = !matches!(kind, MapKind::Grid | MapKind::Shuffle);
        let interp: Interp = self
            .interp
            .unwrap_or(if spherical {
                InterpArg::Bilinear
            } else {
                InterpArg::Nearest
            })
            .into();
        if !spherical && self.delta.is_some() {
            bail!(UsageError("--delta applies only to spherical maps".into()));
        }
        let map = match kind {
            MapKind::Grid => {
                if self.interp == Some(InterpArg::Bilinear) {
                    bail!(UsageError(
                        "grid maps sample lattice points; --interp bilinear does not apply".into()
                    ));
                }
                let (h, w) = (need(self.h, "h", kind)?, need(self.w, "w", kind)?);
                make_grid_map(h, w, kernel, self.stride, self.pad, self.dilation)?
            }
            MapKind::Shuffle => {
                let (h, w) = (need(self.h, "h", kind)?, need(self.w, "w", kind)?);
                make_shuffle_map_interp(h, w, kernel, self.seed, interp)?
            }
            MapKind::EquirectGnomonic | MapKind::EquirectEquirect => {
                let h = need(self.h, "h", kind)?;
                let geom = EquirectGeometry::new(h, self.w.unwrap_or(2 * h))?;
                let proj = if kind == MapKind::EquirectGnomonic {
                    SphereProjection::Gnomonic
                } else {
                    SphereProjection::Equirect
                };
                make_equirect_map(&geom, kernel, proj, interp)?
            }
            MapKind::Cubemap => make_cubemap_map(need(self.face_dim, "face-dim", kind)?, kernel, interp)?,
            MapKind::Isea => {
                if self.interp == Some(InterpArg::Nearest) {
                    bail!(UsageError("isea maps always use barycentric taps".into()));
                }
                let order = need(self.order, "order", kind)?;
                let order_out = self.order_out.unwrap_or(order);
                let mesh_in = make_icosphere(order)?;
                if order_out == order {
                    make_isea_map(&mesh_in, &mesh_in, kernel)?
                } else {
                    make_isea_map(&mesh_in, &make_icosphere(order_out)?, kernel)?
                }
            }
        };
        Ok(map)
    }
}

/// One-line description: sizes and how many samples carry 0..=4 taps.
pub fn summary(map: &SampleMap) -> String {
    let hist = map.tap_histogram();
    let hist: Vec<String> = hist.iter().enumerate().map(|(i, c)| format!("{i}:{c}")).collect();
    format!(
        "n_in={} n_out={} k={} taps[{}]",
        map.n_in(),
        map.n_out(),
        map.k(),
        hist.join(" ")
    )
}
