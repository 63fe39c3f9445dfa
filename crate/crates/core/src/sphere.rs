//! Spherical coordinate conventions, projection formulas and the sample-map
//! generators for equirectangular images and cube maps.
//!
//! Conventions:
//! - latitude `phi` in `[-pi/2, pi/2]`, longitude `lambda` in `[-pi, pi)`;
//! - equirectangular pixel centres sit at `lambda = 2pi(col + 0.5)/W - pi`,
//!   `phi = pi/2 - pi(row + 0.5)/H`, so row 0 is the northernmost row;
//! - kernel offsets `(dx, dy)` are angles, `dy > 0` pointing north;
//! - unit vectors use `x = cos(phi)cos(lambda)`, `y = cos(phi)sin(lambda)`,
//!   `z = sin(phi)` (poles on the z axis).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sample_map::{interp_taps, Boundary, Interp, KernelSpec, Sample, SampleMap};

/// Distance from a pole below which `sec(phi)` is clamped.
pub const POLE_GUARD: f64 = 1e-9;

/// Wraps a longitude into `[-pi, pi)`. Values already in range are returned
/// bit-for-bit.
pub fn wrap_longitude(lambda: f64) -> f64 {
    if (-PI..PI).contains(&lambda) {
        return lambda;
    }
    let w = lambda - TAU * ((lambda + PI) / TAU).floor();
    if w >= PI {
        w - TAU
    } else if w < -PI {
        w + TAU
    } else {
        w
    }
}

/// A point on the unit sphere, always stored normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    phi: f64,
    lambda: f64,
}

impl SphericalCoord {
    /// Normalizes any `(phi, lambda)`: latitudes past a pole are reflected
    /// back with a half-turn in longitude, then longitude is wrapped.
    pub fn new(phi: f64, lambda: f64) -> Self {
        let mut phi = phi;
        let mut lambda = lambda;
        if phi.abs() > PI {
            phi -= TAU * (phi / TAU).round();
        }
        if phi > FRAC_PI_2 {
            phi = PI - phi;
            lambda += PI;
        } else if phi < -FRAC_PI_2 {
            phi = -PI - phi;
            lambda += PI;
        }
        Self {
            phi,
            lambda: wrap_longitude(lambda),
        }
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn to_unit_vector(&self) -> [f64; 3] {
        let (sp, cp) = self.phi.sin_cos();
        let (sl, cl) = self.lambda.sin_cos();
        [cp * cl, cp * sl, sp]
    }

    /// Inverse of [`to_unit_vector`](Self::to_unit_vector); the input need not
    /// be normalized. At the poles longitude is 0.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let horiz = v[0].hypot(v[1]);
        Self::new(v[2].atan2(horiz), v[1].atan2(v[0]))
    }

    /// Great-circle angle to another point.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let a = self.to_unit_vector();
        let b = other.to_unit_vector();
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let s = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        s.atan2(c)
    }
}

/// Pixel grid of a full-sphere equirectangular image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EquirectGeometry {
    pub height: usize,
    pub width: usize,
}

impl EquirectGeometry {
    /// Logs a warning when `width != 2 * height` (not full-sphere coverage
    /// at square pixels) but accepts it.
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Parameter(format!(
                "equirectangular image must be non-empty, got {height}x{width}"
            )));
        }
        if width != 2 * height {
            log::warn!("equirectangular geometry {height}x{width} does not have width = 2 * height");
        }
        Ok(Self { height, width })
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Angular pitch of one pixel along the equator.
    pub fn pixel_pitch(&self) -> f64 {
        TAU / self.width as f64
    }

    /// Solid angle of a pixel in each row (steradians).
    pub fn row_solid_angles(&self) -> Vec<f64> {
        let dl = TAU / self.width as f64;
        (0..self.height)
            .map(|r| {
                let top = FRAC_PI_2 - PI * r as f64 / self.height as f64;
                let bottom = FRAC_PI_2 - PI * (r + 1) as f64 / self.height as f64;
                dl * (top.sin() - bottom.sin())
            })
            .collect()
    }
}

pub fn equirect_pix_to_sph(row: f64, col: f64, geom: &EquirectGeometry) -> SphericalCoord {
    let lambda = TAU * (col + 0.5) / geom.width as f64 - PI;
    let phi = FRAC_PI_2 - PI * (row + 0.5) / geom.height as f64;
    SphericalCoord::new(phi, lambda)
}

/// Real-valued `(row, col)` of a sphere point; `col` lies in `[-0.5, W - 0.5)`.
pub fn sph_to_equirect_pix(coord: &SphericalCoord, geom: &EquirectGeometry) -> (f64, f64) {
    let col = (coord.lambda + PI) * geom.width as f64 / TAU - 0.5;
    let row = (FRAC_PI_2 - coord.phi) * geom.height as f64 / PI - 0.5;
    (row, col)
}

/// Inverse gnomonic projection: the sphere point whose tangent-plane offset
/// from `center` is `(dx, dy)`.
pub fn inverse_gnomonic(center: &SphericalCoord, dx: f64, dy: f64) -> SphericalCoord {
    let rho = dx.hypot(dy);
    if rho == 0.0 {
        return *center;
    }
    let c = rho.atan();
    let (sc, cc) = c.sin_cos();
    let (sp, cp) = center.phi.sin_cos();
    let phi = (cc * sp + dy * sc * cp / rho).clamp(-1.0, 1.0).asin();
    let lambda = center.lambda + (dx * sc).atan2(rho * cp * cc - dy * sp * sc);
    SphericalCoord::new(phi, lambda)
}

/// Inverse equirectangular projection: `phi = phi0 + dy`,
/// `lambda = lambda0 + dx sec(phi)`.
pub fn inverse_equirect(center: &SphericalCoord, dx: f64, dy: f64) -> SphericalCoord {
    inverse_equirect_checked(center, dx, dy).0
}

/// As [`inverse_equirect`], also reporting whether `sec(phi)` had to be
/// clamped because `phi` landed within [`POLE_GUARD`] of a pole.
pub fn inverse_equirect_checked(center: &SphericalCoord, dx: f64, dy: f64) -> (SphericalCoord, bool) {
    let phi = center.phi + dy;
    let degenerate = (phi.abs() - FRAC_PI_2).abs() < POLE_GUARD;
    let sec = if degenerate {
        1.0 / (FRAC_PI_2 - POLE_GUARD).cos()
    } else {
        1.0 / phi.cos()
    };
    (SphericalCoord::new(phi, center.lambda + dx * sec), degenerate)
}

/// Which inverse projection places the kernel samples on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SphereProjection {
    Gnomonic,
    Equirect,
}

impl SphereProjection {
    pub fn apply(self, center: &SphericalCoord, dx: f64, dy: f64) -> SphericalCoord {
        match self {
            SphereProjection::Gnomonic => inverse_gnomonic(center, dx, dy),
            SphereProjection::Equirect => inverse_equirect(center, dx, dy),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SphereProjection::Gnomonic => "gnomonic",
            SphereProjection::Equirect => "equirect",
        }
    }
}

/// Sphere locations of every kernel sample, `n_pixels * k` in output-major
/// order. Kernel delta defaults to one equatorial pixel.
pub fn equirect_sample_coords(
    geom: &EquirectGeometry,
    kernel: &KernelSpec,
    projection: SphereProjection,
) -> Result<Vec<SphericalCoord>> {
    kernel.validate()?;
    let offsets = kernel.offsets(kernel.resolve_delta(geom.pixel_pitch()));
    let k = offsets.len();
    let mut coords = vec![SphericalCoord::new(0.0, 0.0); geom.n_pixels() * k];
    coords.par_chunks_mut(k).enumerate().for_each(|(n, dst)| {
        let center = equirect_pix_to_sph((n / geom.width) as f64, (n % geom.width) as f64, geom);
        for (d, &(dx, dy)) in dst.iter_mut().zip(&offsets) {
            *d = projection.apply(&center, dx, dy);
        }
    });
    Ok(coords)
}

/// Distortion-aware convolution map on an equirectangular image: the kernel
/// at every pixel is laid out on the sphere by `projection` and sampled back
/// from the image with `interp`. Longitude wraps; latitude clamps at the
/// first and last rows.
pub fn make_equirect_map(
    geom: &EquirectGeometry,
    kernel: KernelSpec,
    projection: SphereProjection,
    interp: Interp,
) -> Result<SampleMap> {
    let coords = equirect_sample_coords(geom, &kernel, projection)?;
    let samples = coords
        .par_iter()
        .map(|c| {
            let (row, col) = sph_to_equirect_pix(c, geom);
            interp_taps(row, col, geom.height, geom.width, interp, Boundary::EQUIRECT)
        })
        .collect::<Result<Vec<Sample>>>()?;
    let n = geom.n_pixels();
    SampleMap::from_samples(
        n,
        n,
        kernel.k(),
        &samples,
        format!(
            "equirect-{} h={} w={} kh={} kw={} delta={} interp={}",
            projection.name(),
            geom.height,
            geom.width,
            kernel.height,
            kernel.width,
            kernel.resolve_delta(geom.pixel_pitch()),
            interp.name()
        ),
    )
}

/// Cube faces in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CubeFace {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl CubeFace {
    pub const ALL: [CubeFace; 6] = [
        CubeFace::PosX,
        CubeFace::NegX,
        CubeFace::PosY,
        CubeFace::NegY,
        CubeFace::PosZ,
        CubeFace::NegZ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["+X", "-X", "+Y", "-Y", "+Z", "-Z"][self.index()]
    }
}

/// Face-local coordinates, `u` rightward and `v` upward, both in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeFaceCoord {
    pub face: CubeFace,
    pub u: f64,
    pub v: f64,
}

// The cube uses its own frame in which +Z faces (phi, lambda) = (0, 0), +X
// faces lambda = pi/2 and +Y is the south pole:
//   X = cos(phi) sin(lambda), Y = -sin(phi), Z = cos(phi) cos(lambda).
// Face points: +X (1, -v, -u), -X (-1, -v, u), +Y (u, 1, v), -Y (u, -1, v),
// +Z (u, -v, 1), -Z (-u, -v, -1).

/// Face coordinates to latitude/longitude, face by face, using two-argument
/// arctangents so every face lands in its own longitude quadrant.
pub fn cube_face_to_sph(coord: &CubeFaceCoord) -> SphericalCoord {
    let (u, v) = (coord.u, coord.v);
    let (phi, lambda) = match coord.face {
        CubeFace::PosX => (v.atan2((1.0 + u * u).sqrt()), 1.0f64.atan2(-u)),
        CubeFace::NegX => (v.atan2((1.0 + u * u).sqrt()), (-1.0f64).atan2(u)),
        CubeFace::PosY => ((-1.0f64).atan2(u.hypot(v)), u.atan2(v)),
        CubeFace::NegY => (1.0f64.atan2(u.hypot(v)), u.atan2(v)),
        CubeFace::PosZ => (v.atan2((1.0 + u * u).sqrt()), u.atan2(1.0)),
        CubeFace::NegZ => (v.atan2((1.0 + u * u).sqrt()), (-u).atan2(-1.0)),
    };
    SphericalCoord::new(phi, lambda)
}

/// Sphere point to face coordinates. The face is chosen by the dominant axis;
/// exact ties go to the earlier face in `+X, -X, +Y, -Y, +Z, -Z`.
pub fn sph_to_cube_face(coord: &SphericalCoord) -> CubeFaceCoord {
    let (sp, cp) = coord.phi.sin_cos();
    let (sl, cl) = coord.lambda.sin_cos();
    cube_frame_to_face([cp * sl, -sp, cp * cl])
}

/// Face lookup for a non-zero vector given in the cube frame.
fn cube_frame_to_face([x, y, z]: [f64; 3]) -> CubeFaceCoord {
    let (ax, ay, az) = (x.abs(), y.abs(), z.abs());
    let (face, u, v) = if ax >= ay && ax >= az {
        if x >= 0.0 {
            (CubeFace::PosX, -z / ax, -y / ax)
        } else {
            (CubeFace::NegX, z / ax, -y / ax)
        }
    } else if ay >= az {
        if y >= 0.0 {
            (CubeFace::PosY, x / ay, z / ay)
        } else {
            (CubeFace::NegY, x / ay, z / ay)
        }
    } else if z >= 0.0 {
        (CubeFace::PosZ, x / az, -y / az)
    } else {
        (CubeFace::NegZ, -x / az, -y / az)
    };
    CubeFaceCoord {
        face,
        u: u.clamp(-1.0, 1.0),
        v: v.clamp(-1.0, 1.0),
    }
}

/// Six `face_dim x face_dim` faces stored face-major, row-major per face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CubeGeometry {
    pub face_dim: usize,
}

impl CubeGeometry {
    pub fn new(face_dim: usize) -> Result<Self> {
        if face_dim == 0 {
            return Err(Error::Parameter("cube face dimension must be positive".into()));
        }
        Ok(Self { face_dim })
    }

    pub fn n_pixels(&self) -> usize {
        6 * self.face_dim * self.face_dim
    }

    /// Angular resolution of the equirectangular image (`4 * face_dim` wide)
    /// with matching pixel count along the equator.
    pub fn equivalent_pitch(&self) -> f64 {
        PI / (2 * self.face_dim) as f64
    }

    pub fn pixel_to_face_coord(&self, face: CubeFace, row: f64, col: f64) -> CubeFaceCoord {
        let d = self.face_dim as f64;
        CubeFaceCoord {
            face,
            u: 2.0 * (col + 0.5) / d - 1.0,
            v: 1.0 - 2.0 * (row + 0.5) / d,
        }
    }

    /// Real-valued `(row, col)` on the coordinate's face.
    pub fn face_coord_to_pixel(&self, coord: &CubeFaceCoord) -> (f64, f64) {
        let d = self.face_dim as f64;
        ((1.0 - coord.v) * d / 2.0 - 0.5, (coord.u + 1.0) * d / 2.0 - 0.5)
    }

    /// Flat-index location of pixel `n`.
    pub fn unflatten(&self, n: usize) -> (CubeFace, usize, usize) {
        let per_face = self.face_dim * self.face_dim;
        let face = CubeFace::ALL[n / per_face];
        let r = n % per_face;
        (face, r / self.face_dim, r % self.face_dim)
    }

    /// Taps on the face holding `coord`; clamps at the face border.
    pub fn taps(&self, coord: &SphericalCoord, interp: Interp) -> Result<Sample> {
        let fc = sph_to_cube_face(coord);
        let (row, col) = self.face_coord_to_pixel(&fc);
        let local = interp_taps(row, col, self.face_dim, self.face_dim, interp, Boundary::CLAMP)?;
        let base = fc.face.index() * self.face_dim * self.face_dim;
        let mut s = Sample::empty();
        for t in local.taps() {
            s.push(base + t.index, t.weight);
        }
        Ok(s)
    }
}

/// Sphere locations of the kernel samples of a cube-map convolution.
pub fn cubemap_sample_coords(geom: &CubeGeometry, kernel: &KernelSpec) -> Result<Vec<SphericalCoord>> {
    kernel.validate()?;
    let offsets = kernel.offsets(kernel.resolve_delta(geom.equivalent_pitch()));
    let k = offsets.len();
    let mut coords = vec![SphericalCoord::new(0.0, 0.0); geom.n_pixels() * k];
    coords.par_chunks_mut(k).enumerate().for_each(|(n, dst)| {
        let (face, r, c) = geom.unflatten(n);
        let center = cube_face_to_sph(&geom.pixel_to_face_coord(face, r as f64, c as f64));
        for (d, &(dx, dy)) in dst.iter_mut().zip(&offsets) {
            *d = inverse_equirect(&center, dx, dy);
        }
    });
    Ok(coords)
}

/// Cube-map convolution that lays the kernel out in latitude/longitude
/// around each face pixel and samples wherever that lands, possibly on a
/// neighbouring face. Near the `±Y` faces (the poles) this spreads the kernel
/// radially.
pub fn make_cubemap_map(face_dim: usize, kernel: KernelSpec, interp: Interp) -> Result<SampleMap> {
    let geom = CubeGeometry::new(face_dim)?;
    let coords = cubemap_sample_coords(&geom, &kernel)?;
    let samples = coords
        .par_iter()
        .map(|c| geom.taps(c, interp))
        .collect::<Result<Vec<_>>>()?;
    let n = geom.n_pixels();
    SampleMap::from_samples(
        n,
        n,
        kernel.k(),
        &samples,
        format!(
            "cubemap face_dim={face_dim} kh={} kw={} delta={} interp={}",
            kernel.height,
            kernel.width,
            kernel.resolve_delta(geom.equivalent_pitch()),
            interp.name()
        ),
    )
}

/// Resampling map (`k = 1`) from an equirectangular image to a cube map.
pub fn make_equirect_to_cube_map(geom: &EquirectGeometry, face_dim: usize, interp: Interp) -> Result<SampleMap> {
    let cube = CubeGeometry::new(face_dim)?;
    let samples = (0..cube.n_pixels())
        .into_par_iter()
        .map(|n| {
            let (face, r, c) = cube.unflatten(n);
            let s = cube_face_to_sph(&cube.pixel_to_face_coord(face, r as f64, c as f64));
            let (row, col) = sph_to_equirect_pix(&s, geom);
            interp_taps(row, col, geom.height, geom.width, interp, Boundary::EQUIRECT)
        })
        .collect::<Result<Vec<_>>>()?;
    SampleMap::from_samples(
        geom.n_pixels(),
        cube.n_pixels(),
        1,
        &samples,
        format!("eq2cube h={} w={} face_dim={face_dim}", geom.height, geom.width),
    )
}

/// Resampling map (`k = 1`) from a cube map to an equirectangular image.
pub fn make_cube_to_equirect_map(face_dim: usize, geom: &EquirectGeometry, interp: Interp) -> Result<SampleMap> {
    let cube = CubeGeometry::new(face_dim)?;
    let samples = (0..geom.n_pixels())
        .into_par_iter()
        .map(|n| {
            let s = equirect_pix_to_sph((n / geom.width) as f64, (n % geom.width) as f64, geom);
            cube.taps(&s, interp)
        })
        .collect::<Result<Vec<_>>>()?;
    SampleMap::from_samples(
        cube.n_pixels(),
        geom.n_pixels(),
        1,
        &samples,
        format!("cube2eq face_dim={face_dim} h={} w={}", geom.height, geom.width),
    )
}
