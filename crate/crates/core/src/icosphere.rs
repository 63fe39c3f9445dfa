//! Subdivided icosahedra: construction, point location, barycentric taps,
//! equirectangular resampling and vertex-centred convolution maps.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mapped_conv::Tensor;
use crate::sample_map::{interp_taps, Boundary, Interp, KernelSpec, Sample, SampleMap};
use crate::scalar::Scalar;
use crate::sphere::{equirect_pix_to_sph, inverse_gnomonic, sph_to_equirect_pix, EquirectGeometry, SphericalCoord};

/// Largest subdivision order accepted by [`make_icosphere`].
pub const MAX_ORDER: usize = 8;

/// Barycentric weights at or above this (negative) value count as inside.
const INSIDE_TOL: f64 = -1e-9;
/// Unnormalized barycentric terms (triple products) below this are treated
/// as exact zeros. Their rounding error is a few ulps regardless of face
/// size, unlike the normalized weights.
const SNAP: f64 = 1e-15;

type Vec3 = [f64; 3];

#[inline]
fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn normalize(v: Vec3) -> Vec3 {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// How new vertex positions are computed when splitting faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubdivisionRule {
    /// Edge midpoints, then projection onto the sphere. Coarse vertices keep
    /// their positions at every finer order.
    #[default]
    Midpoint,
    /// Loop's smoothing masks, then projection onto the sphere.
    Loop,
}

/// Icosphere with its full subdivision hierarchy.
///
/// Vertex indices are stable across levels: the vertices of level `l` are
/// the first `|V_l|` entries. The children of face `f` at level `l` are faces
/// `4f .. 4f + 4` at level `l + 1`.
#[derive(Debug)]
pub struct IcosphereMesh {
    order: usize,
    rule: SubdivisionRule,
    vertices: Vec<Vec3>,
    levels: Vec<Vec<[u32; 3]>>,
    adj_offsets: Vec<usize>,
    adj: Vec<u32>,
    face_neighbors: OnceLock<Vec<[u32; 3]>>,
}

/// Result of a point-in-face query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceHit {
    /// Face index at the finest level.
    pub face: usize,
    /// Weights of the face's three vertices, in face order.
    pub bary: [f64; 3],
    /// True when no candidate contained the direction within tolerance and
    /// the closest face by centroid angle was used instead.
    pub fallback: bool,
}

/// `12 * 4^k - sum_{i<k} 6 * 4^i`.
pub fn expected_vertex_count(order: usize) -> usize {
    12 * 4usize.pow(order as u32) - (0..order).map(|i| 6 * 4usize.pow(i as u32)).sum::<usize>()
}

/// `20 * 4^k`.
pub fn expected_face_count(order: usize) -> usize {
    20 * 4usize.pow(order as u32)
}

fn base_icosahedron() -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let z = 1.0 / 5f64.sqrt();
    let r = 2.0 * z;
    let mut v = vec![[0.0, 0.0, 1.0]];
    for k in 0..5 {
        let a = TAU * k as f64 / 5.0;
        v.push([r * a.cos(), r * a.sin(), z]);
    }
    for k in 0..5 {
        let a = TAU * k as f64 / 5.0 + PI / 5.0;
        v.push([r * a.cos(), r * a.sin(), -z]);
    }
    v.push([0.0, 0.0, -1.0]);
    let up = |k: usize| 1 + k % 5;
    let lo = |k: usize| 6 + k % 5;
    let mut f = Vec::with_capacity(20);
    for k in 0..5 {
        f.push([0, up(k), up(k + 1)]);
        f.push([up(k), lo(k), up(k + 1)]);
        f.push([lo(k), lo(k + 1), up(k + 1)]);
        f.push([11, lo(k + 1), lo(k)]);
    }
    let mut faces: Vec<[u32; 3]> = f.into_iter().map(|[a, b, c]| [a as u32, b as u32, c as u32]).collect();
    for face in &mut faces {
        let [a, b, c] = face.map(|i| v[i as usize]);
        let centroid = [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]];
        if dot(cross(sub(b, a), sub(c, a)), centroid) < 0.0 {
            face.swap(1, 2);
        }
    }
    (v, faces)
}

fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn subdivide(vertices: &mut Vec<Vec3>, faces: &[[u32; 3]], rule: SubdivisionRule) -> Vec<[u32; 3]> {
    let n_old = vertices.len();
    // edge -> (midpoint index, opposite vertices)
    let mut edges: HashMap<(u32, u32), (u32, [u32; 2], usize)> = HashMap::with_capacity(faces.len() * 3 / 2);
    let mut children = Vec::with_capacity(faces.len() * 4);
    let mut next = n_old as u32;
    for &[a, b, c] in faces {
        let mut mid = |p: u32, q: u32, opp: u32| {
            let e = edges.entry(edge_key(p, q)).or_insert_with(|| {
                next += 1;
                (next - 1, [opp, opp], 0)
            });
            e.1[e.2.min(1)] = opp;
            e.2 += 1;
            e.0
        };
        let ab = mid(a, b, c);
        let bc = mid(b, c, a);
        let ca = mid(c, a, b);
        children.push([a, ab, ca]);
        children.push([ab, b, bc]);
        children.push([ca, bc, c]);
        children.push([ab, bc, ca]);
    }
    let mut new_pos = vec![[0.0; 3]; next as usize - n_old];
    for (&(p, q), &(m, opp, _)) in &edges {
        let (vp, vq) = (vertices[p as usize], vertices[q as usize]);
        let pos = match rule {
            SubdivisionRule::Midpoint => [vp[0] + vq[0], vp[1] + vq[1], vp[2] + vq[2]],
            SubdivisionRule::Loop => {
                let (o1, o2) = (vertices[opp[0] as usize], vertices[opp[1] as usize]);
                std::array::from_fn(|i| 0.375 * (vp[i] + vq[i]) + 0.125 * (o1[i] + o2[i]))
            }
        };
        new_pos[m as usize - n_old] = normalize(pos);
    }
    if rule == SubdivisionRule::Loop {
        let (offsets, adj) = adjacency(n_old, faces);
        let moved: Vec<Vec3> = (0..n_old)
            .map(|v| {
                let nb = &adj[offsets[v]..offsets[v + 1]];
                let n = nb.len() as f64;
                let t = 0.375 + 0.25 * (TAU / n).cos();
                let beta = (0.625 - t * t) / n;
                let mut p = vertices[v].map(|x| x * (1.0 - n * beta));
                for &u in nb {
                    let q = vertices[u as usize];
                    for i in 0..3 {
                        p[i] += beta * q[i];
                    }
                }
                normalize(p)
            })
            .collect();
        vertices.copy_from_slice(&moved);
    }
    vertices.extend(new_pos);
    children
}

fn adjacency(n_vertices: usize, faces: &[[u32; 3]]) -> (Vec<usize>, Vec<u32>) {
    let mut lists: Vec<Vec<u32>> = vec![Vec::with_capacity(6); n_vertices];
    for &[a, b, c] in faces {
        for (p, q) in [(a, b), (b, c), (c, a)] {
            lists[p as usize].push(q);
            lists[q as usize].push(p);
        }
    }
    let mut offsets = Vec::with_capacity(n_vertices + 1);
    let mut adj = Vec::new();
    offsets.push(0);
    for mut l in lists {
        l.sort_unstable();
        l.dedup();
        adj.extend(l);
        offsets.push(adj.len());
    }
    (offsets, adj)
}

/// Midpoint-subdivided icosphere of the given order.
pub fn make_icosphere(order: usize) -> Result<IcosphereMesh> {
    make_icosphere_with(order, SubdivisionRule::Midpoint)
}

pub fn make_icosphere_with(order: usize, rule: SubdivisionRule) -> Result<IcosphereMesh> {
    if order > MAX_ORDER {
        return Err(Error::Parameter(format!(
            "icosphere order must be at most {MAX_ORDER}, got {order}"
        )));
    }
    let (mut vertices, base) = base_icosahedron();
    let mut levels = vec![base];
    for l in 0..order {
        let next = subdivide(&mut vertices, &levels[l], rule);
        levels.push(next);
    }
    let (adj_offsets, adj) = adjacency(vertices.len(), &levels[order]);
    Ok(IcosphereMesh {
        order,
        rule,
        vertices,
        levels,
        adj_offsets,
        adj,
        face_neighbors: OnceLock::new(),
    })
}

impl IcosphereMesh {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rule(&self) -> SubdivisionRule {
        self.rule
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Faces of the finest level.
    pub fn faces(&self) -> &[[u32; 3]] {
        &self.levels[self.order]
    }

    pub fn n_faces(&self) -> usize {
        self.faces().len()
    }

    pub fn n_edges(&self) -> usize {
        self.adj.len() / 2
    }

    /// Faces of an intermediate level `0..=order`.
    pub fn level_faces(&self, level: usize) -> &[[u32; 3]] {
        &self.levels[level]
    }

    /// Indices at level `level + 1` of the children of `face` at `level`.
    pub fn face_children(&self, level: usize, face: usize) -> std::ops::Range<usize> {
        debug_assert!(level < self.order);
        4 * face..4 * face + 4
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adj[self.adj_offsets[v]..self.adj_offsets[v + 1]]
    }

    /// Latitude/longitude of a vertex. The north pole gets longitude `-pi`
    /// and the south pole `0`, so that a gnomonic kernel centred there has
    /// its upward axis pointing along the `lambda = 0` meridian.
    pub fn vertex_coord(&self, v: usize) -> SphericalCoord {
        let [x, y, z] = self.vertices[v];
        if x * x + y * y < 1e-24 {
            return if z > 0.0 {
                SphericalCoord::new(PI / 2.0, -PI)
            } else {
                SphericalCoord::new(-PI / 2.0, 0.0)
            };
        }
        SphericalCoord::from_vector([x, y, z])
    }

    fn face_neighbors(&self) -> &[[u32; 3]] {
        self.face_neighbors.get_or_init(|| {
            let faces = self.faces();
            let mut by_edge: HashMap<(u32, u32), [u32; 2]> = HashMap::with_capacity(faces.len() * 3 / 2);
            for (f, &[a, b, c]) in faces.iter().enumerate() {
                for (p, q) in [(a, b), (b, c), (c, a)] {
                    by_edge.entry(edge_key(p, q)).or_insert([u32::MAX; 2])[usize::from(p > q)] = f as u32;
                }
            }
            faces
                .iter()
                .enumerate()
                .map(|(f, &[a, b, c])| {
                    // slot i: the face across the edge opposite vertex i
                    [(b, c), (c, a), (a, b)].map(|(p, q)| {
                        let pair = by_edge[&edge_key(p, q)];
                        if pair[0] as usize == f {
                            pair[1]
                        } else {
                            pair[0]
                        }
                    })
                })
                .collect()
        })
    }

    /// Planar barycentric weights of `dir` in `face` at `level`, or `None`
    /// when the ray points away from the face's plane.
    fn triple(&self, level: usize, face: usize, dir: Vec3) -> [f64; 3] {
        let [a, b, c] = self.levels[level][face].map(|i| self.vertices[i as usize]);
        [dot(dir, cross(b, c)), dot(dir, cross(c, a)), dot(dir, cross(a, b))]
    }

    fn raw_bary(&self, level: usize, face: usize, dir: Vec3) -> Option<[f64; 3]> {
        let w = self.triple(level, face, dir);
        let s = w[0] + w[1] + w[2];
        (s > 0.0).then(|| w.map(|x| x / s))
    }

    fn centroid_dot(&self, level: usize, face: usize, dir: Vec3) -> f64 {
        let [a, b, c] = self.levels[level][face].map(|i| self.vertices[i as usize]);
        dot(
            dir,
            normalize([a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]]),
        )
    }

    fn choose(&self, level: usize, candidates: std::ops::Range<usize>, dir: Vec3) -> (usize, bool) {
        let mut best: Option<(usize, f64)> = None;
        for f in candidates.clone() {
            if let Some(w) = self.raw_bary(level, f, dir) {
                let m = w[0].min(w[1]).min(w[2]);
                if m >= INSIDE_TOL && best.is_none_or(|(_, bm)| m > bm) {
                    best = Some((f, m));
                }
            }
        }
        match best {
            Some((f, _)) => (f, false),
            None => {
                let f = candidates
                    .max_by(|&x, &y| {
                        self.centroid_dot(level, x, dir)
                            .total_cmp(&self.centroid_dot(level, y, dir))
                    })
                    .expect("non-empty candidate range");
                (f, true)
            }
        }
    }

    /// Face whose planar triangle the ray through `dir` crosses, with planar
    /// barycentric weights at the crossing.
    pub fn locate_face(&self, dir: Vec3) -> Result<FaceHit> {
        let n = dot(dir, dir).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "direction must be a unit vector, norm is {n}"
            )));
        }
        let (mut face, mut fallback) = self.choose(0, 0..20, dir);
        for level in 1..=self.order {
            let (f, fb) = self.choose(level, self.face_children(level - 1, face), dir);
            face = f;
            fallback |= fb;
        }
        let mut w = self.raw_bary(self.order, face, dir);
        if w.is_none_or(|w| w.iter().any(|&x| x < INSIDE_TOL)) {
            // coarse triangles need not tile exactly (Loop positions, rounding);
            // walk across edges toward the point
            let nb = self.face_neighbors();
            let mut cur = face;
            for _ in 0..(4 * self.order + 16) {
                let Some(cw) = self.raw_bary(self.order, cur, dir) else {
                    break;
                };
                let (i, &m) = cw.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
                if m >= INSIDE_TOL {
                    face = cur;
                    w = Some(cw);
                    fallback = false;
                    break;
                }
                cur = nb[cur][i] as usize;
            }
        }
        let raw = match w {
            Some(w) if w.iter().all(|&x| x >= INSIDE_TOL) => w,
            Some(w) => {
                fallback = true;
                w
            }
            None => {
                fallback = true;
                [1.0 / 3.0; 3]
            }
        };
        let scale = self.triple(self.order, face, dir).iter().sum::<f64>().abs();
        let mut bary = raw.map(|x| if x * scale < SNAP { 0.0 } else { x });
        let s: f64 = bary.iter().sum();
        if s > 0.0 {
            bary = bary.map(|x| x / s);
        } else {
            bary = [1.0 / 3.0; 3];
        }
        Ok(FaceHit { face, bary, fallback })
    }

    /// Up to three taps on the vertices of the face hit by `dir`.
    pub fn barycentric_taps(&self, dir: Vec3) -> Result<Sample> {
        let hit = self.locate_face(dir)?;
        Ok(self.hit_taps(&hit))
    }

    fn hit_taps(&self, hit: &FaceHit) -> Sample {
        let mut s = Sample::empty();
        for (&v, &w) in self.faces()[hit.face].iter().zip(&hit.bary) {
            s.push(v as usize, w);
        }
        s
    }

    /// Mean great-circle angle between adjacent vertices.
    pub fn mean_neighbor_angle(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for v in 0..self.n_vertices() {
            for &u in self.neighbors(v) {
                if (u as usize) > v {
                    let (a, b) = (self.vertices[v], self.vertices[u as usize]);
                    let s = dot(cross(a, b), cross(a, b)).sqrt();
                    total += s.atan2(dot(a, b));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    /// Spherical area of each vertex's Voronoi cell. Sums to `4 pi`.
    pub fn vertex_areas(&self) -> Vec<f64> {
        fn tri(a: Vec3, b: Vec3, c: Vec3) -> f64 {
            2.0 * dot(a, cross(b, c)).atan2(1.0 + dot(a, b) + dot(b, c) + dot(c, a))
        }
        let mut areas = vec![0.0; self.n_vertices()];
        for face in self.faces() {
            let p = face.map(|i| self.vertices[i as usize]);
            let cc = normalize(cross(sub(p[1], p[0]), sub(p[2], p[0])));
            for i in 0..3 {
                let (a, b, c) = (p[i], p[(i + 1) % 3], p[(i + 2) % 3]);
                let mab = normalize([a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
                let mca = normalize([a[0] + c[0], a[1] + c[1], a[2] + c[2]]);
                areas[face[i] as usize] += tri(a, mab, cc) + tri(a, cc, mca);
            }
        }
        areas
    }
}

/// Accumulated scatter weight below which a vertex is sampled by gather
/// instead. The weight is roughly the number of pixels inside the vertex's
/// cell; below four, the 4-tap bilinear read sees at least as much data.
pub const DEFAULT_MIN_SCATTER_WEIGHT: f64 = 4.0;

/// How [`resample_equirect_to_vertices`] assigns pixel values to vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResampleMode {
    /// Each pixel is splatted onto the vertices of its face with barycentric
    /// weights; vertices are weight-normalized sums. Vertices that receive
    /// too little weight (the mesh is locally finer than the image) fall back
    /// to bilinear sampling.
    #[default]
    Scatter,
    /// Every vertex bilinearly samples the image at its own location.
    Gather,
}

fn image_dims<T: Scalar>(image: &Tensor<T>, geom: &EquirectGeometry) -> Result<usize> {
    match image.shape() {
        &[c, h, w] if h == geom.height && w == geom.width => Ok(c),
        s => Err(Error::dim(
            "equirectangular image",
            format!("(C, {}, {})", geom.height, geom.width),
            format!("{s:?}"),
        )),
    }
}

fn pixel_hits(mesh: &IcosphereMesh, geom: &EquirectGeometry) -> Result<Vec<FaceHit>> {
    (0..geom.n_pixels())
        .into_par_iter()
        .map(|n| {
            let s = equirect_pix_to_sph((n / geom.width) as f64, (n % geom.width) as f64, geom);
            mesh.locate_face(s.to_unit_vector())
        })
        .collect()
}

/// Equirectangular image `(c, h, w)` to a vertex signal `(c, |V|)`.
pub fn resample_equirect_to_vertices<T: Scalar>(
    image: &Tensor<T>,
    mesh: &IcosphereMesh,
    geom: &EquirectGeometry,
    mode: ResampleMode,
) -> Result<Tensor<T>> {
    resample_equirect_to_vertices_with(image, mesh, geom, mode, DEFAULT_MIN_SCATTER_WEIGHT)
}

/// As [`resample_equirect_to_vertices`]; in scatter mode, vertices whose
/// accumulated weight is below `min_weight` are gathered instead.
pub fn resample_equirect_to_vertices_with<T: Scalar>(
    image: &Tensor<T>,
    mesh: &IcosphereMesh,
    geom: &EquirectGeometry,
    mode: ResampleMode,
    min_weight: f64,
) -> Result<Tensor<T>> {
    let c = image_dims(image, geom)?;
    let nv = mesh.n_vertices();
    let mut num = vec![T::zero(); c * nv];
    let mut den = vec![0.0f64; nv];
    if mode == ResampleMode::Scatter {
        let hits = pixel_hits(mesh, geom)?;
        let np = geom.n_pixels();
        // sequential in pixel order so sums are reproducible
        for (p, hit) in hits.iter().enumerate() {
            for (&v, &w) in mesh.faces()[hit.face].iter().zip(&hit.bary) {
                if w == 0.0 {
                    continue;
                }
                let v = v as usize;
                den[v] += w;
                let wt = T::from_f64_lossy(w);
                for ch in 0..c {
                    num[ch * nv + v] += wt * image.data()[ch * np + p];
                }
            }
        }
    }
    let gathered: Vec<Option<Sample>> = (0..nv)
        .into_par_iter()
        .map(|v| {
            if den[v] > 0.0 && den[v] >= min_weight {
                return Ok(None);
            }
            let (row, col) = sph_to_equirect_pix(&SphericalCoord::from_vector(mesh.vertices[v]), geom);
            interp_taps(row, col, geom.height, geom.width, Interp::Bilinear, Boundary::EQUIRECT).map(Some)
        })
        .collect::<Result<_>>()?;
    let np = geom.n_pixels();
    for (v, g) in gathered.iter().enumerate() {
        match g {
            None => {
                let d = T::from_f64_lossy(den[v]);
                for ch in 0..c {
                    num[ch * nv + v] /= d;
                }
            }
            Some(s) => {
                for ch in 0..c {
                    num[ch * nv + v] = s
                        .taps()
                        .iter()
                        .map(|t| T::from_f64_lossy(t.weight) * image.data()[ch * np + t.index])
                        .sum();
                }
            }
        }
    }
    Tensor::new(vec![c, nv], num)
}

/// Vertex signal `(c, |V|)` to an equirectangular image `(c, h, w)` by
/// barycentric interpolation inside the face under each pixel.
pub fn resample_vertices_to_equirect<T: Scalar>(
    values: &Tensor<T>,
    mesh: &IcosphereMesh,
    geom: &EquirectGeometry,
) -> Result<Tensor<T>> {
    if values.shape().len() != 2 || values.shape()[1] != mesh.n_vertices() {
        return Err(Error::dim(
            "vertex signal",
            format!("(C, {})", mesh.n_vertices()),
            format!("{:?}", values.shape()),
        ));
    }
    let c = values.channels();
    let nv = mesh.n_vertices();
    let hits = pixel_hits(mesh, geom)?;
    let np = geom.n_pixels();
    let mut out = vec![T::zero(); c * np];
    out.par_chunks_mut(np).enumerate().for_each(|(ch, dst)| {
        let src = &values.data()[ch * nv..(ch + 1) * nv];
        for (d, hit) in dst.iter_mut().zip(&hits) {
            *d = mesh.faces()[hit.face]
                .iter()
                .zip(&hit.bary)
                .map(|(&v, &w)| T::from_f64_lossy(w) * src[v as usize])
                .sum();
        }
    });
    Tensor::new(vec![c, geom.height, geom.width], out)
}

/// Vertex-centred convolution map: at every vertex of `mesh_out` the kernel
/// is laid on the tangent plane (inverse gnomonic, upward along the local
/// meridian) and each sample is read from `mesh_in` with barycentric
/// weights. `mesh_out` must have the same order as `mesh_in` or one less
/// (the stride-2 analogue). Kernel delta defaults to the mean neighbour
/// angle of `mesh_in`.
pub fn make_isea_map(mesh_in: &IcosphereMesh, mesh_out: &IcosphereMesh, kernel: KernelSpec) -> Result<SampleMap> {
    if mesh_out.order != mesh_in.order && mesh_out.order + 1 != mesh_in.order {
        return Err(Error::Parameter(format!(
            "output order must equal the input order or be one lower, got {} -> {}",
            mesh_in.order, mesh_out.order
        )));
    }
    kernel.validate()?;
    let delta = match kernel.delta {
        Some(d) => d,
        None => mesh_in.mean_neighbor_angle(),
    };
    let offsets = kernel.offsets(delta);
    let k = offsets.len();
    let samples = (0..mesh_out.n_vertices() * k)
        .into_par_iter()
        .map(|s| {
            let center = mesh_out.vertex_coord(s / k);
            let (dx, dy) = offsets[s % k];
            mesh_in.barycentric_taps(inverse_gnomonic(&center, dx, dy).to_unit_vector())
        })
        .collect::<Result<Vec<_>>>()?;
    SampleMap::from_samples(
        mesh_in.n_vertices(),
        mesh_out.n_vertices(),
        k,
        &samples,
        format!(
            "isea order_in={} order_out={} kh={} kw={} delta={delta}",
            mesh_in.order, mesh_out.order, kernel.height, kernel.width
        ),
    )
}

/// Resampling map (`k = 1`) that reads every vertex from an equirectangular
/// image.
pub fn make_equirect_to_mesh_map(geom: &EquirectGeometry, mesh: &IcosphereMesh, interp: Interp) -> Result<SampleMap> {
    let samples = (0..mesh.n_vertices())
        .into_par_iter()
        .map(|v| {
            let (row, col) = sph_to_equirect_pix(&SphericalCoord::from_vector(mesh.vertices[v]), geom);
            interp_taps(row, col, geom.height, geom.width, interp, Boundary::EQUIRECT)
        })
        .collect::<Result<Vec<_>>>()?;
    SampleMap::from_samples(
        geom.n_pixels(),
        mesh.n_vertices(),
        1,
        &samples,
        format!("eq2mesh h={} w={} order={}", geom.height, geom.width, mesh.order),
    )
}

/// Resampling map (`k = 1`) that reads every equirectangular pixel from a
/// vertex signal with barycentric weights.
pub fn make_mesh_to_equirect_map(mesh: &IcosphereMesh, geom: &EquirectGeometry) -> Result<SampleMap> {
    let samples: Vec<Sample> = pixel_hits(mesh, geom)?.iter().map(|h| mesh.hit_taps(h)).collect();
    SampleMap::from_samples(
        mesh.n_vertices(),
        geom.n_pixels(),
        1,
        &samples,
        format!("mesh2eq order={} h={} w={}", mesh.order, geom.height, geom.width),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_for_small_orders() {
        let m = make_icosphere(0).unwrap();
        assert_eq!((m.n_vertices(), m.n_faces(), m.n_edges()), (12, 20, 30));
        let m = make_icosphere(1).unwrap();
        assert_eq!((m.n_vertices(), m.n_faces()), (42, 80));
        assert_eq!(expected_vertex_count(7), 163_842);
        assert_eq!(expected_face_count(7), 327_680);
        assert!(make_icosphere(9).is_err());
    }

    #[test]
    fn base_has_poles_and_outward_winding() {
        let m = make_icosphere(2).unwrap();
        assert_eq!(m.vertices()[0], [0.0, 0.0, 1.0]);
        assert_eq!(m.vertices()[11], [0.0, 0.0, -1.0]);
        for l in 0..=2 {
            for f in m.level_faces(l) {
                let [a, b, c] = f.map(|i| m.vertices()[i as usize]);
                assert!(dot(cross(sub(b, a), sub(c, a)), a) > 0.0);
            }
        }
    }

    #[test]
    fn degrees_are_five_or_six() {
        for rule in [SubdivisionRule::Midpoint, SubdivisionRule::Loop] {
            let m = make_icosphere_with(3, rule).unwrap();
            for v in 0..m.n_vertices() {
                let d = m.neighbors(v).len();
                assert_eq!(d, if v < 12 { 5 } else { 6 });
            }
        }
    }

    #[test]
    fn midpoint_keeps_coarse_vertices() {
        let a = make_icosphere(2).unwrap();
        let b = make_icosphere(4).unwrap();
        assert_eq!(&b.vertices()[..a.n_vertices()], a.vertices());
    }

    #[test]
    fn children_share_parent_corners() {
        let m = make_icosphere(2).unwrap();
        for (f, face) in m.level_faces(1).iter().enumerate() {
            let kids: Vec<_> = m.face_children(1, f).map(|c| m.level_faces(2)[c]).collect();
            for (i, &corner) in face.iter().enumerate() {
                assert_eq!(kids[i][i], corner);
            }
        }
    }

    #[test]
    fn locate_vertex_centroid_and_midpoint() {
        let m = make_icosphere(3).unwrap();
        for v in [0usize, 5, 11, 100, 641] {
            let hit = m.locate_face(m.vertices()[v]).unwrap();
            let face = m.faces()[hit.face];
            let slot = face.iter().position(|&x| x as usize == v).expect("incident face");
            assert!((hit.bary[slot] - 1.0).abs() < 1e-12);
            let taps = m.barycentric_taps(m.vertices()[v]).unwrap();
            assert_eq!(taps.len(), 1);
        }
        for f in [0usize, 17, 999] {
            let [a, b, c] = m.faces()[f].map(|i| m.vertices()[i as usize]);
            let d = normalize([a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]]);
            let hit = m.locate_face(d).unwrap();
            assert_eq!(hit.face, f);
            assert!(hit.bary.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-12));
            let e = normalize([a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
            let hit = m.locate_face(e).unwrap();
            let face = m.faces()[hit.face];
            let [ia, ib, _] = m.faces()[f];
            for (&v, &w) in face.iter().zip(&hit.bary) {
                let expect = if v == ia || v == ib { 0.5 } else { 0.0 };
                assert!((w - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loop_rule_locates_without_fallback() {
        let m = make_icosphere_with(3, SubdivisionRule::Loop).unwrap();
        for i in 0..2000 {
            let z = -1.0 + 2.0 * (i as f64 + 0.5) / 2000.0;
            let a = i as f64 * 2.399_963;
            let r = (1.0 - z * z).sqrt();
            let hit = m.locate_face([r * a.cos(), r * a.sin(), z]).unwrap();
            assert!(!hit.fallback);
            assert!((hit.bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_unit_direction() {
        let m = make_icosphere(0).unwrap();
        assert!(m.locate_face([0.0, 0.0, 2.0]).is_err());
        assert!(m.locate_face([f64::NAN, 0.0, 1.0]).is_err());
    }

    #[test]
    fn mean_angle_order_zero() {
        let m = make_icosphere(0).unwrap();
        assert!((m.mean_neighbor_angle() - (1.0 / 5f64.sqrt()).acos()).abs() < 1e-12);
        assert!((m.mean_neighbor_angle() - 1.1071487).abs() < 1e-7);
    }

    #[test]
    fn mean_angle_halves() {
        let angles: Vec<f64> = (0..5)
            .map(|k| make_icosphere(k).unwrap().mean_neighbor_angle())
            .collect();
        for w in angles.windows(2) {
            let r = w[1] / w[0];
            assert!((0.45..=0.55).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn vertex_areas_cover_sphere() {
        let m = make_icosphere(3).unwrap();
        let a = m.vertex_areas();
        assert!((a.iter().sum::<f64>() - 4.0 * PI).abs() < 1e-10);
        assert!(a.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn pole_kernels_point_up_to_meridian_zero() {
        let m = make_icosphere(2).unwrap();
        for v in [0usize, 11] {
            let c = m.vertex_coord(v);
            let up = inverse_gnomonic(&c, 0.0, 0.1);
            assert!(up.lambda().abs() < 1e-12, "pole {v}: {}", up.lambda());
        }
    }

    #[test]
    fn isea_center_sample_hits_vertex() {
        let m = make_icosphere(2).unwrap();
        let map = make_isea_map(&m, &m, KernelSpec::square(3)).unwrap();
        assert_eq!((map.n_in(), map.n_out(), map.k()), (162, 162, 9));
        for v in 0..m.n_vertices() {
            let s = map.sample(v, 4);
            assert_eq!(s.len(), 1);
            assert_eq!(s[0].index, v);
            assert_eq!(s[0].weight, 1.0);
        }
        for s in map.samples() {
            assert!(s.len() <= 3);
            assert!((s.iter().map(|t| t.weight).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn isea_cross_order() {
        let a = make_icosphere(3).unwrap();
        let b = make_icosphere(2).unwrap();
        let map = make_isea_map(&a, &b, KernelSpec::square(3)).unwrap();
        assert_eq!((map.n_in(), map.n_out()), (642, 162));
        let c = make_icosphere(1).unwrap();
        assert!(make_isea_map(&a, &c, KernelSpec::square(3)).is_err());
        assert!(make_isea_map(&b, &a, KernelSpec::square(3)).is_err());
    }

    #[test]
    fn constant_round_trip() {
        let m = make_icosphere(3).unwrap();
        let g = EquirectGeometry::new(32, 64).unwrap();
        let img = Tensor::filled(vec![2, 32, 64], 2.5f64);
        for mode in [ResampleMode::Scatter, ResampleMode::Gather] {
            let v = resample_equirect_to_vertices(&img, &m, &g, mode).unwrap();
            assert!(v.data().iter().all(|&x| (x - 2.5).abs() < 1e-14));
            let back = resample_vertices_to_equirect(&v, &m, &g).unwrap();
            assert!(back.data().iter().all(|&x| (x - 2.5).abs() < 1e-14));
        }
    }

    #[test]
    fn single_pixel_touches_three_vertices() {
        let m = make_icosphere(2).unwrap();
        let g = EquirectGeometry::new(64, 128).unwrap();
        let mut img = Tensor::<f64>::zeros(vec![1, 64, 128]);
        img.data_mut()[20 * 128 + 37] = 1.0;
        // every vertex receives pixels at this resolution, so no gather
        let v = resample_equirect_to_vertices(&img, &m, &g, ResampleMode::Scatter).unwrap();
        let touched = v.data().iter().filter(|&&x| x != 0.0).count();
        assert!((1..=3).contains(&touched));
        let hit = m
            .locate_face(equirect_pix_to_sph(20.0, 37.0, &g).to_unit_vector())
            .unwrap();
        assert_eq!(touched, hit.bary.iter().filter(|&&w| w > 0.0).count());
    }
}
