//! Convolution on arbitrary sampling patterns.
//!
//! A [`SampleMap`] records, for every output location and kernel element,
//! where in the input signal to read and with which interpolation weights.
//! The convolution engine in [`mapped_conv`] consumes such maps; the
//! generators in [`sample_map`], [`sphere`] and [`icosphere`] build them for
//! regular grids, equirectangular images, cube maps and subdivided
//! icosahedra.

pub mod bench;
pub mod error;
pub mod gradcheck;
pub mod icosphere;
pub mod io;
pub mod mapped_conv;
pub mod sample_map;
pub mod scalar;
pub mod sphere;

pub use error::{Error, Result};
pub use icosphere::{
    make_icosphere, make_icosphere_with, make_isea_map, resample_equirect_to_vertices, resample_vertices_to_equirect,
    FaceHit, IcosphereMesh, ResampleMode, SubdivisionRule,
};
pub use mapped_conv::{
    grid_conv_reference, mapped_col2im, mapped_conv_backward_input, mapped_conv_backward_params, mapped_conv_forward,
    mapped_im2col, ConvParams, GemmKernel, GridConv, ParamGrads, Tensor,
};
pub use sample_map::{
    make_grid_map, make_same_grid_map, make_shuffle_map, make_shuffle_map_interp, Boundary, Interp, KernelSpec,
    MapTranspose, Sample, SampleMap, SampleTap,
};
pub use scalar::Scalar;
pub use sphere::{
    make_cubemap_map, make_equirect_map, CubeFace, CubeFaceCoord, CubeGeometry, EquirectGeometry, SphereProjection,
    SphericalCoord,
};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type ConvParams64 = ConvParams<f64>;
pub type ConvParams32 = ConvParams<f32>;
pub type ParamGrads64 = ParamGrads<f64>;
pub type ParamGrads32 = ParamGrads<f32>;
