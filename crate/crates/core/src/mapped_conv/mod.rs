//! The convolution engine.
//!
//! Forward pass: gather every sample of the map into a column matrix
//! (`mapped_im2col`), then multiply by the flattened kernel. Backward passes
//! are the exact adjoints: a GEMM into column space followed by a
//! deterministic scatter back onto the input (`mapped_col2im`).
//!
//! All routines are generic over [`Scalar`]; sample-map weights are double
//! precision and converted on use.

mod gemm;
mod grid;
mod tensor;

pub use gemm::{gemm, GemmKernel, Op};
pub use grid::{
    grid_col2im, grid_conv_backward_reference, grid_conv_reference, grid_conv_reference_with, grid_im2col, GridConv,
};
pub use tensor::{ConvParams, Tensor};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sample_map::{MapTranspose, SampleMap};
use crate::scalar::Scalar;

/// Gradients of a convolution with respect to its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    /// Same layout as [`ConvParams::weights`].
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

fn check_input<T: Scalar>(input: &Tensor<T>, map: &SampleMap) -> Result<()> {
    if input.spatial_len() != map.n_in() {
        return Err(Error::dim(
            "input spatial size vs map n_in",
            map.n_in(),
            format!("{} (input shape {:?})", input.spatial_len(), input.shape()),
        ));
    }
    Ok(())
}

fn check_params<T: Scalar>(params: &ConvParams<T>, c_in: usize, k: usize) -> Result<()> {
    params.validate()?;
    if params.k != k {
        return Err(Error::dim("kernel size (params.k vs map.k)", k, params.k));
    }
    if params.c_in != c_in {
        return Err(Error::dim("input channels (params.c_in vs input)", c_in, params.c_in));
    }
    if !params.weights.iter().chain(&params.bias).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("convolution parameters"));
    }
    Ok(())
}

/// Locations handled per parallel task in the gather and scatter passes.
const TILE: usize = 1024;

/// Splits a row-major `rows x n` matrix into column blocks of width `width`:
/// entry `b` holds the `b`-th chunk of every row, so blocks can be filled in
/// parallel without sharing.
pub(crate) fn column_blocks<T>(data: &mut [T], n: usize, width: usize) -> Vec<Vec<&mut [T]>> {
    let rows = data.len().checked_div(n).unwrap_or(0);
    let mut blocks: Vec<Vec<&mut [T]>> = (0..n.div_ceil(width)).map(|_| Vec::with_capacity(rows)).collect();
    for row in data.chunks_mut(n.max(1)) {
        for (b, chunk) in row.chunks_mut(width).enumerate() {
            blocks[b].push(chunk);
        }
    }
    blocks
}

/// Column matrix `(c_in * k, n_out)`: entry `(c * k + m, n)` is the
/// interpolated value of channel `c` at sample `(n, m)`. Empty samples give 0.
pub fn mapped_im2col<T: Scalar>(input: &Tensor<T>, map: &SampleMap) -> Result<Tensor<T>> {
    check_input(input, map)?;
    let (c_in, k, n_out, n_in) = (input.channels(), map.k(), map.n_out(), map.n_in());
    let src = input.data();
    let mut cols = vec![T::zero(); c_in * k * n_out];
    // one sequential pass over the map per block of outputs
    column_blocks(&mut cols, n_out, TILE)
        .into_par_iter()
        .enumerate()
        .for_each(|(b, mut rows)| {
            let n0 = b * TILE;
            for j in 0..rows[0].len() {
                for m in 0..k {
                    let taps = map.sample(n0 + j, m);
                    for c in 0..c_in {
                        let ch = &src[c * n_in..(c + 1) * n_in];
                        let mut acc = T::zero();
                        for t in taps {
                            acc += T::from_f64_lossy(t.weight) * ch[t.index];
                        }
                        rows[c * k + m][j] = acc;
                    }
                }
            }
        });
    Tensor::new(vec![c_in * k, n_out], cols)
}

/// Adjoint of [`mapped_im2col`]: scatters a column matrix back onto the
/// input domain, `(c_in, n_in)`.
///
/// Each input location sums its own taps in map order, so the result is
/// independent of how work is split across threads.
pub fn mapped_col2im<T: Scalar>(cols: &[T], transpose: &MapTranspose, c_in: usize) -> Result<Tensor<T>> {
    let (k, n_in, n_out) = (transpose.k(), transpose.n_in(), transpose.n_out());
    if cols.len() != c_in * k * n_out {
        return Err(Error::dim("column matrix length", c_in * k * n_out, cols.len()));
    }
    let block = k * n_out;
    let mut out = vec![T::zero(); c_in * n_in];
    column_blocks(&mut out, n_in, TILE)
        .into_par_iter()
        .enumerate()
        .for_each(|(b, mut rows)| {
            let i0 = b * TILE;
            for j in 0..rows[0].len() {
                for e in transpose.entries(i0 + j) {
                    let w = T::from_f64_lossy(e.weight);
                    for (c, row) in rows.iter_mut().enumerate() {
                        row[j] += w * cols[c * block + e.position];
                    }
                }
            }
        });
    Tensor::new(vec![c_in, n_in], out)
}

/// Mapped convolution forward pass, `(c_in, n_in) -> (c_out, n_out)`.
pub fn mapped_conv_forward<T: Scalar>(input: &Tensor<T>, map: &SampleMap, params: &ConvParams<T>) -> Result<Tensor<T>> {
    mapped_conv_forward_with(input, map, params, GemmKernel::default())
}

pub fn mapped_conv_forward_with<T: Scalar>(
    input: &Tensor<T>,
    map: &SampleMap,
    params: &ConvParams<T>,
    kernel: GemmKernel,
) -> Result<Tensor<T>> {
    check_input(input, map)?;
    check_params(params, input.channels(), map.k())?;
    if !input.all_finite() {
        return Err(Error::NonFinite("convolution input"));
    }
    let cols = mapped_im2col(input, map)?;
    Ok(apply_weights(&cols, params, map.n_out(), kernel))
}

/// `weights * cols + bias` producing `(c_out, n_out)`.
pub(crate) fn apply_weights<T: Scalar>(
    cols: &Tensor<T>,
    params: &ConvParams<T>,
    n_out: usize,
    kernel: GemmKernel,
) -> Tensor<T> {
    let rows = params.c_in * params.k;
    let mut out = vec![T::zero(); params.c_out * n_out];
    gemm(
        kernel,
        Op::N,
        Op::N,
        params.c_out,
        n_out,
        rows,
        &params.weights,
        cols.data(),
        &mut out,
    );
    for (row, &b) in out.chunks_mut(n_out.max(1)).zip(&params.bias) {
        for v in row {
            *v += b;
        }
    }
    Tensor::new(vec![params.c_out, n_out], out).expect("shape built from params")
}

/// Gradient of the loss with respect to the input, given `grad_out` of
/// shape `(c_out, n_out)`.
pub fn mapped_conv_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    map: &SampleMap,
    params: &ConvParams<T>,
) -> Result<Tensor<T>> {
    mapped_conv_backward_input_with(grad_out, &map.transpose(), params, GemmKernel::default())
}

/// As [`mapped_conv_backward_input`] with a precomputed map transpose.
pub fn mapped_conv_backward_input_with<T: Scalar>(
    grad_out: &Tensor<T>,
    transpose: &MapTranspose,
    params: &ConvParams<T>,
    kernel: GemmKernel,
) -> Result<Tensor<T>> {
    params.validate()?;
    if params.k != transpose.k() {
        return Err(Error::dim("kernel size (params.k vs map.k)", transpose.k(), params.k));
    }
    check_grad_out(grad_out, params.c_out, transpose.n_out())?;
    let col_grad = column_grad(grad_out, params, transpose.n_out(), kernel);
    mapped_col2im(&col_grad, transpose, params.c_in)
}

fn check_grad_out<T: Scalar>(grad_out: &Tensor<T>, c_out: usize, n_out: usize) -> Result<()> {
    if grad_out.channels() != c_out || grad_out.spatial_len() != n_out {
        return Err(Error::dim(
            "grad_out shape",
            format!("({c_out}, {n_out})"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    Ok(())
}

/// `weights^T * grad_out`, shape `(c_in * k, n_out)`.
pub(crate) fn column_grad<T: Scalar>(
    grad_out: &Tensor<T>,
    params: &ConvParams<T>,
    n_out: usize,
    kernel: GemmKernel,
) -> Vec<T> {
    let rows = params.c_in * params.k;
    let mut col_grad = vec![T::zero(); rows * n_out];
    gemm(
        kernel,
        Op::T,
        Op::N,
        rows,
        n_out,
        params.c_out,
        &params.weights,
        grad_out.data(),
        &mut col_grad,
    );
    col_grad
}

/// Weight and bias gradients.
pub fn mapped_conv_backward_params<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    map: &SampleMap,
) -> Result<ParamGrads<T>> {
    mapped_conv_backward_params_with(grad_out, input, map, GemmKernel::default())
}

pub fn mapped_conv_backward_params_with<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    map: &SampleMap,
    kernel: GemmKernel,
) -> Result<ParamGrads<T>> {
    check_input(input, map)?;
    if grad_out.spatial_len() != map.n_out() {
        return Err(Error::dim(
            "grad_out spatial size vs map n_out",
            map.n_out(),
            grad_out.spatial_len(),
        ));
    }
    let cols = mapped_im2col(input, map)?;
    Ok(param_grads_from_cols(grad_out, &cols, kernel))
}

pub(crate) fn param_grads_from_cols<T: Scalar>(
    grad_out: &Tensor<T>,
    cols: &Tensor<T>,
    kernel: GemmKernel,
) -> ParamGrads<T> {
    let c_out = grad_out.channels();
    let n_out = grad_out.spatial_len();
    let rows = cols.shape()[0];
    let mut weights = vec![T::zero(); c_out * rows];
    gemm(
        kernel,
        Op::N,
        Op::T,
        c_out,
        rows,
        n_out,
        grad_out.data(),
        cols.data(),
        &mut weights,
    );
    let bias = (0..c_out).map(|o| grad_out.channel(o).iter().copied().sum()).collect();
    ParamGrads { weights, bias }
}
