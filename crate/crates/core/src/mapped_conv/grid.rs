//! Standard grid convolution via dense im2col, with no sample-map
//! indirection. Serves as the equivalence oracle for grid-shaped maps and as
//! the benchmark baseline.

use rayon::prelude::*;

use super::{apply_weights, column_grad, param_grads_from_cols, ConvParams, GemmKernel, ParamGrads, Tensor};
use crate::error::{Error, Result};
use crate::sample_map::{grid_output_size, KernelSpec};
use crate::scalar::Scalar;

/// Geometry of a zero-padded grid cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridConv {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl GridConv {
    pub fn new(kernel: (usize, usize)) -> Self {
        Self {
            kernel,
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
        }
    }

    /// Stride 1 with `(k - 1) / 2` padding.
    pub fn same(kernel: (usize, usize)) -> Self {
        Self {
            padding: ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2),
            ..Self::new(kernel)
        }
    }

    pub fn stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: (usize, usize)) -> Self {
        self.padding = padding;
        self
    }

    pub fn dilation(mut self, dilation: (usize, usize)) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn k(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        grid_output_size(
            height,
            width,
            &KernelSpec::new(self.kernel.0, self.kernel.1),
            self.stride,
            self.padding,
            self.dilation,
        )
    }

    /// Half-open range of output positions whose tap `j` lands inside `[0, len)`.
    fn valid_range(&self, axis: usize, j: usize, len: usize, out_len: usize) -> (usize, usize) {
        let (s, p, d) = match axis {
            0 => (self.stride.0, self.padding.0, self.dilation.0),
            _ => (self.stride.1, self.padding.1, self.dilation.1),
        };
        // input = o * s + j * d - p must lie in [0, len)
        let off = (j * d) as i64 - p as i64;
        let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
        let hi_num = len as i64 - off;
        let hi = if hi_num <= 0 { 0 } else { (hi_num as usize).div_ceil(s) };
        let hi = hi.min(out_len);
        (lo.min(hi), hi)
    }
}

fn image_dims<T: Scalar>(input: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match input.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::dim("grid convolution input", "(C, H, W)", format!("{s:?}"))),
    }
}

/// Dense column matrix `(c * kh * kw, out_h * out_w)` and the output size.
pub fn grid_im2col<T: Scalar>(input: &Tensor<T>, geom: &GridConv) -> Result<(Tensor<T>, (usize, usize))> {
    let (c_in, h, w) = image_dims(input)?;
    let (oh, ow) = geom.output_size(h, w)?;
    let (kh, kw) = geom.kernel;
    let n_out = oh * ow;
    let mut cols = vec![T::zero(); c_in * kh * kw * n_out];
    cols.par_chunks_mut(n_out).enumerate().for_each(|(row, dst)| {
        let c = row / (kh * kw);
        let (i, j) = ((row / kw) % kh, row % kw);
        let src = input.channel(c);
        let (ylo, yhi) = geom.valid_range(0, i, h, oh);
        let (xlo, xhi) = geom.valid_range(1, j, w, ow);
        let xoff = (j * geom.dilation.1) as i64 - geom.padding.1 as i64;
        for oy in ylo..yhi {
            let iy = oy * geom.stride.0 + i * geom.dilation.0 - geom.padding.0;
            let line = &src[iy * w..(iy + 1) * w];
            let drow = &mut dst[oy * ow..(oy + 1) * ow];
            if geom.stride.1 == 1 {
                let start = (xlo as i64 + xoff) as usize;
                drow[xlo..xhi].copy_from_slice(&line[start..start + (xhi - xlo)]);
            } else {
                for ox in xlo..xhi {
                    drow[ox] = line[(ox as i64 * geom.stride.1 as i64 + xoff) as usize];
                }
            }
        }
    });
    Ok((Tensor::new(vec![c_in * kh * kw, n_out], cols)?, (oh, ow)))
}

/// Adjoint of [`grid_im2col`]: accumulates a column matrix back onto a
/// `(c, h, w)` image.
pub fn grid_col2im<T: Scalar>(cols: &[T], c_in: usize, (h, w): (usize, usize), geom: &GridConv) -> Result<Tensor<T>> {
    let (oh, ow) = geom.output_size(h, w)?;
    let (kh, kw) = geom.kernel;
    let n_out = oh * ow;
    if cols.len() != c_in * kh * kw * n_out {
        return Err(Error::dim(
            "grid column matrix length",
            c_in * kh * kw * n_out,
            cols.len(),
        ));
    }
    let mut out = vec![T::zero(); c_in * h * w];
    out.par_chunks_mut(h * w).enumerate().for_each(|(c, dst)| {
        for i in 0..kh {
            for j in 0..kw {
                let row = (c * kh + i) * kw + j;
                let src = &cols[row * n_out..(row + 1) * n_out];
                let (ylo, yhi) = geom.valid_range(0, i, h, oh);
                let (xlo, xhi) = geom.valid_range(1, j, w, ow);
                let xoff = (j * geom.dilation.1) as i64 - geom.padding.1 as i64;
                for oy in ylo..yhi {
                    let iy = oy * geom.stride.0 + i * geom.dilation.0 - geom.padding.0;
                    for ox in xlo..xhi {
                        let ix = (ox as i64 * geom.stride.1 as i64 + xoff) as usize;
                        dst[iy * w + ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    });
    Tensor::new(vec![c_in, h, w], out)
}

/// Zero-padded cross-correlation of a `(c_in, h, w)` image, returning
/// `(c_out, out_h, out_w)`.
pub fn grid_conv_reference<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>, geom: &GridConv) -> Result<Tensor<T>> {
    grid_conv_reference_with(input, params, geom, GemmKernel::default())
}

pub fn grid_conv_reference_with<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    geom: &GridConv,
    kernel: GemmKernel,
) -> Result<Tensor<T>> {
    let (c_in, _, _) = image_dims(input)?;
    params.validate()?;
    if params.k != geom.k() {
        return Err(Error::dim("kernel size (params.k vs grid kernel)", geom.k(), params.k));
    }
    if params.c_in != c_in {
        return Err(Error::dim("input channels (params.c_in vs input)", c_in, params.c_in));
    }
    if !input.all_finite() {
        return Err(Error::NonFinite("convolution input"));
    }
    let (cols, (oh, ow)) = grid_im2col(input, geom)?;
    apply_weights(&cols, params, oh * ow, kernel).reshape(vec![params.c_out, oh, ow])
}

/// Input, weight and bias gradients of the grid convolution.
pub fn grid_conv_backward_reference<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    params: &ConvParams<T>,
    geom: &GridConv,
) -> Result<(Tensor<T>, ParamGrads<T>)> {
    let (c_in, h, w) = image_dims(input)?;
    let (oh, ow) = geom.output_size(h, w)?;
    if grad_out.channels() != params.c_out || grad_out.spatial_len() != oh * ow {
        return Err(Error::dim(
            "grad_out shape",
            format!("({}, {oh}, {ow})", params.c_out),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let kernel = GemmKernel::default();
    let col_grad = column_grad(grad_out, params, oh * ow, kernel);
    let grad_in = grid_col2im(&col_grad, c_in, (h, w), geom)?;
    let (cols, _) = grid_im2col(input, geom)?;
    Ok((grad_in, param_grads_from_cols(grad_out, &cols, kernel)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_response_is_kernel_stamp() {
        let mut x = Tensor::<f64>::zeros(vec![1, 5, 5]);
        x.data_mut()[12] = 1.0;
        let w: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let p = ConvParams::new(1, 1, 9, w.clone(), vec![0.0]).unwrap();
        let y = grid_conv_reference(&x, &p, &GridConv::same((3, 3))).unwrap();
        // cross-correlation: output (2 + 1 - i, 2 + 1 - j) sees the impulse at tap (i, j)
        for i in 0..3 {
            for j in 0..3 {
                let (oy, ox) = (3 - i, 3 - j);
                assert_eq!(y.data()[oy * 5 + ox], w[i * 3 + j]);
            }
        }
        assert_eq!(y.data().iter().filter(|&&v| v != 0.0).count(), 9);
    }

    #[test]
    fn zero_input_gives_bias() {
        let x = Tensor::<f64>::zeros(vec![2, 4, 4]);
        let p = ConvParams::new(2, 3, 9, vec![0.7; 54], vec![1.0, -2.0, 0.5]).unwrap();
        let y = grid_conv_reference(&x, &p, &GridConv::same((3, 3)).stride((2, 2))).unwrap();
        assert_eq!(y.shape(), &[3, 2, 2]);
        for (o, b) in [1.0, -2.0, 0.5].iter().enumerate() {
            assert!(y.channel(o).iter().all(|v| v == b));
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let geom = GridConv::new((3, 2)).stride((2, 1)).padding((1, 2)).dilation((1, 2));
        let x = Tensor::from_fn(vec![2, 6, 5], |i| ((i * 37 % 11) as f64) - 5.0);
        let (cols, _) = grid_im2col(&x, &geom).unwrap();
        let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
        let lhs: f64 = cols.data().iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = grid_col2im(&y, 2, (6, 5), &geom).unwrap();
        let rhs = x.dot(&back);
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_image_input() {
        let x = Tensor::<f64>::zeros(vec![1, 9]);
        let p = ConvParams::new(1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        assert!(grid_conv_reference(&x, &p, &GridConv::new((1, 1))).is_err());
    }
}
