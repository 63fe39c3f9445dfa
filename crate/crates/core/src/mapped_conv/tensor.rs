use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Images are `(C, H, W)`, mesh signals `(C, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Parameter(format!(
                "tensor shape must be non-empty and positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim("Tensor data length", len, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); len],
        }
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: (0..len).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (channel) dimension.
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    /// Product of all dimensions after the channel dimension.
    pub fn spatial_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element type conversion, e.g. `f64` to `f32`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}

/// Kernel weights `(c_out, c_in, k)` and bias `(c_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(c_in: usize, c_out: usize, k: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        let p = Self {
            c_in,
            c_out,
            k,
            weights,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        Self {
            c_in,
            c_out,
            k,
            weights: vec![T::zero(); c_out * c_in * k],
            bias: vec![T::zero(); c_out],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.k == 0 {
            return Err(Error::Parameter(format!(
                "conv params need positive sizes, got c_in={} c_out={} k={}",
                self.c_in, self.c_out, self.k
            )));
        }
        let wl = self.c_out * self.c_in * self.k;
        if self.weights.len() != wl {
            return Err(Error::dim("ConvParams weights", wl, self.weights.len()));
        }
        if self.bias.len() != self.c_out {
            return Err(Error::dim("ConvParams bias", self.c_out, self.bias.len()));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, o: usize, c: usize, m: usize) -> T {
        self.weights[(o * self.c_in + c) * self.k + m]
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect();
        ConvParams {
            c_in: self.c_in,
            c_out: self.c_out,
            k: self.k,
            weights: conv(&self.weights),
            bias: conv(&self.bias),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
        assert!(ConvParams::<f64>::new(1, 2, 3, vec![0.0; 6], vec![0.0; 1]).is_err());
        assert!(ConvParams::<f64>::new(1, 2, 3, vec![0.0; 5], vec![0.0; 2]).is_err());
    }

    #[test]
    fn spatial_len_flattens_trailing_dims() {
        let t = Tensor::<f32>::zeros(vec![3, 4, 5]);
        assert_eq!(t.channels(), 3);
        assert_eq!(t.spatial_len(), 20);
        assert_eq!(t.channel(2).len(), 20);
    }
}
