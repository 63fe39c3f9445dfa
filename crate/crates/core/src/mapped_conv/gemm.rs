//! Dense matrix multiply used by the convolution passes.
//!
//! [`GemmKernel::Naive`] is the plain triple loop and serves as the oracle;
//! [`GemmKernel::Blocked`] is the default and is tested against it.

use rayon::prelude::*;

use super::column_blocks;
use crate::scalar::Scalar;

/// Which matrix-multiply routine to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GemmKernel {
    Naive,
    #[default]
    Blocked,
}

/// Whether an operand is used as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

const COL_BLOCK: usize = 512;

/// `C = op(A) * op(B)` with `C` of shape `m x n` and inner dimension `p`.
/// All matrices are row-major; `A` is stored `m x p` (or `p x m` when
/// transposed), `B` is stored `p x n` (or `n x p`). `C` is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    kernel: GemmKernel,
    op_a: Op,
    op_b: Op,
    m: usize,
    n: usize,
    p: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
) {
    assert_eq!(a.len(), m * p, "gemm: A has wrong length");
    assert_eq!(b.len(), p * n, "gemm: B has wrong length");
    assert_eq!(c.len(), m * n, "gemm: C has wrong length");
    match (kernel, op_a, op_b) {
        (GemmKernel::Naive, _, _) | (_, Op::T, Op::T) => naive(op_a, op_b, m, n, p, a, b, c),
        (GemmKernel::Blocked, Op::N, Op::N) => axpy_rows(m, n, p, |i, q| a[i * p + q], b, c),
        (GemmKernel::Blocked, Op::T, Op::N) => axpy_rows(m, n, p, |i, q| a[q * m + i], b, c),
        (GemmKernel::Blocked, Op::N, Op::T) => row_dots(m, n, p, a, b, c),
    }
}

#[allow(clippy::too_many_arguments)]
fn naive<T: Scalar>(op_a: Op, op_b: Op, m: usize, n: usize, p: usize, a: &[T], b: &[T], c: &mut [T]) {
    let at = |i: usize, q: usize| match op_a {
        Op::N => a[i * p + q],
        Op::T => a[q * m + i],
    };
    let bt = |q: usize, j: usize| match op_b {
        Op::N => b[q * n + j],
        Op::T => b[j * p + q],
    };
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for q in 0..p {
                acc += at(i, q) * bt(q, j);
            }
            c[i * n + j] = acc;
        }
    }
}

/// Column-blocked `C = A * B` for row-major `B`. Each block of `B` columns
/// is reused for every row of `C` while it is in cache; blocks are
/// independent, so the result does not depend on the thread count.
fn axpy_rows<T: Scalar>(m: usize, n: usize, p: usize, a_at: impl Fn(usize, usize) -> T + Sync, b: &[T], c: &mut [T]) {
    if n == 0 || m == 0 {
        return;
    }
    column_blocks(c, n, COL_BLOCK)
        .into_par_iter()
        .enumerate()
        .for_each(|(jb, mut rows)| {
            let j0 = jb * COL_BLOCK;
            for (i, crow) in rows.iter_mut().enumerate() {
                let j1 = j0 + crow.len();
                crow.fill(T::zero());
                for q in 0..p {
                    let av = a_at(i, q);
                    let brow = &b[q * n + j0..q * n + j1];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        });
}

/// Largest `C` for which [`row_dots`] splits the inner dimension.
const SPLIT_INNER_MAX: usize = 1 << 14;
const INNER_BLOCK: usize = 2048;

/// `C(i, j) = <A(i, :), B(j, :)>` for `B` stored `n x p`. A small `C` with a
/// long inner dimension (weight gradients) is accumulated over inner blocks
/// that fit in cache, then reduced in block order.
fn row_dots<T: Scalar>(m: usize, n: usize, p: usize, a: &[T], b: &[T], c: &mut [T]) {
    if n == 0 || m == 0 {
        return;
    }
    if m * n > SPLIT_INNER_MAX || p <= INNER_BLOCK {
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| {
            let arow = &a[i * p..(i + 1) * p];
            for (j, cv) in crow.iter_mut().enumerate() {
                let brow = &b[j * p..(j + 1) * p];
                *cv = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            }
        });
        return;
    }
    let partials: Vec<Vec<T>> = (0..p.div_ceil(INNER_BLOCK))
        .into_par_iter()
        .map(|qb| {
            let q0 = qb * INNER_BLOCK;
            let q1 = (q0 + INNER_BLOCK).min(p);
            let mut part = vec![T::zero(); m * n];
            for (j, col) in (0..n).map(|j| (j, &b[j * p + q0..j * p + q1])) {
                for i in 0..m {
                    let arow = &a[i * p + q0..i * p + q1];
                    part[i * n + j] = arow.iter().zip(col).map(|(&x, &y)| x * y).sum();
                }
            }
            part
        })
        .collect();
    c.fill(T::zero());
    for part in &partials {
        for (cv, &pv) in c.iter_mut().zip(part) {
            *cv += pv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blocked_matches_naive_for_all_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(m, n, p) in &[
            (1, 1, 1),
            (3, 5, 7),
            (10, 1100, 27),
            (4, 513, 1),
            (2, 3, 0),
            (3, 27, 5000),
        ] {
            let a: Vec<f64> = (0..m * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..p * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for op_a in [Op::N, Op::T] {
                for op_b in [Op::N, Op::T] {
                    let mut c0 = vec![f64::NAN; m * n];
                    let mut c1 = vec![f64::NAN; m * n];
                    gemm(GemmKernel::Naive, op_a, op_b, m, n, p, &a, &b, &mut c0);
                    gemm(GemmKernel::Blocked, op_a, op_b, m, n, p, &a, &b, &mut c1);
                    for (x, y) in c0.iter().zip(&c1) {
                        assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{op_a:?}{op_b:?} {x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn small_known_product() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [5.0f32, 6.0, 7.0, 8.0];
        let mut c = [0.0f32; 4];
        gemm(GemmKernel::Blocked, Op::N, Op::N, 2, 2, 2, &a, &b, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // A^T * B = [1 3; 2 4] * B = [26 30; 38 44]
        gemm(GemmKernel::Blocked, Op::T, Op::N, 2, 2, 2, &a, &b, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        // A * B^T = [1 2; 3 4] * [5 7; 6 8] = [17 23; 39 53]
        gemm(GemmKernel::Blocked, Op::N, Op::T, 2, 2, 2, &a, &b, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
