//! Dense row-major kernels.
//!
//! Every kernel computes each output row with a fixed, sequential reduction
//! order. The `parallel` feature only distributes whole output rows across
//! threads, so results are bit-identical with or without it.

/// Below this many multiply-adds the parallel kernels run inline.
pub const PARALLEL_THRESHOLD: usize = 1 << 15;

/// `out[i, :] = sum_k a[i, k] * b[k, :]` for one output row.
#[inline]
fn gemm_row(row: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    for (kk, &aik) in row.iter().enumerate() {
        if aik == 0.0 {
            continue;
        }
        let brow = &b[kk * n..(kk + 1) * n];
        for (o, &bv) in out.iter_mut().zip(brow) {
            *o += aik * bv;
        }
    }
}

pub mod sequential {
    /// Row-major `a[m×k] · b[k×n]`.
    pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        let mut out = vec![0.0; m * n];
        if n == 0 {
            return out;
        }
        for (i, orow) in out.chunks_mut(n).enumerate() {
            super::gemm_row(&a[i * k..(i + 1) * k], b, n, orow);
        }
        out
    }
}

#[cfg(feature = "parallel")]
pub mod parallel {
    use rayon::prelude::*;

    /// Row-parallel `a[m×k] · b[k×n]`; same per-row arithmetic as the
    /// sequential kernel.
    pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        let mut out = vec![0.0; m * n];
        if n == 0 {
            return out;
        }
        out.par_chunks_mut(n).enumerate().for_each(|(i, orow)| {
            super::gemm_row(&a[i * k..(i + 1) * k], b, n, orow);
        });
        out
    }
}

/// Dispatching matrix product. Uses the row-parallel kernel for large
/// problems when the `parallel` feature is enabled.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        if m > 1 && m * k * n >= PARALLEL_THRESHOLD {
            return parallel::gemm(m, k, n, a, b);
        }
    }
    sequential::gemm(m, k, n, a, b)
}

/// Transpose of a row-major `rows×cols` matrix.
pub fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Dot product with a left-to-right accumulation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}
