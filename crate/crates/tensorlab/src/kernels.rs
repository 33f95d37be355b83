//! Raw buffer kernels shared by the graph and by callers that only need values.

use ndarray::linalg::general_mat_mul;
use ndarray::ArrayView2;

use crate::{Real, Result, TensorError};

/// `c = a·b + beta·c` where `a` is `m×k` (or `k×m` when `trans_a`) and `b` is
/// `k×n` (or `n×k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let av = if trans_a {
        ArrayView2::from_shape((k, m), a).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).unwrap()
    };
    let bv = if trans_b {
        ArrayView2::from_shape((n, k), b).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).unwrap()
    };
    let mut cv = ndarray::ArrayViewMut2::from_shape((m, n), c).unwrap();
    general_mat_mul(T::one(), &av, &bv, beta, &mut cv);
}

/// Numerically stable softmax of every `cols`-wide row, in place.
///
/// `-inf` entries map to exactly zero. A row with no finite entry is an error.
pub fn softmax_rows_in_place<T: Real>(data: &mut [T], cols: usize) -> Result<()> {
    if cols == 0 {
        return Ok(());
    }
    for (r, row) in data.chunks_mut(cols).enumerate() {
        let max = row
            .iter()
            .copied()
            .fold(T::neg_infinity(), |m, v| if v > m { v } else { m });
        if max == T::neg_infinity() || max.is_nan() {
            return Err(TensorError::DegenerateRow { row: r });
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = if *v == T::neg_infinity() {
                T::zero()
            } else {
                (*v - max).exp()
            };
            sum += *v;
        }
        let inv = T::one() / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(())
}

pub fn softmax<T: Real>(row: &[T]) -> Result<Vec<T>> {
    let mut out = row.to_vec();
    softmax_rows_in_place(&mut out, row.len())?;
    Ok(out)
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `data` (with `shape`) into the layout given by permuting axes:
/// output axis `i` is input axis `axes[i]`.
pub fn permute<T: Real>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return out;
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    let inner = out_shape[rank - 1];
    let inner_step = step[rank - 1];
    loop {
        let mut s = src;
        for _ in 0..inner {
            out.push(data[s]);
            s += inner_step;
        }
        // advance the multi-index over all but the innermost axis
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            src += step[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            src -= step[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
}

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Sinusoidal position table of shape `len×d`.
pub fn sinusoidal_positions<T: Real>(len: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); len * d];
    for t in 0..len {
        for i in 0..d.div_ceil(2) {
            let freq = 10000f64.powf(2.0 * i as f64 / d as f64);
            let angle = t as f64 / freq;
            out[t * d + 2 * i] = T::lit(angle.sin());
            if 2 * i + 1 < d {
                out[t * d + 2 * i + 1] = T::lit(angle.cos());
            }
        }
    }
    out
}
