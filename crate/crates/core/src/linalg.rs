//! Small dense kernels used by the network code.
//!
//! All loops have a fixed evaluation order so results are bit-reproducible
//! run to run. Inner loops are written as independent element updates
//! (never a single accumulation chain) so the compiler can vectorize them
//! without reassociating floating-point sums.

/// Dot product with four fixed partial sums, combined as
/// `((s0 + s1) + (s2 + s3)) + tail`.
#[inline]
pub fn dot4(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// `y = W x + b` where `w` is row-major `out x in`.
#[inline]
pub fn affine_into(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let in_dim = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        *yo = b[o] + dot4(&w[o * in_dim..(o + 1) * in_dim], x);
    }
}

/// `g_in += W^T g_out` where `w` is row-major `out x in`.
#[inline]
pub fn matvec_t_accum(w: &[f64], g_out: &[f64], g_in: &mut [f64]) {
    let in_dim = g_in.len();
    for (o, go) in g_out.iter().enumerate() {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        for k in 0..in_dim {
            g_in[k] += row[k] * go;
        }
    }
}

/// Rank-one update `dW += g_out x^T` on a row-major `out x in` buffer,
/// plus `db += g_out`.
#[inline]
pub fn outer_accum(g_out: &[f64], x: &[f64], dw: &mut [f64], db: &mut [f64]) {
    let in_dim = x.len();
    for (o, go) in g_out.iter().enumerate() {
        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
        for k in 0..in_dim {
            row[k] += go * x[k];
        }
        db[o] += go;
    }
}

/// `C = A B` with `A: m x k`, `B: k x n`, `C: m x n`, all row-major.
pub fn gemm_nn(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.fill(0.0);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, ap) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += ap * b_row[j];
            }
        }
    }
}

/// `C += A^T B` with `A: m x k`, `B: m x n`, `C: k x n`, all row-major.
pub fn gemm_tn_accum(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, ap) in a_row.iter().enumerate() {
            let c_row = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += ap * b_row[j];
            }
        }
    }
}

/// Column sums of a row-major `m x n` matrix, accumulated into `out`.
#[inline]
pub fn colsum_accum(a: &[f64], m: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(out.len(), n);
    for i in 0..m {
        let row = &a[i * n..(i + 1) * n];
        for j in 0..n {
            out[j] += row[j];
        }
    }
}

/// Row-major transpose of an `m x n` matrix into an `n x m` buffer.
pub fn transpose_into(a: &[f64], m: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
}
