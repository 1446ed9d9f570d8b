//! Row-major matrix product with a fixed accumulation order.
//!
//! Every output element is accumulated from zero over the inner dimension in
//! ascending order, with no splitting of that dimension. Results are therefore
//! bitwise identical to a naive triple loop with the same order, which the
//! convolution oracles rely on.

use crate::tensor::Scalar;

const MR: usize = 4;
const NR: usize = 8;

/// `c[m x n] = a[m x k] * b[k x n]`, overwriting `c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            c[i * ldc..i * ldc + n].fill(T::zero());
        }
        return;
    }
    debug_assert!(a.len() >= (m - 1) * lda + k);
    debug_assert!(k == 0 || b.len() >= (k - 1) * ldb + n);
    debug_assert!(c.len() >= (m - 1) * ldc + n);

    let mut i = 0;
    while i < m {
        let mr = MR.min(m - i);
        let mut j = 0;
        while j < n {
            let nr = NR.min(n - j);
            if mr == MR && nr == NR {
                tile_full(
                    k,
                    &a[i * lda..],
                    lda,
                    &b[j..],
                    ldb,
                    &mut c[i * ldc + j..],
                    ldc,
                );
            } else {
                tile_edge(
                    mr,
                    nr,
                    k,
                    &a[i * lda..],
                    lda,
                    &b[j..],
                    ldb,
                    &mut c[i * ldc + j..],
                    ldc,
                );
            }
            j += NR;
        }
        i += MR;
    }
}

#[inline(always)]
fn tile_full<T: Scalar>(
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    let mut acc = [[T::zero(); NR]; MR];
    for p in 0..k {
        let brow: &[T; NR] = b[p * ldb..p * ldb + NR].try_into().unwrap();
        for (r, row) in acc.iter_mut().enumerate() {
            let av = a[r * lda + p];
            for q in 0..NR {
                row[q] += av * brow[q];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[r * ldc..r * ldc + NR].copy_from_slice(row);
    }
}

#[allow(clippy::too_many_arguments)]
fn tile_edge<T: Scalar>(
    mr: usize,
    nr: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    let mut acc = [[T::zero(); NR]; MR];
    for p in 0..k {
        let brow = &b[p * ldb..p * ldb + nr];
        for (r, row) in acc.iter_mut().enumerate().take(mr) {
            let av = a[r * lda + p];
            for (q, &bv) in brow.iter().enumerate() {
                row[q] += av * bv;
            }
        }
    }
    for (r, row) in acc.iter().enumerate().take(mr) {
        c[r * ldc..r * ldc + nr].copy_from_slice(&row[..nr]);
    }
}

/// Row-major transpose of an `rows x cols` matrix.
pub fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}
