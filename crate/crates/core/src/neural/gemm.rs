//! Row-major matrix products over flat slices, backed by `matrixmultiply`.

/// `c (m×n) = alpha · a · b + beta · c` where each operand is given with explicit
/// row and column strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out (rows×o) = x (rows×i) · wᵀ` with `w` stored `o×i`; adds to `out` when `accumulate`.
pub fn matmul_xwt(rows: usize, i: usize, o: usize, x: &[f64], w: &[f64], out: &mut [f64], accumulate: bool) {
    dgemm(rows, i, o, 1.0, x, i, 1, w, 1, i, if accumulate { 1.0 } else { 0.0 }, out);
}

/// `gx (rows×i) += g (rows×o) · w` with `w` stored `o×i`.
pub fn matmul_gw(rows: usize, o: usize, i: usize, g: &[f64], w: &[f64], gx: &mut [f64]) {
    dgemm(rows, o, i, 1.0, g, o, 1, w, i, 1, 1.0, gx);
}

/// `gw (o×i) += gᵀ · x` for `g` of shape `rows×o` and `x` of shape `rows×i`.
pub fn matmul_gtx(rows: usize, o: usize, i: usize, g: &[f64], x: &[f64], gw: &mut [f64]) {
    dgemm(o, rows, i, 1.0, g, 1, o, x, i, 1, 1.0, gw);
}
