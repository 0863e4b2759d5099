// Small dense kernels. Accumulation order is fixed so results are
// bit-reproducible across runs.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let j = 4 * i;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for j in 4 * chunks..n {
        s += a[j] * b[j];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out += M x` for a column-major `rows x cols` matrix.
#[inline]
pub fn gemv_colmajor_acc(m: &[f64], rows: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * x.len());
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            axpy(xj, &m[j * rows..(j + 1) * rows], out);
        }
    }
}

/// `out[j] = M[:, j] . v` for a column-major matrix (i.e. `out = M^T v`).
#[inline]
pub fn gemv_t_colmajor(m: &[f64], rows: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * out.len());
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(&m[j * rows..(j + 1) * rows], v);
    }
}

/// `M += v x^T` for a column-major matrix.
#[inline]
pub fn outer_acc_colmajor(m: &mut [f64], rows: usize, v: &[f64], x: &[f64]) {
    debug_assert_eq!(m.len(), rows * x.len());
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            axpy(xj, v, &mut m[j * rows..(j + 1) * rows]);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn colmajor_products_agree() {
        // 2x3 matrix [[1,2,3],[4,5,6]] stored by columns.
        let m = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut out = [0.0; 2];
        gemv_colmajor_acc(&m, 2, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-2.0, -2.0]);
        let mut t = [0.0; 3];
        gemv_t_colmajor(&m, 2, &[1.0, 1.0], &mut t);
        assert_eq!(t, [5.0, 7.0, 9.0]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
