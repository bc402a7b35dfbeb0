//! Dense linear solve used by the Newton steps of the null-model fit.

use alloc::vec::Vec;

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is row-major `m x m`; on success `b` holds `x`. Returns `false` for
/// a numerically singular matrix.
pub(crate) fn solve_in_place(a: &mut [f64], b: &mut [f64]) -> bool {
    let m = b.len();
    debug_assert_eq!(a.len(), m * m);
    for col in 0..m {
        let mut piv = col;
        let mut best = a[col * m + col].abs();
        for r in col + 1..m {
            let v = a[r * m + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if !(best > 0.0) || !best.is_finite() {
            return false;
        }
        if piv != col {
            for k in 0..m {
                a.swap(col * m + k, piv * m + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * m + col];
        for r in col + 1..m {
            let f = a[r * m + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..m {
                a[r * m + k] -= f * a[col * m + k];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..m).rev() {
        let mut acc = b[col];
        for k in col + 1..m {
            acc -= a[col * m + k] * b[k];
        }
        b[col] = acc / a[col * m + col];
    }
    b.iter().all(|v| v.is_finite())
}

/// `m x m` zero matrix.
pub(crate) fn zeros(m: usize) -> Vec<f64> {
    alloc::vec![0.0; m * m]
}
