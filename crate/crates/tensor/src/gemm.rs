use crate::Float;

fn max_offset(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn check_views(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    rsa: isize,
    csa: isize,
    b_len: usize,
    rsb: isize,
    csb: isize,
    c_len: usize,
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(
            max_offset(m, k, rsa, csa) < a_len,
            "gemm: A view out of bounds"
        );
        assert!(
            max_offset(k, n, rsb, csb) < b_len,
            "gemm: B view out of bounds"
        );
    }
    assert!(
        max_offset(m, n, rsc, csc) < c_len,
        "gemm: C view out of bounds"
    );
}

/// Row-major `c[m,n] (+)= a[m,k] * b[k,n]`, `b` optionally transposed
/// (`b_t` means `b` is stored as `[n,k]`), `a` optionally transposed
/// (`a_t` means `a` is stored as `[k,m]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(
        m,
        k,
        n,
        T::one(),
        (a, rsa, csa),
        (b, rsb, csb),
        beta,
        (c, n as isize, 1),
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive_product() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 1.0).collect(); // 3x4
        let mut c = vec![0.0; 8];
        matmul(2, 3, 4, &a, false, &b, false, &mut c, false);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        // a^T stored as [3,2]
        let at: Vec<f64> = (0..3)
            .flat_map(|p| (0..2).map(move |i| (i * 3 + p) as f64))
            .collect();
        let mut c2 = vec![0.0; 8];
        matmul(2, 3, 4, &at, true, &b, false, &mut c2, false);
        assert_eq!(c, c2);
    }
}
