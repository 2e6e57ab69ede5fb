//! Closed-form linear algebra for per-point 1x1 and 2x2 complex matrices.
//!
//! Matrices are row-major slices of length `n*n`; entry `(i, j)` at `i*n + j`
//! holds the coefficient with unbarred row index and barred column index, so
//! Hermitian forms satisfy `m[j*n+i] = conj(m[i*n+j])`.

use crate::Complex64;

/// Largest Hermitian deviation `|m[i][j] - conj(m[j][i])|` over all entries.
pub fn hermitian_defect(n: usize, m: &[Complex64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let d = (m[i * n + j] - m[j * n + i].conj()).norm();
            worst = worst.max(d);
        }
    }
    worst
}

/// Symmetrize in place: `m <- (m + m^H)/2`.
pub fn hermitize(n: usize, m: &mut [Complex64]) {
    for i in 0..n {
        m[i * n + i] = Complex64::new(m[i * n + i].re, 0.0);
        for j in (i + 1)..n {
            let avg = (m[i * n + j] + m[j * n + i].conj()) * 0.5;
            m[i * n + j] = avg;
            m[j * n + i] = avg.conj();
        }
    }
}

/// Determinant of a Hermitian matrix (real by symmetry).
pub fn det_hermitian(n: usize, m: &[Complex64]) -> f64 {
    match n {
        1 => m[0].re,
        2 => m[0].re * m[3].re - m[1].norm_sqr(),
        _ => unreachable!("n <= 2"),
    }
}

/// True when a Hermitian matrix is positive definite (Sylvester's criterion).
pub fn is_positive_definite(n: usize, m: &[Complex64]) -> bool {
    match n {
        1 => m[0].re > 0.0,
        2 => m[0].re > 0.0 && det_hermitian(2, m) > 0.0,
        _ => unreachable!("n <= 2"),
    }
}

/// Inverse of a Hermitian positive definite matrix.
pub fn invert_hermitian(n: usize, m: &[Complex64], out: &mut [Complex64]) {
    match n {
        1 => out[0] = Complex64::new(1.0 / m[0].re, 0.0),
        2 => {
            let inv_det = 1.0 / det_hermitian(2, m);
            out[0] = Complex64::new(m[3].re * inv_det, 0.0);
            out[3] = Complex64::new(m[0].re * inv_det, 0.0);
            out[1] = -m[1] * inv_det;
            out[2] = out[1].conj();
        }
        _ => unreachable!("n <= 2"),
    }
}

/// Eigenvalue range `(min, max)` of a Hermitian matrix.
pub fn eig_range_hermitian(n: usize, m: &[Complex64]) -> (f64, f64) {
    match n {
        1 => (m[0].re, m[0].re),
        2 => {
            let a = m[0].re;
            let c = m[3].re;
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + m[1].norm_sqr()).sqrt();
            (mid - rad, mid + rad)
        }
        _ => unreachable!("n <= 2"),
    }
}

/// Generalized eigenvalue range of the pencil `(A, B)` with `B` Hermitian
/// positive definite: the extremes of `v^H A v / v^H B v`. Computed through a
/// Cholesky congruence, so `A` may be indefinite.
pub fn gen_eig_range(n: usize, a: &[Complex64], b: &[Complex64]) -> (f64, f64) {
    match n {
        1 => {
            let v = a[0].re / b[0].re;
            (v, v)
        }
        2 => {
            // B = L L^H, C = L^{-1} A L^{-H}; eigenvalues of C are the pencil's.
            let l00 = b[0].re.sqrt();
            let l10 = b[2] / l00;
            let l11 = (b[3].re - l10.norm_sqr()).max(0.0).sqrt();
            let s = 1.0 / l00;
            let t = 1.0 / l11;
            let u = -l10 * (s * t);
            let alpha = a[0].re;
            let beta = a[1];
            let gamma = a[3].re;
            let c00 = s * s * alpha;
            let c01 = s * alpha * u.conj() + s * t * beta;
            let c11 = u.norm_sqr() * alpha + 2.0 * t * (u * beta).re + t * t * gamma;
            let herm = [
                Complex64::new(c00, 0.0),
                c01,
                c01.conj(),
                Complex64::new(c11, 0.0),
            ];
            eig_range_hermitian(2, &herm)
        }
        _ => unreachable!("n <= 2"),
    }
}

/// Spectral condition number of a Hermitian positive definite matrix, or
/// infinity when the matrix fails positivity.
pub fn condition_hermitian(n: usize, m: &[Complex64]) -> f64 {
    let (lo, hi) = eig_range_hermitian(n, m);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// General complex matrix product `out = a * b` for n <= 2.
pub fn mat_mul(n: usize, a: &[Complex64], b: &[Complex64], out: &mut [Complex64]) {
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::default();
            for k in 0..n {
                acc += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = acc;
        }
    }
}

/// Trace of the product `a * b` for n <= 2.
pub fn trace_mul(n: usize, a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::default();
    for i in 0..n {
        for k in 0..n {
            acc += a[i * n + k] * b[k * n + i];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_by_two_closed_forms() {
        // H = [[2, 1-i], [1+i, 3]]: det = 6 - 2 = 4, eigs = 2.5 +- sqrt(2.25).
        let h = [c(2.0, 0.0), c(1.0, -1.0), c(1.0, 1.0), c(3.0, 0.0)];
        assert!((det_hermitian(2, &h) - 4.0).abs() < 1e-14);
        let (lo, hi) = eig_range_hermitian(2, &h);
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 4.0).abs() < 1e-14);
        assert!(is_positive_definite(2, &h));

        let mut inv = [Complex64::default(); 4];
        invert_hermitian(2, &h, &mut inv);
        let mut prod = [Complex64::default(); 4];
        mat_mul(2, &h, &inv, &mut prod);
        assert!((prod[0].re - 1.0).abs() < 1e-14 && prod[1].norm() < 1e-14);
        assert!((prod[3].re - 1.0).abs() < 1e-14 && prod[2].norm() < 1e-14);
    }

    #[test]
    fn generalized_eigenvalues_scale_correctly() {
        let a = [c(2.0, 0.0), c(1.0, -1.0), c(1.0, 1.0), c(3.0, 0.0)];
        // B = 2 I: pencil eigenvalues are half the plain ones.
        let b = [c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(2.0, 0.0)];
        let (lo, hi) = gen_eig_range(2, &a, &b);
        assert!((lo - 0.5).abs() < 1e-14 && (hi - 2.0).abs() < 1e-14);
        // Indefinite A is fine.
        let neg = [c(-1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(5.0, 0.0)];
        let (lo, hi) = gen_eig_range(2, &neg, &b);
        assert!((lo + 0.5).abs() < 1e-14 && (hi - 2.5).abs() < 1e-14);
    }

    #[test]
    fn hermitize_symmetrizes() {
        let mut m = [c(1.0, 0.5), c(2.0, 1.0), c(1.0, -0.5), c(4.0, -0.25)];
        hermitize(2, &mut m);
        assert_eq!(hermitian_defect(2, &m), 0.0);
        assert_eq!(m[0].im, 0.0);
        assert!((m[1] - c(1.5, 0.75)).norm() < 1e-15);
    }
}
