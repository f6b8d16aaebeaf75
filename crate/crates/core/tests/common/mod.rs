#![allow(dead_code)]

use auxsysid::linalg::spectral_radius;
use auxsysid::SystemModel;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random system whose A has spectral radius exactly `rho`.
pub fn stable_system(rng: &mut impl Rng, n: usize, p: usize, rho: f64) -> SystemModel<f64> {
    let mut a = gaussian_matrix(rng, n, n);
    let r = spectral_radius(&a).unwrap();
    if r > 0.0 {
        a *= rho / r;
    }
    SystemModel::new(a, gaussian_matrix(rng, n, p)).unwrap()
}

/// Same dimensions, every entry of [A B] nudged by N(0, scale²).
pub fn perturb(rng: &mut impl Rng, model: &SystemModel<f64>, scale: f64) -> SystemModel<f64> {
    let (n, p) = (model.state_dim(), model.input_dim());
    SystemModel::new(
        model.a() + gaussian_matrix(rng, n, n) * scale,
        model.b() + gaussian_matrix(rng, n, p) * scale,
    )
    .unwrap()
}

/// Random symmetric positive definite matrix `G Gᵀ + shift·I`.
pub fn spd(rng: &mut impl Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n);
    &g * g.transpose() + DMatrix::identity(n, n) * shift
}

/// Characteristic polynomial coefficients `c_0..c_n` of `det(xI − M)`
/// (monic, `c_n = 1`) by the Faddeev–LeVerrier recursion.
pub fn char_poly(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut mk = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        mk = m * &mk + DMatrix::identity(n, n) * coeffs[n - k + 1];
        coeffs[n - k] = -(m * &mk).trace() / k as f64;
    }
    coeffs
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Smallest eigenvalue of a symmetric positive semidefinite matrix: scan
/// for the first sign change of the characteristic polynomial, then bisect.
pub fn min_eigen_by_char_poly(m: &DMatrix<f64>) -> f64 {
    let coeffs = char_poly(m);
    let n = m.nrows();
    let upper = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
        + 1.0;
    let steps = 200_000;
    let h = upper / steps as f64;
    let mut lo = -1e-9 * upper;
    let sign0 = poly_eval(&coeffs, lo).signum();
    let mut hi = lo;
    for i in 1..=steps {
        let x = i as f64 * h;
        if poly_eval(&coeffs, x).signum() != sign0 {
            hi = x;
            break;
        }
        lo = x;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if poly_eval(&coeffs, mid).signum() == sign0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn lu_det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a = m.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        if pivot != col {
            a.swap_rows(pivot, col);
            det = -det;
        }
        let p = a[(col, col)];
        det *= p;
        for r in col + 1..n {
            let f = a[(r, col)] / p;
            for c in col..n {
                a[(r, c)] -= f * a[(col, c)];
            }
        }
    }
    det
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        a.swap_rows(pivot, col);
        inv.swap_rows(pivot, col);
        let p = a[(col, col)];
        for c in 0..n {
            a[(col, c)] /= p;
            inv[(col, c)] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[(r, col)];
                for c in 0..n {
                    a[(r, c)] -= f * a[(col, c)];
                    inv[(r, c)] -= f * inv[(col, c)];
                }
            }
        }
    }
    inv
}

/// Spectral norm by power iteration on `MᵀM`.
pub fn power_norm(m: &DMatrix<f64>) -> f64 {
    let mtm = m.transpose() * m;
    let mut v = nalgebra::DVector::from_fn(m.ncols(), |i, _| 1.0 + 0.1 * i as f64);
    let mut est = 0.0;
    for _ in 0..5000 {
        let w = &mtm * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        est = norm;
    }
    est.sqrt()
}

/// The true and auxiliary reference systems, written out entry by entry.
pub fn reference_matrices(b_shift: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(3, 3, &[0.6, 0.5, 0.4, 0.0, 0.5, 0.4, 0.0, 0.0, 0.4]);
    let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.5, 1.0, 0.5, 0.5]);
    let a_hat = DMatrix::from_row_slice(3, 3, &[0.7, 0.5, 0.4, 0.0, 0.5, 0.4, 0.0, 0.0, 0.4]);
    let b_hat = DMatrix::from_row_slice(3, 2, &[1.0 + b_shift, 0.5, 0.5, 1.0, 0.5, 0.5]);
    (a, b, a_hat, b_hat)
}

/// Smallest eigenvalue of an SPD matrix by power iteration on its
/// Gauss–Jordan inverse, read off a Rayleigh quotient.
pub fn min_eigen_inverse_power(m: &DMatrix<f64>) -> f64 {
    let inv = gauss_jordan_inverse(m);
    let mut v = nalgebra::DVector::from_fn(m.ncols(), |i, _| 1.0 + 0.37 * i as f64);
    v /= v.norm();
    for _ in 0..20000 {
        let w = &inv * &v;
        v = &w / w.norm();
    }
    1.0 / (v.transpose() * &inv * &v)[(0, 0)]
}
