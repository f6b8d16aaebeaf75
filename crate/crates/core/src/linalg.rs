//! Dense kernels on small matrices: norms, eigenvalues, SPD factorization.
//!
//! Everything here works on `nalgebra::DMatrix` and validates finiteness and
//! shape up front, so callers get an [`Error`] instead of a NaN-laden result.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Matrix<T> = DMatrix<T>;

/// Largest relative asymmetry silently removed by [`symmetrize`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Condition estimate above which an SPD solve is refused.
pub const CONDITION_LIMIT: f64 = 1e14;

pub fn ensure_finite<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains non-finite entries")))
    }
}

fn ensure_square<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::dim(
            what,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ))
    }
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> Result<T> {
    ensure_finite(m, "spectral_norm input")?;
    if m.is_empty() {
        return Ok(T::zero());
    }
    let sv = m.clone().singular_values();
    Ok(sv.iter().fold(T::zero(), |acc, &s| acc.max(s)))
}

pub fn frobenius_norm<T: Real>(m: &DMatrix<T>) -> T {
    m.norm()
}

/// Largest eigenvalue modulus, from the real Schur form.
pub fn spectral_radius<T: Real>(m: &DMatrix<T>) -> Result<T> {
    ensure_square(m, "spectral_radius")?;
    ensure_finite(m, "spectral_radius input")?;
    if m.is_empty() {
        return Ok(T::zero());
    }
    let eig = m.clone().complex_eigenvalues();
    Ok(eig
        .iter()
        .fold(T::zero(), |acc, z| acc.max((z.re * z.re + z.im * z.im).sqrt())))
}

fn symmetry_tolerance<T: Real>() -> T {
    T::lit(SYMMETRY_TOLERANCE).max(T::lit(100.0) * T::eps())
}

/// Average `m` with its transpose, rejecting matrices whose asymmetry exceeds
/// [`SYMMETRY_TOLERANCE`] relative to the largest entry.
pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    ensure_square(m, "symmetric matrix")?;
    ensure_finite(m, "symmetric matrix")?;
    let scale = m.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    let mut asym = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > symmetry_tolerance::<T>() * scale {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:.3e}, scale {scale:.3e})"
        )));
    }
    Ok((m + m.transpose()) * T::lit(0.5))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues<T: Real>(m: &DMatrix<T>) -> Result<DVector<T>> {
    let s = symmetrize(m)?;
    let mut vals: Vec<T> = s.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(DVector::from_vec(vals))
}

pub fn min_eigenvalue_sym<T: Real>(m: &DMatrix<T>) -> Result<T> {
    let vals = symmetric_eigenvalues(m)?;
    vals.iter()
        .copied()
        .next()
        .ok_or_else(|| Error::invalid("empty matrix has no eigenvalues"))
}

pub fn max_eigenvalue_sym<T: Real>(m: &DMatrix<T>) -> Result<T> {
    let vals = symmetric_eigenvalues(m)?;
    vals.iter()
        .copied()
        .last()
        .ok_or_else(|| Error::invalid("empty matrix has no eigenvalues"))
}

/// Log-determinant of a symmetric positive definite matrix via Cholesky.
pub fn logdet_spd<T: Real>(m: &DMatrix<T>) -> Result<T> {
    let s = symmetrize(m)?;
    let chol = Cholesky::new(s).ok_or_else(|| Error::Singular {
        matrix: "logdet_spd input".into(),
        condition: f64::INFINITY,
        hint: "matrix is not positive definite".into(),
    })?;
    let l = chol.l_dirty();
    let two = T::lit(2.0);
    Ok((0..l.nrows()).fold(T::zero(), |acc, i| acc + two * l[(i, i)].ln()))
}

/// Cholesky factor of an SPD matrix that passed the conditioning guard.
pub struct SpdFactor<T: Real> {
    matrix: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
    condition: T,
}

impl<T: Real> SpdFactor<T> {
    /// Factor `m`, naming it `name` in any singularity error.
    pub fn new(m: &DMatrix<T>, name: &str) -> Result<Self> {
        let matrix = symmetrize(m)?;
        let vals = symmetric_eigenvalues(&matrix)?;
        let (lo, hi) = match (vals.iter().next(), vals.iter().last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => return Err(Error::invalid(format!("{name} is empty"))),
        };
        let condition = if lo <= T::zero() {
            T::max_value().unwrap_or_else(|| T::lit(f64::MAX))
        } else {
            hi / lo
        };
        let singular = |condition: f64| Error::Singular {
            matrix: name.to_string(),
            condition,
            hint: "add regularization or more exciting data".into(),
        };
        if lo <= T::zero() || condition > T::lit(CONDITION_LIMIT) {
            return Err(singular(condition.as_f64()));
        }
        let chol = Cholesky::new(matrix.clone()).ok_or_else(|| singular(condition.as_f64()))?;
        Ok(Self {
            matrix,
            chol,
            condition,
        })
    }

    /// Ratio of extreme eigenvalues.
    pub fn condition(&self) -> T {
        self.condition
    }

    /// Solve `m * S = rhs` with one step of iterative refinement.
    pub fn solve(&self, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
        if rhs.nrows() != self.matrix.nrows() {
            return Err(Error::dim(
                "solve_spd right-hand side",
                format!("{} rows", self.matrix.nrows()),
                format!("{} rows", rhs.nrows()),
            ));
        }
        ensure_finite(rhs, "solve_spd right-hand side")?;
        let mut sol = self.chol.solve(rhs);
        let residual = rhs - &self.matrix * &sol;
        sol += self.chol.solve(&residual);
        Ok(sol)
    }
}

pub fn solve_spd<T: Real>(m: &DMatrix<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    SpdFactor::new(m, "matrix")?.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_norm_basics() {
        assert_relative_eq!(
            spectral_norm(&DMatrix::<f64>::identity(3, 3)).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0]));
        assert_relative_eq!(spectral_norm(&d).unwrap(), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn spectral_norm_of_model_difference() {
        let mut delta = DMatrix::<f64>::zeros(3, 5);
        delta[(0, 0)] = 0.1;
        delta[(0, 3)] = 0.1;
        assert!((spectral_norm(&delta).unwrap() - 0.1414).abs() < 1e-4);
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = DMatrix::<f64>::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(spectral_norm(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn spectral_radius_cases() {
        assert_eq!(spectral_radius(&DMatrix::<f64>::zeros(3, 3)).unwrap(), 0.0);
        let a = DMatrix::from_row_slice(3, 3, &[0.6, 0.5, 0.4, 0.0, 0.5, 0.4, 0.0, 0.0, 0.4]);
        assert_relative_eq!(spectral_radius(&a).unwrap(), 0.6, epsilon = 1e-12);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 1.0, epsilon = 1e-12);
        let rect = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(spectral_radius(&rect), Err(Error::Dimension { .. })));
    }

    #[test]
    fn symmetric_eigen_cases() {
        assert_relative_eq!(min_eigenvalue_sym(&DMatrix::<f64>::identity(4, 4)).unwrap(), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]));
        assert_relative_eq!(min_eigenvalue_sym(&d).unwrap(), 2.0, epsilon = 1e-14);
        assert_relative_eq!(max_eigenvalue_sym(&d).unwrap(), 5.0, epsilon = 1e-14);
    }

    #[test]
    fn asymmetry_beyond_tolerance_is_an_error() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(min_eigenvalue_sym(&m), Err(Error::InvalidInput(_))));
        // Rounding-level asymmetry is absorbed.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-13, 1.0]);
        assert!(min_eigenvalue_sym(&m).is_ok());
    }

    #[test]
    fn logdet_cases() {
        assert_eq!(logdet_spd(&DMatrix::<f64>::identity(3, 3)).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![e, e * e]));
        assert_relative_eq!(logdet_spd(&d).unwrap(), 3.0, epsilon = 1e-13);
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(logdet_spd(&neg), Err(Error::Singular { .. })));
    }

    #[test]
    fn solve_cases() {
        let rhs = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = solve_spd(&DMatrix::identity(3, 3), &rhs).unwrap();
        assert_relative_eq!(s, rhs, epsilon = 1e-15);

        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let s = solve_spd(&m, &DMatrix::from_column_slice(2, 1, &[2.0, 4.0])).unwrap();
        assert_relative_eq!(s, DMatrix::from_column_slice(2, 1, &[1.0, 1.0]), epsilon = 1e-15);
    }

    #[test]
    fn solve_guards_conditioning() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-15]));
        let err = SpdFactor::new(&m, "ZQZ'").err().unwrap();
        match err {
            Error::Singular { matrix, condition, .. } => {
                assert_eq!(matrix, "ZQZ'");
                assert!(condition > CONDITION_LIMIT);
            }
            other => panic!("unexpected {other:?}"),
        }
        let rank1 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(solve_spd(&rank1, &DMatrix::identity(2, 2)).is_err());
        let rhs = DMatrix::<f64>::zeros(3, 1);
        assert!(matches!(
            solve_spd(&DMatrix::identity(2, 2), &rhs),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0f32, 4.0]));
        assert!((spectral_norm(&d).unwrap() - 4.0).abs() < 1e-6);
        assert!((min_eigenvalue_sym(&d).unwrap() - 3.0).abs() < 1e-6);
        assert!((logdet_spd(&d).unwrap() - 12.0f32.ln()).abs() < 1e-5);
    }
}
