//! Dense linear reduction R* = U (AᵀΣ⁻¹A)⁻ AᵀΣ⁻¹ and the estimability test.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::ReductionConfig;
use crate::error::{Error, Result};

/// Σ⁻¹ for a symmetric PSD Σ. When Σ is singular (smallest eigenvalue at or
/// below `tol` times the largest) λI is added first, with λ = tol·λ_max plus
/// whatever rounding pushed below zero; an all-zero Σ is treated as the
/// identity (ordinary least squares).
pub fn regularized_inverse(sigma: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(Error::DimensionMismatch {
            context: "covariance inverse",
            expected: "square matrix".into(),
            got: format!("{}x{}", sigma.nrows(), sigma.ncols()),
        });
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context: "covariance inverse",
            detail: "non-finite entry".into(),
        });
    }
    let dim = sigma.nrows();
    let sym = (sigma + sigma.transpose()) * 0.5;
    if sym.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::identity(dim, dim));
    }
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if max <= 0.0 {
        return Err(Error::Numeric {
            context: "covariance inverse",
            detail: format!("no positive eigenvalue (largest {max:e})"),
        });
    }
    let lambda = if min > tol * max { 0.0 } else { tol * max - min.min(0.0) };
    let inv = eig.eigenvalues.map(|l| 1.0 / (l + lambda));
    let v = &eig.eigenvectors;
    let m = v * DMatrix::from_diagonal(&inv) * v.transpose();
    Ok((&m + m.transpose()) * 0.5)
}

/// SVD pseudoinverse with singular values below `tol · σ_max` dropped.
pub fn pinv(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context: "pseudoinverse",
            detail: "non-finite entry".into(),
        });
    }
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.max();
    if max <= 0.0 {
        return Err(Error::DegenerateModel);
    }
    svd.pseudo_inverse(tol * max).map_err(|e| Error::Numeric {
        context: "pseudoinverse",
        detail: e.to_string(),
    })
}

/// Result of a dense linear reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReduction {
    pub operator: DMatrix<f64>,
    pub estimate: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub worst_case_mse: f64,
}

/// (R*, Σ_{R*ξ}) without applying to data.
pub fn reduction_operator(
    a: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    u: &DMatrix<f64>,
    cfg: &ReductionConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if sigma.nrows() != a.nrows() || u.ncols() != a.ncols() {
        return Err(Error::DimensionMismatch {
            context: "linear reduction",
            expected: format!("Σ {0}x{0}, U ?x{1}", a.nrows(), a.ncols()),
            got: format!("Σ {}x{}, U {}x{}", sigma.nrows(), sigma.ncols(), u.nrows(), u.ncols()),
        });
    }
    let w = regularized_inverse(sigma, cfg.pinv_tolerance)?;
    let atw = a.transpose() * &w;
    let fisher = &atw * a;
    let f_inv = pinv(&fisher, cfg.pinv_tolerance)?;
    let operator = u * &f_inv * atw;
    let cov = u * f_inv * u.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((operator, cov))
}

pub fn linear_reduction(
    xi: &DVector<f64>,
    a: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    u: &DMatrix<f64>,
    cfg: &ReductionConfig,
) -> Result<LinearReduction> {
    if xi.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            context: "linear reduction data",
            expected: a.nrows().to_string(),
            got: xi.len().to_string(),
        });
    }
    let (operator, covariance) = reduction_operator(a, sigma, u, cfg)?;
    Ok(LinearReduction {
        estimate: &operator * xi,
        worst_case_mse: covariance.trace(),
        operator,
        covariance,
    })
}

/// Outcome of the rank condition U(I − A⁻A) = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimability {
    pub estimable: bool,
    /// ‖U(I − A⁻A)‖_F, or a lower bound on it when `exact` is false.
    pub residual: f64,
    pub exact: bool,
}

pub fn estimability_check(a: &DMatrix<f64>, u: &DMatrix<f64>, cfg: &ReductionConfig) -> Result<Estimability> {
    if u.ncols() != a.ncols() {
        return Err(Error::DimensionMismatch {
            context: "estimability check",
            expected: a.ncols().to_string(),
            got: u.ncols().to_string(),
        });
    }
    let n = a.ncols();
    let proj = match pinv(a, cfg.pinv_tolerance) {
        Ok(a_pinv) => DMatrix::identity(n, n) - a_pinv * a,
        Err(Error::DegenerateModel) => DMatrix::identity(n, n),
        Err(e) => return Err(e),
    };
    let residual = (u * proj).norm();
    Ok(Estimability {
        estimable: residual <= cfg.estimability_tol * u.norm(),
        residual,
        exact: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> ReductionConfig {
        ReductionConfig::default()
    }

    #[test]
    fn identity_model_returns_data() {
        let i = DMatrix::<f64>::identity(3, 3);
        let xi = DVector::from_vec(vec![0.2, -1.0, 4.0]);
        let r = linear_reduction(&xi, &i, &(&i * 0.5), &i, &cfg()).unwrap();
        for (a, b) in r.estimate.iter().zip(xi.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert_relative_eq!(r.worst_case_mse, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn two_blocks_average() {
        let i = DMatrix::<f64>::identity(2, 2);
        let mut a = DMatrix::zeros(4, 2);
        a.view_mut((0, 0), (2, 2)).copy_from(&i);
        a.view_mut((2, 0), (2, 2)).copy_from(&i);
        let xi = DVector::from_vec(vec![1.0, 2.0, 3.0, 6.0]);
        let r = linear_reduction(&xi, &a, &DMatrix::identity(4, 4), &i, &cfg()).unwrap();
        assert_relative_eq!(r.estimate[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.estimate[1], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_model_is_degenerate() {
        let a = DMatrix::zeros(3, 2);
        let r = linear_reduction(
            &DVector::zeros(3),
            &a,
            &DMatrix::identity(3, 3),
            &DMatrix::identity(2, 2),
            &cfg(),
        );
        assert!(matches!(r, Err(Error::DegenerateModel)));
    }

    #[test]
    fn singular_noise_is_regularised() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let w = regularized_inverse(&sigma, 1e-6).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        let zero = regularized_inverse(&DMatrix::zeros(2, 2), 1e-6).unwrap();
        assert_eq!(zero, DMatrix::identity(2, 2));
    }

    #[test]
    fn estimability_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let u = DMatrix::identity(2, 2);
        let e = estimability_check(&a, &u, &cfg()).unwrap();
        assert!(!e.estimable);
        assert_relative_eq!(e.residual, 1.0, epsilon = 1e-12);
        let full = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]);
        let e = estimability_check(&full, &u, &cfg()).unwrap();
        assert!(e.estimable && e.residual < 1e-12);
        // U that ignores the unmeasured coordinate
        let u1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(estimability_check(&a, &u1, &cfg()).unwrap().estimable);
    }
}
