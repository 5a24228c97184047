//! Measurement reduction: linear unbiased estimation of U g from ξ, box
//! refinement, sparsity thresholding and the final projection.

mod linear;
mod plan;
mod project;
mod transform;

use nalgebra::{DMatrix, DVector};

pub use linear::{
    estimability_check, linear_reduction, pinv, reduction_operator, regularized_inverse, Estimability,
    LinearReduction,
};
pub use plan::{model_estimability, reduce_with_sparsity, ReductionOutcome, ReductionPlan, DENSE_PIXEL_LIMIT};
pub use project::{box_qp, clamp_unit, kkt_residual, mahalanobis_project, Projection};
pub use transform::{
    dct_forward, dct_inverse, dct_matrix, dct_variances, haar_forward, haar_inverse, haar_variances,
    threshold_components, Transform,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionConfig {
    pub tau: f64,
    pub transform: Transform,
    /// Relative singular-value cutoff for pseudoinverses and the
    /// regularisation level of singular covariances.
    pub pinv_tolerance: f64,
    /// Estimable when ‖U(I − A⁻A)‖_F ≤ this times ‖U‖_F.
    pub estimability_tol: f64,
    /// Max-norm change between fixed-point iterates that counts as converged.
    pub fixed_point_tol: f64,
    pub max_fixed_point_iters: usize,
    /// KKT residual bound of the box QP.
    pub qp_tol: f64,
    pub qp_max_iters: usize,
    /// Damping applied once the fixed-point residual stops decreasing.
    pub relaxation: Option<f64>,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            tau: 0.0,
            transform: Transform::Haar,
            pinv_tolerance: 1e-10,
            estimability_tol: 1e-8,
            fixed_point_tol: 1e-10,
            max_fixed_point_iters: 200,
            qp_tol: 1e-8,
            qp_max_iters: 500,
            relaxation: None,
        }
    }
}

impl ReductionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::param(format!("tau must be finite and >= 0, got {}", self.tau)));
        }
        for (name, v) in [
            ("pinv_tolerance", self.pinv_tolerance),
            ("estimability_tol", self.estimability_tol),
            ("fixed_point_tol", self.fixed_point_tol),
            ("qp_tol", self.qp_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.max_fixed_point_iters == 0 || self.qp_max_iters == 0 {
            return Err(Error::param("iteration caps must be >= 1"));
        }
        if let Some(w) = self.relaxation {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::param(format!("relaxation must lie in (0, 1], got {w}")));
            }
        }
        Ok(())
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        Self { tau, ..*self }
    }
}

/// Σ_{R*ξ}, dense or (for the structured path) diagonal.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimateCovariance {
    Dense(DMatrix<f64>),
    Diagonal(Vec<f64>),
}

impl EstimateCovariance {
    pub fn dim(&self) -> usize {
        match self {
            EstimateCovariance::Dense(m) => m.nrows(),
            EstimateCovariance::Diagonal(d) => d.len(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            EstimateCovariance::Dense(m) => m.diagonal().iter().copied().collect(),
            EstimateCovariance::Diagonal(d) => d.clone(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            EstimateCovariance::Dense(m) => m.clone(),
            EstimateCovariance::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
        }
    }
}

/// Result of the constrained fixed-point refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub estimate: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm change of the last iteration.
    pub residual: f64,
}

/// Iterates `map` from `start` until successive iterates differ by less than
/// the tolerance. With `relaxation` set, the update is damped once the last
/// five residuals stop strictly decreasing.
pub(crate) fn fixed_point<F>(start: Vec<f64>, map: F, cfg: &ReductionConfig) -> Result<Refinement>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut v = start;
    let mut history: Vec<f64> = Vec::new();
    let mut omega = 1.0;
    let mut residual = f64::INFINITY;
    for k in 1..=cfg.max_fixed_point_iters {
        let mut next = map(&v)?;
        if omega < 1.0 {
            for (n, old) in next.iter_mut().zip(&v) {
                *n = old + omega * (*n - old);
            }
        }
        residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual < cfg.fixed_point_tol {
            return Ok(Refinement {
                estimate: v,
                iterations: k,
                converged: true,
                residual,
            });
        }
        history.push(residual);
        if let (Some(w), true) = (cfg.relaxation, omega == 1.0) {
            let tail = &history[history.len().saturating_sub(5)..];
            if tail.len() == 5 && tail.windows(2).any(|p| p[1] >= p[0]) {
                omega = w;
            }
        }
    }
    Ok(Refinement {
        estimate: v,
        iterations: cfg.max_fixed_point_iters,
        converged: false,
        residual,
    })
}

/// R̃ for the stacked device (A; U) with noise diag(Σ_ν, Σ_{R*ξ}), split
/// into the parts acting on ξ and on the prior estimate.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StackedOperator {
    pub from_data: DMatrix<f64>,
    pub from_prior: DMatrix<f64>,
}

pub(crate) fn stacked_operator(
    a: &DMatrix<f64>,
    w_nu: &DMatrix<f64>,
    u: &DMatrix<f64>,
    w_r: &DMatrix<f64>,
    cfg: &ReductionConfig,
) -> Result<StackedOperator> {
    let atw = a.transpose() * w_nu;
    let utw = u.transpose() * w_r;
    let fisher = &atw * a + &utw * u;
    let f_inv = pinv(&fisher, cfg.pinv_tolerance)?;
    let left = u * f_inv;
    Ok(StackedOperator {
        from_data: &left * atw,
        from_prior: left * utw,
    })
}

/// û = Π(R̃ (ξ, û)) by fixed-point iteration from Π(R*ξ).
pub fn refine_with_constraints(
    xi: &DVector<f64>,
    a: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    u: &DMatrix<f64>,
    sigma_r: &DMatrix<f64>,
    cfg: &ReductionConfig,
) -> Result<Refinement> {
    cfg.validate()?;
    let lin = linear_reduction(xi, a, sigma, u, cfg)?;
    let w_nu = regularized_inverse(sigma, cfg.pinv_tolerance)?;
    let w_r = regularized_inverse(sigma_r, cfg.pinv_tolerance)?;
    let stacked = stacked_operator(a, &w_nu, u, &w_r, cfg)?;
    let w_r = project::normalized_metric(w_r);
    let r0 = &stacked.from_data * xi;
    let start = box_qp(&w_r, &lin.estimate, cfg.qp_tol, cfg.qp_max_iters)?.point;
    fixed_point(
        start.as_slice().to_vec(),
        |v| {
            let target = &r0 + &stacked.from_prior * DVector::from_column_slice(v);
            Ok(box_qp(&w_r, &target, cfg.qp_tol, cfg.qp_max_iters)?.point.as_slice().to_vec())
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn config_validation() {
        assert!(ReductionConfig::default().validate().is_ok());
        assert!(ReductionConfig::default().with_tau(-1.0).validate().is_err());
        let bad = ReductionConfig {
            qp_tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ReductionConfig {
            relaxation: Some(1.5),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scalar_toy_clamps_to_one() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let r = refine_with_constraints(
            &DVector::from_element(1, 2.0),
            &one,
            &one,
            &one,
            &one,
            &ReductionConfig::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.estimate[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn interior_estimate_is_immediate_fixed_point() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.1, 1.0, 0.5, 0.5]);
        let sigma = DMatrix::identity(3, 3) * 0.1;
        let u = DMatrix::identity(2, 2);
        let g = DVector::from_vec(vec![0.3, 0.6]);
        let xi = &a * &g;
        let cfg = ReductionConfig::default();
        let lin = linear_reduction(&xi, &a, &sigma, &u, &cfg).unwrap();
        let r = refine_with_constraints(&xi, &a, &sigma, &u, &lin.covariance, &cfg).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2);
        for (x, y) in r.estimate.iter().zip(g.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn relaxation_damps_a_two_cycle() {
        // v ↦ 1 − v has the fixed point 0.5 but oscillates from 0
        let cfg = ReductionConfig {
            relaxation: Some(0.5),
            ..Default::default()
        };
        let r = fixed_point(vec![0.0], |v| Ok(vec![1.0 - v[0]]), &cfg).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.estimate[0], 0.5, epsilon = 1e-10);
        let plain = fixed_point(vec![0.0], |v| Ok(vec![1.0 - v[0]]), &ReductionConfig::default()).unwrap();
        assert!(!plain.converged);
    }
}
