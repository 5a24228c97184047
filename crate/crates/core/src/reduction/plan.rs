//! The six-step reduction pipeline, precomputed once per measurement model.
//!
//! Two equivalent routes exist. The dense route materialises A, Σ_ν and U and
//! follows the textbook formulas; it is limited to small images. The
//! structured route applies when every active arm has a square invertible
//! sensor matrix, there is no dark noise and U = I/n: then B_j⁻¹ξ_j = C_j g + e_j
//! with e independent across pixels, so R* is a per-pixel generalised least
//! squares over the arms, Σ_{R*ξ} is diagonal and the Mahalanobis projection
//! reduces to a clamp.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::linear::{estimability_check, reduction_operator, regularized_inverse, Estimability};
use super::project::{box_qp, normalized_metric};
use super::{fixed_point, stacked_operator, threshold_components, EstimateCovariance, ReductionConfig, StackedOperator};
use crate::error::{Error, Result};
use crate::image::{Dims, Image};
use crate::measurement::{MeasurementModel, SensorInverse};
use crate::optics::Arm;
use crate::par;

/// Largest image (in pixels) the dense route accepts.
pub const DENSE_PIXEL_LIMIT: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionOutcome {
    pub dims: Dims,
    /// Final estimate û in [0, 1]^dim.
    pub estimate: Vec<f64>,
    /// R*ξ.
    pub linear_estimate: Vec<f64>,
    /// Box-refined estimate before thresholding.
    pub refined: Vec<f64>,
    pub covariance: Arc<EstimateCovariance>,
    pub worst_case_mse: f64,
    /// Fixed-point iterations of the refinement.
    pub iterations: usize,
    pub converged: bool,
    /// Share of transform coefficients zeroed by the threshold.
    pub thresholded_fraction: f64,
}

impl ReductionOutcome {
    pub fn estimate_image(&self) -> Image {
        Image::new(self.dims, self.estimate.clone()).expect("outcome dims match")
    }
}

#[derive(Debug, Clone)]
struct StructuredPlan {
    arms: Vec<Arm>,
    inverses: Vec<SensorInverse>,
    /// Per-pixel GLS weights over the active arms, already scaled by 1/n.
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
struct DensePlan {
    operator: DMatrix<f64>,
    stacked: StackedOperator,
    metric: DMatrix<f64>,
}

#[derive(Debug, Clone)]
enum Route {
    Structured(StructuredPlan),
    Dense(DensePlan),
}

/// Everything of the reduction that does not depend on ξ or τ.
#[derive(Debug, Clone)]
pub struct ReductionPlan {
    dims: Dims,
    config: ReductionConfig,
    route: Route,
    covariance: Arc<EstimateCovariance>,
    coefficient_sigmas: Vec<f64>,
    estimability: Estimability,
}

fn structured_inverses(model: &MeasurementModel) -> Option<Vec<SensorInverse>> {
    if model.arms().iter().any(|a| model.dark_variance(*a) > 0.0) {
        return None;
    }
    model.arms().iter().map(|a| model.sensors(*a).inverse()).collect()
}

/// Per-pixel information c_pᵀ S_p⁺ c_p (worst case g = n) and the GLS weight
/// vector S_p⁺ c_p over the active arms.
fn pixel_information(model: &MeasurementModel, p: usize, tol: f64) -> (f64, Vec<f64>) {
    let arms = model.arms();
    let k = arms.len();
    let n = model.photons_per_pixel();
    let unit = model.unit_covariance(p);
    let s = DMatrix::from_fn(k, k, |i, j| n * unit[(arms[i].index(), arms[j].index())]);
    let c = DVector::from_fn(k, |i, _| model.response().pixel(p).conversion[arms[i].index()]);
    let eig = SymmetricEigen::new(s);
    let max = eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|v| if max > 0.0 && v > tol * max { 1.0 / v } else { 0.0 });
    let s_pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    let w = s_pinv * &c;
    (c.dot(&w), w.as_slice().to_vec())
}

/// Estimability of U = I/n for a structured model.
///
/// Exact when every active sensor matrix is invertible. Otherwise a rank
/// deficit Σ_j rank(B_j) < N gives a lower bound on the residual, and the
/// remaining cases fall back to the dense test on small images.
pub fn model_estimability(model: &MeasurementModel, cfg: &ReductionConfig) -> Result<Estimability> {
    cfg.validate()?;
    let n_pix = model.dims().len();
    let scale = model.ideal_scale();
    let threshold = cfg.estimability_tol * scale * (n_pix as f64).sqrt();
    let all_invertible = model.arms().iter().all(|a| model.sensors(*a).inverse().is_some());
    if all_invertible {
        // null(A) is spanned by the pixels no arm converts.
        let norms: Vec<f64> = (0..n_pix)
            .map(|p| {
                let c = model.response().pixel(p).conversion;
                model.arms().iter().map(|a| c[a.index()].powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        let missing = norms.iter().filter(|v| **v <= cfg.pinv_tolerance * max).count();
        let residual = scale * (missing as f64).sqrt();
        return Ok(Estimability {
            estimable: residual <= threshold,
            residual,
            exact: true,
        });
    }
    let rank: usize = model
        .arms()
        .iter()
        .map(|a| model.sensors(*a).rank(cfg.pinv_tolerance))
        .sum();
    if rank < n_pix {
        return Ok(Estimability {
            estimable: false,
            residual: scale * ((n_pix - rank) as f64).sqrt(),
            exact: false,
        });
    }
    if n_pix > DENSE_PIXEL_LIMIT {
        return Err(Error::param(format!(
            "estimability of this sensor layout needs the dense test, limited to {DENSE_PIXEL_LIMIT} pixels (got {n_pix})"
        )));
    }
    estimability_check(&model.dense_forward()?, &model.dense_ideal(), cfg)
}

impl ReductionPlan {
    /// Structured route when applicable, dense otherwise.
    pub fn new(model: &MeasurementModel, cfg: &ReductionConfig) -> Result<Self> {
        if structured_inverses(model).is_some() {
            Self::structured(model, cfg)
        } else {
            Self::dense(model, cfg)
        }
    }

    pub fn structured(model: &MeasurementModel, cfg: &ReductionConfig) -> Result<Self> {
        cfg.validate()?;
        let inverses = structured_inverses(model).ok_or_else(|| {
            Error::param("structured reduction needs square invertible sensors and no dark noise in every arm")
        })?;
        let dims = model.dims();
        let n_pix = dims.len();
        let scale = model.ideal_scale();
        let exec = model.response().options().exec;
        let info: Vec<(f64, Vec<f64>)> =
            par::map_indexed(exec, n_pix, |p| pixel_information(model, p, cfg.pinv_tolerance));
        let max_f = info.iter().map(|(f, _)| *f).fold(0.0, f64::max);
        let missing = info
            .iter()
            .filter(|(f, _)| !(f.is_finite() && *f > cfg.pinv_tolerance * max_f))
            .count();
        let estimability = model_estimability(model, cfg)?;
        if missing > 0 || !estimability.estimable {
            let residual = estimability.residual.max(scale * (missing as f64).sqrt());
            return Err(Error::NotEstimable { residual });
        }
        let k = model.arms().len();
        let mut weights = Vec::with_capacity(n_pix * k);
        let mut variance = Vec::with_capacity(n_pix);
        for (f, w) in &info {
            weights.extend(w.iter().map(|x| x * scale / f));
            variance.push(scale * scale / f);
        }
        let covariance = EstimateCovariance::Diagonal(variance);
        let coefficient_sigmas = coefficient_sigmas(dims, &covariance, cfg)?;
        Ok(Self {
            dims,
            config: *cfg,
            route: Route::Structured(StructuredPlan {
                arms: model.arms().to_vec(),
                inverses,
                weights,
            }),
            covariance: Arc::new(covariance),
            coefficient_sigmas,
            estimability,
        })
    }

    pub fn dense(model: &MeasurementModel, cfg: &ReductionConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = model.dims();
        if dims.len() > DENSE_PIXEL_LIMIT {
            return Err(Error::param(format!(
                "dense reduction is limited to {DENSE_PIXEL_LIMIT} pixels (got {}); use square invertible sensors without dark noise",
                dims.len()
            )));
        }
        let a = model.dense_forward()?;
        let u = model.dense_ideal();
        let estimability = estimability_check(&a, &u, cfg)?;
        if !estimability.estimable {
            return Err(Error::NotEstimable {
                residual: estimability.residual,
            });
        }
        let sigma = model.dense_noise_covariance(&model.worst_case_g())?;
        let (operator, cov) = reduction_operator(&a, &sigma, &u, cfg)?;
        let w_nu = regularized_inverse(&sigma, cfg.pinv_tolerance)?;
        let metric = regularized_inverse(&cov, cfg.pinv_tolerance)?;
        let stacked = stacked_operator(&a, &w_nu, &u, &metric, cfg)?;
        let metric = normalized_metric(metric);
        let covariance = EstimateCovariance::Dense(cov);
        let coefficient_sigmas = coefficient_sigmas(dims, &covariance, cfg)?;
        Ok(Self {
            dims,
            config: *cfg,
            route: Route::Dense(DensePlan {
                operator,
                stacked,
                metric,
            }),
            covariance: Arc::new(covariance),
            coefficient_sigmas,
            estimability,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn config(&self) -> &ReductionConfig {
        &self.config
    }

    pub fn is_structured(&self) -> bool {
        matches!(self.route, Route::Structured(_))
    }

    pub fn covariance(&self) -> &Arc<EstimateCovariance> {
        &self.covariance
    }

    /// h = tr Σ_{R*ξ}.
    pub fn worst_case_mse(&self) -> f64 {
        self.covariance.trace()
    }

    pub fn estimability(&self) -> Estimability {
        self.estimability
    }

    /// σ of each transform coefficient, from diag(T Σ_{R*ξ} Tᵀ).
    pub fn coefficient_sigmas(&self) -> &[f64] {
        &self.coefficient_sigmas
    }

    /// Step 1: R*ξ.
    pub fn linear(&self, xi: &[f64]) -> Result<Vec<f64>> {
        match &self.route {
            Route::Dense(d) => {
                if xi.len() != d.operator.ncols() {
                    return Err(Error::DimensionMismatch {
                        context: "measurement vector",
                        expected: d.operator.ncols().to_string(),
                        got: xi.len().to_string(),
                    });
                }
                Ok((&d.operator * DVector::from_column_slice(xi)).as_slice().to_vec())
            }
            Route::Structured(s) => {
                let n_pix = self.dims.len();
                let k = s.arms.len();
                if xi.len() != n_pix * k {
                    return Err(Error::DimensionMismatch {
                        context: "measurement vector",
                        expected: (n_pix * k).to_string(),
                        got: xi.len().to_string(),
                    });
                }
                let y: Vec<Vec<f64>> = s
                    .inverses
                    .iter()
                    .enumerate()
                    .map(|(j, inv)| inv.apply(&xi[j * n_pix..(j + 1) * n_pix]))
                    .collect();
                Ok((0..n_pix)
                    .map(|p| (0..k).map(|j| s.weights[p * k + j] * y[j][p]).sum())
                    .collect())
            }
        }
    }

    /// Π_{Σ_{R*ξ}}: Mahalanobis projection onto the unit box.
    pub fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        match &self.route {
            Route::Structured(_) => Ok(u.iter().map(|x| x.clamp(0.0, 1.0)).collect()),
            Route::Dense(d) => Ok(box_qp(
                &d.metric,
                &DVector::from_column_slice(u),
                self.config.qp_tol,
                self.config.qp_max_iters,
            )?
            .point
            .as_slice()
            .to_vec()),
        }
    }

    /// Step 2: fixed point of û = Π(R̃(ξ, û)) starting at Π(R*ξ).
    ///
    /// With Σ_{R*ξ} = U F⁻¹ Uᵀ and U invertible, R̃(ξ, û) = (R*ξ + û)/2, which
    /// is what the structured route iterates.
    pub fn refine(&self, xi: &[f64], linear: &[f64]) -> Result<super::Refinement> {
        let start = self.project(linear)?;
        match &self.route {
            Route::Structured(_) => fixed_point(
                start,
                |v| Ok(v.iter().zip(linear).map(|(a, b)| (0.5 * (a + b)).clamp(0.0, 1.0)).collect()),
                &self.config,
            ),
            Route::Dense(d) => {
                let r0 = &d.stacked.from_data * DVector::from_column_slice(xi);
                fixed_point(
                    start,
                    |v| {
                        let target = &r0 + &d.stacked.from_prior * DVector::from_column_slice(v);
                        self.project(target.as_slice())
                    },
                    &self.config,
                )
            }
        }
    }

    /// Steps 1 to 6 with threshold multiplier `tau`.
    pub fn reduce(&self, xi: &[f64], tau: f64) -> Result<ReductionOutcome> {
        Ok(self.reduce_sweep(xi, &[tau])?.remove(0))
    }

    /// Steps 1 to 6 for several thresholds; steps 1 and 2 run once.
    pub fn reduce_sweep(&self, xi: &[f64], taus: &[f64]) -> Result<Vec<ReductionOutcome>> {
        if let Some(t) = taus.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::param(format!("tau must be finite and >= 0, got {t}")));
        }
        let transform = self.config.transform;
        let linear = self.linear(xi).map_err(|e| e.at_step(1, "linear reduction"))?;
        let refinement = self
            .refine(xi, &linear)
            .map_err(|e| e.at_step(2, "constrained refinement"))?;
        let refined = Image::new(self.dims, refinement.estimate.clone())?;
        let coeffs = transform
            .forward(&refined)
            .map_err(|e| e.at_step(3, "forward transform"))?;
        let mut out = Vec::with_capacity(taus.len());
        for &tau in taus {
            let kept = threshold_components(coeffs.data(), &self.coefficient_sigmas, tau)
                .map_err(|e| e.at_step(4, "thresholding"))?;
            let zeroed = coeffs
                .data()
                .iter()
                .zip(&self.coefficient_sigmas)
                .filter(|(c, s)| c.abs() < tau * **s)
                .count();
            let back = transform
                .inverse(&Image::new(self.dims, kept)?)
                .map_err(|e| e.at_step(5, "inverse transform"))?;
            let estimate = self
                .project(back.data())
                .map_err(|e| e.at_step(6, "final projection"))?;
            out.push(ReductionOutcome {
                dims: self.dims,
                estimate,
                linear_estimate: linear.clone(),
                refined: refinement.estimate.clone(),
                covariance: Arc::clone(&self.covariance),
                worst_case_mse: self.worst_case_mse(),
                iterations: refinement.iterations,
                converged: refinement.converged,
                thresholded_fraction: zeroed as f64 / self.dims.len() as f64,
            });
        }
        Ok(out)
    }
}

fn coefficient_sigmas(dims: Dims, cov: &EstimateCovariance, cfg: &ReductionConfig) -> Result<Vec<f64>> {
    let var = match cov {
        EstimateCovariance::Diagonal(d) => cfg
            .transform
            .coefficient_variances(&Image::new(dims, d.clone())?)
            .map_err(|e| e.at_step(3, "forward transform"))?
            .into_data(),
        EstimateCovariance::Dense(m) => cfg
            .transform
            .coefficient_variances_dense(dims, m)
            .map_err(|e| e.at_step(3, "forward transform"))?,
    };
    Ok(var.iter().map(|v| v.max(0.0).sqrt()).collect())
}

/// One-shot pipeline: plan for `model`, then reduce ξ at `cfg.tau`.
pub fn reduce_with_sparsity(xi: &[f64], model: &MeasurementModel, cfg: &ReductionConfig) -> Result<ReductionOutcome> {
    ReductionPlan::new(model, cfg)?.reduce(xi, cfg.tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{SensorLayout, SensorModel};
    use crate::optics::{CrystalParams, OpticalGeometry};
    use crate::reduction::Transform;
    use crate::stats::{ResponseMap, StatsOptions};
    use approx::assert_relative_eq;

    fn model(side: usize, layout: SensorLayout) -> MeasurementModel {
        let dims = Dims::square(side).unwrap();
        let geom = OpticalGeometry::default();
        let crystal = CrystalParams::from_dimensionless(100.0, 0.4, 1.0).unwrap();
        let map = ResponseMap::new(dims, &geom, &crystal, StatsOptions::default()).unwrap();
        MeasurementModel::new(&layout, map, [0.0; 3], 10.0).unwrap()
    }

    fn phantom(dims: Dims) -> Vec<f64> {
        (0..dims.len()).map(|p| 0.2 + 0.6 * ((p * 7) % 5) as f64 / 4.0).collect()
    }

    #[test]
    fn structured_and_dense_routes_agree() {
        let m = model(4, SensorLayout::overlapping());
        let cfg = ReductionConfig {
            transform: Transform::Haar,
            ..Default::default()
        };
        let fast = ReductionPlan::structured(&m, &cfg).unwrap();
        let dense = ReductionPlan::dense(&m, &cfg).unwrap();
        assert!(fast.is_structured() && !dense.is_structured());
        assert_relative_eq!(fast.worst_case_mse(), dense.worst_case_mse(), max_relative = 1e-8);
        let dd = dense.covariance().diagonal();
        for (a, b) in fast.covariance().diagonal().iter().zip(&dd) {
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
        for (a, b) in fast.coefficient_sigmas().iter().zip(dense.coefficient_sigmas()) {
            assert_relative_eq!(a, b, max_relative = 1e-7, epsilon = 1e-12);
        }
        let g: Vec<f64> = phantom(m.dims()).iter().map(|t| t * 10.0).collect();
        let xi = m.simulate(&g, 11).unwrap();
        for tau in [0.0, 0.5] {
            let a = fast.reduce(&xi, tau).unwrap();
            let b = dense.reduce(&xi, tau).unwrap();
            for (x, y) in a.linear_estimate.iter().zip(&b.linear_estimate) {
                assert_relative_eq!(x, y, epsilon = 1e-8);
            }
            for (x, y) in a.estimate.iter().zip(&b.estimate) {
                assert_relative_eq!(x, y, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn clean_data_reconstructs_exactly() {
        let m = model(16, SensorLayout::overlapping());
        let cfg = ReductionConfig {
            transform: Transform::Identity,
            ..Default::default()
        };
        let plan = ReductionPlan::new(&m, &cfg).unwrap();
        let t = phantom(m.dims());
        let g: Vec<f64> = t.iter().map(|v| v * 10.0).collect();
        let out = plan.reduce(&m.forward(&g).unwrap(), 0.0).unwrap();
        assert!(out.converged);
        for (a, b) in out.estimate.iter().zip(&t) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn huge_tau_gives_zero_image() {
        let m = model(8 + 8, SensorLayout::overlapping());
        let cfg = ReductionConfig::default();
        let plan = ReductionPlan::new(&m, &cfg).unwrap();
        let g: Vec<f64> = phantom(m.dims()).iter().map(|v| v * 10.0).collect();
        let out = plan.reduce(&m.simulate(&g, 1).unwrap(), 1e9).unwrap();
        assert!(out.estimate.iter().all(|v| *v == 0.0));
        assert_relative_eq!(out.thresholded_fraction, 1.0);
    }

    #[test]
    fn single_arm_plan_and_estimability() {
        let m = model(16, SensorLayout::overlapping());
        let one = m.with_arms(&[Arm::Three]).unwrap();
        let plan = ReductionPlan::new(&one, &ReductionConfig::default()).unwrap();
        assert!(plan.is_structured());
        assert!(plan.worst_case_mse() > ReductionPlan::new(&m, &ReductionConfig::default()).unwrap().worst_case_mse());

        let aligned = model(16, SensorLayout::aligned_tiled());
        let e = model_estimability(&aligned, &ReductionConfig::default()).unwrap();
        assert!(!e.estimable && !e.exact);
        assert!(matches!(
            ReductionPlan::new(&aligned, &ReductionConfig::default()),
            Err(Error::NotEstimable { .. })
        ));
    }

    #[test]
    fn dark_noise_forces_dense_route() {
        let dims = Dims::square(4).unwrap();
        let geom = OpticalGeometry::default();
        let crystal = CrystalParams::from_dimensionless(100.0, 0.4, 1.0).unwrap();
        let map = ResponseMap::new(dims, &geom, &crystal, StatsOptions::default()).unwrap();
        let m = MeasurementModel::new(&SensorLayout::uniform(SensorModel::default()), map, [0.5; 3], 10.0).unwrap();
        let plan = ReductionPlan::new(&m, &ReductionConfig::default()).unwrap();
        assert!(!plan.is_structured());
        let out = plan.reduce(&m.simulate(&m.worst_case_g(), 2).unwrap(), 0.3).unwrap();
        assert!(out.estimate.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
