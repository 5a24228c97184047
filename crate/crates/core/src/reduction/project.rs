//! Mahalanobis projection onto the unit box as a convex box QP,
//! min ½ (v − u)ᵀ W (v − u) over 0 ≤ v ≤ 1 with W = Σ⁻¹.
//!
//! Solved by a projected Newton method: variables at a bound whose gradient
//! pushes outward are held, the rest take a Newton step on W restricted to
//! them, and an Armijo search runs along the projection arc.

use nalgebra::{DMatrix, DVector};

use super::linear::regularized_inverse;
use super::ReductionConfig;
use crate::error::{Error, Result};

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub point: DVector<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

pub fn clamp_unit(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.clamp(0.0, 1.0))
}

/// Largest violation of the box KKT conditions for gradient `grad` at `v`.
pub fn kkt_residual(v: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    v.iter()
        .zip(grad.iter())
        .map(|(x, g)| {
            if *x <= 0.0 {
                (-g).max(0.0)
            } else if *x >= 1.0 {
                g.max(0.0)
            } else {
                g.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Exact change of ½ (v − u)ᵀ W (v − u) for a move by `d`, free of the
/// cancellation a difference of objective values suffers.
fn decrement(w: &DMatrix<f64>, grad: &DVector<f64>, d: &DVector<f64>) -> f64 {
    grad.dot(d) + 0.5 * d.dot(&(w * d))
}

/// Box QP with metric `w` (symmetric positive definite).
pub fn box_qp(w: &DMatrix<f64>, u: &DVector<f64>, tol: f64, max_iter: usize) -> Result<Projection> {
    let n = u.len();
    if w.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "box QP metric",
            expected: format!("{n}x{n}"),
            got: format!("{}x{}", w.nrows(), w.ncols()),
        });
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric {
            context: "box QP",
            detail: "non-finite target".into(),
        });
    }
    let mut v = clamp_unit(u);
    for it in 0..max_iter {
        let grad = w * (&v - u);
        let res = kkt_residual(&v, &grad);
        if res <= tol {
            return Ok(Projection {
                point: v,
                iterations: it,
                kkt_residual: res,
            });
        }
        // ε-binding set as in Bertsekas: near a bound and pushed outward.
        let eps = (&v - clamp_unit(&(&v - &grad))).amax().min(1e-3);
        let free: Vec<usize> = (0..n)
            .filter(|&i| !((v[i] <= eps && grad[i] > 0.0) || (v[i] >= 1.0 - eps && grad[i] < 0.0)))
            .collect();
        let mut dir = DVector::zeros(n);
        for i in 0..n {
            dir[i] = -grad[i] / w[(i, i)];
        }
        if !free.is_empty() {
            let wff = DMatrix::from_fn(free.len(), free.len(), |a, b| w[(free[a], free[b])]);
            let gf = DVector::from_fn(free.len(), |a, _| grad[free[a]]);
            if let Some(chol) = wff.cholesky() {
                let step = chol.solve(&gf);
                for (a, &i) in free.iter().enumerate() {
                    dir[i] = -step[a];
                }
            }
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= MIN_STEP {
            let cand = clamp_unit(&(&v + &dir * alpha));
            let d = &cand - &v;
            let df = decrement(w, &grad, &d);
            if df <= ARMIJO * grad.dot(&d) {
                if df < 0.0 {
                    accepted = true;
                    v = cand;
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // fall back to a projected gradient step with the same search
            let scale = 1.0 / w.diagonal().amax().max(f64::MIN_POSITIVE);
            let mut beta = 1.0;
            let mut moved = false;
            while beta >= MIN_STEP {
                let cand = clamp_unit(&(&v - &grad * (beta * scale)));
                let d = &cand - &v;
                let df = decrement(w, &grad, &d);
                if df <= ARMIJO * grad.dot(&d) && df < 0.0 {
                    v = cand;
                    moved = true;
                    break;
                }
                beta *= 0.5;
            }
            if !moved {
                let res = kkt_residual(&v, &(w * (&v - u)));
                if res <= tol {
                    return Ok(Projection {
                        point: v,
                        iterations: it + 1,
                        kkt_residual: res,
                    });
                }
                return Err(Error::Convergence {
                    iterations: it + 1,
                    residual: res,
                    best: v.as_slice().to_vec(),
                });
            }
        }
    }
    let res = kkt_residual(&v, &(w * (&v - u)));
    if res <= tol {
        return Ok(Projection {
            point: v,
            iterations: max_iter,
            kkt_residual: res,
        });
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: res,
        best: v.as_slice().to_vec(),
    })
}

/// argmin over [0,1]^dim of (v − u)ᵀ Σ⁻¹ (v − u).
///
/// The minimiser does not depend on the scale of Σ, so Σ⁻¹ is rescaled to
/// unit largest diagonal first; the KKT residual refers to that metric.
pub fn mahalanobis_project(u: &DVector<f64>, sigma: &DMatrix<f64>, cfg: &ReductionConfig) -> Result<Projection> {
    let w = normalized_metric(regularized_inverse(sigma, cfg.pinv_tolerance)?);
    box_qp(&w, u, cfg.qp_tol, cfg.qp_max_iters)
}

/// `w` scaled to unit largest diagonal entry; the box QP minimiser is unchanged.
pub(crate) fn normalized_metric(mut w: DMatrix<f64>) -> DMatrix<f64> {
    let scale = w.diagonal().amax();
    if scale > 0.0 && scale.is_finite() {
        w /= scale;
    }
    w
}
