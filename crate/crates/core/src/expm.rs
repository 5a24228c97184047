//! Exponential of small complex matrices.
//!
//! The default route diagonalises the generator; when the eigenvector basis
//! is ill-conditioned (near-defective generators, e.g. Γ → 0) it falls back
//! to scaling-and-squaring with the order-13 Padé approximant.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix3 = Matrix3<Complex64>;

/// Eigenvector condition number above which diagonalisation is not trusted.
pub const EIGEN_CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpmMethod {
    Eigen { condition: f64 },
    Pade { squarings: u32 },
}

/// Computes `exp(m · t)`.
pub fn expm(m: &CMatrix3, t: f64) -> Result<(CMatrix3, ExpmMethod)> {
    let a = m * Complex64::new(t, 0.0);
    if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numeric {
            context: "matrix exponential",
            detail: format!("non-finite generator entries: {a}"),
        });
    }
    if a.iter().all(|v| v.norm() == 0.0) {
        return Ok((CMatrix3::identity(), ExpmMethod::Pade { squarings: 0 }));
    }
    if let Some((e, condition)) = expm_eigen(&a) {
        if condition <= EIGEN_CONDITION_LIMIT {
            return Ok((e, ExpmMethod::Eigen { condition }));
        }
    }
    let (e, squarings) = expm_pade13(&a)?;
    Ok((e, ExpmMethod::Pade { squarings }))
}

fn bilinear_cross(a: &Vector3<Complex64>, b: &Vector3<Complex64>) -> Vector3<Complex64> {
    Vector3::new(
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )
}

fn expm_eigen(a: &CMatrix3) -> Option<(CMatrix3, f64)> {
    let eigenvalues = a.schur().eigenvalues()?;
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut basis = CMatrix3::zeros();
    for (k, &lambda) in eigenvalues.iter().enumerate() {
        let shifted = a - CMatrix3::identity() * lambda;
        let rows: Vec<Vector3<Complex64>> = (0..3).map(|i| shifted.row(i).transpose()).collect();
        // Null vector of a rank-2 matrix: cross product of two independent rows.
        let v = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| bilinear_cross(&rows[i], &rows[j]))
            .max_by(|x, y| x.norm().total_cmp(&y.norm()))?;
        let norm = v.norm();
        if norm <= 1e-14 * scale * scale || !norm.is_finite() {
            return None;
        }
        basis.set_column(k, &(v / Complex64::new(norm, 0.0)));
    }
    let sv = basis.svd(false, false).singular_values;
    let smin = sv.min();
    if smin <= 0.0 {
        return None;
    }
    let condition = sv.max() / smin;
    let inv = basis.try_inverse()?;
    let diag = CMatrix3::from_diagonal(&eigenvalues.map(|l| l.exp()));
    Some((basis * diag * inv, condition))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &CMatrix3) -> f64 {
    (0..3)
        .map(|j| a.column(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn expm_pade13(a: &CMatrix3) -> Result<(CMatrix3, u32)> {
    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as u32
    } else {
        0
    };
    let a = a / Complex64::new(2f64.powi(squarings as i32), 0.0);
    let c = |k: usize| Complex64::new(PADE13[k], 0.0);
    let id = CMatrix3::identity();
    let a2 = a * a;
    let a4 = a2 * a2;
    let a6 = a4 * a2;
    let u_inner = a6 * (a6 * c(13) + a4 * c(11) + a2 * c(9)) + a6 * c(7) + a4 * c(5) + a2 * c(3) + id * c(1);
    let u = a * u_inner;
    let v = a6 * (a6 * c(12) + a4 * c(10) + a2 * c(8)) + a6 * c(6) + a4 * c(4) + a2 * c(2) + id * c(0);
    let p = v + u;
    let q = v - u;
    let mut r = q.lu().solve(&p).ok_or_else(|| Error::Numeric {
        context: "matrix exponential",
        detail: "singular Padé denominator".into(),
    })?;
    for _ in 0..squarings {
        r = r * r;
    }
    Ok((r, squarings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_diff(a: &CMatrix3, b: &CMatrix3) -> f64 {
        (a - b).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_generator_gives_identity() {
        let (e, _) = expm(&CMatrix3::zeros(), 3.0).unwrap();
        assert_eq!(e, CMatrix3::identity());
    }

    #[test]
    fn diagonal_generator() {
        let m = CMatrix3::from_diagonal(&Vector3::new(c(0.0, 1.0), c(-0.5, 0.0), c(0.2, -0.3)));
        let (e, method) = expm(&m, 2.0).unwrap();
        assert!(matches!(method, ExpmMethod::Eigen { .. }));
        for k in 0..3 {
            assert!((e[(k, k)] - (m[(k, k)] * 2.0).exp()).norm() < 1e-14);
        }
    }

    #[test]
    fn nilpotent_uses_pade() {
        // Jordan block: not diagonalisable.
        let mut m = CMatrix3::zeros();
        m[(0, 1)] = c(1.0, 0.0);
        m[(1, 2)] = c(1.0, 0.0);
        let (e, method) = expm(&m, 1.0).unwrap();
        assert!(matches!(method, ExpmMethod::Pade { .. }));
        let mut expected = CMatrix3::identity();
        expected[(0, 1)] = c(1.0, 0.0);
        expected[(1, 2)] = c(1.0, 0.0);
        expected[(0, 2)] = c(0.5, 0.0);
        assert!(max_diff(&e, &expected) < 1e-14);
    }

    #[test]
    fn pade_agrees_with_eigen_route() {
        let m = CMatrix3::new(
            c(0.0, -0.3),
            c(0.0, 1.0),
            c(0.0, 0.4),
            c(0.0, -1.0),
            c(0.0, 0.7),
            c(0.0, 0.0),
            c(0.0, 0.4),
            c(0.0, 0.0),
            c(0.0, -0.2),
        ) * c(4.0, 0.0);
        let (eig, cond) = expm_eigen(&m).unwrap();
        assert!(cond < 1e3);
        let (pade, s) = expm_pade13(&m).unwrap();
        assert!(s > 0);
        assert!(max_diff(&eig, &pade) < 1e-12, "{}", max_diff(&eig, &pade));
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = CMatrix3::zeros();
        m[(0, 0)] = c(f64::NAN, 0.0);
        assert!(expm(&m, 1.0).is_err());
    }
}
