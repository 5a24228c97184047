//! Transfer matrix of the coupled down-/up-conversion processes.
//!
//! With the pump undepleted, the transverse Fourier modes of the three waves
//! obey a linear system in the operator vector `(a₁, a₂†, a₃)`:
//!
//! ```text
//! d/dz (a₁, a₂†, a₃)ᵀ = M(q) (a₁, a₂†, a₃)ᵀ
//!
//!        ⎡ −iμ₁   iβ    iγ  ⎤
//! M(q) = ⎢ −iβ    iμ₂   0   ⎥ ,   μⱼ = q² / 2kⱼ
//!        ⎣  iγ    0    −iμ₃ ⎦
//! ```
//!
//! so the crystal acts as `Q(q, z) = exp(M(q) z)`. The numeric exponential is
//! the general route; the closed form at `q = 0` is provided separately and
//! serves as a cross-check.

use std::io::Write;

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::expm::{expm, CMatrix3, ExpmMethod};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// One of the three output images (ω₁, ω₂, ω₃).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    One,
    Two,
    Three,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::One, Arm::Two, Arm::Three];

    /// Zero-based position in per-arm arrays.
    pub fn index(self) -> usize {
        match self {
            Arm::One => 0,
            Arm::Two => 1,
            Arm::Three => 2,
        }
    }

    /// Arm from its frequency label (1, 2 or 3).
    pub fn from_label(label: usize) -> Result<Self> {
        match label {
            1 => Ok(Arm::One),
            2 => Ok(Arm::Two),
            3 => Ok(Arm::Three),
            _ => Err(Error::param(format!("arm index must be 1, 2 or 3, got {label}"))),
        }
    }

    pub fn label(self) -> usize {
        self.index() + 1
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Nonlinear coupling of the crystal. All quantities in SI (1/m, m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrystalParams {
    beta: f64,
    gamma: f64,
    length_z: f64,
}

impl CrystalParams {
    pub fn new(beta: f64, gamma: f64, length_z: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::param(format!("beta must be > 0, got {beta}")));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::param(format!("gamma must be >= 0, got {gamma}")));
        }
        if !(length_z.is_finite() && length_z >= 0.0) {
            return Err(Error::param(format!("length must be >= 0, got {length_z}")));
        }
        Ok(Self { beta, gamma, length_z })
    }

    /// Builds the crystal from β, ε = γ/β and the dimensionless length βz.
    pub fn from_dimensionless(beta: f64, epsilon: f64, beta_z: f64) -> Result<Self> {
        Self::new(beta, epsilon * beta, beta_z / beta)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn length_z(&self) -> f64 {
        self.length_z
    }

    pub fn epsilon(&self) -> f64 {
        self.gamma / self.beta
    }

    pub fn beta_z(&self) -> f64 {
        self.beta * self.length_z
    }

    /// Γ = √(β² − γ²); imaginary when γ > β.
    pub fn big_gamma(&self) -> Complex64 {
        Complex64::new(self.beta * self.beta - self.gamma * self.gamma, 0.0).sqrt()
    }

    pub fn with_length(&self, length_z: f64) -> Result<Self> {
        Self::new(self.beta, self.gamma, length_z)
    }
}

/// Wavelengths, imaging optics and detector geometry (SI units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalGeometry {
    lambda: [f64; 3],
    focal_length: f64,
    pupil_area: f64,
    pixel_area: f64,
}

/// Relative tolerance on 1/λ₃ = 2/λ₁ + 1/λ₂.
pub const FREQUENCY_TOLERANCE: f64 = 1e-9;

impl OpticalGeometry {
    pub fn new(
        lambda1: f64,
        lambda2: f64,
        lambda3: f64,
        focal_length: f64,
        pupil_area: f64,
        pixel_area: f64,
    ) -> Result<Self> {
        let named = [
            ("lambda1", lambda1),
            ("lambda2", lambda2),
            ("lambda3", lambda3),
            ("focal_length", focal_length),
            ("pupil_area", pupil_area),
            ("pixel_area", pixel_area),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("{name} must be > 0, got {v}")));
            }
        }
        // ω_p = ω₁ + ω₂ and ω₃ = ω_p + ω₁.
        let lhs = 1.0 / lambda3;
        let rhs = 2.0 / lambda1 + 1.0 / lambda2;
        if ((lhs - rhs) / lhs).abs() > FREQUENCY_TOLERANCE {
            return Err(Error::param(format!(
                "frequencies inconsistent: 1/λ3 = {lhs:e} but 2/λ1 + 1/λ2 = {rhs:e}"
            )));
        }
        Ok(Self {
            lambda: [lambda1, lambda2, lambda3],
            focal_length,
            pupil_area,
            pixel_area,
        })
    }

    pub fn wavelength(&self, arm: Arm) -> f64 {
        self.lambda[arm.index()]
    }

    pub fn wave_number(&self, arm: Arm) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength(arm)
    }

    pub fn focal_length(&self) -> f64 {
        self.focal_length
    }

    pub fn pupil_area(&self) -> f64 {
        self.pupil_area
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_area
    }

    /// Side of a square pixel.
    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_area.sqrt()
    }

    /// S_a S_p / (f λ₃)²: number of pupil-limited coherence cells per pixel.
    pub fn mode_factor(&self) -> f64 {
        let fl = self.focal_length * self.lambda[2];
        self.pupil_area * self.pixel_area / (fl * fl)
    }

    /// Transverse wave number k₃ r / f seen by a point at radius `r` in the image plane.
    pub fn transverse_wave_number(&self, r: f64) -> f64 {
        self.wave_number(Arm::Three) * r / self.focal_length
    }
}

impl Default for OpticalGeometry {
    /// 1/λ = 1.2, 0.8, 3.2 µm⁻¹; f = 10 cm; S_a = 25 cm²; S_p = 100 µm².
    fn default() -> Self {
        Self::new(1e-6 / 1.2, 1e-6 / 0.8, 1e-6 / 3.2, 0.1, 25e-4, 100e-12)
            .expect("reference geometry is consistent")
    }
}

/// 3×3 complex transfer matrix `Q(q, z)` acting on `(a₁, a₂†, a₃)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMatrix {
    pub entries: CMatrix3,
    pub q: f64,
    pub z: f64,
}

impl TransferMatrix {
    /// Element `Q_nm` with 1-based indices.
    pub fn element(&self, n: usize, m: usize) -> Complex64 {
        self.entries[(n - 1, m - 1)]
    }

    /// |Q_nm|².
    pub fn gain(&self, n: usize, m: usize) -> f64 {
        self.element(n, m).norm_sqr()
    }

    /// Elementwise deviation of `Q J Q†` from `J = diag(1, −1, 1)`.
    pub fn commutator_defect(&self) -> f64 {
        let j = CMatrix3::from_diagonal(&nalgebra::Vector3::new(
            Complex64::new(1.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(1.0, 0.0),
        ));
        let d = self.entries * j * self.entries.adjoint() - j;
        d.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// The seven entries of the closed form at q = 0, as (row, col) 1-based.
pub const AXIAL_ENTRIES: [(usize, usize); 7] = [(1, 2), (2, 1), (1, 3), (3, 1), (2, 3), (3, 2), (3, 3)];

/// Generator `M(q)` of the coupled-mode system.
pub fn coupling_generator(q: f64, crystal: &CrystalParams, geom: &OpticalGeometry) -> Result<CMatrix3> {
    if !q.is_finite() {
        return Err(Error::param(format!("transverse wave number must be finite, got {q}")));
    }
    let mu = |arm: Arm| q * q / (2.0 * geom.wave_number(arm));
    Ok(generator(
        [mu(Arm::One), mu(Arm::Two), mu(Arm::Three)],
        crystal.beta(),
        crystal.gamma(),
    ))
}

fn generator(mu: [f64; 3], beta: f64, gamma: f64) -> CMatrix3 {
    let z = Complex64::new(0.0, 0.0);
    Matrix3::new(
        -I * mu[0],
        I * beta,
        I * gamma,
        -I * beta,
        I * mu[1],
        z,
        I * gamma,
        z,
        -I * mu[2],
    )
}

/// `Q(q, z) = exp(M(q) z)`.
pub fn transfer_matrix(q: f64, z: f64, crystal: &CrystalParams, geom: &OpticalGeometry) -> Result<TransferMatrix> {
    transfer_matrix_with_method(q, z, crystal, geom).map(|(t, _)| t)
}

/// As [`transfer_matrix`], also reporting which exponential route was taken.
pub fn transfer_matrix_with_method(
    q: f64,
    z: f64,
    crystal: &CrystalParams,
    geom: &OpticalGeometry,
) -> Result<(TransferMatrix, ExpmMethod)> {
    if !(z.is_finite() && z >= 0.0) {
        return Err(Error::param(format!("propagation length must be >= 0, got {z}")));
    }
    let m = coupling_generator(q, crystal, geom)?;
    let (entries, method) = expm(&m, z)?;
    Ok((TransferMatrix { entries, q, z }, method))
}

/// (sinh Γz / Γ, (cosh Γz − 1) / Γ²) for complex Γ, with a series near Γz = 0.
fn axial_kernels(big_gamma: Complex64, z: f64) -> (Complex64, Complex64) {
    let x = big_gamma * z;
    if x.norm() < 1e-4 {
        let x2 = x * x;
        let s = z * (1.0 + x2 / 6.0 + x2 * x2 / 120.0);
        let c = z * z * (0.5 + x2 / 24.0 + x2 * x2 / 720.0);
        (s, c)
    } else {
        (x.sinh() / big_gamma, (x.cosh() - 1.0) / (big_gamma * big_gamma))
    }
}

/// Closed-form transfer matrix at q = 0.
///
/// Q₁₁ and Q₂₂ have no printed closed form and are taken from the numeric
/// exponential of M(0).
pub fn transfer_matrix_axial(crystal: &CrystalParams, z: f64) -> Result<TransferMatrix> {
    if crystal.beta() == crystal.gamma() {
        return Err(Error::DegenerateGamma { beta: crystal.beta() });
    }
    if !(z.is_finite() && z >= 0.0) {
        return Err(Error::param(format!("propagation length must be >= 0, got {z}")));
    }
    let (beta, gamma) = (crystal.beta(), crystal.gamma());
    let (s, c) = axial_kernels(crystal.big_gamma(), z);

    let (numeric, _) = expm(&generator([0.0; 3], beta, gamma), z)?;
    let mut q = numeric;
    q[(0, 1)] = I * beta * s;
    q[(1, 0)] = -q[(0, 1)];
    q[(0, 2)] = I * gamma * s;
    q[(2, 0)] = q[(0, 2)];
    q[(1, 2)] = c * (beta * gamma);
    q[(2, 1)] = -q[(1, 2)];
    q[(2, 2)] = Complex64::new(1.0, 0.0) - c * (gamma * gamma);
    Ok(TransferMatrix { entries: q, q: 0.0, z })
}

/// |Q₃₃(0, z)|² from the closed form; accepts β = 0 and β = γ.
pub fn axial_gain(beta: f64, gamma: f64, z: f64) -> f64 {
    let big_gamma = Complex64::new(beta * beta - gamma * gamma, 0.0).sqrt();
    let (_, c) = axial_kernels(big_gamma, z);
    (Complex64::new(1.0, 0.0) - c * (gamma * gamma)).norm_sqr()
}

/// Interaction lengths where the amplified image vanishes (z₀) and where
/// unit gain is recovered (z_m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalLengths {
    pub z0: f64,
    pub zm: f64,
}

/// cosh(Γz₀) = (β/γ)², cosh(Γz_m) = 2(β/γ)² − 1.
pub fn critical_lengths(crystal: &CrystalParams) -> Result<CriticalLengths> {
    let (beta, gamma) = (crystal.beta(), crystal.gamma());
    if gamma <= 0.0 || gamma >= beta {
        return Err(Error::NoZeroCrossing { beta, gamma });
    }
    let ratio2 = (beta / gamma).powi(2);
    let big_gamma = (beta * beta - gamma * gamma).sqrt();
    Ok(CriticalLengths {
        z0: ratio2.acosh() / big_gamma,
        zm: (2.0 * ratio2 - 1.0).acosh() / big_gamma,
    })
}

/// |Q₃₃(0)|² over an (ε, βz) grid plus the βz₀(ε) and βz_m(ε) curves.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMap {
    pub eps: Vec<f64>,
    pub beta_z: Vec<f64>,
    /// `gain[i][j]` at `eps[i]`, `beta_z[j]`.
    pub gain: Vec<Vec<f64>>,
    pub beta_z0: Vec<f64>,
    pub beta_zm: Vec<f64>,
}

pub fn gain_map(eps_grid: &[f64], beta_z_grid: &[f64]) -> Result<GainMap> {
    if eps_grid.is_empty() || beta_z_grid.is_empty() {
        return Err(Error::param("gain map grids must be nonempty"));
    }
    if let Some(e) = eps_grid.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::param(format!("epsilon must lie in (0, 1), got {e}")));
    }
    if let Some(b) = beta_z_grid.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(Error::param(format!("beta_z must be >= 0, got {b}")));
    }
    let mut gain = Vec::with_capacity(eps_grid.len());
    let mut beta_z0 = Vec::with_capacity(eps_grid.len());
    let mut beta_zm = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        gain.push(beta_z_grid.iter().map(|&bz| axial_gain(1.0, eps, bz)).collect());
        let lengths = critical_lengths(&CrystalParams::new(1.0, eps, 0.0)?)?;
        beta_z0.push(lengths.z0);
        beta_zm.push(lengths.zm);
    }
    Ok(GainMap {
        eps: eps_grid.to_vec(),
        beta_z: beta_z_grid.to_vec(),
        gain,
        beta_z0,
        beta_zm,
    })
}

impl GainMap {
    /// CSV with header `eps,beta_z,gain`, one row per grid node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "eps,beta_z,gain")?;
        for (i, eps) in self.eps.iter().enumerate() {
            for (j, bz) in self.beta_z.iter().enumerate() {
                writeln!(out, "{eps},{bz},{}", self.gain[i][j])?;
            }
        }
        Ok(())
    }

    /// CSV with header `eps,beta_z0,beta_zm`.
    pub fn write_curves_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "eps,beta_z0,beta_zm")?;
        for (i, eps) in self.eps.iter().enumerate() {
            writeln!(out, "{eps},{},{}", self.beta_z0[i], self.beta_zm[i])?;
        }
        Ok(())
    }
}
