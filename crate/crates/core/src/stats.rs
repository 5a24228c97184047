//! Per-pixel photon-number statistics of the three equalised output images.
//!
//! Everything here is linear in the illumination count g = n·t of a pixel, so
//! the work is split into a [`ResponseMap`] holding per-unit-g coefficients
//! (one transfer matrix per pixel radius) and cheap scaling by the object.
//!
//! Output images are inverted (r → −r) by the imaging optics. Coefficients
//! are evaluated at the image-plane radius and then reflected once, so every
//! array returned from this module is co-registered with the object.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::{Dims, Image};
use crate::optics::{transfer_matrix, Arm, CrystalParams, OpticalGeometry, TransferMatrix};
use crate::par::{self, Exec};

/// Relative eigenvalue floor (× trace) below which a covariance is rejected.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Object transparency plus the mean photon count of a fully transparent pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectImage {
    transparency: Image,
    photons_per_pixel: f64,
}

impl ObjectImage {
    pub fn new(transparency: Image, photons_per_pixel: f64) -> Result<Self> {
        if !(photons_per_pixel.is_finite() && photons_per_pixel > 0.0) {
            return Err(Error::param(format!(
                "photons per pixel must be > 0, got {photons_per_pixel}"
            )));
        }
        if let Some((i, t)) = transparency
            .data()
            .iter()
            .enumerate()
            .find(|(_, t)| !(0.0..=1.0).contains(*t))
        {
            return Err(Error::Range(format!("transparency {t} at pixel {i} outside [0, 1]")));
        }
        Ok(Self {
            transparency,
            photons_per_pixel,
        })
    }

    /// `max_density` is the illuminating photon density in photons/m²; the
    /// count per fully transparent pixel is `max_density · S_p`.
    pub fn from_max_density(transparency: Image, max_density: f64, geom: &OpticalGeometry) -> Result<Self> {
        Self::new(transparency, max_density * geom.pixel_area())
    }

    pub fn dims(&self) -> Dims {
        self.transparency.dims()
    }

    pub fn transparency(&self) -> &Image {
        &self.transparency
    }

    pub fn photons_per_pixel(&self) -> f64 {
        self.photons_per_pixel
    }

    /// Per-pixel illumination count g = n·t (= S_p ⟨N̂₃₀⟩).
    pub fn illumination(&self) -> Vec<f64> {
        self.transparency
            .data()
            .iter()
            .map(|t| t * self.photons_per_pixel)
            .collect()
    }

    pub fn with_photons(&self, photons_per_pixel: f64) -> Result<Self> {
        Self::new(self.transparency.clone(), photons_per_pixel)
    }
}

/// How the cross-arm covariances are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceModel {
    /// Off-diagonals from the linearised photon-number fluctuations of
    /// `Q(q, z)` acting on vacuum (ω₁, ω₂) and a coherent state (ω₃).
    #[default]
    Linearized,
    /// The printed closed-form covariances with common factor S_a S_p²/(fλ₃)².
    /// Indefinite for typical parameters, so assembly fails the PSD check.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StatsOptions {
    /// Evaluate every pixel at q = 0 instead of q = k₃ r / f.
    pub axial_approximation: bool,
    pub covariance_model: CovarianceModel,
    pub exec: Exec,
}

/// Statistics coefficients of one pixel, per unit illumination count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelResponse {
    /// |Q_j3|² for arms 1..3.
    pub conversion: [f64; 3],
    /// σ₁², σ₂², σ₃².
    pub variance: [f64; 3],
    /// Closed-form (C₁₂, C₁₃, C₂₃).
    pub closed_form: [f64; 3],
    /// Linearised (C₁₂, C₁₃, C₂₃).
    pub linearized: [f64; 3],
}

impl PixelResponse {
    pub fn from_transfer(q: &TransferMatrix, mode_factor: f64) -> Self {
        let a = |n, m| q.gain(n, m);
        let conversion = [a(1, 3), a(2, 3), a(3, 3)];
        let variance = [
            (1.0 + 2.0 * a(1, 2)) * a(1, 3),
            (1.0 + 2.0 * mode_factor * a(2, 1)) * a(2, 3),
            (1.0 + 2.0 * a(3, 2)) * a(3, 3),
        ];
        let closed_form = [
            mode_factor * a(2, 3) * (a(1, 2) + a(1, 3)),
            mode_factor * (a(1, 2) * a(3, 3) + a(1, 3) * a(3, 2)),
            mode_factor * a(2, 3) * (a(3, 2) + a(3, 3)),
        ];
        let lin = linearized_moments(q);
        Self {
            conversion,
            variance,
            closed_form,
            linearized: [lin[(0, 1)], lin[(0, 2)], lin[(1, 2)]],
        }
    }

    fn off_diagonal(&self, model: CovarianceModel) -> [f64; 3] {
        match model {
            CovarianceModel::Linearized => self.linearized,
            CovarianceModel::ClosedForm => self.closed_form,
        }
    }

    /// Symmetric 3×3: variances on the diagonal, chosen covariances off it.
    pub fn assembled(&self, model: CovarianceModel) -> Matrix3<f64> {
        let [c12, c13, c23] = self.off_diagonal(model);
        let [v1, v2, v3] = self.variance;
        Matrix3::new(v1, c12, c13, c12, v2, c23, c13, c23, v3)
    }
}

/// Full covariance of the linearised photon-number fluctuations per unit
/// coherent amplitude |α|² = 1 (symmetrised, so PSD by construction).
///
/// With input fluctuations x = (a₁, a₂†, δa₃) the outputs are b = Q x and
/// ΔN_j = u_j b_j + h.c. with u_j = conj(Q_j3); vacuum gives
/// ⟨x x†⟩ = diag(1, 0, 1) and ⟨x_m† x_n⟩ = diag(0, 1, 0).
pub fn linearized_moments(q: &TransferMatrix) -> Matrix3<f64> {
    let e = &q.entries;
    let u: [Complex64; 3] = [e[(0, 2)].conj(), e[(1, 2)].conj(), e[(2, 2)].conj()];
    let mut out = Matrix3::zeros();
    for j in 0..3 {
        for l in 0..3 {
            // ⟨b_j b_l†⟩ over modes 1 and 3; ⟨b_j† b_l⟩ over mode 2.
            let k = e[(j, 0)] * e[(l, 0)].conj() + e[(j, 2)] * e[(l, 2)].conj();
            let h = e[(j, 1)].conj() * e[(l, 1)];
            out[(j, l)] = (u[j] * u[l].conj() * k + u[j].conj() * u[l] * h).re;
        }
    }
    out
}

/// Image-plane radius of pixel (x, y) from the optical axis at the image centre.
pub fn image_plane_radius(dims: Dims, x: usize, y: usize, pitch: f64) -> f64 {
    let dx = x as f64 - (dims.width as f64 - 1.0) / 2.0;
    let dy = y as f64 - (dims.height as f64 - 1.0) / 2.0;
    pitch * dx.hypot(dy)
}

/// Per-unit-illumination statistics coefficients for every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    dims: Dims,
    pixels: Vec<PixelResponse>,
    options: StatsOptions,
}

impl ResponseMap {
    pub fn new(dims: Dims, geom: &OpticalGeometry, crystal: &CrystalParams, options: StatsOptions) -> Result<Self> {
        let z = crystal.length_z();
        let mode_factor = geom.mode_factor();
        let pitch = geom.pixel_pitch();

        // Pixels sharing a radius share a transfer matrix; key on the squared
        // doubled offset, which is an exact integer.
        let key = |x: usize, y: usize| -> i64 {
            let dx = 2 * x as i64 - (dims.width as i64 - 1);
            let dy = 2 * y as i64 - (dims.height as i64 - 1);
            dx * dx + dy * dy
        };
        let mut radii: HashMap<i64, (usize, usize)> = HashMap::new();
        if options.axial_approximation {
            radii.insert(0, (0, 0));
        } else {
            for y in 0..dims.height {
                for x in 0..dims.width {
                    radii.entry(key(x, y)).or_insert((x, y));
                }
            }
        }
        let mut keys: Vec<(i64, (usize, usize))> = radii.into_iter().collect();
        keys.sort_unstable_by_key(|(k, _)| *k);
        let responses: Vec<Result<PixelResponse>> = par::map_indexed(options.exec, keys.len(), |i| {
            let (k, (x, y)) = keys[i];
            let q = if options.axial_approximation || k == 0 {
                0.0
            } else {
                geom.transverse_wave_number(image_plane_radius(dims, x, y, pitch))
            };
            let t = transfer_matrix(q, z, crystal, geom)?;
            Ok(PixelResponse::from_transfer(&t, mode_factor))
        });
        let mut table = HashMap::with_capacity(keys.len());
        for ((k, _), r) in keys.iter().zip(responses) {
            table.insert(*k, r?);
        }

        // Response in image-plane order, then reflected to object order.
        let mut pixels = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                let k = if options.axial_approximation { 0 } else { key(x, y) };
                pixels.push(table[&k]);
            }
        }
        pixels.reverse();
        Ok(Self { dims, pixels, options })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn options(&self) -> StatsOptions {
        self.options
    }

    pub fn pixel(&self, p: usize) -> &PixelResponse {
        &self.pixels[p]
    }

    pub fn pixels(&self) -> &[PixelResponse] {
        &self.pixels
    }

    /// Diagonal of C_j: |Q_j3|² per pixel.
    pub fn conversion(&self, arm: Arm) -> Vec<f64> {
        self.pixels.iter().map(|p| p.conversion[arm.index()]).collect()
    }

    /// Assembled per-unit covariance of pixel `p`, checked and clipped to PSD.
    pub fn unit_covariance(&self, p: usize) -> Result<Matrix3<f64>> {
        psd_checked(self.pixels[p].assembled(self.options.covariance_model), p)
    }

    pub fn unit_covariances(&self) -> Result<Vec<Matrix3<f64>>> {
        (0..self.pixels.len()).map(|p| self.unit_covariance(p)).collect()
    }
}

/// Rejects eigenvalues below −1e−9·trace; clips smaller negatives to zero.
pub fn psd_checked(m: Matrix3<f64>, pixel: usize) -> Result<Matrix3<f64>> {
    let trace = m.trace();
    if trace == 0.0 && m.iter().all(|v| *v == 0.0) {
        return Ok(m);
    }
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * trace.abs() || trace < 0.0 {
        return Err(Error::ModelInconsistency {
            pixel,
            min_eigenvalue: min,
            trace,
        });
    }
    if min < 0.0 {
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        return Ok(eig.eigenvectors * Matrix3::from_diagonal(&clipped) * eig.eigenvectors.transpose());
    }
    Ok(m)
}

/// l_j1 / l_j2 = λ_j / λ₃ that equalises the scale of arm j with arm 3.
pub fn scale_ratio(arm: Arm, geom: &OpticalGeometry) -> Result<f64> {
    match arm {
        Arm::One | Arm::Two => Ok(geom.wavelength(arm) / geom.wavelength(Arm::Three)),
        Arm::Three => Err(Error::param("scale equalisation applies to arms 1 and 2 only")),
    }
}

/// Three co-registered per-pixel images, one per arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmImages {
    pub dims: Dims,
    pub arms: [Vec<f64>; 3],
}

impl ArmImages {
    pub fn arm(&self, arm: Arm) -> &[f64] {
        &self.arms[arm.index()]
    }

    pub fn to_image(&self, arm: Arm) -> Image {
        Image::new(self.dims, self.arms[arm.index()].clone()).expect("dims match")
    }
}

/// (C₁₂, C₁₃, C₂₃) per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovariances {
    pub dims: Dims,
    pub c12: Vec<f64>,
    pub c13: Vec<f64>,
    pub c23: Vec<f64>,
}

fn per_arm(object: &ObjectImage, map: &ResponseMap, f: impl Fn(&PixelResponse) -> [f64; 3]) -> ArmImages {
    let g = object.illumination();
    let mut arms: [Vec<f64>; 3] = Default::default();
    for (p, gp) in g.iter().enumerate() {
        let v = f(map.pixel(p));
        for k in 0..3 {
            arms[k].push(v[k] * gp);
        }
    }
    ArmImages { dims: map.dims(), arms }
}

fn cross(object: &ObjectImage, map: &ResponseMap, f: impl Fn(&PixelResponse) -> [f64; 3]) -> CrossCovariances {
    let a = per_arm(object, map, f);
    let [c12, c13, c23] = a.arms;
    CrossCovariances { dims: a.dims, c12, c13, c23 }
}

/// ⟨N̂_j⟩ = |Q_j3(k₃r/f)|² S_p ⟨N̂₃₀⟩ per pixel.
pub fn mean_photon_numbers(
    object: &ObjectImage,
    geom: &OpticalGeometry,
    crystal: &CrystalParams,
    options: StatsOptions,
) -> Result<ArmImages> {
    let map = ResponseMap::new(object.dims(), geom, crystal, options)?;
    Ok(per_arm(object, &map, |p| p.conversion))
}

/// σ₃² = [1+2|Q₃₂|²]|Q₃₃|², σ₂² = [1+2(S_aS_p/(fλ₃)²)|Q₂₁|²]|Q₂₃|²,
/// σ₁² = [1+2|Q₁₂|²]|Q₁₃|², each times S_p⟨N̂₃₀⟩.
pub fn photon_variances(
    object: &ObjectImage,
    geom: &OpticalGeometry,
    crystal: &CrystalParams,
    options: StatsOptions,
) -> Result<ArmImages> {
    let map = ResponseMap::new(object.dims(), geom, crystal, options)?;
    Ok(per_arm(object, &map, |p| p.variance))
}

/// Closed-form cross-arm covariances.
pub fn photon_covariances(
    object: &ObjectImage,
    geom: &OpticalGeometry,
    crystal: &CrystalParams,
    options: StatsOptions,
) -> Result<CrossCovariances> {
    let map = ResponseMap::new(object.dims(), geom, crystal, options)?;
    Ok(cross(object, &map, |p| p.closed_form))
}

/// Cross-arm covariances of the linearised fluctuation model.
pub fn linearized_covariances(
    object: &ObjectImage,
    geom: &OpticalGeometry,
    crystal: &CrystalParams,
    options: StatsOptions,
) -> Result<CrossCovariances> {
    let map = ResponseMap::new(object.dims(), geom, crystal, options)?;
    Ok(cross(object, &map, |p| p.linearized))
}

/// Means and per-pixel 3×3 covariances of the three arms.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelStatistics {
    pub dims: Dims,
    pub means: Vec<[f64; 3]>,
    pub covariance: Vec<Matrix3<f64>>,
}

impl PixelStatistics {
    pub fn from_response(object: &ObjectImage, map: &ResponseMap) -> Result<Self> {
        if object.dims() != map.dims() {
            return Err(Error::DimensionMismatch {
                context: "pixel statistics",
                expected: map.dims().to_string(),
                got: object.dims().to_string(),
            });
        }
        let g = object.illumination();
        let mut means = Vec::with_capacity(g.len());
        let mut covariance = Vec::with_capacity(g.len());
        for (p, &gp) in g.iter().enumerate() {
            let r = map.pixel(p);
            means.push(r.conversion.map(|c| c * gp));
            covariance.push(map.unit_covariance(p)? * gp);
        }
        Ok(Self {
            dims: map.dims(),
            means,
            covariance,
        })
    }
}

pub fn pixel_covariance_matrix(
    object: &ObjectImage,
    geom: &OpticalGeometry,
    crystal: &CrystalParams,
    options: StatsOptions,
) -> Result<PixelStatistics> {
    let map = ResponseMap::new(object.dims(), geom, crystal, options)?;
    PixelStatistics::from_response(object, &map)
}
