//! Three-arm acquisition model ξ = A g + ν.
//!
//! Sensors in each arm integrate a `psf_width × psf_width` window of the
//! (scale-equalised, co-registered) output image. A window operator is
//! separable, so [`SensorMatrix`] stores its two 1-D factors and never
//! materialises the Kronecker product unless asked.
//!
//! Dense constructors (`sensor_matrix`, `assemble_forward`, ...) are meant for
//! small images and for cross-checking; [`MeasurementModel`] is the structured
//! form used by the experiment runner.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::Dims;
use crate::optics::{Arm, CrystalParams, OpticalGeometry};
use crate::stats::{ResponseMap, StatsOptions, PSD_TOLERANCE};

/// Reciprocal condition number below which a 1-D window factor is treated as
/// singular for the structured inverse.
const FACTOR_RCOND: f64 = 1e-12;

/// Window geometry of one arm's sensor array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub psf_width: usize,
    pub stride: usize,
    pub offset: usize,
    pub response: f64,
}

impl Default for SensorModel {
    /// Overlapping sensors three pixels wide on every pixel.
    fn default() -> Self {
        Self {
            psf_width: 3,
            stride: 1,
            offset: 0,
            response: 1.0,
        }
    }
}

impl SensorModel {
    pub fn new(psf_width: usize, stride: usize, offset: usize, response: f64) -> Result<Self> {
        let s = Self {
            psf_width,
            stride,
            offset,
            response,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.psf_width == 0 || self.stride == 0 {
            return Err(Error::param("sensor psf_width and stride must be >= 1"));
        }
        if self.offset >= self.stride + self.psf_width {
            return Err(Error::param(format!(
                "sensor offset {} must be < stride + psf_width = {}",
                self.offset,
                self.stride + self.psf_width
            )));
        }
        if !(self.response.is_finite() && self.response > 0.0) {
            return Err(Error::param(format!("sensor response must be > 0, got {}", self.response)));
        }
        Ok(())
    }

    /// Sensors along an axis of `len` pixels: centres at offset + p·stride.
    pub fn sensor_count(&self, len: usize) -> usize {
        if self.offset >= len {
            0
        } else {
            (len - self.offset).div_ceil(self.stride)
        }
    }

    /// 1-D 0/1 window matrix (sensors × pixels), borders truncated.
    pub fn window_matrix(&self, len: usize) -> Result<DMatrix<f64>> {
        self.validate()?;
        let count = self.sensor_count(len);
        if count == 0 {
            return Err(Error::param(format!(
                "sensor offset {} leaves no sensor on a {len}-pixel axis",
                self.offset
            )));
        }
        let half = (self.psf_width - 1) / 2;
        let mut m = DMatrix::zeros(count, len);
        for p in 0..count {
            let centre = self.offset + p * self.stride;
            let start = centre.saturating_sub(half);
            let end = (centre + self.psf_width - half).min(len);
            for k in start..end {
                m[(p, k)] = 1.0;
            }
        }
        Ok(m)
    }
}

/// Sensor geometry of all three arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorLayout {
    pub arms: [SensorModel; 3],
}

impl Default for SensorLayout {
    fn default() -> Self {
        Self::overlapping()
    }
}

impl SensorLayout {
    pub fn uniform(sensor: SensorModel) -> Self {
        Self { arms: [sensor; 3] }
    }

    /// 3-pixel windows at every pixel in every arm.
    pub fn overlapping() -> Self {
        Self::uniform(SensorModel::default())
    }

    /// Non-overlapping 3-pixel tiles, shifted by one pixel from arm to arm.
    pub fn tiled() -> Self {
        let tile = |offset| SensorModel {
            psf_width: 3,
            stride: 3,
            offset,
            response: 1.0,
        };
        Self {
            arms: [tile(0), tile(1), tile(2)],
        }
    }

    /// Non-overlapping 3-pixel tiles on the same grid in every arm.
    pub fn aligned_tiled() -> Self {
        Self::uniform(SensorModel {
            psf_width: 3,
            stride: 3,
            offset: 0,
            response: 1.0,
        })
    }

    pub fn arm(&self, arm: Arm) -> &SensorModel {
        &self.arms[arm.index()]
    }
}

/// Separable sensor operator `response · (R_y ⊗ R_x)` on row-major images.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorMatrix {
    dims: Dims,
    rows: DMatrix<f64>,
    cols: DMatrix<f64>,
    response: f64,
}

impl SensorMatrix {
    pub fn new(sensor: &SensorModel, dims: Dims) -> Result<Self> {
        Ok(Self {
            dims,
            rows: sensor.window_matrix(dims.height)?,
            cols: sensor.window_matrix(dims.width)?,
            response: sensor.response,
        })
    }

    pub fn image_dims(&self) -> Dims {
        self.dims
    }

    /// Sensor grid as an image: `cols.nrows()` wide, `rows.nrows()` high.
    pub fn sensor_dims(&self) -> Dims {
        Dims {
            width: self.cols.nrows(),
            height: self.rows.nrows(),
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.rows.nrows() * self.cols.nrows()
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<()> {
        if got != expected {
            return Err(Error::DimensionMismatch {
                context: "sensor matrix",
                expected: expected.to_string(),
                got: got.to_string(),
            });
        }
        Ok(())
    }

    /// B x for a row-major pixel vector.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len(), self.dims.len())?;
        let img = DMatrix::from_row_slice(self.dims.height, self.dims.width, x);
        let out = &self.rows * img * self.cols.transpose() * self.response;
        Ok(row_major(&out))
    }

    /// Bᵀ y for a row-major sensor vector.
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        let sd = self.sensor_dims();
        self.check_len(y.len(), sd.len())?;
        let s = DMatrix::from_row_slice(sd.height, sd.width, y);
        let out = self.rows.transpose() * s * &self.cols * self.response;
        Ok(row_major(&out))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.rows.kronecker(&self.cols) * self.response
    }

    /// Inverse when both factors are square and numerically nonsingular.
    pub fn inverse(&self) -> Option<SensorInverse> {
        let inv = |m: &DMatrix<f64>| -> Option<DMatrix<f64>> {
            if !m.is_square() {
                return None;
            }
            let sv = m.singular_values();
            let (max, min) = (sv.max(), sv.min());
            if max == 0.0 || min / max < FACTOR_RCOND {
                return None;
            }
            m.clone().try_inverse()
        };
        Some(SensorInverse {
            rows: inv(&self.rows)?,
            cols: inv(&self.cols)?,
            scale: 1.0 / self.response,
        })
    }

    /// Rank of the full operator (product of the factor ranks).
    pub fn rank(&self, tolerance: f64) -> usize {
        let r = |m: &DMatrix<f64>| {
            let sv = m.singular_values();
            let cut = tolerance * sv.max();
            sv.iter().filter(|s| **s > cut).count()
        };
        r(&self.rows) * r(&self.cols)
    }
}

/// Inverse of a square [`SensorMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct SensorInverse {
    rows: DMatrix<f64>,
    cols: DMatrix<f64>,
    scale: f64,
}

impl SensorInverse {
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let (h, w) = (self.rows.nrows(), self.cols.nrows());
        let s = DMatrix::from_row_slice(h, w, y);
        row_major(&(&self.rows * s * self.cols.transpose() * self.scale))
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter().copied());
    }
    out
}

/// Dense B_i.
pub fn sensor_matrix(sensor: &SensorModel, dims: Dims) -> Result<DMatrix<f64>> {
    Ok(SensorMatrix::new(sensor, dims)?.to_dense())
}

/// Dense diagonal C_j with entries |Q_j3(k₃r/f)|² (photons per unit g).
pub fn conversion_matrix(
    arm: Arm,
    dims: Dims,
    geom: &OpticalGeometry,
    crystal: &CrystalParams,
    options: StatsOptions,
) -> Result<DMatrix<f64>> {
    let map = ResponseMap::new(dims, geom, crystal, options)?;
    Ok(DMatrix::from_diagonal(&DVector::from_vec(map.conversion(arm))))
}

/// Vertical stack (B₁C₁; B₂C₂; ...) over however many arms are given.
pub fn assemble_forward(b: &[DMatrix<f64>], c: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if b.is_empty() || b.len() != c.len() {
        return Err(Error::DimensionMismatch {
            context: "assemble_forward arm count",
            expected: b.len().to_string(),
            got: c.len().to_string(),
        });
    }
    let cols = c[0].ncols();
    let mut blocks = Vec::with_capacity(b.len());
    for (bi, ci) in b.iter().zip(c) {
        if bi.ncols() != ci.nrows() || ci.ncols() != cols {
            return Err(Error::DimensionMismatch {
                context: "assemble_forward block",
                expected: format!("B with {} columns, C {}x{cols}", ci.nrows(), ci.nrows()),
                got: format!("B {}x{}, C {}x{}", bi.nrows(), bi.ncols(), ci.nrows(), ci.ncols()),
            });
        }
        blocks.push(bi * ci);
    }
    let rows: usize = blocks.iter().map(|m| m.nrows()).sum();
    let mut a = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for m in blocks {
        a.view_mut((r0, 0), (m.nrows(), cols)).copy_from(&m);
        r0 += m.nrows();
    }
    Ok(a)
}

/// B_j C_j for the single-image comparison.
pub fn assemble_forward_single(b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    assemble_forward(std::slice::from_ref(b), std::slice::from_ref(c))
}

/// Σ_ν(g) with blocks B_i Σ_ij(g) B_jᵀ plus the optional extra noise Σ_ν′.
///
/// `b[k]` is the sensor matrix of `arms[k]`. The result is symmetrised and
/// small negative eigenvalues are clipped.
pub fn assemble_noise_covariance(
    g: &[f64],
    b: &[DMatrix<f64>],
    arms: &[Arm],
    map: &ResponseMap,
    extra: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let n = map.dims().len();
    if g.len() != n {
        return Err(Error::DimensionMismatch {
            context: "noise covariance illumination",
            expected: n.to_string(),
            got: g.len().to_string(),
        });
    }
    if b.len() != arms.len() || b.iter().any(|m| m.ncols() != n) {
        return Err(Error::DimensionMismatch {
            context: "noise covariance sensor blocks",
            expected: format!("{} blocks with {n} columns", arms.len()),
            got: format!("{} blocks", b.len()),
        });
    }
    check_illumination(g)?;
    let unit = map.unit_covariances()?;
    let offsets: Vec<usize> = b
        .iter()
        .scan(0, |acc, m| {
            let o = *acc;
            *acc += m.nrows();
            Some(o)
        })
        .collect();
    let total: usize = b.iter().map(|m| m.nrows()).sum();
    let mut sigma = DMatrix::zeros(total, total);
    for (ii, ai) in arms.iter().enumerate() {
        for (jj, aj) in arms.iter().enumerate().skip(ii) {
            let s: Vec<f64> = (0..n).map(|p| g[p] * unit[p][(ai.index(), aj.index())]).collect();
            // B_i diag(s) B_jᵀ
            let mut scaled = b[ii].clone();
            for (col, sp) in s.iter().enumerate() {
                scaled.column_mut(col).scale_mut(*sp);
            }
            let block = scaled * b[jj].transpose();
            sigma
                .view_mut((offsets[ii], offsets[jj]), (block.nrows(), block.ncols()))
                .copy_from(&block);
            if ii != jj {
                sigma
                    .view_mut((offsets[jj], offsets[ii]), (block.ncols(), block.nrows()))
                    .copy_from(&block.transpose());
            }
        }
    }
    if let Some(e) = extra {
        if e.shape() != sigma.shape() {
            return Err(Error::DimensionMismatch {
                context: "extra noise covariance",
                expected: format!("{total}x{total}"),
                got: format!("{}x{}", e.nrows(), e.ncols()),
            });
        }
        sigma += e;
    }
    psd_clip(sigma, "noise covariance")
}

fn check_illumination(g: &[f64]) -> Result<()> {
    if let Some((p, v)) = g.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Range(format!("illumination {v} at pixel {p} must be finite and >= 0")));
    }
    Ok(())
}

/// Symmetrises, rejects eigenvalues below −1e−9·trace and clips the rest.
pub fn psd_clip(m: DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let sym = (&m + m.transpose()) * 0.5;
    let trace = sym.trace();
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * trace.abs() {
        return Err(Error::NotPsd {
            context,
            min_eigenvalue: min,
            trace,
        });
    }
    if min >= 0.0 {
        return Ok(sym);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&clipped) * v.transpose())
}

/// Factor L with L Lᵀ = Σ from a clipped eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFactor {
    factor: DMatrix<f64>,
}

impl NoiseFactor {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::DimensionMismatch {
                context: "noise factor",
                expected: "square matrix".into(),
                got: format!("{}x{}", sigma.nrows(), sigma.ncols()),
            });
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "noise factor",
                detail: "non-finite covariance entry".into(),
            });
        }
        let sym = (sigma + sigma.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let mut factor = eig.eigenvectors;
        for (j, r) in root.iter().enumerate() {
            factor.column_mut(j).scale_mut(*r);
        }
        Ok(Self { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// One draw of L w, w ~ N(0, I).
    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let w = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample(StandardNormal)));
        &self.factor * w
    }

    /// `mean + L w` from a generator seeded with `seed`.
    pub fn sample_seeded(&self, mean: &DVector<f64>, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        mean + self.sample(&mut rng)
    }
}

/// ξ = A g + L w with L Lᵀ = Σ_ν and w drawn from a generator seeded by `seed`.
pub fn simulate_measurement(g: &DVector<f64>, a: &DMatrix<f64>, sigma: &DMatrix<f64>, seed: u64) -> Result<DVector<f64>> {
    if a.ncols() != g.len() || sigma.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch {
            context: "simulate_measurement",
            expected: format!("A {}x{}, Σ {}x{}", a.nrows(), g.len(), a.nrows(), a.nrows()),
            got: format!("A {}x{}, Σ {}x{}", a.nrows(), a.ncols(), sigma.nrows(), sigma.ncols()),
        });
    }
    let factor = NoiseFactor::new(sigma)?;
    Ok(factor.sample_seeded(&(a * g), seed))
}

/// Structured three-arm measurement model for one object size and crystal.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    dims: Dims,
    arms: Vec<Arm>,
    sensors: [SensorMatrix; 3],
    response: ResponseMap,
    unit_covariance: Vec<Matrix3<f64>>,
    unit_factor: Vec<Matrix3<f64>>,
    dark_variance: [f64; 3],
    photons_per_pixel: f64,
}

impl MeasurementModel {
    pub fn new(
        layout: &SensorLayout,
        response: ResponseMap,
        dark_variance: [f64; 3],
        photons_per_pixel: f64,
    ) -> Result<Self> {
        if !(photons_per_pixel.is_finite() && photons_per_pixel > 0.0) {
            return Err(Error::param(format!("photons per pixel must be > 0, got {photons_per_pixel}")));
        }
        if dark_variance.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("dark-noise variances must be finite and >= 0"));
        }
        let dims = response.dims();
        let sensors = [
            SensorMatrix::new(layout.arm(Arm::One), dims)?,
            SensorMatrix::new(layout.arm(Arm::Two), dims)?,
            SensorMatrix::new(layout.arm(Arm::Three), dims)?,
        ];
        let unit_covariance = response.unit_covariances()?;
        let unit_factor = unit_covariance.iter().map(factor3).collect();
        Ok(Self {
            dims,
            arms: Arm::ALL.to_vec(),
            sensors,
            response,
            unit_covariance,
            unit_factor,
            dark_variance,
            photons_per_pixel,
        })
    }

    /// Same device restricted to a subset of arms (in the given order).
    pub fn with_arms(&self, arms: &[Arm]) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::param("at least one arm is required"));
        }
        for (i, a) in arms.iter().enumerate() {
            if arms[..i].contains(a) {
                return Err(Error::param(format!("arm {a} listed twice")));
            }
        }
        let mut m = self.clone();
        m.arms = arms.to_vec();
        Ok(m)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn sensors(&self, arm: Arm) -> &SensorMatrix {
        &self.sensors[arm.index()]
    }

    pub fn response(&self) -> &ResponseMap {
        &self.response
    }

    /// Per-unit-g 3×3 covariance of pixel `p` (all three arms).
    pub fn unit_covariance(&self, p: usize) -> &Matrix3<f64> {
        &self.unit_covariance[p]
    }

    pub fn dark_variance(&self, arm: Arm) -> f64 {
        self.dark_variance[arm.index()]
    }

    pub fn photons_per_pixel(&self) -> f64 {
        self.photons_per_pixel
    }

    /// Scale of the ideal device U = I/n: U g is the transparency.
    pub fn ideal_scale(&self) -> f64 {
        1.0 / self.photons_per_pixel
    }

    /// g = n·1, every pixel fully transparent.
    pub fn worst_case_g(&self) -> Vec<f64> {
        vec![self.photons_per_pixel; self.dims.len()]
    }

    /// Total sensor count over the active arms.
    pub fn rows(&self) -> usize {
        self.arms.iter().map(|a| self.sensors(*a).sensor_count()).sum()
    }

    fn check_g(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.dims.len() {
            return Err(Error::DimensionMismatch {
                context: "illumination vector",
                expected: self.dims.len().to_string(),
                got: g.len().to_string(),
            });
        }
        check_illumination(g)
    }

    /// Noise-free sensor readouts of one arm, B_j C_j g.
    pub fn arm_forward(&self, arm: Arm, g: &[f64]) -> Result<Vec<f64>> {
        self.check_g(g)?;
        let conv: Vec<f64> = self
            .response
            .pixels()
            .iter()
            .zip(g)
            .map(|(r, gp)| r.conversion[arm.index()] * gp)
            .collect();
        self.sensors(arm).apply(&conv)
    }

    /// A g over the active arms.
    pub fn forward(&self, g: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.rows());
        for arm in &self.arms {
            out.extend(self.arm_forward(*arm, g)?);
        }
        Ok(out)
    }

    /// Noisy readouts of all three arms from a generator seeded with `seed`.
    ///
    /// The draw order (three normals per pixel, then dark noise per sensor of
    /// arms 1, 2, 3) does not depend on the active arms, so restricting the
    /// model to a subset selects blocks of the very same realisation.
    pub fn simulate_all_arms(&self, g: &[f64], seed: u64) -> Result<[Vec<f64>; 3]> {
        self.check_g(g)?;
        let n = self.dims.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fluct: [Vec<f64>; 3] = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for p in 0..n {
            let w = Vector3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let e = self.unit_factor[p] * w * g[p].sqrt();
            for k in 0..3 {
                fluct[k][p] = e[k];
            }
        }
        let mut out: [Vec<f64>; 3] = Default::default();
        for arm in Arm::ALL {
            let k = arm.index();
            let conv: Vec<f64> = self
                .response
                .pixels()
                .iter()
                .zip(g)
                .zip(&fluct[k])
                .map(|((r, gp), e)| r.conversion[k] * gp + e)
                .collect();
            let mut xi = self.sensors[k].apply(&conv)?;
            let dark = self.dark_variance[k].sqrt();
            for v in xi.iter_mut() {
                let w: f64 = rng.sample(StandardNormal);
                *v += dark * w;
            }
            out[k] = xi;
        }
        Ok(out)
    }

    /// Stacks per-arm readouts in active-arm order.
    pub fn select(&self, all: &[Vec<f64>; 3]) -> Vec<f64> {
        self.arms.iter().flat_map(|a| all[a.index()].iter().copied()).collect()
    }

    /// ξ = A g + ν over the active arms.
    pub fn simulate(&self, g: &[f64], seed: u64) -> Result<Vec<f64>> {
        Ok(self.select(&self.simulate_all_arms(g, seed)?))
    }

    /// Dense A over the active arms.
    pub fn dense_forward(&self) -> Result<DMatrix<f64>> {
        let (b, c) = self.dense_blocks();
        assemble_forward(&b, &c)
    }

    fn dense_blocks(&self) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let b = self.arms.iter().map(|a| self.sensors(*a).to_dense()).collect();
        let c = self
            .arms
            .iter()
            .map(|a| DMatrix::from_diagonal(&DVector::from_vec(self.response.conversion(*a))))
            .collect();
        (b, c)
    }

    /// Dense Σ_ν(g) over the active arms, dark noise included.
    pub fn dense_noise_covariance(&self, g: &[f64]) -> Result<DMatrix<f64>> {
        self.check_g(g)?;
        let (b, _) = self.dense_blocks();
        let dark: Vec<f64> = self
            .arms
            .iter()
            .flat_map(|a| std::iter::repeat_n(self.dark_variance(*a), self.sensors(*a).sensor_count()))
            .collect();
        let extra = dark
            .iter()
            .any(|v| *v > 0.0)
            .then(|| DMatrix::from_diagonal(&DVector::from_vec(dark)));
        assemble_noise_covariance(g, &b, &self.arms, &self.response, extra.as_ref())
    }

    /// Dense U = I/n.
    pub fn dense_ideal(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dims.len(), self.dims.len()) * self.ideal_scale()
    }
}

/// L with L Lᵀ = S for a PSD 3×3 (clipped eigen factor).
fn factor3(s: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*s);
    let mut l = eig.eigenvectors;
    for j in 0..3 {
        let r = eig.eigenvalues[j].max(0.0).sqrt();
        l.column_mut(j).scale_mut(r);
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::stats::{ObjectImage, PixelStatistics};
    use approx::assert_relative_eq;

    fn model(dims: Dims, layout: SensorLayout) -> MeasurementModel {
        let geom = OpticalGeometry::default();
        let crystal = CrystalParams::from_dimensionless(100.0, 0.4, 1.0).unwrap();
        let map = ResponseMap::new(dims, &geom, &crystal, StatsOptions::default()).unwrap();
        MeasurementModel::new(&layout, map, [0.0; 3], 10.0).unwrap()
    }

    #[test]
    fn unit_window_is_identity() {
        let s = SensorModel::new(1, 1, 0, 1.0).unwrap();
        let d = Dims::new(3, 2).unwrap();
        assert_eq!(sensor_matrix(&s, d).unwrap(), DMatrix::identity(6, 6));
    }

    #[test]
    fn overlapping_window_is_banded() {
        let m = SensorModel::default().window_matrix(5).unwrap();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(5, 5, &[
            1., 1., 0., 0., 0.,
            1., 1., 1., 0., 0.,
            0., 1., 1., 1., 0.,
            0., 0., 1., 1., 1.,
            0., 0., 0., 1., 1.,
        ]);
        assert_eq!(m, expected);
    }

    #[test]
    fn row_sums_count_window_area() {
        // window-counting oracle over a spread of configurations
        for (w, s, o, len_x, len_y) in [(3, 1, 0, 7, 5), (2, 3, 1, 8, 9), (4, 2, 3, 10, 6), (1, 5, 2, 11, 4)] {
            let sensor = SensorModel::new(w, s, o, 2.0).unwrap();
            let dims = Dims::new(len_x, len_y).unwrap();
            let b = sensor_matrix(&sensor, dims).unwrap();
            let ones = b * DVector::from_element(dims.len(), 1.0);
            let axis = |len: usize, p: usize| {
                let c = (o + p * s) as i64;
                let start = (c - ((w - 1) / 2) as i64).max(0);
                let end = (c - ((w - 1) / 2) as i64 + w as i64).min(len as i64);
                (end - start) as f64
            };
            let nx = sensor.sensor_count(len_x);
            for (k, v) in ones.iter().enumerate() {
                let (py, px) = (k / nx, k % nx);
                assert_eq!(*v, 2.0 * axis(len_y, py) * axis(len_x, px));
            }
        }
    }

    #[test]
    fn invalid_sensor_configs() {
        assert!(SensorModel::new(0, 1, 0, 1.0).is_err());
        assert!(SensorModel::new(3, 0, 0, 1.0).is_err());
        assert!(SensorModel::new(3, 1, 4, 1.0).is_err());
        assert!(SensorModel::new(3, 1, 0, 0.0).is_err());
        // offset beyond a tiny image leaves no sensors
        let s = SensorModel::new(3, 3, 4, 1.0).unwrap();
        assert!(s.window_matrix(3).is_err());
    }

    #[test]
    fn separable_apply_matches_dense() {
        let dims = Dims::new(7, 5).unwrap();
        for sensor in [SensorModel::default(), SensorModel::new(3, 3, 1, 0.5).unwrap()] {
            let sm = SensorMatrix::new(&sensor, dims).unwrap();
            let dense = sm.to_dense();
            let x: Vec<f64> = (0..dims.len()).map(|i| (i as f64 * 0.37).sin()).collect();
            let y = sm.apply(&x).unwrap();
            let yd = &dense * DVector::from_column_slice(&x);
            for (a, b) in y.iter().zip(yd.iter()) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
            let z: Vec<f64> = (0..sm.sensor_count()).map(|i| (i as f64 * 0.11).cos()).collect();
            let zt = sm.apply_transpose(&z).unwrap();
            let zd = dense.transpose() * DVector::from_column_slice(&z);
            for (a, b) in zt.iter().zip(zd.iter()) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn overlapping_invertibility_follows_length() {
        // tridiagonal ones of size n is singular exactly when 3 | n + 1
        for (n, invertible) in [(8, false), (16, true), (32, false), (64, true)] {
            let sm = SensorMatrix::new(&SensorModel::default(), Dims::square(n).unwrap()).unwrap();
            assert_eq!(sm.inverse().is_some(), invertible, "n = {n}");
        }
        let sm = SensorMatrix::new(&SensorModel::default(), Dims::new(16, 10).unwrap()).unwrap();
        let inv = sm.inverse().unwrap();
        let x: Vec<f64> = (0..160).map(|i| i as f64).collect();
        for (a, b) in inv.apply(&sm.apply(&x).unwrap()).iter().zip(&x) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn identity_blocks_stack() {
        let i = DMatrix::<f64>::identity(4, 4);
        let a = assemble_forward(&[i.clone(), i.clone(), i.clone()], &[i.clone(), i.clone(), i.clone()]).unwrap();
        assert_eq!(a.shape(), (12, 4));
        for k in 0..3 {
            assert_eq!(a.view((4 * k, 0), (4, 4)), i);
        }
        assert!(assemble_forward(std::slice::from_ref(&i), &[DMatrix::identity(3, 3)]).is_err());
        assert_eq!(assemble_forward_single(&i, &(&i * 2.0)).unwrap(), &i * 2.0);
    }

    #[test]
    fn conversion_matrix_cases() {
        let geom = OpticalGeometry::default();
        let dims = Dims::square(3).unwrap();
        let no_up = CrystalParams::new(1.0, 0.0, 1.0).unwrap();
        let c1 = conversion_matrix(Arm::One, dims, &geom, &no_up, StatsOptions::default()).unwrap();
        assert!(c1.iter().all(|v| *v == 0.0));
        let crystal = CrystalParams::from_dimensionless(1.0, 0.4, 1.0).unwrap();
        let axial = StatsOptions {
            axial_approximation: true,
            ..Default::default()
        };
        let c3 = conversion_matrix(Arm::Three, dims, &geom, &crystal, axial).unwrap();
        assert_eq!(c3, DMatrix::identity(9, 9) * c3[(0, 0)]);
        // consistency with mean photon numbers divided by n·t
        let t = Image::from_fn(dims, |x, y| 0.1 + 0.1 * (x + 3 * y) as f64);
        let obj = ObjectImage::new(t, 10.0).unwrap();
        let means = crate::stats::mean_photon_numbers(&obj, &geom, &crystal, StatsOptions::default()).unwrap();
        let c2 = conversion_matrix(Arm::Two, dims, &geom, &crystal, StatsOptions::default()).unwrap();
        for p in 0..9 {
            let g = obj.illumination()[p];
            assert_relative_eq!(c2[(p, p)], means.arm(Arm::Two)[p] / g, max_relative = 1e-12);
        }
    }

    #[test]
    fn structured_forward_matches_dense() {
        let dims = Dims::new(6, 5).unwrap();
        for layout in [SensorLayout::overlapping(), SensorLayout::tiled()] {
            let m = model(dims, layout);
            let g: Vec<f64> = (0..dims.len()).map(|i| (i % 7) as f64).collect();
            let a = m.dense_forward().unwrap();
            let dense = &a * DVector::from_column_slice(&g);
            let fast = m.forward(&g).unwrap();
            assert_eq!(a.nrows(), m.rows());
            for (x, y) in fast.iter().zip(dense.iter()) {
                assert_relative_eq!(x, y, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zero_illumination_gives_zero_noise() {
        let m = model(Dims::square(4).unwrap(), SensorLayout::default());
        let s = m.dense_noise_covariance(&[0.0; 16]).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
        let xi = m.simulate(&[0.0; 16], 3).unwrap();
        assert!(xi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_sensors_give_pixel_covariance() {
        let m = model(Dims::square(1).unwrap(), SensorLayout::uniform(SensorModel::new(1, 1, 0, 1.0).unwrap()));
        let g = [7.0];
        let s = m.dense_noise_covariance(&g).unwrap();
        let obj = ObjectImage::new(Image::filled(Dims::square(1).unwrap(), 0.7), 10.0).unwrap();
        let stats = PixelStatistics::from_response(&obj, m.response()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(s[(i, j)], stats.covariance[0][(i, j)], max_relative = 1e-10, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn noise_covariance_is_monotone_in_g() {
        let m = model(Dims::square(4).unwrap(), SensorLayout::default());
        let g1: Vec<f64> = (0..16).map(|i| (i % 5) as f64).collect();
        let g2: Vec<f64> = g1.iter().map(|v| v + 0.5).collect();
        let t1 = m.dense_noise_covariance(&g1).unwrap().trace();
        let t2 = m.dense_noise_covariance(&g2).unwrap().trace();
        assert!(t2 >= t1);
    }

    #[test]
    fn simulate_is_reproducible_and_noise_free_when_sigma_zero() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 3.0, -1.0]);
        let g = DVector::from_vec(vec![0.5, 2.0]);
        let zero = DMatrix::zeros(3, 3);
        assert_eq!(simulate_measurement(&g, &a, &zero, 9).unwrap(), &a * &g);
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.1, 0.0, 0.1, 0.5]);
        let x1 = simulate_measurement(&g, &a, &sigma, 42).unwrap();
        let x2 = simulate_measurement(&g, &a, &sigma, 42).unwrap();
        let x3 = simulate_measurement(&g, &a, &sigma, 43).unwrap();
        assert_eq!(x1, x2);
        assert_ne!(x1, x3);
    }

    #[test]
    fn arm_subsets_share_the_realisation() {
        let m = model(Dims::square(4).unwrap(), SensorLayout::default());
        let g = m.worst_case_g();
        let all = m.simulate(&g, 5).unwrap();
        let single = m.with_arms(&[Arm::Two]).unwrap().simulate(&g, 5).unwrap();
        assert_eq!(&all[16..32], &single[..]);
        assert!(m.with_arms(&[]).is_err());
        assert!(m.with_arms(&[Arm::One, Arm::One]).is_err());
    }

    #[test]
    fn noise_factor_reproduces_covariance() {
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 0.0]);
        assert!(psd_clip(sigma.clone(), "test").is_err());
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 1.0]);
        let f = NoiseFactor::new(&sigma).unwrap();
        let back = f.factor() * f.factor().transpose();
        for (a, b) in back.iter().zip(sigma.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }
}
