//! Orthonormal sparsifying transforms on row-major images.
//!
//! The Haar pyramid is Mallat style: each level transforms the rows and then
//! the columns of the current low-pass block and halves it. For a diagonal
//! pixel covariance the coefficient variances are obtained by running the
//! same pyramid with squared filter taps, since every coefficient reaches a
//! pixel through exactly one path.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::image::{Dims, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transform {
    Identity,
    #[default]
    Haar,
    Dct,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Haar => "haar",
            Transform::Dct => "dct",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" | "none" => Ok(Transform::Identity),
            "haar" => Ok(Transform::Haar),
            "dct" => Ok(Transform::Dct),
            _ => Err(Error::param(format!("unknown transform `{name}` (identity, haar, dct)"))),
        }
    }

    pub fn forward(self, img: &Image) -> Result<Image> {
        match self {
            Transform::Identity => Ok(img.clone()),
            Transform::Haar => haar_forward(img),
            Transform::Dct => Ok(dct_forward(img)),
        }
    }

    pub fn inverse(self, coeffs: &Image) -> Result<Image> {
        match self {
            Transform::Identity => Ok(coeffs.clone()),
            Transform::Haar => haar_inverse(coeffs),
            Transform::Dct => Ok(dct_inverse(coeffs)),
        }
    }

    /// diag(T Σ Tᵀ) for a diagonal Σ given as per-pixel variances.
    pub fn coefficient_variances(self, variances: &Image) -> Result<Image> {
        match self {
            Transform::Identity => Ok(variances.clone()),
            Transform::Haar => haar_variances(variances),
            Transform::Dct => Ok(dct_variances(variances)),
        }
    }

    /// Dense T (coefficients × pixels), built column by column.
    pub fn dense_matrix(self, dims: Dims) -> Result<DMatrix<f64>> {
        let n = dims.len();
        let mut t = DMatrix::zeros(n, n);
        let mut e = Image::filled(dims, 0.0);
        for k in 0..n {
            e.data_mut()[k] = 1.0;
            let col = self.forward(&e)?;
            t.column_mut(k).copy_from_slice(col.data());
            e.data_mut()[k] = 0.0;
        }
        Ok(t)
    }

    /// diag(T Σ Tᵀ) for a dense Σ.
    pub fn coefficient_variances_dense(self, dims: Dims, sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
        if sigma.shape() != (dims.len(), dims.len()) {
            return Err(Error::DimensionMismatch {
                context: "coefficient variances",
                expected: format!("{0}x{0}", dims.len()),
                got: format!("{}x{}", sigma.nrows(), sigma.ncols()),
            });
        }
        let t = self.dense_matrix(dims)?;
        let ts = &t * sigma;
        Ok((0..dims.len()).map(|i| ts.row(i).dot(&t.row(i)).max(0.0)).collect())
    }
}

fn require_pow2(dims: Dims) -> Result<()> {
    if !dims.is_pow2() {
        return Err(Error::param(format!("Haar transform needs power-of-two dims, got {dims}")));
    }
    Ok(())
}

/// Low-pass block sizes visited by the pyramid, finest first.
fn haar_levels(dims: Dims) -> Vec<(usize, usize)> {
    let (mut w, mut h) = (dims.width, dims.height);
    let mut levels = Vec::new();
    while w > 1 || h > 1 {
        levels.push((w, h));
        w = (w / 2).max(1);
        h = (h / 2).max(1);
    }
    levels
}

type Pass = fn(&mut [f64], usize, usize, usize, &mut Vec<f64>);

/// One analysis pass over `len` samples at `stride`: first half low-pass,
/// second half high-pass.
fn analyse(data: &mut [f64], start: usize, stride: usize, len: usize, buf: &mut Vec<f64>) {
    let half = len / 2;
    buf.clear();
    buf.resize(len, 0.0);
    for i in 0..half {
        let a = data[start + 2 * i * stride];
        let b = data[start + (2 * i + 1) * stride];
        buf[i] = FRAC_1_SQRT_2 * (a + b);
        buf[half + i] = FRAC_1_SQRT_2 * (a - b);
    }
    for (i, v) in buf.iter().enumerate() {
        data[start + i * stride] = *v;
    }
}

/// Same pass with squared taps: both outputs get (va + vb)/2.
fn analyse_squared(data: &mut [f64], start: usize, stride: usize, len: usize, buf: &mut Vec<f64>) {
    let half = len / 2;
    buf.clear();
    buf.resize(len, 0.0);
    for i in 0..half {
        let v = 0.5 * (data[start + 2 * i * stride] + data[start + (2 * i + 1) * stride]);
        buf[i] = v;
        buf[half + i] = v;
    }
    for (i, v) in buf.iter().enumerate() {
        data[start + i * stride] = *v;
    }
}

fn synthesise(data: &mut [f64], start: usize, stride: usize, len: usize, buf: &mut Vec<f64>) {
    let half = len / 2;
    buf.clear();
    buf.resize(len, 0.0);
    for i in 0..half {
        let s = data[start + i * stride];
        let d = data[start + (half + i) * stride];
        buf[2 * i] = FRAC_1_SQRT_2 * (s + d);
        buf[2 * i + 1] = FRAC_1_SQRT_2 * (s - d);
    }
    for (i, v) in buf.iter().enumerate() {
        data[start + i * stride] = *v;
    }
}

fn haar_pyramid(img: &Image, pass: Pass) -> Result<Image> {
    let dims = img.dims();
    require_pow2(dims)?;
    let w = dims.width;
    let mut data = img.data().to_vec();
    let mut buf = Vec::new();
    for (cw, ch) in haar_levels(dims) {
        if cw > 1 {
            for y in 0..ch {
                pass(&mut data, y * w, 1, cw, &mut buf);
            }
        }
        if ch > 1 {
            for x in 0..cw {
                pass(&mut data, x, w, ch, &mut buf);
            }
        }
    }
    Image::new(dims, data)
}

pub fn haar_forward(img: &Image) -> Result<Image> {
    haar_pyramid(img, analyse)
}

pub fn haar_inverse(coeffs: &Image) -> Result<Image> {
    let dims = coeffs.dims();
    require_pow2(dims)?;
    let w = dims.width;
    let mut data = coeffs.data().to_vec();
    let mut buf = Vec::new();
    for (cw, ch) in haar_levels(dims).into_iter().rev() {
        if ch > 1 {
            for x in 0..cw {
                synthesise(&mut data, x, w, ch, &mut buf);
            }
        }
        if cw > 1 {
            for y in 0..ch {
                synthesise(&mut data, y * w, 1, cw, &mut buf);
            }
        }
    }
    Image::new(dims, data)
}

/// Haar coefficient variances for independent pixels.
pub fn haar_variances(variances: &Image) -> Result<Image> {
    haar_pyramid(variances, analyse_squared)
}

/// Orthonormal DCT-II matrix of size n (rows are frequencies).
pub fn dct_matrix(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    DMatrix::from_fn(n, n, |k, i| {
        let alpha = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        alpha * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos()
    })
}

fn separable(img: &Image, rows: &DMatrix<f64>, cols: &DMatrix<f64>) -> Image {
    let dims = img.dims();
    let x = DMatrix::from_row_slice(dims.height, dims.width, img.data());
    let y = rows * x * cols.transpose();
    let mut data = Vec::with_capacity(dims.len());
    for r in 0..dims.height {
        data.extend(y.row(r).iter().copied());
    }
    Image::new(dims, data).expect("separable transform keeps dims")
}

pub fn dct_forward(img: &Image) -> Image {
    let d = img.dims();
    separable(img, &dct_matrix(d.height), &dct_matrix(d.width))
}

/// Type-III inverse of [`dct_forward`].
pub fn dct_inverse(coeffs: &Image) -> Image {
    let d = coeffs.dims();
    separable(coeffs, &dct_matrix(d.height).transpose(), &dct_matrix(d.width).transpose())
}

/// DCT coefficient variances for independent pixels.
pub fn dct_variances(variances: &Image) -> Image {
    let d = variances.dims();
    let sq = |n| dct_matrix(n).map(|v| v * v);
    separable(variances, &sq(d.height), &sq(d.width))
}

/// Hard threshold: zero where |c_i| < τ σ_i.
pub fn threshold_components(coeffs: &[f64], sigmas: &[f64], tau: f64) -> Result<Vec<f64>> {
    if coeffs.len() != sigmas.len() {
        return Err(Error::DimensionMismatch {
            context: "threshold_components",
            expected: coeffs.len().to_string(),
            got: sigmas.len().to_string(),
        });
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::param(format!("tau must be finite and >= 0, got {tau}")));
    }
    if let Some(s) = sigmas.iter().find(|s| s.is_nan() || **s < 0.0) {
        return Err(Error::param(format!("coefficient sigma must be >= 0, got {s}")));
    }
    Ok(coeffs
        .iter()
        .zip(sigmas)
        .map(|(c, s)| if c.abs() < tau * s { 0.0 } else { *c })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ramp(dims: Dims) -> Image {
        Image::from_fn(dims, |x, y| ((x * 7 + y * 13) % 11) as f64 / 11.0 - 0.3)
    }

    /// Orthonormal 1-D Haar analysis matrix built level by level.
    fn haar_1d(n: usize) -> DMatrix<f64> {
        let mut t = DMatrix::identity(n, n);
        let mut len = n;
        while len > 1 {
            let mut level = DMatrix::identity(n, n);
            let half = len / 2;
            level.view_mut((0, 0), (len, len)).fill(0.0);
            for i in 0..half {
                level[(i, 2 * i)] = FRAC_1_SQRT_2;
                level[(i, 2 * i + 1)] = FRAC_1_SQRT_2;
                level[(half + i, 2 * i)] = FRAC_1_SQRT_2;
                level[(half + i, 2 * i + 1)] = -FRAC_1_SQRT_2;
            }
            t = level * t;
            len = half;
        }
        t
    }

    #[test]
    fn haar_4x4_matches_dense_oracle() {
        // Square pyramid: levels interleave rows and columns, so the 2-D
        // matrix is not a plain Kronecker product of 1-D pyramids. Build it
        // from per-level Kronecker factors instead.
        let dims = Dims::square(4).unwrap();
        let s = FRAC_1_SQRT_2;
        let full = DMatrix::from_row_slice(4, 4, &[s, s, 0., 0., 0., 0., s, s, s, -s, 0., 0., 0., 0., s, -s]);
        let pair = DMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
        let level1 = full.kronecker(&full);
        // second level acts only on the 2×2 low-pass block
        let mut level2 = DMatrix::identity(16, 16);
        let block = [0usize, 1, 4, 5];
        let small = pair.kronecker(&pair);
        for (a, &ia) in block.iter().enumerate() {
            for (b, &ib) in block.iter().enumerate() {
                level2[(ia, ib)] = small[(a, b)];
            }
        }
        let t = level2 * level1;
        let img = ramp(dims);
        let want = &t * nalgebra::DVector::from_column_slice(img.data());
        let got = haar_forward(&img).unwrap();
        for (a, b) in got.data().iter().zip(want.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        // and the dense matrix is orthonormal
        let td = Transform::Haar.dense_matrix(dims).unwrap();
        assert!((&td * td.transpose() - DMatrix::identity(16, 16)).abs().max() < 1e-12);
    }

    #[test]
    fn haar_1d_rows_match_oracle() {
        // an 8×1 image exercises the one-axis path
        let dims = Dims::new(8, 1).unwrap();
        let img = ramp(dims);
        let want = haar_1d(8) * nalgebra::DVector::from_column_slice(img.data());
        let got = haar_forward(&img).unwrap();
        for (a, b) in got.data().iter().zip(want.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn haar_constant_has_one_coefficient() {
        for dims in [Dims::square(8).unwrap(), Dims::new(16, 4).unwrap()] {
            let c = haar_forward(&Image::filled(dims, 0.3)).unwrap();
            assert_relative_eq!(c.data()[0], 0.3 * (dims.len() as f64).sqrt(), epsilon = 1e-12);
            assert!(c.data()[1..].iter().all(|v| v.abs() < 1e-13));
        }
    }

    #[test]
    fn haar_rejects_non_pow2() {
        assert!(haar_forward(&Image::filled(Dims::new(6, 4).unwrap(), 1.0)).is_err());
    }

    #[test]
    fn dct_4x4_matches_dense_cosine_basis() {
        let dims = Dims::square(4).unwrap();
        let img = ramp(dims);
        // direct double sum over the cosine basis
        let n: f64 = 4.0;
        let a = |k: usize| if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        let got = dct_forward(&img);
        for v in 0..4 {
            for u in 0..4 {
                let mut s = 0.0;
                for y in 0..4 {
                    for x in 0..4 {
                        s += img.get(x, y)
                            * (PI * (2 * x + 1) as f64 * u as f64 / 8.0).cos()
                            * (PI * (2 * y + 1) as f64 * v as f64 / 8.0).cos();
                    }
                }
                assert_relative_eq!(got.get(u, v), a(u) * a(v) * s, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dct_constant_is_dc_only() {
        let c = dct_forward(&Image::filled(Dims::new(6, 5).unwrap(), 2.0));
        assert_relative_eq!(c.data()[0], 2.0 * 30f64.sqrt(), epsilon = 1e-12);
        assert!(c.data()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn variance_shortcuts_match_dense() {
        let dims = Dims::new(8, 4).unwrap();
        let var = Image::from_fn(dims, |x, y| 0.1 + 0.05 * ((x + 2 * y) % 5) as f64);
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(var.data()));
        for t in [Transform::Identity, Transform::Haar, Transform::Dct] {
            let fast = t.coefficient_variances(&var).unwrap();
            let dense = t.coefficient_variances_dense(dims, &sigma).unwrap();
            for (a, b) in fast.data().iter().zip(&dense) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(threshold_components(&[3.0, -1.0], &[1.0, 1.0], 2.0).unwrap(), vec![3.0, 0.0]);
        assert_eq!(threshold_components(&[0.5, -0.2], &[9.0, 9.0], 0.0).unwrap(), vec![0.5, -0.2]);
        assert_eq!(threshold_components(&[0.0], &[3.0], 1.0).unwrap(), vec![0.0]);
        assert!(threshold_components(&[1.0], &[-1.0], 1.0).is_err());
        assert!(threshold_components(&[1.0], &[1.0], -1.0).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_parseval(seed in 0u64..1000, log_w in 0u32..5, log_h in 0u32..5) {
            let dims = Dims::new(1 << log_w, 1 << log_h).unwrap();
            let img = Image::from_fn(dims, |x, y| ((seed as f64 + 1.3 * x as f64 + 0.7 * y as f64).sin() * 3.1).fract());
            let norm = img.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            for t in [Transform::Haar, Transform::Dct] {
                let c = t.forward(&img).unwrap();
                let back = t.inverse(&c).unwrap();
                for (a, b) in back.data().iter().zip(img.data()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
                let cn = c.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((cn - norm).abs() < 1e-12);
            }
        }

        #[test]
        fn threshold_never_grows(c in proptest::collection::vec(-5.0f64..5.0, 1..20), tau in 0.0f64..3.0) {
            let s: Vec<f64> = c.iter().map(|v| v.abs() * 0.5 + 0.1).collect();
            let out = threshold_components(&c, &s, tau).unwrap();
            for (a, b) in out.iter().zip(&c) {
                prop_assert!(a.abs() <= b.abs());
                prop_assert!(*a == 0.0 || a == b);
            }
        }
    }
}
