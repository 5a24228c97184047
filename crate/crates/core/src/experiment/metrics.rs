//! Reconstruction quality against a known object.

use crate::error::{Error, Result};
use crate::image::Image;

/// SNR reported for a perfect reconstruction (and the magnitude bound in general).
pub const SNR_CAP_DB: f64 = 300.0;

const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub snr: f64,
    pub ssim: f64,
}

fn check(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            context: "metrics",
            expected: b.dims().to_string(),
            got: a.dims().to_string(),
        });
    }
    Ok(())
}

pub fn mse(estimate: &Image, truth: &Image) -> Result<f64> {
    check(estimate, truth)?;
    let n = truth.data().len() as f64;
    Ok(estimate
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// 10·log₁₀(mean(truth²)/mse), clamped to ±300 dB.
pub fn snr_db(truth: &Image, mse: f64) -> f64 {
    let power = truth.data().iter().map(|v| v * v).sum::<f64>() / truth.data().len() as f64;
    if mse == 0.0 {
        return SNR_CAP_DB;
    }
    (10.0 * (power / mse).log10()).clamp(-SNR_CAP_DB, SNR_CAP_DB)
}

/// Mean SSIM over all 8×8 windows (stride 1, uniform weights, sample
/// covariances, dynamic range 1). Images smaller than a window use one
/// window covering the whole image.
pub fn ssim(estimate: &Image, truth: &Image) -> Result<f64> {
    check(estimate, truth)?;
    let d = truth.dims();
    let wx = SSIM_WINDOW.min(d.width);
    let wy = SSIM_WINDOW.min(d.height);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = (wx * wy) as f64;
    let cov_norm = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=d.height - wy {
        for x0 in 0..=d.width - wx {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + wy {
                for x in x0..x0 + wx {
                    let a = estimate.get(x, y);
                    let b = truth.get(x, y);
                    sa += a;
                    sb += b;
                    saa += a * a;
                    sbb += b * b;
                    sab += a * b;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = cov_norm * (saa / n - ma * ma);
            let vb = cov_norm * (sbb / n - mb * mb);
            let cab = cov_norm * (sab / n - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn metrics(estimate: &Image, truth: &Image) -> Result<Metrics> {
    let m = mse(estimate, truth)?;
    Ok(Metrics {
        mse: m,
        snr: snr_db(truth, m),
        ssim: ssim(estimate, truth)?,
    })
}
