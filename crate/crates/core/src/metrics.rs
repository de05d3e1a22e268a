//! Image quality metrics on `[0, 1]` images.

use crate::error::{Result, UvaError};
use crate::image_io::Image;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(UvaError::Argument(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// `10·log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = mse(a, b)?;
    Ok(if e == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / e).log10()).min(PSNR_CAP) })
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over all fully contained windows, averaged over channels. Images
/// smaller than the window are compared with a window clipped to their size.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let (w, h, ch) = (a.width as usize, a.height as usize, a.channels);
    let size = SSIM_WINDOW.min(w).min(h);
    let taps = gaussian_taps(size, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let (ow, oh) = (w - size + 1, h - size + 1);
    let mut total = 0.0;
    for c in 0..ch {
        let get = |img: &Image, x: usize, y: usize| img.data[(y * w + x) * ch + c] as f64;
        // separable filtering of x, y, x², y², xy: horizontal then vertical
        let mut horiz = vec![[0.0f64; 5]; ow * h];
        for y in 0..h {
            for x in 0..ow {
                let mut acc = [0.0; 5];
                for (k, t) in taps.iter().enumerate() {
                    let p = get(a, x + k, y);
                    let q = get(b, x + k, y);
                    acc[0] += t * p;
                    acc[1] += t * q;
                    acc[2] += t * p * p;
                    acc[3] += t * q * q;
                    acc[4] += t * p * q;
                }
                horiz[y * ow + x] = acc;
            }
        }
        let mut sum = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let mut m = [0.0; 5];
                for (k, t) in taps.iter().enumerate() {
                    let row = &horiz[(y + k) * ow + x];
                    for i in 0..5 {
                        m[i] += t * row[i];
                    }
                }
                let (mu_a, mu_b) = (m[0], m[1]);
                let var_a = m[2] - mu_a * mu_a;
                let var_b = m[3] - mu_b * mu_b;
                let cov = m[4] - mu_a * mu_b;
                sum += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            }
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / ch as f64)
}
