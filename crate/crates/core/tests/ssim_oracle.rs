use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uva::image_io::Image;
use uva::metrics::{psnr, ssim};

/// Direct evaluation with an unseparated 2-D Gaussian window.
fn ssim_direct(a: &Image, b: &Image) -> f64 {
    let (w, h, ch) = (a.width as usize, a.height as usize, a.channels);
    let size = 11.min(w).min(h);
    let c = (size as f64 - 1.0) / 2.0;
    let mut win = vec![0.0; size * size];
    for j in 0..size {
        for i in 0..size {
            let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            win[j * size + i] = (-r2 / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for k in 0..ch {
        let px = |img: &Image, x: usize, y: usize| img.data[(y * w + x) * ch + k] as f64;
        let mut sum = 0.0;
        let mut count = 0;
        for y0 in 0..=h - size {
            for x0 in 0..=w - size {
                let (mut ma, mut mb) = (0.0, 0.0);
                for j in 0..size {
                    for i in 0..size {
                        let g = win[j * size + i];
                        ma += g * px(a, x0 + i, y0 + j);
                        mb += g * px(b, x0 + i, y0 + j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for j in 0..size {
                    for i in 0..size {
                        let g = win[j * size + i];
                        let (p, q) = (px(a, x0 + i, y0 + j) - ma, px(b, x0 + i, y0 + j) - mb);
                        va += g * p * p;
                        vb += g * q * q;
                        cov += g * p * q;
                    }
                }
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    total / ch as f64
}

fn noise_image(w: u32, h: u32, seed: u64) -> Image {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new(w, h, 3);
    for v in &mut img.data {
        *v = r.gen();
    }
    img
}

fn perturbed(img: &Image, amount: f32, seed: u64) -> Image {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for v in &mut out.data {
        *v = (*v + r.gen_range(-amount..amount)).clamp(0.0, 1.0);
    }
    out
}

#[test]
fn ssim_matches_direct_windowed_sum() {
    for (w, h, seed) in [(16, 16, 0), (23, 17, 1), (32, 12, 2), (8, 9, 3)] {
        let a = noise_image(w, h, seed);
        let b = perturbed(&a, 0.2, seed + 100);
        let got = ssim(&a, &b).unwrap();
        let want = ssim_direct(&a, &b);
        assert!((got - want).abs() < 1e-6, "{w}x{h}: {got} vs {want}");
    }
}

#[test]
fn ssim_of_constant_images_has_closed_form() {
    let (x, y) = (0.3f64, 0.7f64);
    let a = Image::filled(20, 20, &[x as f32; 3]);
    let b = Image::filled(20, 20, &[y as f32; 3]);
    let (x, y) = (x as f32 as f64, y as f32 as f64);
    let c1 = 1e-4;
    let want = (2.0 * x * y + c1) / (x * x + y * y + c1);
    assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
}

#[test]
fn psnr_arithmetic() {
    // uniform error of 0.1 everywhere: MSE 0.01, PSNR 20 dB
    let a = Image::filled(10, 10, &[0.25, 0.5, 0.75]);
    let b = Image::filled(10, 10, &[0.35, 0.6, 0.85]);
    let mse = [0.25f32, 0.5, 0.75]
        .iter()
        .zip([0.35f32, 0.6, 0.85])
        .map(|(p, q)| ((*p as f64) - (q as f64)).powi(2))
        .sum::<f64>()
        / 3.0;
    let want = -10.0 * mse.log10();
    assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
    assert!((want - 20.0).abs() < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>(), amount in 0.01f32..1.0) {
        let a = noise_image(14, 14, seed);
        let b = perturbed(&a, amount, seed ^ 1);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12 && ab >= -1.0);
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>()) {
        let a = noise_image(12, 12, seed);
        let small = psnr(&a, &perturbed(&a, 0.02, seed ^ 2)).unwrap();
        let large = psnr(&a, &perturbed(&a, 0.4, seed ^ 2)).unwrap();
        prop_assert!(small > large);
    }
}
