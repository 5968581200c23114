//! Image losses with analytic gradients, and PSNR.

use crate::buffer::Image;
use crate::error::Result;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 120.0;
const MSE_FLOOR: f64 = 1e-12;

/// Mean absolute difference and its gradient with respect to `a`.
pub fn l1_loss(a: &Image, b: &Image) -> Result<(f64, Image)> {
    a.same_shape(b)?;
    let n = a.data.len() as f64;
    let mut grad = Image::new(a.width, a.height);
    let mut sum = 0.0;
    for ((g, x), y) in grad.data.iter_mut().zip(&a.data).zip(&b.data) {
        let d = x - y;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    10.0 * (1.0 / mse.max(MSE_FLOOR)).log10()
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable zero-padded "same" filtering of one `w x h` plane. The kernel
/// is symmetric, so this operator is its own adjoint.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let mut s = 0.0;
            for xx in lo..=hi {
                s += k[xx + r - x] * row[xx];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for yy in lo..=hi {
            let wk = k[yy + r - y];
            let src = &tmp[yy * w..(yy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wk * s;
            }
        }
    }
    out
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

struct SsimPlane {
    mean: f64,
    grad: Option<Vec<f64>>,
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, with_grad: bool) -> SsimPlane {
    let k = ssim_kernel();
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = blur(a, w, h, &k);
    let mu_b = blur(b, w, h, &k);
    let e_aa = blur(&sq(a, a), w, h, &k);
    let e_bb = blur(&sq(b, b), w, h, &k);
    let e_ab = blur(&sq(a, b), w, h, &k);

    let n = w * h;
    let mut total = 0.0;
    let (mut d_mu, mut d_aa, mut d_ab) = if with_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let s_aa = e_aa[i] - ma * ma;
        let s_bb = e_bb[i] - mb * mb;
        let s_ab = e_ab[i] - ma * mb;
        let a1 = 2.0 * ma * mb + SSIM_C1;
        let a2 = 2.0 * s_ab + SSIM_C2;
        let b1 = ma * ma + mb * mb + SSIM_C1;
        let b2 = s_aa + s_bb + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if with_grad {
            let ds_dmu = 2.0 * mb * a2 / (b1 * b2) - s * 2.0 * ma / b1;
            let ds_dsaa = -s / b2;
            let ds_dsab = 2.0 * a1 / (b1 * b2);
            d_mu[i] = ds_dmu - 2.0 * ma * ds_dsaa - mb * ds_dsab;
            d_aa[i] = ds_dsaa;
            d_ab[i] = ds_dsab;
        }
    }
    let grad = with_grad.then(|| {
        let g_mu = blur(&d_mu, w, h, &k);
        let g_aa = blur(&d_aa, w, h, &k);
        let g_ab = blur(&d_ab, w, h, &k);
        (0..n)
            .map(|i| g_mu[i] + 2.0 * a[i] * g_aa[i] + b[i] * g_ab[i])
            .collect()
    });
    SsimPlane {
        mean: total / n as f64,
        grad,
    }
}

fn ssim_impl(a: &Image, b: &Image, with_grad: bool) -> Result<(f64, Option<Image>)> {
    a.same_shape(b)?;
    let (w, h) = (a.width, a.height);
    let mut value = 0.0;
    let mut grad = with_grad.then(|| Image::new(w, h));
    for c in 0..3 {
        let p = ssim_plane(&plane(a, c), &plane(b, c), w, h, with_grad);
        value += p.mean / 3.0;
        if let (Some(g), Some(pg)) = (grad.as_mut(), p.grad) {
            let scale = 1.0 / (3.0 * (w * h) as f64);
            for (i, v) in pg.iter().enumerate() {
                g.data[i * 3 + c] = v * scale;
            }
        }
    }
    Ok((value, grad))
}

/// Single-scale SSIM (11x11 Gaussian window, sigma 1.5, zero padding),
/// averaged over pixels and channels.
pub fn ssim_value(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let (v, g) = ssim_impl(a, b, true)?;
    Ok((v, g.expect("gradient requested")))
}

/// `(1 - lambda) * L1 + lambda * (1 - SSIM)` and its gradient.
pub fn photometric_loss(a: &Image, b: &Image, lambda: f64) -> Result<(f64, Image)> {
    let (l1, g1) = l1_loss(a, b)?;
    let (s, gs) = ssim(a, b)?;
    let mut grad = g1;
    for (g, d) in grad.data.iter_mut().zip(&gs.data) {
        *g = (1.0 - lambda) * *g - lambda * d;
    }
    Ok(((1.0 - lambda) * l1 + lambda * (1.0 - s), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        let data = (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        Image::from_data(w, h, data).unwrap()
    }

    #[test]
    fn l1_of_identical_images_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 8, 5);
        let (v, g) = l1_loss(&a, &a).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn l1_uniform_offset() {
        let b = Image::filled(6, 4, nalgebra::Vector3::new(0.1, 0.2, 0.3));
        let a = b.map(|v| v + 0.5);
        let (v, g) = l1_loss(&a, &b).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-12);
        for x in &g.data {
            assert_relative_eq!(*x, 1.0 / (6.0 * 4.0 * 3.0));
        }
    }

    #[test]
    fn l1_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 9, 7);
        let b = random_image(&mut rng, 9, 7);
        let mut naive = 0.0;
        for y in 0..7 {
            for x in 0..9 {
                naive += (a.get(x, y) - b.get(x, y)).abs().sum();
            }
        }
        naive /= 9.0 * 7.0 * 3.0;
        assert_relative_eq!(l1_loss(&a, &b).unwrap().0, naive, epsilon = 1e-7);
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, nalgebra::Vector3::repeat(0.3));
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 0.1);
        assert_relative_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
    }

    #[test]
    fn psnr_matches_naive_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 5, 5);
        let b = random_image(&mut rng, 5, 5);
        let mut se = 0.0;
        for i in 0..a.data.len() {
            se += (a.data[i] - b.data[i]).powi(2);
        }
        let naive = -10.0 * (se / 75.0).log10();
        assert_relative_eq!(psnr(&a, &b).unwrap(), naive, epsilon = 1e-12);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_image(&mut rng, 16, 12);
        let b = random_image(&mut rng, 16, 12);
        let (s, g) = ssim(&a, &a).unwrap();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        assert!(g.is_finite());
        assert_relative_eq!(ssim_value(&a, &b).unwrap(), ssim_value(&b, &a).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn ssim_kernel_is_normalized_and_symmetric() {
        let k = ssim_kernel();
        assert_relative_eq!(k.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(k[i], k[SSIM_WINDOW - 1 - i]);
        }
    }

    /// Direct per-pixel SSIM with an explicit 2D window, independent of the
    /// separable implementation.
    fn naive_ssim(a: &Image, b: &Image) -> f64 {
        let k = ssim_kernel();
        let r = (SSIM_WINDOW / 2) as isize;
        let (w, h) = (a.width as isize, a.height as isize);
        let mut total = 0.0;
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (xx, yy) = (x + dx, y + dy);
                            if xx < 0 || yy < 0 || xx >= w || yy >= h {
                                continue;
                            }
                            let wt = k[(dx + r) as usize] * k[(dy + r) as usize];
                            let va = a.get(xx as usize, yy as usize)[c];
                            let vb = b.get(xx as usize, yy as usize)[c];
                            ma += wt * va;
                            mb += wt * vb;
                            aa += wt * va * va;
                            bb += wt * vb * vb;
                            ab += wt * va * vb;
                        }
                    }
                    let (saa, sbb, sab) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                    total += (2.0 * ma * mb + SSIM_C1) * (2.0 * sab + SSIM_C2)
                        / ((ma * ma + mb * mb + SSIM_C1) * (saa + sbb + SSIM_C2));
                }
            }
        }
        total / (3 * w * h) as f64
    }

    #[test]
    fn ssim_matches_naive_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_image(&mut rng, 14, 9);
        let b = random_image(&mut rng, 14, 9);
        assert_relative_eq!(ssim_value(&a, &b).unwrap(), naive_ssim(&a, &b), epsilon = 1e-12);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        let (_, g) = ssim(&a, &b).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..a.data.len() {
            let mut p = a.clone();
            p.data[i] += h;
            let fp = ssim_value(&p, &b).unwrap();
            p.data[i] -= 2.0 * h;
            let fm = ssim_value(&p, &b).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - g.data[i]).abs() / g.data[i].abs().max(fd.abs()).max(1e-12);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn photometric_gradient_combines_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_image(&mut rng, 12, 12);
        let b = random_image(&mut rng, 12, 12);
        let (v, g) = photometric_loss(&a, &b, 0.2).unwrap();
        let (l1, g1) = l1_loss(&a, &b).unwrap();
        let (s, gs) = ssim(&a, &b).unwrap();
        assert_relative_eq!(v, 0.8 * l1 + 0.2 * (1.0 - s), epsilon = 1e-15);
        for i in 0..g.data.len() {
            assert_relative_eq!(g.data[i], 0.8 * g1.data[i] - 0.2 * gs.data[i], epsilon = 1e-15);
        }
    }
}
