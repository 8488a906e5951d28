//! Image losses for distillation: mean L1 and windowed SSIM, both with
//! analytic gradients with respect to the rendered input.
//!
//! SSIM follows the literature-standard form: 11x11 Gaussian window with
//! sigma 1.5, C1 = 0.01^2 and C2 = 0.03^2 on unit dynamic range, filtered
//! over the valid region (no padding), averaged over pixels and channels.

use crate::raster::{Raster, RasterError};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW as f64 - 1.0) / 2.0;
    let mut sum = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *wi = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *wi;
    }
    for wi in w.iter_mut() {
        *wi /= sum;
    }
    w
}

/// Mean absolute difference over all elements.
pub fn l1_mean(a: &Raster, b: &Raster) -> Result<f64, RasterError> {
    a.ensure_same_shape(b)?;
    let n = a.data.len().max(1);
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n as f64)
}

/// Gradient of [`l1_mean`] with respect to `a` (elementwise sign / N).
pub fn l1_mean_grad(a: &Raster, b: &Raster) -> Result<Vec<f64>, RasterError> {
    a.ensure_same_shape(b)?;
    let inv_n = 1.0 / a.data.len().max(1) as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).signum() * inv_n)
        .collect())
}

/// Horizontal then vertical valid-region filtering of one channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let vw = w - SSIM_WINDOW + 1;
    let vh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; vw * h];
    for y in 0..h {
        for x in 0..vw {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                acc += wk * plane[y * w + x + k];
            }
            tmp[y * vw + x] = acc;
        }
    }
    let mut out = vec![0.0; vw * vh];
    for y in 0..vh {
        for x in 0..vw {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                acc += wk * tmp[(y + k) * vw + x];
            }
            out[y * vw + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a valid-region field back to full
/// resolution.
fn filter_valid_adjoint(g: &[f64], w: usize, h: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let vw = w - SSIM_WINDOW + 1;
    let vh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; vw * h];
    for y in 0..vh {
        for x in 0..vw {
            let gv = g[y * vw + x];
            if gv == 0.0 {
                continue;
            }
            for (k, wk) in win.iter().enumerate() {
                tmp[(y + k) * vw + x] += wk * gv;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..vw {
            let gv = tmp[y * vw + x];
            if gv == 0.0 {
                continue;
            }
            for (k, wk) in win.iter().enumerate() {
                out[y * w + x + k] += wk * gv;
            }
        }
    }
    out
}

fn channel_plane(r: &Raster, c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(r.width * r.height);
    for px in r.data.chunks_exact(r.channels) {
        out.push(px[c]);
    }
    out
}

/// Mean SSIM between two rasters, averaged over channels, in [-1, 1].
pub fn ssim(x: &Raster, y: &Raster) -> Result<f64, RasterError> {
    Ok(ssim_impl(x, y, false)?.0)
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(x: &Raster, y: &Raster) -> Result<(f64, Vec<f64>), RasterError> {
    let (s, g) = ssim_impl(x, y, true)?;
    Ok((s, g.expect("gradient requested")))
}

fn ssim_impl(
    x: &Raster,
    y: &Raster,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), RasterError> {
    x.ensure_same_shape(y)?;
    let (w, h, ch) = (x.width, x.height, x.channels);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(RasterError::ShapeMismatch {
            expected: format!("at least {SSIM_WINDOW}x{SSIM_WINDOW}"),
            got: x.shape_str(),
        });
    }
    let win = gaussian_window();
    let vw = w - SSIM_WINDOW + 1;
    let vh = h - SSIM_WINDOW + 1;
    let n_valid = (vw * vh * ch) as f64;

    let mut mean_sum = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; w * h * ch]);

    for c in 0..ch {
        let xp = channel_plane(x, c);
        let yp = channel_plane(y, c);
        let x2: Vec<f64> = xp.iter().map(|v| v * v).collect();
        let y2: Vec<f64> = yp.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xp.iter().zip(&yp).map(|(a, b)| a * b).collect();

        let mu_x = filter_valid(&xp, w, h, &win);
        let mu_y = filter_valid(&yp, w, h, &win);
        let s_xx = filter_valid(&x2, w, h, &win);
        let s_yy = filter_valid(&y2, w, h, &win);
        let s_xy = filter_valid(&xy, w, h, &win);

        let mut g_mu_x = want_grad.then(|| vec![0.0; vw * vh]);
        let mut g_s_xx = want_grad.then(|| vec![0.0; vw * vh]);
        let mut g_s_xy = want_grad.then(|| vec![0.0; vw * vh]);

        for i in 0..vw * vh {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = s_xx[i] - mx * mx;
            let var_y = s_yy[i] - my * my;
            let cov = s_xy[i] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * cov + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = var_x + var_y + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            mean_sum += s;

            if let (Some(gm), Some(gxx), Some(gxy)) =
                (g_mu_x.as_mut(), g_s_xx.as_mut(), g_s_xy.as_mut())
            {
                let inv_b1b2 = 1.0 / (b1 * b2);
                // Chain through A1(mu_x), B1(mu_x), var_x(mu_x), cov(mu_x).
                gm[i] = a2 * inv_b1b2 * 2.0 * my + a1 * inv_b1b2 * 2.0 * (-my)
                    - s / b1 * 2.0 * mx
                    + s / b2 * 2.0 * mx;
                gxx[i] = -s / b2;
                gxy[i] = a1 * inv_b1b2 * 2.0;
            }
        }

        if let (Some(grad), Some(gm), Some(gxx), Some(gxy)) =
            (grad.as_mut(), g_mu_x, g_s_xx, g_s_xy)
        {
            let back_mu = filter_valid_adjoint(&gm, w, h, &win);
            let back_xx = filter_valid_adjoint(&gxx, w, h, &win);
            let back_xy = filter_valid_adjoint(&gxy, w, h, &win);
            for i in 0..w * h {
                let g = (back_mu[i] + 2.0 * xp[i] * back_xx[i] + yp[i] * back_xy[i]) / n_valid;
                grad[i * ch + c] = g;
            }
        }
    }

    Ok((mean_sum / n_valid, grad))
}

/// Photometric loss `(1 - lambda) * L1 + lambda * (1 - SSIM) / 2`.
pub fn loss_color(target: &Raster, rendered: &Raster, lambda: f64) -> Result<f64, RasterError> {
    let l1 = l1_mean(rendered, target)?;
    if lambda == 0.0 {
        return Ok(l1);
    }
    let s = ssim(rendered, target)?;
    Ok((1.0 - lambda) * l1 + lambda * (1.0 - s) / 2.0)
}

/// [`loss_color`] plus its gradient with respect to the rendered image.
pub fn loss_color_with_grad(
    target: &Raster,
    rendered: &Raster,
    lambda: f64,
) -> Result<(f64, Vec<f64>), RasterError> {
    let l1 = l1_mean(rendered, target)?;
    let mut grad = l1_mean_grad(rendered, target)?;
    if lambda == 0.0 {
        return Ok((l1, grad));
    }
    let (s, sg) = ssim_with_grad(rendered, target)?;
    for (g, sg) in grad.iter_mut().zip(&sg) {
        *g = (1.0 - lambda) * *g - lambda * 0.5 * sg;
    }
    Ok(((1.0 - lambda) * l1 + lambda * (1.0 - s) / 2.0, grad))
}

/// Feature consistency loss: mean L1 between teacher and rendered maps.
pub fn loss_features(teacher: &Raster, rendered: &Raster) -> Result<f64, RasterError> {
    l1_mean(rendered, teacher)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raster(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Raster {
        let mut r = Raster::zeros(w, h, c);
        for v in r.data.iter_mut() {
            *v = rng.gen();
        }
        r
    }

    /// Direct per-window SSIM: explicit double loops over window offsets,
    /// no separable filtering. Serves as the independent reference.
    pub(crate) fn ssim_reference(x: &Raster, y: &Raster) -> f64 {
        let win = gaussian_window();
        let (w, h, ch) = (x.width, x.height, x.channels);
        let mut total = 0.0;
        let mut count = 0usize;
        for c in 0..ch {
            for wy in 0..h - SSIM_WINDOW + 1 {
                for wx in 0..w - SSIM_WINDOW + 1 {
                    let (mut mx, mut my) = (0.0, 0.0);
                    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let wgt = win[dy] * win[dx];
                            let xv = x.get(wx + dx, wy + dy, c);
                            let yv = y.get(wx + dx, wy + dy, c);
                            mx += wgt * xv;
                            my += wgt * yv;
                            sxx += wgt * xv * xv;
                            syy += wgt * yv * yv;
                            sxy += wgt * xv * yv;
                        }
                    }
                    let var_x = sxx - mx * mx;
                    let var_y = syy - my * my;
                    let cov = sxy - mx * my;
                    total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_raster(&mut rng, 20, 16, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_negative_image_below_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_raster(&mut rng, 20, 16, 1);
        let mut b = a.clone();
        for v in b.data.iter_mut() {
            *v = 1.0 - *v;
        }
        assert!(ssim(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn ssim_matches_direct_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let a = random_raster(&mut rng, 24, 18, 3);
            let b = random_raster(&mut rng, 24, 18, 3);
            let fast = ssim(&a, &b).unwrap();
            let slow = ssim_reference(&a, &b);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
            // Symmetry.
            assert!((fast - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_raster(&mut rng, 14, 13, 2);
        let b = random_raster(&mut rng, 14, 13, 2);
        let (_, grad) = ssim_with_grad(&a, &b).unwrap();
        let h = 1e-6;
        for &i in &[0usize, 7, 50, 180, a.data.len() - 1] {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap.data[i] += h;
            am.data[i] -= h;
            let fd = (ssim(&ap, &b).unwrap() - ssim(&am, &b).unwrap()) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-6 * fd.abs().max(1.0),
                "element {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn loss_color_zero_on_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_raster(&mut rng, 16, 16, 3);
        assert!(loss_color(&a, &a, 0.2).unwrap() < 1e-12);
    }

    #[test]
    fn loss_color_pure_l1_constant_offset() {
        let a = Raster::zeros(16, 16, 3);
        let mut b = Raster::zeros(16, 16, 3);
        for v in b.data.iter_mut() {
            *v = 0.1;
        }
        assert!((loss_color(&a, &b, 0.0).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn loss_color_matches_l1_plus_ssim_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_raster(&mut rng, 18, 15, 3);
        let b = random_raster(&mut rng, 18, 15, 3);
        let lambda = 0.2;
        let expected =
            (1.0 - lambda) * l1_mean(&b, &a).unwrap() + lambda * (1.0 - ssim_reference(&b, &a)) / 2.0;
        assert!((loss_color(&a, &b, lambda).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn loss_features_single_element_diff() {
        let t = Raster::zeros(10, 8, 4);
        let mut r = Raster::zeros(10, 8, 4);
        r.data[37] = 0.5;
        let expected = 0.5 / (10.0 * 8.0 * 4.0);
        assert!((loss_features(&t, &r).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn loss_features_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_raster(&mut rng, 9, 7, 5);
        let r = random_raster(&mut rng, 9, 7, 5);
        let brute: f64 = t
            .data
            .iter()
            .zip(&r.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / t.data.len() as f64;
        assert!((loss_features(&t, &r).unwrap() - brute).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Raster::zeros(16, 16, 3);
        let b = Raster::zeros(16, 15, 3);
        assert!(l1_mean(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }
}
