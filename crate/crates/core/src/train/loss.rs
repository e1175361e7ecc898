//! Photometric losses with analytic gradients.

use crate::error::Result;
use crate::image::Image;
use crate::model::Mask;

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

/// A scalar loss and its gradient with respect to the predicted image.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian blur of one plane with zero padding, same output size.
fn blur(plane: &[f64], width: usize, height: usize, w: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < width {
                    acc += wk * plane[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < height {
                    acc += wk * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean structural similarity over pixels and channels (11x11 Gaussian window, sigma 1.5,
/// zero padding) and its gradient with respect to `pred`.
pub fn ssim(pred: &Image, target: &Image) -> Result<LossGrad> {
    pred.check_shape(target, "ssim")?;
    let (width, height) = (pred.width as usize, pred.height as usize);
    let n = width * height;
    let total = (3 * n) as f64;
    let w = window();
    let mut value = 0.0;
    let mut grad = vec![0.0; 3 * n];
    for c in 0..3 {
        let x = plane(pred, c);
        let y = plane(target, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mu_x = blur(&x, width, height, &w);
        let mu_y = blur(&y, width, height, &w);
        let e_xx = blur(&xx, width, height, &w);
        let e_yy = blur(&yy, width, height, &w);
        let e_xy = blur(&xy, width, height, &w);
        let mut d_mu = vec![0.0; n];
        let mut d_exx = vec![0.0; n];
        let mut d_exy = vec![0.0; n];
        for p in 0..n {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let sxx = e_xx[p] - mx * mx;
            let syy = e_yy[p] - my * my;
            let sxy = e_xy[p] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            value += s;
            // partials of s in terms of mu_x, E[x^2] and E[xy] (target terms are constant)
            d_mu[p] = (2.0 * my * a2 - 2.0 * my * a1) / (b1 * b2) - s * (2.0 * mx / b1 - 2.0 * mx / b2);
            d_exx[p] = -s / b2;
            d_exy[p] = 2.0 * a1 / (b1 * b2);
        }
        // the blur is self-adjoint, so the chain rule is another blur
        let g_mu = blur(&d_mu, width, height, &w);
        let g_exx = blur(&d_exx, width, height, &w);
        let g_exy = blur(&d_exy, width, height, &w);
        for p in 0..n {
            grad[3 * p + c] = (g_mu[p] + 2.0 * x[p] * g_exx[p] + y[p] * g_exy[p]) / total;
        }
    }
    Ok(LossGrad {
        value: value / total,
        grad,
    })
}

/// Mean absolute error over pixels and channels.
pub fn l1(pred: &Image, target: &Image) -> Result<LossGrad> {
    pred.check_shape(target, "l1")?;
    let total = pred.data.len() as f64;
    let mut value = 0.0;
    let grad = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| {
            let d = a - b;
            value += d.abs();
            if d > 0.0 {
                1.0 / total
            } else if d < 0.0 {
                -1.0 / total
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossGrad {
        value: value / total,
        grad,
    })
}

/// `(1 - w) * L1 + w * (1 - SSIM) / 2`.
pub fn render_loss(pred: &Image, target: &Image, dssim_weight: f64) -> Result<LossGrad> {
    let l = l1(pred, target)?;
    if dssim_weight == 0.0 {
        return Ok(l);
    }
    let s = ssim(pred, target)?;
    let value = (1.0 - dssim_weight) * l.value + dssim_weight * (1.0 - s.value) / 2.0;
    let grad = l
        .grad
        .iter()
        .zip(&s.grad)
        .map(|(gl, gs)| (1.0 - dssim_weight) * gl - dssim_weight * gs / 2.0)
        .collect();
    Ok(LossGrad { value, grad })
}

/// Mean absolute difference between the masked target (zero outside `mask`) and an
/// object render, over all pixels and channels.
pub fn object_loss(render: &Image, target: &Image, mask: &Mask) -> Result<LossGrad> {
    render.check_shape(target, "object loss")?;
    if mask.width() != target.width || mask.height() != target.height {
        return Err(crate::error::Error::ResolutionMismatch {
            expected: (target.width, target.height),
            found: (mask.width(), mask.height()),
            context: "object mask".into(),
        });
    }
    l1(render, &target.masked(mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_have_zero_loss() {
        let mut img = Image::new(8, 8);
        img.set(3, 3, [0.5, 0.2, 0.9]);
        let l = render_loss(&img, &img, 0.2).unwrap();
        assert!(l.value.abs() < 1e-12);
    }

    #[test]
    fn pure_l1_of_constant_offset() {
        let a = Image::filled(8, 8, [0.3; 3]);
        let b = Image::filled(8, 8, [0.4; 3]);
        let l = render_loss(&a, &b, 0.0).unwrap();
        assert!((l.value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for k in 0..WINDOW {
            assert_eq!(w[k], w[WINDOW - 1 - k]);
        }
    }

    #[test]
    fn empty_mask_and_black_render() {
        let target = Image::filled(4, 4, [0.7; 3]);
        let l = object_loss(&Image::new(4, 4), &target, &Mask::new(4, 4)).unwrap();
        assert_eq!(l.value, 0.0);
    }
}
