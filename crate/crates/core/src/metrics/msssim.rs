//! Multi-scale structural similarity, with the gradient with respect to the
//! test image.
//!
//! Each scale filters with an 11x11 Gaussian window (sigma 1.5) over valid
//! positions only; the next scale is a 2x2 average of the current one. The
//! coarsest scale contributes the mean SSIM (luminance x contrast-structure),
//! every other scale the mean contrast-structure term, each raised to its
//! exponent. Negative per-scale terms clamp to zero.

use crate::error::{Error, Result};
use crate::image::{Plane, Real};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

/// Standard five-scale exponents, finest scale first.
pub const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// The first `scales` standard exponents, renormalized to sum to one.
pub fn scale_weights(scales: usize) -> Result<Vec<f64>> {
    if scales == 0 || scales > SCALE_WEIGHTS.len() {
        return Err(Error::Input(format!("MS-SSIM supports 1 to 5 scales, got {scales}")));
    }
    let head = &SCALE_WEIGHTS[..scales];
    let sum: f64 = head.iter().sum();
    Ok(head.iter().map(|w| w / sum).collect())
}

pub fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Largest scale count (up to 5) that keeps every scale at least 11x11.
pub fn max_scales(width: usize, height: usize) -> usize {
    let (mut w, mut h, mut n) = (width, height, 0);
    while n < 5 && w >= WINDOW && h >= WINDOW {
        n += 1;
        w /= 2;
        h /= 2;
    }
    n
}

/// Separable valid-mode Gaussian filter.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w + 1 - WINDOW;
    let oh = h + 1 - WINDOW;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let s = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = g.iter().zip(&s[x..x + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        let o = &mut out[y * ow..(y + 1) * ow];
        for (k, &gk) in g.iter().enumerate() {
            let r = &rows[(y + k) * ow..(y + k + 1) * ow];
            for (a, &b) in o.iter_mut().zip(r) {
                *a += gk * b;
            }
        }
    }
    out
}

/// Transpose of [`filter_valid`].
fn filter_valid_transpose(grad: &[f64], w: usize, h: usize, g: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w + 1 - WINDOW;
    let oh = h + 1 - WINDOW;
    let mut rows = vec![0.0; h * ow];
    for y in 0..oh {
        let gr = &grad[y * ow..(y + 1) * ow];
        for (k, &gk) in g.iter().enumerate() {
            let r = &mut rows[(y + k) * ow..(y + k + 1) * ow];
            for (a, &b) in r.iter_mut().zip(gr) {
                *a += gk * b;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let o = &mut out[y * w..(y + 1) * w];
        for x in 0..ow {
            let v = rows[y * ow + x];
            for (k, &gk) in g.iter().enumerate() {
                o[x + k] += gk * v;
            }
        }
    }
    out
}

fn avg_pool(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            out.push(
                0.25 * (src[2 * y * w + 2 * x]
                    + src[2 * y * w + 2 * x + 1]
                    + src[(2 * y + 1) * w + 2 * x]
                    + src[(2 * y + 1) * w + 2 * x + 1]),
            );
        }
    }
    out
}

fn avg_pool_transpose(grad: &[f64], w: usize, h: usize) -> Vec<f64> {
    let ow = w / 2;
    let mut out = vec![0.0; w * h];
    for (i, &g) in grad.iter().enumerate() {
        let (x, y) = (i % ow, i / ow);
        let q = 0.25 * g;
        out[2 * y * w + 2 * x] += q;
        out[2 * y * w + 2 * x + 1] += q;
        out[(2 * y + 1) * w + 2 * x] += q;
        out[(2 * y + 1) * w + 2 * x + 1] += q;
    }
    out
}

struct ScaleTerm {
    value: f64,
    grad: Option<Vec<f64>>,
}

/// Mean contrast-structure (or full SSIM when `with_luminance`) at one scale,
/// optionally with its gradient with respect to `y`.
fn scale_term(
    x: &[f64],
    y: &[f64],
    w: usize,
    h: usize,
    c1: f64,
    c2: f64,
    with_luminance: bool,
    want_grad: bool,
) -> ScaleTerm {
    let g = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, w, h, &g);
    let mu_y = filter_valid(y, w, h, &g);
    let e_xx = filter_valid(&xx, w, h, &g);
    let e_yy = filter_valid(&yy, w, h, &g);
    let e_xy = filter_valid(&xy, w, h, &g);
    let n = mu_x.len();
    let inv_n = 1.0 / n as f64;

    let mut total = 0.0;
    let (mut g_mu, mut g_yy, mut g_xy) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let sxx = e_xx[p] - mx * mx;
        let syy = e_yy[p] - my * my;
        let sxy = e_xy[p] - mx * my;
        let a = 2.0 * sxy + c2;
        let b = sxx + syy + c2;
        let cs = a / b;
        let (l, dl_dmy) = if with_luminance {
            let num = 2.0 * mx * my + c1;
            let den = mx * mx + my * my + c1;
            (num / den, 2.0 * mx / den - num * 2.0 * my / (den * den))
        } else {
            (1.0, 0.0)
        };
        total += l * cs;
        if want_grad {
            // d cs / d E[xy], d E[yy], d mu_y (through the variance terms)
            let dcs_dxy = 2.0 / b;
            let dcs_dyy = -a / (b * b);
            let dcs_dmy = -2.0 * mx / b + 2.0 * my * a / (b * b);
            g_mu[p] = inv_n * (dl_dmy * cs + l * dcs_dmy);
            g_yy[p] = inv_n * l * dcs_dyy;
            g_xy[p] = inv_n * l * dcs_dxy;
        }
    }
    let value = total * inv_n;
    let grad = want_grad.then(|| {
        let t_mu = filter_valid_transpose(&g_mu, w, h, &g);
        let t_yy = filter_valid_transpose(&g_yy, w, h, &g);
        let t_xy = filter_valid_transpose(&g_xy, w, h, &g);
        (0..w * h)
            .map(|i| t_mu[i] + 2.0 * y[i] * t_yy[i] + x[i] * t_xy[i])
            .collect()
    });
    ScaleTerm { value, grad }
}

fn check_inputs<T: Real>(reference: &Plane<T>, test: &Plane<T>, scales: usize) -> Result<()> {
    if (reference.width, reference.height) != (test.width, test.height) {
        return Err(Error::Dimension(format!(
            "MS-SSIM of {}x{} against {}x{}",
            reference.width, reference.height, test.width, test.height
        )));
    }
    scale_weights(scales)?;
    if max_scales(reference.width, reference.height) < scales {
        return Err(Error::Dimension(format!(
            "{}x{} is too small for {scales} MS-SSIM scales",
            reference.width, reference.height
        )));
    }
    Ok(())
}

fn evaluate<T: Real>(
    reference: &Plane<T>,
    test: &Plane<T>,
    scales: usize,
    data_range: f64,
    want_grad: bool,
) -> Result<(f64, Option<Plane<f64>>)> {
    check_inputs(reference, test, scales)?;
    let weights = scale_weights(scales)?;
    let c1 = (K1 * data_range).powi(2);
    let c2 = (K2 * data_range).powi(2);

    let mut x: Vec<f64> = reference.data.iter().map(|v| v.as_f64()).collect();
    let mut y: Vec<f64> = test.data.iter().map(|v| v.as_f64()).collect();
    let (mut w, mut h) = (reference.width, reference.height);
    let mut dims = Vec::with_capacity(scales);
    let mut terms = Vec::with_capacity(scales);
    for j in 0..scales {
        if j > 0 {
            x = avg_pool(&x, w, h);
            y = avg_pool(&y, w, h);
            w /= 2;
            h /= 2;
        }
        dims.push((w, h));
        terms.push(scale_term(&x, &y, w, h, c1, c2, j + 1 == scales, want_grad));
    }

    if terms.iter().any(|t| t.value <= 0.0) {
        let grad = want_grad.then(|| Plane::zeros(reference.width, reference.height));
        return Ok((0.0, grad));
    }
    let value: f64 = terms
        .iter()
        .zip(&weights)
        .map(|(t, wj)| t.value.powf(*wj))
        .product();
    if !want_grad {
        return Ok((value, None));
    }

    // Walk from the coarsest scale back to full resolution.
    let mut grad: Vec<f64> = Vec::new();
    for j in (0..scales).rev() {
        let (sw, sh) = dims[j];
        let local = terms[j].grad.as_ref().expect("gradient requested");
        let factor = value * weights[j] / terms[j].value;
        let mut here: Vec<f64> = local.iter().map(|g| factor * g).collect();
        if !grad.is_empty() {
            let up = avg_pool_transpose(&grad, sw, sh);
            here.iter_mut().zip(&up).for_each(|(a, b)| *a += b);
        }
        grad = here;
    }
    Ok((value, Some(Plane::new(reference.width, reference.height, grad)?)))
}

/// MS-SSIM of `test` against `reference` over `scales` scales.
///
/// `data_range` is the signal's dynamic range (1 for normalized tensors,
/// 1023 for 10-bit samples).
pub fn ms_ssim<T: Real>(reference: &Plane<T>, test: &Plane<T>, scales: usize, data_range: f64) -> Result<f64> {
    Ok(evaluate(reference, test, scales, data_range, false)?.0)
}

/// MS-SSIM together with its gradient with respect to every sample of `test`.
pub fn ms_ssim_with_grad<T: Real>(
    reference: &Plane<T>,
    test: &Plane<T>,
    scales: usize,
    data_range: f64,
) -> Result<(f64, Plane<f64>)> {
    let (v, g) = evaluate(reference, test, scales, data_range, true)?;
    Ok((v, g.expect("gradient requested")))
}
