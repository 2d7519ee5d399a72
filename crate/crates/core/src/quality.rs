//! Full-reference quality metrics and the loss terms built on them.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::image::{Plane, RgbImage};

#[derive(Debug, Error, PartialEq)]
pub enum QualityError {
    #[error("images differ in size: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("image {0:?} is smaller than the {1}x{1} ssim window")]
    TooSmall((usize, usize), usize),
    #[error("ssim window must be odd and positive, got {0}")]
    BadWindow(usize),
}

fn same_dims(a: &RgbImage, b: &RgbImage) -> Result<(), QualityError> {
    if a.dims() != b.dims() {
        return Err(QualityError::DimensionMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// PSNR in decibels; identical inputs have no finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4} dB"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

/// Finite values serialize as numbers, the infinite sentinel as `"inf"`.
impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64, QualityError> {
    same_dims(a, b)?;
    let n = a.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64)
}

pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<Psnr, QualityError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { Psnr::Infinite } else { Psnr::Finite(10.0 * (peak * peak / m).log10()) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, peak: 1.0 }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.peak).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.peak).powi(2)
    }

    /// Shrinks the window to the largest odd size that fits `h × w`.
    pub fn fit_to(mut self, h: usize, w: usize) -> Self {
        let limit = h.min(w).max(1);
        if self.window > limit {
            self.window = if limit % 2 == 1 { limit } else { limit - 1 };
        }
        self
    }

    /// Normalized 2-D Gaussian window, row-major.
    pub fn weights(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window).map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let mut w: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        w
    }

    fn check(&self, dims: (usize, usize)) -> Result<(), QualityError> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(QualityError::BadWindow(self.window));
        }
        if dims.0 < self.window || dims.1 < self.window {
            return Err(QualityError::TooSmall(dims, self.window));
        }
        Ok(())
    }
}

struct WindowStats {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn window_stats(x: &Plane, y: &Plane, top: usize, left: usize, win: usize, weights: &[f64]) -> WindowStats {
    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..win {
        for j in 0..win {
            let w = weights[i * win + j];
            let a = x.get(top + i, left + j);
            let b = y.get(top + i, left + j);
            mx += w * a;
            my += w * b;
            xx += w * a * a;
            yy += w * b * b;
            xy += w * a * b;
        }
    }
    WindowStats { mu_x: mx, mu_y: my, var_x: xx - mx * mx, var_y: yy - my * my, cov: xy - mx * my }
}

/// Mean SSIM over all fully contained windows of the luma planes.
pub fn ssim(a: &RgbImage, b: &RgbImage, params: &SsimParams) -> Result<f64, QualityError> {
    same_dims(a, b)?;
    params.check(a.dims())?;
    ssim_planes(&a.luma(), &b.luma(), params)
}

pub fn ssim_planes(x: &Plane, y: &Plane, params: &SsimParams) -> Result<f64, QualityError> {
    if x.dims() != y.dims() {
        return Err(QualityError::DimensionMismatch(x.dims(), y.dims()));
    }
    params.check(x.dims())?;
    let (h, w) = x.dims();
    let win = params.window;
    let weights = params.weights();
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=h - win {
        for left in 0..=w - win {
            let s = window_stats(x, y, top, left, win, &weights);
            total += (2.0 * s.mu_x * s.mu_y + c1) * (2.0 * s.cov + c2)
                / ((s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1) * (s.var_x + s.var_y + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM of `a` against the reference `b`, with its gradient with respect to every sample of `a`.
pub fn ssim_with_grad(a: &RgbImage, b: &RgbImage, params: &SsimParams) -> Result<(f64, Vec<f64>), QualityError> {
    same_dims(a, b)?;
    params.check(a.dims())?;
    let (x, y) = (a.luma(), b.luma());
    let (h, w) = x.dims();
    let win = params.window;
    let weights = params.weights();
    let (c1, c2) = (params.c1(), params.c2());
    let mut grad_luma = vec![0.0; h * w];
    let mut total = 0.0;
    let npos = ((h - win + 1) * (w - win + 1)) as f64;
    for top in 0..=h - win {
        for left in 0..=w - win {
            let s = window_stats(&x, &y, top, left, win, &weights);
            let a1 = 2.0 * s.mu_x * s.mu_y + c1;
            let a2 = 2.0 * s.cov + c2;
            let b1 = s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1;
            let b2 = s.var_x + s.var_y + c2;
            let v = a1 * a2 / (b1 * b2);
            total += v;
            // dS/dx_j = w_j (alpha + beta y_j + gamma x_j)
            let beta = 2.0 * v / a2;
            let gamma = -2.0 * v / b2;
            let alpha = v * (2.0 * s.mu_y / a1 - 2.0 * s.mu_x / b1) - beta * s.mu_y - gamma * s.mu_x;
            for i in 0..win {
                for j in 0..win {
                    let p = (top + i) * w + left + j;
                    let wt = weights[i * win + j];
                    grad_luma[p] += wt * (alpha + beta * y.data()[p] + gamma * x.data()[p]) / npos;
                }
            }
        }
    }
    let grad = grad_luma.iter().flat_map(|&g| [g / 3.0; 3]).collect();
    Ok((total / npos, grad))
}

const NORM_EPS: f64 = 1e-8;

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn pixel_angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    if norm3(a) < NORM_EPS || norm3(b) < NORM_EPS {
        return 0.0;
    }
    let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    norm3(cross).atan2(dot)
}

/// Mean per-pixel angle between RGB vectors, in radians.
pub fn angular_color_loss(a: &RgbImage, b: &RgbImage) -> Result<f64, QualityError> {
    same_dims(a, b)?;
    let n = a.pixel_count();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(a.pixels().zip(b.pixels()).map(|(p, q)| pixel_angle(p, q)).sum::<f64>() / n as f64)
}

/// Angular loss with its gradient with respect to `a`. Where the angle is
/// zero or a vector is degenerate the gradient is taken as zero.
pub fn angular_color_loss_with_grad(a: &RgbImage, b: &RgbImage) -> Result<(f64, Vec<f64>), QualityError> {
    same_dims(a, b)?;
    let n = a.pixel_count() as f64;
    let mut grad = vec![0.0; a.data().len()];
    let mut total = 0.0;
    for (i, (p, q)) in a.pixels().zip(b.pixels()).enumerate() {
        total += pixel_angle(p, q);
        let (np, nq) = (norm3(p), norm3(q));
        if np < NORM_EPS || nq < NORM_EPS {
            continue;
        }
        let ph = [p[0] / np, p[1] / np, p[2] / np];
        let qh = [q[0] / nq, q[1] / nq, q[2] / nq];
        let u = ph[0] * qh[0] + ph[1] * qh[1] + ph[2] * qh[2];
        let perp = [qh[0] - u * ph[0], qh[1] - u * ph[1], qh[2] - u * ph[2]];
        let s = norm3(perp);
        if s < 1e-12 {
            continue;
        }
        for k in 0..3 {
            grad[3 * i + k] = -perp[k] / (s * np) / n;
        }
    }
    Ok((if n > 0.0 { total / n } else { 0.0 }, grad))
}
