//! Noise schedules, forward marginals, DDIM sampling and the training losses.

mod toy;

pub use toy::{
    gradient_check, synthetic_images, train_toy_denoiser, Conv2d, ToyConfig, ToyDenoiser, TrainReport, TrainingExample,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{FeatureMap, FusionError};
use crate::image::RgbImage;
use crate::quality::{self, QualityError, SsimParams};
use crate::weights::WeightsError;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },
    #[error("training diverged at step {step}")]
    Divergence { step: usize },
    #[error("invalid training setup: {0}")]
    BadTraining(String),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleParams {
    /// Short schedule whose betas are stretched so that ᾱ_T is near zero.
    pub fn short() -> Self {
        Self { steps: 50, beta_start: 2e-3, beta_end: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::BadSchedule("T must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::BadSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(&betas)
}

impl NoiseSchedule {
    pub fn from_params(p: &ScheduleParams) -> Result<Self, DiffusionError> {
        make_schedule(p.steps, p.beta_start, p.beta_end)
    }

    /// `betas[i]` is β for step `i + 1`.
    pub fn from_betas(betas: &[f64]) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::BadSchedule("no steps".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(DiffusionError::BadSchedule(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { betas: betas.to_vec(), alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// ᾱ_t for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }

    /// σ_t² = η β_t, capped so that 1 − ᾱ_{t−1} − σ_t² stays nonnegative.
    pub fn sigma_sq(&self, t: usize, eta: f64) -> f64 {
        (eta * self.beta(t)).min(1.0 - self.alpha_bar(t - 1)).max(0.0)
    }
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<(), DiffusionError> {
    if a.len() != b.len() {
        return Err(DiffusionError::Shape(format!("{what}: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Closed-form forward marginal.
pub fn q_sample(y0: &[f64], t: usize, eps: &[f64], s: &NoiseSchedule) -> Result<Vec<f64>, DiffusionError> {
    s.check(t)?;
    same_len(y0, eps, "q_sample")?;
    let (a, b) = (s.alpha_bar(t).sqrt(), (1.0 - s.alpha_bar(t)).sqrt());
    Ok(y0.iter().zip(eps).map(|(y, e)| a * y + b * e).collect())
}

/// One forward transition `y_{t−1} → y_t`.
pub fn q_step(y_prev: &[f64], t: usize, eps: &[f64], s: &NoiseSchedule) -> Result<Vec<f64>, DiffusionError> {
    s.check(t)?;
    same_len(y_prev, eps, "q_step")?;
    let b = s.beta(t);
    let (a, c) = ((1.0 - b).sqrt(), b.sqrt());
    Ok(y_prev.iter().zip(eps).map(|(y, e)| a * y + c * e).collect())
}

/// Clean-signal estimate implied by a noise prediction.
pub fn predict_y0(y_t: &[f64], t: usize, eps_hat: &[f64], s: &NoiseSchedule) -> Result<Vec<f64>, DiffusionError> {
    s.check(t)?;
    same_len(y_t, eps_hat, "predict_y0")?;
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(y_t.iter().zip(eps_hat).map(|(y, e)| (y - b * e) / a).collect())
}

/// One DDIM update. `noise` is only read when σ_t > 0.
pub fn ddim_step(
    y_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    eta: f64,
    s: &NoiseSchedule,
    noise: Option<&[f64]>,
) -> Result<Vec<f64>, DiffusionError> {
    let y0 = predict_y0(y_t, t, eps_hat, s)?;
    if eta < 0.0 {
        return Err(DiffusionError::BadSchedule(format!("eta {eta} is negative")));
    }
    let prev = s.alpha_bar(t - 1);
    let sig2 = s.sigma_sq(t, eta);
    let (a, d, sig) = (prev.sqrt(), (1.0 - prev - sig2).max(0.0).sqrt(), sig2.sqrt());
    let mut out: Vec<f64> = y0.iter().zip(eps_hat).map(|(y, e)| a * y + d * e).collect();
    if sig > 0.0 {
        let n = noise.ok_or_else(|| DiffusionError::Shape("stochastic step needs noise".into()))?;
        same_len(y_t, n, "ddim noise")?;
        out.iter_mut().zip(n).for_each(|(o, z)| *o += sig * z);
    }
    Ok(out)
}

/// Noise predictor ε_θ(y_t, t, c).
pub trait Denoiser {
    fn predict(&self, y_t: &FeatureMap, t: usize, condition: Option<&FeatureMap>) -> Result<FeatureMap, DiffusionError>;
}

/// Exact noise prediction for data whose every element is drawn from N(μ, s²).
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    pub mean: f64,
    pub std: f64,
    pub schedule: NoiseSchedule,
}

impl GaussianDenoiser {
    pub fn posterior_mean(&self, y: f64, t: usize) -> f64 {
        let ab = self.schedule.alpha_bar(t);
        let v = self.std * self.std;
        self.mean + ab.sqrt() * v / (ab * v + 1.0 - ab) * (y - ab.sqrt() * self.mean)
    }
}

impl Denoiser for GaussianDenoiser {
    fn predict(&self, y_t: &FeatureMap, t: usize, _c: Option<&FeatureMap>) -> Result<FeatureMap, DiffusionError> {
        self.schedule.check(t)?;
        let ab = self.schedule.alpha_bar(t);
        let mut out = y_t.clone();
        for v in out.data_mut() {
            *v = (*v - ab.sqrt() * self.posterior_mean(*v, t)) / (1.0 - ab).sqrt();
        }
        Ok(out)
    }
}

pub fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws y_T from `seed` and runs DDIM from T down to 1.
pub fn sample(
    denoiser: &dyn Denoiser,
    condition: Option<&FeatureMap>,
    schedule: &NoiseSchedule,
    eta: f64,
    seed: u64,
    shape: (usize, usize, usize),
) -> Result<FeatureMap, DiffusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = shape;
    let y_t = FeatureMap::new(c, h, w, standard_normal(&mut rng, c * h * w))?;
    sample_from(denoiser, condition, schedule, eta, y_t, &mut rng)
}

pub fn sample_from(
    denoiser: &dyn Denoiser,
    condition: Option<&FeatureMap>,
    schedule: &NoiseSchedule,
    eta: f64,
    mut y: FeatureMap,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMap, DiffusionError> {
    for t in (1..=schedule.steps()).rev() {
        let eps = denoiser.predict(&y, t, condition)?;
        if eps.shape() != y.shape() {
            return Err(DiffusionError::Shape(format!("denoiser returned {:?} for {:?}", eps.shape(), y.shape())));
        }
        let noise = if schedule.sigma_sq(t, eta) > 0.0 { Some(standard_normal(rng, y.data().len())) } else { None };
        let next = ddim_step(y.data(), t, eps.data(), eta, schedule, noise.as_deref())?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::NonFinite { step: t });
        }
        y.data_mut().copy_from_slice(&next);
    }
    Ok(y)
}

pub fn simple_loss(eps: &[f64], eps_hat: &[f64]) -> Result<f64, DiffusionError> {
    same_len(eps, eps_hat, "simple_loss")?;
    if eps.is_empty() {
        return Ok(0.0);
    }
    Ok(eps.iter().zip(eps_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / eps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuxWeights {
    pub w_col: f64,
    pub w_ssim: f64,
}

impl Default for AuxWeights {
    fn default() -> Self {
        Self { w_col: 0.1, w_ssim: 0.2 }
    }
}

impl AuxWeights {
    pub const ZERO: AuxWeights = AuxWeights { w_col: 0.0, w_ssim: 0.0 };

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if !(self.w_col >= 0.0 && self.w_ssim >= 0.0) {
            return Err(DiffusionError::BadTraining(format!("negative aux weights {self:?}")));
        }
        Ok(())
    }
}

/// SSIM window used by the auxiliary loss, shrunk to fit small images.
pub fn aux_ssim_params(h: usize, w: usize) -> SsimParams {
    SsimParams::default().fit_to(h, w)
}

/// Noise MSE plus weighted color-angle and structural dissimilarity terms on
/// the recovered clean image.
pub fn aux_loss(
    y0_hat: &RgbImage,
    y0: &RgbImage,
    eps: &[f64],
    eps_hat: &[f64],
    weights: &AuxWeights,
) -> Result<f64, DiffusionError> {
    weights.validate()?;
    let base = simple_loss(eps, eps_hat)?;
    if y0_hat.dims() != y0.dims() {
        return Err(DiffusionError::Shape(format!("aux images {:?} vs {:?}", y0_hat.dims(), y0.dims())));
    }
    let (h, w) = y0.dims();
    let col = if weights.w_col > 0.0 { quality::angular_color_loss(y0_hat, y0)? } else { 0.0 };
    let ssim = if weights.w_ssim > 0.0 { quality::ssim(y0_hat, y0, &aux_ssim_params(h, w))? } else { 1.0 };
    Ok(base + weights.w_col * col + weights.w_ssim * (1.0 - ssim))
}

/// Maps model space [-1, 1] to image space [0, 1] without clamping.
pub fn to_unit(map: &FeatureMap) -> RgbImage {
    let mut m = map.clone();
    m.data_mut().iter_mut().for_each(|v| *v = (*v + 1.0) / 2.0);
    m.to_rgb()
}

pub fn from_unit(img: &RgbImage) -> FeatureMap {
    let mut m = FeatureMap::from_rgb(img);
    m.data_mut().iter_mut().for_each(|v| *v = 2.0 * *v - 1.0);
    m
}
