//! Illumination-guided brightness control.
//!
//! The adjustment map starts from the inverted illumination, normalized so
//! its mean over the hard mask is one, then scaled by the requested ratio.
//! Darker pixels therefore receive proportionally more of the change while
//! the masked mean stays exactly at the ratio. Relighting multiplies the
//! illumination by `1 + M` and recomposes with the untouched reflection.

use thiserror::Error;

use crate::filter::gaussian_blur;
use crate::image::{Plane, RgbImage};
use crate::mask::Mask;
use crate::prompt::Scope;
use crate::retinex::{self, compose, DecomposeParams, RetinexError, RetinexPair};

#[derive(Debug, Error, PartialEq)]
pub enum RelightError {
    #[error("mask selects no pixel")]
    EmptyMask,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ratio {0} is outside [-1, 1]")]
    RatioOutOfRange(f64),
    #[error("level {0} is outside 1..=10")]
    BadLevel(u32),
    #[error(transparent)]
    Retinex(#[from] RetinexError),
}

/// Smallest mean inverted illumination used for normalization.
const MEAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentMap {
    /// Signed per-pixel relative illumination delta.
    pub plane: Plane,
    pub ratio: f64,
    pub scope: Scope,
}

impl AdjustmentMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { plane: Plane::filled(height, width, 0.0), ratio: 0.0, scope: Scope::Global }
    }
}

fn check_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<(), RelightError> {
    if a != b {
        return Err(RelightError::DimensionMismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Invert, clip, take the masked mean, normalize; scale by `ratio` and the
/// (possibly feathered) mask; optionally smooth and re-mask.
pub fn adjustment_map(illumination: &Plane, mask: &Mask, ratio: f64, smooth_sigma: f64) -> Result<AdjustmentMap, RelightError> {
    check_dims(illumination.dims(), mask.dims(), "illumination and mask")?;
    if !(ratio.abs() <= 1.0) {
        return Err(RelightError::RatioOutOfRange(ratio));
    }
    let inv = illumination.map(|l| (1.0 - l).clamp(0.0, 1.0));
    let (mut sum, mut n) = (0.0, 0usize);
    for (&v, &m) in inv.data().iter().zip(mask.plane.data()) {
        if m >= 0.5 {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(RelightError::EmptyMask);
    }
    let mean = (sum / n as f64).max(MEAN_FLOOR);
    let mut plane = inv.clone();
    for ((v, &i), &m) in plane.data_mut().iter_mut().zip(inv.data()).zip(mask.plane.data()) {
        *v = i / mean * ratio * m;
    }
    if smooth_sigma > 0.0 {
        plane = gaussian_blur(&plane, smooth_sigma);
        remask(&mut plane, mask);
    }
    Ok(AdjustmentMap { plane, ratio, scope: Scope::Region })
}

/// Constant `ratio` over the mask: the map used when illumination guidance is disabled.
pub fn uniform_map(mask: &Mask, ratio: f64, smooth_sigma: f64) -> Result<AdjustmentMap, RelightError> {
    if !(ratio.abs() <= 1.0) {
        return Err(RelightError::RatioOutOfRange(ratio));
    }
    if mask.hard_count() == 0 {
        return Err(RelightError::EmptyMask);
    }
    let mut plane = mask.plane.map(|m| ratio * m);
    if smooth_sigma > 0.0 {
        plane = gaussian_blur(&plane, smooth_sigma);
        remask(&mut plane, mask);
    }
    Ok(AdjustmentMap { plane, ratio, scope: Scope::Region })
}

fn remask(plane: &mut Plane, mask: &Mask) {
    for (v, &m) in plane.data_mut().iter_mut().zip(mask.plane.data()) {
        if m == 0.0 {
            *v = 0.0;
        }
    }
}

/// `L' = clamp(L · (1 + M), floor, 1)`, recomposed with the reflection.
pub fn relit_illumination(pair: &RetinexPair, map: &AdjustmentMap) -> Result<Plane, RelightError> {
    check_dims(pair.illumination.dims(), map.plane.dims(), "illumination and adjustment map")?;
    let mut out = pair.illumination.clone();
    for (l, &m) in out.data_mut().iter_mut().zip(map.plane.data()) {
        *l = (*l * (1.0 + m)).clamp(pair.floor, 1.0);
    }
    Ok(out)
}

pub fn apply_relight(pair: &RetinexPair, map: &AdjustmentMap) -> Result<RgbImage, RelightError> {
    let lit = relit_illumination(pair, map)?;
    Ok(compose(&lit, &pair.reflection)?)
}

/// Pulls illumination toward one: `L + (level/10)(1 − L)`.
pub fn scale_level(illumination: &Plane, level: u32) -> Result<Plane, RelightError> {
    if !(1..=10).contains(&level) {
        return Err(RelightError::BadLevel(level));
    }
    let f = level as f64 / 10.0;
    Ok(illumination.map(|l| l + f * (1.0 - l)))
}

/// Level-scaled low-light illumination recomposed with the well-lit reflection.
pub fn training_target(low: &RetinexPair, high: &RetinexPair, level: u32) -> Result<RgbImage, RelightError> {
    check_dims(low.illumination.dims(), high.reflection.dims(), "low and high images")?;
    let lit = scale_level(&low.illumination, level)?;
    Ok(compose(&lit, &high.reflection)?)
}

/// Returns `(input, target)` for one of the ten supervision levels.
pub fn make_training_pair(
    low: &RgbImage,
    high: &RgbImage,
    level: u32,
    params: &DecomposeParams,
) -> Result<(RgbImage, RgbImage), RelightError> {
    check_dims(low.dims(), high.dims(), "low and high images")?;
    if !(1..=10).contains(&level) {
        return Err(RelightError::BadLevel(level));
    }
    let lp = retinex::decompose(low, params)?;
    let hp = retinex::decompose(high, params)?;
    Ok((low.clone(), training_target(&lp, &hp, level)?))
}

/// Masked mean of `L'/L − 1`, the ratio actually achieved.
pub fn achieved_ratio(before: &Plane, after: &Plane, mask: &Mask) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for ((&lb, &la), &m) in before.data().iter().zip(after.data()).zip(mask.plane.data()) {
        if m >= 0.5 && lb > 0.0 {
            sum += la / lb - 1.0;
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    sum / n as f64
}
