//! Target masks: loaded from disk, grown from a seed on the reflection
//! image, or covering the whole frame. Feathering softens hard edges for
//! blending.

use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::gaussian_blur;
use crate::image::{self, max_channel, ImageError, Plane, RgbImage};

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("cannot load mask: {0}")]
    Image(#[from] ImageError),
    #[error("mask is {mask_h}x{mask_w} but image is {img_h}x{img_w}")]
    SizeMismatch { mask_h: usize, mask_w: usize, img_h: usize, img_w: usize },
    #[error("seed point ({x}, {y}) is outside the {width}x{height} image")]
    SeedOutOfBounds { x: usize, y: usize, width: usize, height: usize },
    #[error("invalid seed point {0:?}; expected x,y")]
    BadSeed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Hard,
    Feathered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub plane: Plane,
    pub kind: MaskKind,
}

impl Mask {
    pub fn full(height: usize, width: usize) -> Self {
        Self { plane: Plane::filled(height, width, 1.0), kind: MaskKind::Hard }
    }

    /// Thresholds at 0.5 into a hard mask.
    pub fn threshold(plane: &Plane) -> Self {
        Self { plane: plane.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }), kind: MaskKind::Hard }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.plane.dims()
    }

    /// Pixels at or above 0.5.
    pub fn hard_count(&self) -> usize {
        self.plane.data().iter().filter(|&&v| v >= 0.5).count()
    }

    pub fn area_fraction(&self) -> f64 {
        if self.plane.is_empty() {
            return 0.0;
        }
        self.hard_count() as f64 / self.plane.len() as f64
    }

    /// `1 − mask`, keeping the kind.
    pub fn complement(&self) -> Self {
        Self { plane: self.plane.map(|v| 1.0 - v), kind: self.kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPoint {
    pub x: usize,
    pub y: usize,
}

impl FromStr for SeedPoint {
    type Err = MaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MaskError::BadSeed(s.to_string());
        let (x, y) = s.split_once(',').ok_or_else(bad)?;
        Ok(SeedPoint { x: x.trim().parse().map_err(|_| bad())?, y: y.trim().parse().map_err(|_| bad())? })
    }
}

impl fmt::Display for SeedPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        // (dy, dx) in row-major order
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub seed: SeedPoint,
    /// Largest RGB distance to the running region mean that still joins.
    pub color_tol: f64,
    pub connectivity: Connectivity,
}

impl SegmentParams {
    pub fn new(seed: SeedPoint) -> Self {
        Self { seed, color_tol: 0.15, connectivity: Connectivity::Four }
    }
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask, MaskError> {
    let img = image::load_image(path)?;
    Ok(Mask::threshold(&max_channel(&img)))
}

/// Seeded region growing over the reflection image.
///
/// A pixel joins when it touches the region and its color lies within
/// `color_tol` of the region's current mean. The frontier is FIFO and
/// neighbours are visited in row-major order, so the result is
/// deterministic. A rejected pixel may still join later through another
/// neighbour once the mean has moved.
pub fn heuristic_segment(reflection: &RgbImage, params: &SegmentParams) -> Result<Mask, MaskError> {
    let (h, w) = reflection.dims();
    let SeedPoint { x: sx, y: sy } = params.seed;
    if sx >= w || sy >= h {
        return Err(MaskError::SeedOutOfBounds { x: sx, y: sy, width: w, height: h });
    }
    let mut inside = vec![false; h * w];
    let mut sum = reflection.pixel(sy, sx);
    let mut count = 1.0;
    inside[sy * w + sx] = true;
    let mut frontier = VecDeque::from([(sy, sx)]);
    let tol2 = params.color_tol * params.color_tol;

    while let Some((y, x)) = frontier.pop_front() {
        for &(dy, dx) in params.connectivity.offsets() {
            let (ny, nx) = (y as isize + dy, x as isize + dx);
            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                continue;
            }
            let (ny, nx) = (ny as usize, nx as usize);
            if inside[ny * w + nx] {
                continue;
            }
            let c = reflection.pixel(ny, nx);
            let d2: f64 = (0..3).map(|k| (c[k] - sum[k] / count).powi(2)).sum();
            if d2 <= tol2 {
                inside[ny * w + nx] = true;
                for k in 0..3 {
                    sum[k] += c[k];
                }
                count += 1.0;
                frontier.push_back((ny, nx));
            }
        }
    }
    let plane = Plane::from_fn(h, w, |y, x| if inside[y * w + x] { 1.0 } else { 0.0 });
    Ok(Mask { plane, kind: MaskKind::Hard })
}

/// Gaussian-softened copy; `sigma == 0` returns the input unchanged.
pub fn feather(mask: &Mask, sigma: f64) -> Mask {
    if !(sigma > 0.0) {
        return mask.clone();
    }
    let plane = gaussian_blur(&mask.plane, sigma).map(|v| v.clamp(0.0, 1.0));
    Mask { plane, kind: MaskKind::Feathered }
}

/// Source of the target mask. A neural text-grounded provider would slot in here.
pub trait MaskProvider {
    fn provide(&self, reflection: &RgbImage) -> Result<Mask, MaskError>;
}

#[derive(Debug, Clone)]
pub struct FileMask(pub PathBuf);

impl MaskProvider for FileMask {
    fn provide(&self, reflection: &RgbImage) -> Result<Mask, MaskError> {
        let mask = load_mask(&self.0)?;
        if mask.dims() != reflection.dims() {
            let (mask_h, mask_w) = mask.dims();
            let (img_h, img_w) = reflection.dims();
            return Err(MaskError::SizeMismatch { mask_h, mask_w, img_h, img_w });
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone)]
pub struct HeuristicMask(pub SegmentParams);

impl MaskProvider for HeuristicMask {
    fn provide(&self, reflection: &RgbImage) -> Result<Mask, MaskError> {
        heuristic_segment(reflection, &self.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FullMask;

impl MaskProvider for FullMask {
    fn provide(&self, reflection: &RgbImage) -> Result<Mask, MaskError> {
        Ok(Mask::full(reflection.height(), reflection.width()))
    }
}
