//! Retinex decomposition `I = L ⊙ R`.
//!
//! The illumination `L` is an edge-preserving smoothing of the max-channel
//! map, obtained by minimizing a weighted least-squares energy, then lifted
//! so it never falls below the max channel. Reflection is the per-channel
//! quotient, so reconstruction is exact up to rounding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{max_channel, Plane, RgbImage};

#[derive(Debug, Error, PartialEq)]
pub enum RetinexError {
    #[error("wls solver did not converge in {iters} iterations (relative residual {residual:.3e})")]
    NotConverged { iters: usize, residual: f64 },
    #[error("invalid decomposition parameters: {0}")]
    InvalidParams(String),
    #[error("illumination is {l_h}x{l_w} but reflection is {r_h}x{r_w}")]
    DimensionMismatch { l_h: usize, l_w: usize, r_h: usize, r_w: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeParams {
    /// Smoothness weight.
    pub lambda: f64,
    /// Stabilizer in the gradient weights `1 / (|∇l0| + eps_w)`.
    pub eps_w: f64,
    /// Illumination floor.
    pub eps_l: f64,
    /// Relative residual at which the solver stops.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        Self { lambda: 0.15, eps_w: 1e-3, eps_l: 1e-3, tol: 1e-5, max_iters: 200 }
    }
}

impl DecomposeParams {
    pub fn validate(&self) -> Result<(), RetinexError> {
        let bad = |what: &str| Err(RetinexError::InvalidParams(what.to_string()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.eps_w > 0.0) {
            return bad("eps_w must be positive");
        }
        if !(self.eps_l > 0.0 && self.eps_l < 1.0) {
            return bad("eps_l must lie in (0, 1)");
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad("tol must lie in (0, 1)");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        Ok(())
    }
}

/// Illumination and reflection of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct RetinexPair {
    pub illumination: Plane,
    pub reflection: RgbImage,
    /// Floor used for `illumination`; relighting clamps to it as well.
    pub floor: f64,
}

/// Edge weights of the smoothness term, one per forward difference.
struct EdgeWeights {
    /// `wx[p]` couples `p` and its right neighbour (last column unused).
    wx: Vec<f64>,
    /// `wy[p]` couples `p` and the pixel below (last row unused).
    wy: Vec<f64>,
}

impl EdgeWeights {
    fn new(l0: &Plane, lambda: f64, eps_w: f64) -> Self {
        let (h, w) = l0.dims();
        let mut wx = vec![0.0; h * w];
        let mut wy = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let v = l0.data()[p];
                if x + 1 < w {
                    wx[p] = lambda / ((l0.data()[p + 1] - v).abs() + eps_w);
                }
                if y + 1 < h {
                    wy[p] = lambda / ((l0.data()[p + w] - v).abs() + eps_w);
                }
            }
        }
        Self { wx, wy }
    }

    /// `out = (I + Dᵀ W D) v`.
    fn apply(&self, h: usize, w: usize, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if x + 1 < w {
                    let f = self.wx[p] * (v[p] - v[p + 1]);
                    out[p] += f;
                    out[p + 1] -= f;
                }
                if y + 1 < h {
                    let f = self.wy[p] * (v[p] - v[p + w]);
                    out[p] += f;
                    out[p + w] -= f;
                }
            }
        }
    }

    fn diagonal(&self, h: usize, w: usize) -> Vec<f64> {
        let mut d = vec![1.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if x + 1 < w {
                    d[p] += self.wx[p];
                    d[p + 1] += self.wx[p];
                }
                if y + 1 < h {
                    d[p] += self.wy[p];
                    d[p + w] += self.wy[p];
                }
            }
        }
        d
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `Σ (l − l0)² + λ Σ_d w_d (∂_d l)²` with `w_d = 1/(|∂_d l0| + eps_w)`.
///
/// Solves the normal equations `(I + λ Dᵀ W D) l = l0` by Jacobi-preconditioned
/// conjugate gradients until `‖r‖ / ‖l0‖ ≤ tol`.
pub fn wls_solve(l0: &Plane, lambda: f64, eps_w: f64, tol: f64, max_iters: usize) -> Result<Plane, RetinexError> {
    let (h, w) = l0.dims();
    let n = h * w;
    let b = l0.data();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 || n == 0 {
        return Ok(l0.clone());
    }
    let weights = EdgeWeights::new(l0, lambda, eps_w);
    let inv_diag: Vec<f64> = weights.diagonal(h, w).iter().map(|d| 1.0 / d).collect();

    // Start from l0: the data term's minimizer.
    let mut x = b.to_vec();
    let mut ax = vec![0.0; n];
    weights.apply(h, w, &x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut residual = dot(&r, &r).sqrt() / b_norm;

    let mut iters = 0;
    while residual > tol {
        if iters == max_iters {
            return Err(RetinexError::NotConverged { iters, residual });
        }
        weights.apply(h, w, &p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        residual = dot(&r, &r).sqrt() / b_norm;
        iters += 1;
    }
    Ok(Plane::from_fn(h, w, |yy, xx| x[yy * w + xx]))
}

pub fn decompose(img: &RgbImage, params: &DecomposeParams) -> Result<RetinexPair, RetinexError> {
    params.validate()?;
    let l0 = max_channel(img);
    let smooth = wls_solve(&l0, params.lambda, params.eps_w, params.tol, params.max_iters)?;
    let illumination = Plane::from_fn(l0.height(), l0.width(), |y, x| {
        smooth.get(y, x).max(l0.get(y, x)).clamp(params.eps_l, 1.0)
    });
    let mut reflection = img.clone();
    for (px, &l) in reflection.data_mut().chunks_exact_mut(3).zip(illumination.data()) {
        for c in px {
            *c = (*c / l).clamp(0.0, 1.0);
        }
    }
    Ok(RetinexPair { illumination, reflection, floor: params.eps_l })
}

/// `L ⊙ R`, clamped to `[0, 1]`.
pub fn reconstruct(pair: &RetinexPair) -> Result<RgbImage, RetinexError> {
    compose(&pair.illumination, &pair.reflection)
}

pub(crate) fn compose(illumination: &Plane, reflection: &RgbImage) -> Result<RgbImage, RetinexError> {
    if illumination.dims() != reflection.dims() {
        let (l_h, l_w) = illumination.dims();
        let (r_h, r_w) = reflection.dims();
        return Err(RetinexError::DimensionMismatch { l_h, l_w, r_h, r_w });
    }
    let mut out = reflection.clone();
    for (px, &l) in out.data_mut().chunks_exact_mut(3).zip(illumination.data()) {
        for c in px {
            *c = (*c * l).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn uniform_input_is_a_fixed_point() {
        let l0 = Plane::filled(5, 7, 0.37);
        let l = wls_solve(&l0, 0.15, 1e-3, 1e-8, 100).unwrap();
        assert_eq!(l, l0);
    }

    #[test]
    fn tiny_lambda_returns_input() {
        let l0 = Plane::from_fn(4, 4, |y, x| ((y * 7 + x * 3) % 5) as f64 / 4.0);
        let l = wls_solve(&l0, 1e-12, 1e-3, 1e-12, 100).unwrap();
        assert!(max_abs_diff(l.data(), l0.data()) < 1e-8);
    }

    #[test]
    fn step_image_matches_dense_solve() {
        let l0 = Plane::from_fn(4, 4, |_, x| if x < 2 { 0.2 } else { 0.8 });
        let l = wls_solve(&l0, 0.15, 1e-3, 1e-13, 500).unwrap();
        let dense = oracle::dense_solve(&l0, 0.15, 1e-3);
        assert!(max_abs_diff(l.data(), &dense) < 1e-6);
    }

    #[test]
    fn random_instances_match_dense_solve() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (h, w) in [(1, 5), (3, 3), (6, 6), (2, 6), (5, 4)] {
            let l0 = Plane::from_fn(h, w, |_, _| rng.random());
            let l = wls_solve(&l0, 0.15, 1e-3, 1e-13, 1000).unwrap();
            let dense = oracle::dense_solve(&l0, 0.15, 1e-3);
            assert!(max_abs_diff(l.data(), &dense) < 1e-6, "{h}x{w}");
        }
    }

    #[test]
    fn solution_lowers_energy_below_neighbours() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let l0 = Plane::from_fn(4, 5, |_, _| rng.random());
        let l = wls_solve(&l0, 0.15, 1e-3, 1e-13, 1000).unwrap();
        let e = oracle::energy(l.data(), &l0, 0.15, 1e-3);
        for i in 0..l.len() {
            let mut v = l.data().to_vec();
            v[i] += 1e-4;
            assert!(oracle::energy(&v, &l0, 0.15, 1e-3) > e);
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let l0 = Plane::from_fn(16, 16, |y, x| if (x + y) % 2 == 0 { 0.1 } else { 0.9 });
        match wls_solve(&l0, 10.0, 1e-3, 1e-14, 1) {
            Err(RetinexError::NotConverged { iters: 1, residual }) => assert!(residual > 1e-14),
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn uniform_gray_decomposes_to_unit_reflection() {
        let img = RgbImage::filled(6, 6, [0.25; 3]);
        let pair = decompose(&img, &DecomposeParams::default()).unwrap();
        assert!(pair.illumination.data().iter().all(|&l| l == 0.25));
        assert!(pair.reflection.data().iter().all(|&r| r == 1.0));
    }

    #[test]
    fn black_image_hits_floor() {
        let params = DecomposeParams::default();
        let pair = decompose(&RgbImage::filled(4, 4, [0.0; 3]), &params).unwrap();
        assert!(pair.illumination.data().iter().all(|&l| l == params.eps_l));
        assert!(pair.reflection.data().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn reconstruct_cases() {
        let r = RgbImage::from_fn(2, 3, |y, x| [0.1 * x as f64, 0.2 * y as f64, 0.5]);
        let pair = RetinexPair { illumination: Plane::filled(2, 3, 1.0), reflection: r.clone(), floor: 1e-3 };
        assert_eq!(reconstruct(&pair).unwrap(), r);

        let pair = RetinexPair {
            illumination: Plane::filled(2, 2, 0.5),
            reflection: RgbImage::filled(2, 2, [1.0; 3]),
            floor: 1e-3,
        };
        assert_eq!(reconstruct(&pair).unwrap(), RgbImage::filled(2, 2, [0.5; 3]));

        let bad = RetinexPair { illumination: Plane::filled(2, 3, 0.5), reflection: RgbImage::filled(2, 2, [1.0; 3]), floor: 1e-3 };
        assert!(matches!(reconstruct(&bad), Err(RetinexError::DimensionMismatch { .. })));
    }

    #[test]
    fn invalid_params_rejected() {
        let img = RgbImage::filled(2, 2, [0.5; 3]);
        for p in [
            DecomposeParams { lambda: 0.0, ..Default::default() },
            DecomposeParams { eps_w: -1.0, ..Default::default() },
            DecomposeParams { tol: 1.5, ..Default::default() },
            DecomposeParams { max_iters: 0, ..Default::default() },
        ] {
            assert!(matches!(decompose(&img, &p), Err(RetinexError::InvalidParams(_))));
        }
    }

    #[test]
    fn default_params_converge_on_textured_image() {
        let img = RgbImage::from_fn(96, 128, |y, x| {
            let v = 0.05 + 0.2 * (((x / 8 + y / 8) % 2) as f64) + 0.01 * ((x * 31 + y * 17) % 7) as f64;
            [v, 0.8 * v, 0.5 * v]
        });
        let pair = decompose(&img, &DecomposeParams::default()).unwrap();
        let rec = reconstruct(&pair).unwrap();
        assert!(max_abs_diff(rec.data(), img.data()) <= 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn reconstruction_is_exact(
            (h, w, px) in (1usize..9, 1usize..9).prop_flat_map(|(h, w)|
                (Just(h), Just(w), proptest::collection::vec(0.0f64..=1.0, 3 * h * w)))
        ) {
            let img = RgbImage::new(h, w, px).unwrap();
            let params = DecomposeParams::default();
            let pair = decompose(&img, &params).unwrap();
            let rec = reconstruct(&pair).unwrap();
            prop_assert!(max_abs_diff(rec.data(), img.data()) <= 1e-6);
            let l0 = max_channel(&img);
            for (l, m) in pair.illumination.data().iter().zip(l0.data()) {
                prop_assert!(*l >= *m && *l >= params.eps_l && *l <= 1.0);
            }
            prop_assert!(pair.reflection.data().iter().all(|r| (0.0..=1.0).contains(r)));
        }
    }
}
