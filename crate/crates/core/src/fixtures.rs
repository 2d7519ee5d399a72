//! Small synthetic scenes shared by tests, the acceptance suite and demos.

use crate::image::RgbImage;

/// Dim reddish square of side `h/2` centered on a darker blue-gray field.
pub fn two_region(h: usize, w: usize) -> RgbImage {
    let (y0, y1) = (h / 4, h / 4 + h / 2);
    let (x0, x1) = (w / 4, w / 4 + w / 2);
    RgbImage::from_fn(h, w, |y, x| {
        if (y0..y1).contains(&y) && (x0..x1).contains(&x) {
            [0.42, 0.22, 0.16]
        } else {
            [0.10, 0.12, 0.18]
        }
    })
}

/// Center of the square in [`two_region`], as `(x, y)`.
pub fn two_region_seed(h: usize, w: usize) -> (usize, usize) {
    (w / 2, h / 2)
}

/// Horizontal light falloff over mild texture, never clipping.
pub fn lit_gradient(h: usize, w: usize) -> RgbImage {
    RgbImage::from_fn(h, w, |y, x| {
        let light = 0.15 + 0.3 * x as f64 / w.max(2) as f64;
        let tex = if (x / 3 + y / 3) % 2 == 0 { 1.0 } else { 0.85 };
        [light * tex, light * tex * 0.9, light * tex * 0.7]
    })
}

pub fn uniform_gray(h: usize, w: usize, v: f64) -> RgbImage {
    RgbImage::filled(h, w, [v; 3])
}

/// [`two_region`] under a left-to-right light falloff, so illumination varies inside the square.
pub fn lit_two_region(h: usize, w: usize) -> RgbImage {
    let base = two_region(h, w);
    RgbImage::from_fn(h, w, |y, x| {
        let light = 0.45 + 0.55 * x as f64 / w.max(2) as f64;
        base.pixel(y, x).map(|v| v * light)
    })
}
