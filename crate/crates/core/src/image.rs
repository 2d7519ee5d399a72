//! Raster containers and 8-bit I/O.
//!
//! All pixel arithmetic in the crate happens on `f64` intensities in `[0, 1]`.
//! Only two on-disk formats are understood: 8-bit PNG (gray, gray+alpha, RGB,
//! RGBA; alpha is dropped) and binary PPM (`P6`, maxval 255). Encoding
//! quantizes with round-half-up, so `save` followed by `load` is the identity
//! on 8-bit data.

use std::fs;
use std::io::{self, Cursor};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("truncated image data: {0}")]
    Truncated(String),
    #[error("malformed image: {0}")]
    Malformed(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ImageError>;

/// Single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(ImageError::DimensionMismatch(format!(
                "plane {height}x{width} needs {} samples, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::Malformed(format!("non-finite sample at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Anisotropic total variation: sum of absolute forward differences.
    pub fn total_variation(&self) -> f64 {
        let mut tv = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(y, x);
                if x + 1 < self.width {
                    tv += (self.get(y, x + 1) - v).abs();
                }
                if y + 1 < self.height {
                    tv += (self.get(y + 1, x) - v).abs();
                }
            }
        }
        tv
    }

    /// Replicates the plane into three identical channels.
    pub fn to_rgb(&self) -> RgbImage {
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        RgbImage { height: self.height, width: self.width, data }
    }
}

/// Three-channel raster, row-major with interleaved R, G, B.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(ImageError::DimensionMismatch(format!(
                "rgb image {height}x{width} needs {} samples, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::Malformed(format!("non-finite sample at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Per-pixel mean of the three channels.
    pub fn luma(&self) -> Plane {
        let data = self.pixels().map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
        Plane { height: self.height, width: self.width, data }
    }
}

/// Per-pixel maximum over R, G, B.
pub fn max_channel(img: &RgbImage) -> Plane {
    let data = img.pixels().map(|p| p[0].max(p[1]).max(p[2])).collect();
    Plane { height: img.height, width: img.width, data }
}

/// Round-half-up quantization of a unit intensity to a byte.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    /// Picks the format from a file extension, defaulting to PNG.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(ext) if ext == "ppm" || ext == "pnm" => ImageFormat::Ppm,
            _ => ImageFormat::Png,
        }
    }
}

/// Anything that can be written as an 8-bit raster.
pub trait Raster {
    fn dims(&self) -> (usize, usize);
    /// Number of interleaved channels, 1 or 3.
    fn channels(&self) -> usize;
    fn samples(&self) -> &[f64];
}

impl Raster for Plane {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    fn channels(&self) -> usize {
        1
    }
    fn samples(&self) -> &[f64] {
        &self.data
    }
}

impl Raster for RgbImage {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    fn channels(&self) -> usize {
        3
    }
    fn samples(&self) -> &[f64] {
        &self.data
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(ImageError::NotFound(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    decode_image(&bytes)
}

/// Decodes PNG or P6 PPM bytes, sniffing the format from the magic number.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";
    if bytes.starts_with(PNG_MAGIC) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        Err(ImageError::Unsupported(format!("netpbm variant P{}", bytes[1] as char)))
    } else if bytes.len() < PNG_MAGIC.len() && PNG_MAGIC.starts_with(bytes) && !bytes.is_empty() {
        Err(ImageError::Truncated("png signature".into()))
    } else {
        Err(ImageError::Unsupported("not a PNG or P6 PPM stream".into()))
    }
}

fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    use png::{BitDepth, ColorType, DecodingError, Transformations};

    let map_err = |e: DecodingError| match e {
        DecodingError::IoError(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
            ImageError::Truncated(io.to_string())
        }
        DecodingError::IoError(io) => ImageError::Io(io),
        DecodingError::Format(f) => {
            let msg = f.to_string();
            if msg.contains("EOF") || msg.contains("eof") || msg.contains("nexpected end") {
                ImageError::Truncated(msg)
            } else {
                ImageError::Malformed(msg)
            }
        }
        other => ImageError::Malformed(other.to_string()),
    };

    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    // Expands palettes and sub-byte grays to 8 bits; 16-bit stays 16 and is rejected below.
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(map_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Unsupported("png too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(map_err)?;
    if info.bit_depth != BitDepth::Eight {
        return Err(ImageError::Unsupported(format!("{:?}-bit png", info.bit_depth)));
    }
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(ImageError::Unsupported("indexed png".into())),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            let rgb = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
            data.extend(rgb.iter().map(|&b| b as f64 / 255.0));
        }
    }
    Ok(RgbImage { height: h, width: w, data })
}

fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in header.iter_mut() {
        // whitespace and comments between header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::Truncated("ppm header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::Malformed("ppm header field is not a number".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Malformed("ppm header number out of range".into()))?;
    }
    let [w, h, maxval] = header;
    if maxval != 255 {
        return Err(ImageError::Unsupported(format!("ppm maxval {maxval}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(ImageError::Malformed("missing whitespace after ppm header".into())),
        None => return Err(ImageError::Truncated("ppm header".into())),
    }
    let need = 3 * w * h;
    let body = &bytes[pos..];
    if body.len() < need {
        return Err(ImageError::Truncated(format!("ppm body has {} of {need} bytes", body.len())));
    }
    let data = body[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(RgbImage { height: h, width: w, data })
}

/// Encodes a raster as 8-bit PNG (gray for planes, RGB for images).
pub fn encode_png<R: Raster + ?Sized>(img: &R) -> Vec<u8> {
    let (h, w) = img.dims();
    let color = if img.channels() == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb };
    let bytes: Vec<u8> = img.samples().iter().map(|&v| quantize(v)).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory png header");
        writer.write_image_data(&bytes).expect("in-memory png body");
    }
    out
}

/// Encodes a raster as binary PPM; planes are replicated to gray RGB.
pub fn encode_ppm<R: Raster + ?Sized>(img: &R) -> Vec<u8> {
    let (h, w) = img.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    match img.channels() {
        1 => out.extend(img.samples().iter().flat_map(|&v| [quantize(v); 3])),
        _ => out.extend(img.samples().iter().map(|&v| quantize(v))),
    }
    out
}

pub fn save_image<R: Raster + ?Sized>(img: &R, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ImageFormat::Png => encode_png(img),
        ImageFormat::Ppm => encode_ppm(img),
    };
    fs::write(path, bytes).map_err(|source| ImageError::Write { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.2501), 64);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(1.7), 255);
    }

    #[test]
    fn png_pixel_maps_to_unit_range() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[128, 64, 0]).unwrap();
        }
        let img = decode_image(&out).unwrap();
        let p = img.pixel(0, 0);
        assert!((p[0] - 0.50196).abs() < 1e-5);
        assert!((p[1] - 0.25098).abs() < 1e-5);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn rgba_alpha_is_dropped() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[255, 0, 51, 7]).unwrap();
        }
        let img = decode_image(&out).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.2]);
    }

    #[test]
    fn hand_written_ppm() {
        let mut bytes = b"P6\n# fixture\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 0, 0, 255, 255, 255, 10, 20, 30, 255, 255, 255]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.pixel(0, 0), [0.0; 3]);
        assert_eq!(img.pixel(0, 1), [1.0; 3]);
        assert_eq!(img.pixel(1, 1), [1.0; 3]);
    }

    #[test]
    fn distinct_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        assert!(matches!(load_image(&missing), Err(ImageError::NotFound(_))));

        let jpeg = dir.path().join("x.jpg");
        fs::write(&jpeg, [0xFF, 0xD8, 0xFF, 0xE0, 0, 0]).unwrap();
        assert!(matches!(load_image(&jpeg), Err(ImageError::Unsupported(_))));

        let short = dir.path().join("short.ppm");
        fs::write(&short, b"P6\n2 2\n255\n\x00\x00\x00").unwrap();
        assert!(matches!(load_image(&short), Err(ImageError::Truncated(_))));

        let png = encode_png(&RgbImage::filled(8, 8, [0.3, 0.6, 0.9]));
        let cut = dir.path().join("cut.png");
        fs::write(&cut, &png[..png.len() - 20]).unwrap();
        assert!(matches!(load_image(&cut), Err(ImageError::Truncated(_))));

        let p3 = dir.path().join("ascii.ppm");
        fs::write(&p3, b"P3\n1 1\n255\n0 0 0\n").unwrap();
        assert!(matches!(load_image(&p3), Err(ImageError::Unsupported(_))));
    }

    #[test]
    fn unwritable_path() {
        let img = Plane::filled(1, 1, 0.5);
        let err = save_image(&img, "/nonexistent-dir/x.png", ImageFormat::Png).unwrap_err();
        assert!(matches!(err, ImageError::Write { .. }));
    }

    #[test]
    fn max_channel_cases() {
        let img = RgbImage::new(1, 1, vec![0.2, 0.5, 0.1]).unwrap();
        assert_eq!(max_channel(&img).data(), &[0.5]);
        let gray = Plane::from_fn(3, 4, |y, x| (y * 4 + x) as f64 / 12.0);
        assert_eq!(max_channel(&gray.to_rgb()), gray);
    }

    #[test]
    fn max_channel_matches_naive_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let img = RgbImage::from_fn(3, 3, |_, _| [rng.random(), rng.random(), rng.random()]);
        let m = max_channel(&img);
        for y in 0..3 {
            for x in 0..3 {
                let p = img.pixel(y, x);
                let mut best = p[0];
                for c in 1..3 {
                    if p[c] > best {
                        best = p[c];
                    }
                }
                assert_eq!(m.get(y, x), best);
            }
        }
    }

    #[test]
    fn plane_saves_as_gray() {
        let p = Plane::from_fn(2, 3, |y, x| (y * 3 + x) as f64 / 5.0);
        let back = decode_image(&encode_png(&p)).unwrap();
        assert_eq!(max_channel(&back).data().iter().map(|&v| quantize(v)).collect::<Vec<_>>(),
                   p.data().iter().map(|&v| quantize(v)).collect::<Vec<_>>());
        let back = decode_image(&encode_ppm(&p)).unwrap();
        assert_eq!(back.pixel(1, 2)[1], 1.0);
    }

    fn bytes_strategy() -> impl Strategy<Value = (usize, usize, Vec<u8>)> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), proptest::collection::vec(any::<u8>(), 3 * h * w))
        })
    }

    proptest! {
        #[test]
        fn save_load_is_identity_on_bytes((h, w, bytes) in bytes_strategy()) {
            let img = RgbImage::new(h, w, bytes.iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
            for enc in [encode_png(&img), encode_ppm(&img)] {
                let back = decode_image(&enc).unwrap();
                let q: Vec<u8> = back.data().iter().map(|&v| quantize(v)).collect();
                prop_assert_eq!(&q, &bytes);
            }
        }

        #[test]
        fn max_channel_dominates(px in proptest::collection::vec(0.0f64..=1.0, 12)) {
            let img = RgbImage::new(2, 2, px).unwrap();
            let m = max_channel(&img);
            for (i, p) in img.pixels().enumerate() {
                prop_assert!(p.iter().all(|&c| m.data()[i] >= c));
            }
        }
    }
}
