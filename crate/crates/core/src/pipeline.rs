//! Prompt to pixels: parse, decompose, mask, adjust, then relight directly
//! or sample the conditioned denoiser.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{
    from_unit, sample, synthetic_images, to_unit, train_toy_denoiser, DiffusionError, NoiseSchedule, ScheduleParams,
    ToyConfig, ToyDenoiser, TrainingExample,
};
use crate::fusion::{acc_fuse, FeatureMap, FusionError, FusionParams, FusionWeights};
use crate::image::{Plane, RgbImage};
use crate::mask::{feather, FileMask, HeuristicMask, Mask, MaskError, MaskProvider, SeedPoint, SegmentParams};
use crate::prompt::{parse, Instruction, ParseError, Scope, VocabularyTable};
use crate::relight::{achieved_ratio, adjustment_map, relit_illumination, uniform_map, AdjustmentMap, RelightError};
use crate::retinex::{compose, decompose, DecomposeParams, RetinexError, RetinexPair};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("parse: {0}")]
    Parse(#[from] ParseError),
    #[error("decompose: {0}")]
    Decompose(RetinexError),
    #[error("mask: {0}")]
    Mask(MaskError),
    #[error("mask: the resolved mask selects no pixel")]
    EmptyMask,
    #[error("adjust: {0}")]
    Adjust(RelightError),
    #[error("relight: {0}")]
    Relight(RelightError),
    #[error("fusion: {0}")]
    Fusion(FusionError),
    #[error("diffusion: {0}")]
    Diffusion(DiffusionError),
    #[error("diffusion: image is {height}x{width}, above the {max_side} px cap")]
    TooLarge { height: usize, width: usize, max_side: usize },
    #[error("request: {0}")]
    Invalid(String),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Parse(_) => "parse",
            PipelineError::Decompose(_) => "decompose",
            PipelineError::Mask(_) | PipelineError::EmptyMask => "mask",
            PipelineError::Adjust(_) => "adjust",
            PipelineError::Relight(_) => "relight",
            PipelineError::Fusion(_) => "fusion",
            PipelineError::Diffusion(_) | PipelineError::TooLarge { .. } => "diffusion",
            PipelineError::Invalid(_) => "request",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Deterministic,
    Diffusion,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    File(PathBuf),
    Heuristic(SeedPoint),
    Full,
    /// A mask already in memory, e.g. uploaded to the service.
    Provided(Mask),
}

impl MaskSource {
    fn label(&self) -> &'static str {
        match self {
            MaskSource::File(_) => "file",
            MaskSource::Heuristic(_) => "heuristic",
            MaskSource::Full => "full",
            MaskSource::Provided(_) => "provided",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceOptions {
    pub smooth_sigma: f64,
    pub feather_sigma: f64,
    pub color_tol: f64,
    pub eta: f64,
    pub seed: u64,
    pub schedule: ScheduleParams,
    pub retinex: DecomposeParams,
    pub fusion: FusionParams,
    pub vocab: VocabularyTable,
    /// Replaces the parsed magnitude; the direction is kept.
    pub ratio_override: Option<f64>,
    pub no_tbc: bool,
    pub no_acc: bool,
    pub max_side: usize,
    pub checkpoint: Option<PathBuf>,
    pub train_steps: usize,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        Self {
            smooth_sigma: 3.0,
            feather_sigma: 2.0,
            color_tol: 0.15,
            eta: 0.0,
            seed: 0,
            schedule: ScheduleParams::short(),
            retinex: DecomposeParams::default(),
            fusion: FusionParams::default(),
            vocab: VocabularyTable::default(),
            ratio_override: None,
            no_tbc: false,
            no_acc: false,
            max_side: 64,
            checkpoint: None,
            train_steps: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceRequest {
    pub image: RgbImage,
    pub prompt: String,
    pub mode: Mode,
    pub mask_source: MaskSource,
    pub options: EnhanceOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_tbc: bool,
    pub no_acc: bool,
    pub mask_full: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub instruction: Instruction,
    pub mode: Mode,
    pub mask_source: String,
    pub mask_area_fraction: f64,
    pub illumination_before: f64,
    pub illumination_after: f64,
    pub requested_ratio: f64,
    pub achieved_ratio: f64,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub ablation: Ablation,
    /// Wall-clock milliseconds per stage; the only nondeterministic field.
    pub timings_ms: BTreeMap<String, f64>,
}

impl EnhanceReport {
    /// The report with timings removed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        Self { timings_ms: BTreeMap::new(), ..self.clone() }
    }
}

struct Timer {
    last: Instant,
    out: BTreeMap<String, f64>,
}

impl Timer {
    fn new() -> Self {
        Self { last: Instant::now(), out: BTreeMap::new() }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        *self.out.entry(stage.to_string()).or_default() += (now - self.last).as_secs_f64() * 1e3;
        self.last = now;
    }
}

fn masked_mean(p: &Plane, mask: &Mask) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (&v, &m) in p.data().iter().zip(mask.plane.data()) {
        if m >= 0.5 {
            s += v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn parse_instruction(prompt: &str, options: &EnhanceOptions) -> Result<Instruction, PipelineError> {
    let mut ins = parse(prompt, &options.vocab)?;
    if let Some(r) = options.ratio_override {
        if !(0.0..=1.0).contains(&r) {
            return Err(PipelineError::Invalid(format!("ratio override {r} is outside [0, 1]")));
        }
        ins.ratio = r;
    }
    Ok(ins)
}

/// Region mask for the instruction's scope; background inverts the region.
pub fn resolve_mask(
    instruction: &Instruction,
    source: &MaskSource,
    pair: &RetinexPair,
    color_tol: f64,
) -> Result<Mask, PipelineError> {
    let (h, w) = pair.illumination.dims();
    let region = || -> Result<Mask, PipelineError> {
        let m = match source {
            MaskSource::File(p) => FileMask(p.clone()).provide(&pair.reflection),
            MaskSource::Heuristic(seed) => {
                let params = SegmentParams { color_tol, ..SegmentParams::new(*seed) };
                HeuristicMask(params).provide(&pair.reflection)
            }
            MaskSource::Full => Ok(Mask::full(h, w)),
            MaskSource::Provided(m) => {
                if m.dims() != (h, w) {
                    let ((mask_h, mask_w), (img_h, img_w)) = (m.dims(), (h, w));
                    return Err(PipelineError::Mask(MaskError::SizeMismatch { mask_h, mask_w, img_h, img_w }));
                }
                Ok(m.clone())
            }
        };
        m.map_err(PipelineError::Mask)
    };
    let mask = match instruction.scope {
        Scope::Global => Mask::full(h, w),
        Scope::Region => region()?,
        Scope::Background => region()?.complement(),
    };
    if mask.hard_count() == 0 {
        return Err(PipelineError::EmptyMask);
    }
    Ok(mask)
}

pub fn build_adjustment(
    instruction: &Instruction,
    pair: &RetinexPair,
    mask: &Mask,
    options: &EnhanceOptions,
) -> Result<AdjustmentMap, PipelineError> {
    let r = instruction.signed_ratio();
    let mut map = if options.no_tbc {
        uniform_map(mask, r, options.smooth_sigma)
    } else {
        adjustment_map(&pair.illumination, mask, r, options.smooth_sigma)
    }
    .map_err(PipelineError::Adjust)?;
    map.scope = instruction.scope;
    Ok(map)
}

/// Relit image with pixels whose adjustment is exactly zero copied from the input.
pub fn relight_image(image: &RgbImage, pair: &RetinexPair, map: &AdjustmentMap) -> Result<(RgbImage, Plane), PipelineError> {
    let lit = relit_illumination(pair, map).map_err(PipelineError::Relight)?;
    let mut out = compose(&lit, &pair.reflection).map_err(|e| PipelineError::Relight(e.into()))?;
    let (h, w) = image.dims();
    for y in 0..h {
        for x in 0..w {
            if map.plane.get(y, x) == 0.0 {
                out.set_pixel(y, x, image.pixel(y, x));
            }
        }
    }
    Ok((out, lit))
}

/// Number of condition channels fed to the denoiser for a given fusion width.
pub fn condition_channels(fusion: &FusionParams) -> usize {
    fusion.embed_dim + 1 + 4
}

/// Fusion output (or, with `no_acc`, the raw maps padded to the same width),
/// then the adjustment map and the broadcast instruction embedding.
pub fn build_condition(
    image: &RgbImage,
    pair: &RetinexPair,
    mask: &Mask,
    map: &AdjustmentMap,
    instruction: &Instruction,
    fusion: &FusionWeights,
    no_acc: bool,
) -> Result<FeatureMap, PipelineError> {
    let (h, w) = image.dims();
    let illum = FeatureMap::from_plane(&pair.illumination);
    let mplane = FeatureMap::from_plane(&mask.plane);
    let refl = FeatureMap::from_rgb(&pair.reflection);
    let e = fusion.params.embed_dim;
    let features = if no_acc {
        let low = FeatureMap::from_rgb(image);
        let raw = FeatureMap::concat(&[&illum, &mplane, &refl, &low]).map_err(PipelineError::Fusion)?;
        FeatureMap::from_fn(e, h, w, |c, y, x| if c < raw.channels() { raw.get(c, y, x) } else { 0.0 })
    } else {
        let luma = FeatureMap::from_plane(&image.luma());
        acc_fuse(&illum, &mplane, &refl, &luma, &mplane, fusion).map_err(PipelineError::Fusion)?
    };
    let adj = FeatureMap::from_plane(&map.plane);
    let emb = instruction.embedding();
    let embed = FeatureMap::from_fn(4, h, w, |c, _, _| emb[c]);
    FeatureMap::concat(&[&features, &adj, &embed]).map_err(PipelineError::Fusion)
}

/// Random square crops of a condition/target pair, in model space.
fn crops(cond: &FeatureMap, target: &RgbImage, n: usize, rng: &mut ChaCha8Rng) -> Vec<TrainingExample> {
    let (h, w) = target.dims();
    let s = 8.min(h).min(w);
    let t = from_unit(target);
    (0..n)
        .map(|_| {
            let (y, x) = (rng.random_range(0..=h - s), rng.random_range(0..=w - s));
            TrainingExample { target: t.crop(y, x, s, s), condition: Some(cond.crop(y, x, s, s)) }
        })
        .collect()
}

fn toy_config(options: &EnhanceOptions) -> ToyConfig {
    ToyConfig { schedule: options.schedule, steps: options.train_steps, seed: options.seed, ..Default::default() }
}

/// Loads the checkpoint, or fits a fresh denoiser on crops of this request.
fn denoiser_for(
    options: &EnhanceOptions,
    cond: &FeatureMap,
    target: &RgbImage,
) -> Result<ToyDenoiser, PipelineError> {
    let want = cond.channels();
    if let Some(path) = &options.checkpoint {
        let d = ToyDenoiser::load(path).map_err(PipelineError::Diffusion)?;
        if d.cond_channels != want {
            return Err(PipelineError::Invalid(format!(
                "checkpoint expects {} condition channels, pipeline provides {want}",
                d.cond_channels
            )));
        }
        return Ok(d);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0xc40b);
    let data = crops(cond, target, 32, &mut rng);
    Ok(train_toy_denoiser(&data, &toy_config(options)).map_err(PipelineError::Diffusion)?.denoiser)
}

pub fn enhance(req: &EnhanceRequest) -> Result<(RgbImage, EnhanceReport), PipelineError> {
    let opts = &req.options;
    let mut timer = Timer::new();
    let (h, w) = req.image.dims();
    if h == 0 || w == 0 {
        return Err(PipelineError::Invalid("empty image".into()));
    }
    if req.mode == Mode::Diffusion && h.max(w) > opts.max_side {
        return Err(PipelineError::TooLarge { height: h, width: w, max_side: opts.max_side });
    }
    let instruction = parse_instruction(&req.prompt, opts)?;
    timer.lap("parse");
    let pair = decompose(&req.image, &opts.retinex).map_err(PipelineError::Decompose)?;
    timer.lap("decompose");
    let mask = resolve_mask(&instruction, &req.mask_source, &pair, opts.color_tol)?;
    timer.lap("mask");
    let map = build_adjustment(&instruction, &pair, &mask, opts)?;
    timer.lap("adjust");
    let (relit, lit) = relight_image(&req.image, &pair, &map)?;
    timer.lap("relight");

    let (output, after_illum) = match req.mode {
        Mode::Deterministic => (relit, lit),
        Mode::Diffusion => {
            let fusion = FusionWeights::seeded(opts.fusion).map_err(PipelineError::Fusion)?;
            let cond = build_condition(&req.image, &pair, &mask, &map, &instruction, &fusion, opts.no_acc)?;
            timer.lap("fusion");
            let denoiser = denoiser_for(opts, &cond, &relit)?;
            timer.lap("train");
            let schedule = NoiseSchedule::from_params(&denoiser.schedule).map_err(PipelineError::Diffusion)?;
            let sampled = sample(&denoiser, Some(&cond), &schedule, opts.eta, opts.seed, (3, h, w))
                .map_err(PipelineError::Diffusion)?;
            let sampled = to_unit(&sampled);
            let soft = feather(&mask, opts.feather_sigma);
            let out = RgbImage::from_fn(h, w, |y, x| {
                let m = soft.plane.get(y, x);
                let o = req.image.pixel(y, x);
                if m == 0.0 {
                    return o;
                }
                let s = sampled.pixel(y, x);
                [0, 1, 2].map(|k| (m * s[k].clamp(0.0, 1.0) + (1.0 - m) * o[k]).clamp(0.0, 1.0))
            });
            timer.lap("sample");
            let after = decompose(&out, &opts.retinex).map_err(PipelineError::Decompose)?;
            timer.lap("measure");
            (out, after.illumination)
        }
    };
    let report = EnhanceReport {
        requested_ratio: instruction.signed_ratio(),
        achieved_ratio: achieved_ratio(&pair.illumination, &after_illum, &mask),
        illumination_before: masked_mean(&pair.illumination, &mask),
        illumination_after: masked_mean(&after_illum, &mask),
        instruction,
        mode: req.mode,
        mask_source: req.mask_source.label().to_string(),
        mask_area_fraction: mask.area_fraction(),
        seed: opts.seed,
        width: w,
        height: h,
        ablation: Ablation {
            no_tbc: opts.no_tbc,
            no_acc: opts.no_acc,
            mask_full: matches!(req.mask_source, MaskSource::Full),
        },
        timings_ms: timer.out,
    };
    Ok((output, report))
}

/// Synthetic relighting examples with pipeline conditions, for training a
/// checkpoint offline. Each image gets a random scope and ratio.
pub fn synthetic_training_set(
    n: usize,
    size: usize,
    seed: u64,
    options: &EnhanceOptions,
) -> Result<Vec<TrainingExample>, PipelineError> {
    let fusion = FusionWeights::seeded(options.fusion).map_err(PipelineError::Fusion)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11);
    let mut out = Vec::with_capacity(n);
    for img in synthetic_images(n, size, seed) {
        let pair = decompose(&img, &options.retinex).map_err(PipelineError::Decompose)?;
        let ratio = (rng.random_range(0.05..0.6f64) * 100.0).round() / 100.0;
        let global = rng.random_bool(0.5);
        let seed_pt = SeedPoint { x: rng.random_range(0..size), y: rng.random_range(0..size) };
        let instruction = Instruction {
            target_phrase: if global { String::new() } else { "object".into() },
            scope: if global { Scope::Global } else { Scope::Region },
            direction: crate::prompt::Direction::Brighten,
            ratio,
            source_text: String::new(),
        };
        let mask = resolve_mask(&instruction, &MaskSource::Heuristic(seed_pt), &pair, options.color_tol)?;
        let map = build_adjustment(&instruction, &pair, &mask, options)?;
        let (target, _) = relight_image(&img, &pair, &map)?;
        let cond = build_condition(&img, &pair, &mask, &map, &instruction, &fusion, options.no_acc)?;
        out.push(TrainingExample { target: from_unit(&target), condition: Some(cond) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(image: RgbImage, prompt: &str, mask: MaskSource) -> EnhanceRequest {
        EnhanceRequest { image, prompt: prompt.into(), mode: Mode::Deterministic, mask_source: mask, options: EnhanceOptions::default() }
    }

    #[test]
    fn global_twenty_percent_on_uniform_gray() {
        let r = req(RgbImage::filled(16, 16, [0.25; 3]), "brighten the whole image by 20%", MaskSource::Full);
        let (out, report) = enhance(&r).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.30).abs() < 1e-9));
        assert!((report.achieved_ratio - 0.2).abs() < 1e-6);
        assert_eq!(report.instruction.scope, Scope::Global);
        assert_eq!(report.mask_area_fraction, 1.0);
    }

    #[test]
    fn zero_override_is_identity() {
        let img = RgbImage::from_fn(12, 10, |y, x| [0.05 * y as f64, 0.07 * x as f64, 0.3]);
        let mut r = req(img.clone(), "brighten the lamp a lot", MaskSource::Full);
        r.options.ratio_override = Some(0.0);
        let (out, report) = enhance(&r).unwrap();
        assert_eq!(out, img);
        assert_eq!(report.requested_ratio, 0.0);
        r.options.ratio_override = Some(1.5);
        assert_eq!(enhance(&r).unwrap_err().stage(), "request");
    }

    #[test]
    fn stage_names_on_errors() {
        let img = RgbImage::filled(8, 8, [0.4; 3]);
        assert_eq!(enhance(&req(img.clone(), "make it pretty", MaskSource::Full)).unwrap_err().stage(), "parse");
        let e = enhance(&req(img.clone(), "brighten the background by 10%", MaskSource::Full)).unwrap_err();
        assert_eq!(e.stage(), "mask");
        let bad_seed = MaskSource::Heuristic(SeedPoint { x: 20, y: 1 });
        assert_eq!(enhance(&req(img.clone(), "brighten the cup", bad_seed)).unwrap_err().stage(), "mask");
        let mut big = req(RgbImage::filled(70, 10, [0.4; 3]), "brighten the cup", MaskSource::Full);
        big.mode = Mode::Diffusion;
        assert!(matches!(enhance(&big), Err(PipelineError::TooLarge { max_side: 64, .. })));
    }

    #[test]
    fn condition_shapes() {
        let img = RgbImage::from_fn(6, 5, |y, x| [0.1 + 0.1 * y as f64, 0.2, 0.05 * x as f64 + 0.1]);
        let opts = EnhanceOptions::default();
        let pair = decompose(&img, &opts.retinex).unwrap();
        let ins = parse_instruction("brighten everything by 10%", &opts).unwrap();
        let mask = resolve_mask(&ins, &MaskSource::Full, &pair, 0.15).unwrap();
        let map = build_adjustment(&ins, &pair, &mask, &opts).unwrap();
        let fusion = FusionWeights::seeded(opts.fusion).unwrap();
        for no_acc in [false, true] {
            let c = build_condition(&img, &pair, &mask, &map, &ins, &fusion, no_acc).unwrap();
            assert_eq!(c.shape(), (condition_channels(&opts.fusion), 6, 5));
        }
    }
}
