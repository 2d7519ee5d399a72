//! Attention-based fusion of illumination, mask and reflection features into
//! the diffusion condition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Plane, RgbImage};
use crate::weights::{f32_round, TensorStore, WeightsError};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("kernel size must be odd, got {0}")]
    EvenKernel(usize),
    #[error("invalid fusion parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

/// Channel-major `(C, H, W)` array.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self, FusionError> {
        if c == 0 || h == 0 || w == 0 {
            return Err(FusionError::Shape(format!("empty map {c}x{h}x{w}")));
        }
        if data.len() != c * h * w {
            return Err(FusionError::Shape(format!("{} values for {c}x{h}x{w}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::Shape("non-finite value".into()));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn from_fn(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for k in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(k, y, x));
                }
            }
        }
        Self { c, h, w, data }
    }

    pub fn from_plane(p: &Plane) -> Self {
        Self { c: 1, h: p.height(), w: p.width(), data: p.data().to_vec() }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let (h, w) = img.dims();
        Self::from_fn(3, h, w, |k, y, x| img.pixel(y, x)[k])
    }

    /// Inverse of [`FeatureMap::from_rgb`]; the map must have three channels.
    pub fn to_rgb(&self) -> RgbImage {
        assert_eq!(self.c, 3, "to_rgb needs three channels");
        RgbImage::from_fn(self.h, self.w, |y, x| [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)])
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn positions(&self) -> usize {
        self.h * self.w
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

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn concat(maps: &[&FeatureMap]) -> Result<FeatureMap, FusionError> {
        let first = maps.first().ok_or_else(|| FusionError::Shape("nothing to concatenate".into()))?;
        let (h, w) = (first.h, first.w);
        let mut data = Vec::new();
        let mut c = 0;
        for m in maps {
            if (m.h, m.w) != (h, w) {
                return Err(FusionError::Shape(format!("concat {}x{} with {}x{}", h, w, m.h, m.w)));
            }
            data.extend_from_slice(&m.data);
            c += m.c;
        }
        Ok(FeatureMap { c, h, w, data })
    }

    /// Copies the window `[top, top+h) × [left, left+w)` of every channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(self.c, h, w, |k, y, x| self.get(k, top + y, left + x))
    }

    fn same_hw(&self, other: &FeatureMap, what: &str) -> Result<(), FusionError> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(FusionError::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.h, self.w, other.h, other.w
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    pub embed_dim: usize,
    pub kernel: usize,
    pub seed: u64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self { embed_dim: 8, kernel: 3, seed: 0 }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.embed_dim == 0 {
            return Err(FusionError::BadParams("embed_dim must be at least 1".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(FusionError::EvenKernel(self.kernel));
        }
        Ok(())
    }

    /// Channels of the concatenated map fed to channel attention.
    pub fn con1_channels(&self) -> usize {
        3 * self.embed_dim + 2
    }

    pub fn bottleneck(&self) -> usize {
        (self.con1_channels() / 4).max(1)
    }
}

/// Per-channel 2-D cross-correlation with edge-clamped borders.
/// `kernels` holds `C` row-major `k × k` kernels.
pub fn depthwise_conv(f: &FeatureMap, kernels: &[f64], k: usize) -> Result<FeatureMap, FusionError> {
    if k % 2 == 0 {
        return Err(FusionError::EvenKernel(k));
    }
    if kernels.len() != f.c * k * k {
        return Err(FusionError::Shape(format!("{} kernel values for {} channels of {k}x{k}", kernels.len(), f.c)));
    }
    let r = (k / 2) as isize;
    let (h, w) = (f.h as isize, f.w as isize);
    Ok(FeatureMap::from_fn(f.c, f.h, f.w, |c, y, x| {
        let ker = &kernels[c * k * k..(c + 1) * k * k];
        let mut acc = 0.0;
        for i in 0..k {
            let yy = (y as isize + i as isize - r).clamp(0, h - 1) as usize;
            for j in 0..k {
                let xx = (x as isize + j as isize - r).clamp(0, w - 1) as usize;
                acc += ker[i * k + j] * f.get(c, yy, xx);
            }
        }
        acc
    }))
}

/// Per-position linear map: `out[o] = Σ_i weight[o, i] · f[i]`.
pub fn pointwise(f: &FeatureMap, weight: &[f64], out: usize) -> Result<FeatureMap, FusionError> {
    if weight.len() != out * f.c {
        return Err(FusionError::Shape(format!("{} weights for {}->{out} projection", weight.len(), f.c)));
    }
    let n = f.positions();
    let mut data = vec![0.0; out * n];
    for o in 0..out {
        for i in 0..f.c {
            let wv = weight[o * f.c + i];
            let src = f.channel(i);
            for (d, s) in data[o * n..(o + 1) * n].iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    }
    Ok(FeatureMap { c: out, h: f.h, w: f.w, data })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub dim: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

impl AttentionWeights {
    pub fn zeros(dim: usize) -> Self {
        let z = vec![0.0; dim * dim];
        Self { dim, wq: z.clone(), wk: z.clone(), wv: z.clone(), wo: z }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

fn check_attention(q: &FeatureMap, kv: &FeatureMap, w: &AttentionWeights) -> Result<(), FusionError> {
    q.same_hw(kv, "cross attention")?;
    if q.c != w.dim || kv.c != w.dim {
        return Err(FusionError::Shape(format!("attention width {} with inputs of {} and {} channels", w.dim, q.c, kv.c)));
    }
    Ok(())
}

/// Row-stochastic `N × N` attention matrix, row `n` for query position `n`.
pub fn attention_matrix(q: &FeatureMap, kv: &FeatureMap, w: &AttentionWeights) -> Result<Vec<f64>, FusionError> {
    check_attention(q, kv, w)?;
    let qp = pointwise(q, &w.wq, w.dim)?;
    let kp = pointwise(kv, &w.wk, w.dim)?;
    Ok(scores(&qp, &kp, w.dim))
}

fn scores(qp: &FeatureMap, kp: &FeatureMap, dim: usize) -> Vec<f64> {
    let n = qp.positions();
    let m = kp.positions();
    let scale = 1.0 / (dim as f64).sqrt();
    let mut a = vec![0.0; n * m];
    for c in 0..dim {
        let qc = qp.channel(c);
        let kc = kp.channel(c);
        for (i, qi) in qc.iter().enumerate() {
            let row = &mut a[i * m..(i + 1) * m];
            for (r, kj) in row.iter_mut().zip(kc) {
                *r += qi * kj;
            }
        }
    }
    for row in a.chunks_exact_mut(m) {
        row.iter_mut().for_each(|v| *v *= scale);
        softmax_in_place(row);
    }
    a
}

/// Scaled dot-product attention over flattened positions; queries from `q`,
/// keys and values from `kv`. No positional encoding.
pub fn cross_attention(q: &FeatureMap, kv: &FeatureMap, w: &AttentionWeights) -> Result<FeatureMap, FusionError> {
    check_attention(q, kv, w)?;
    let qp = pointwise(q, &w.wq, w.dim)?;
    let kp = pointwise(kv, &w.wk, w.dim)?;
    let vp = pointwise(kv, &w.wv, w.dim)?;
    let a = scores(&qp, &kp, w.dim);
    let n = q.positions();
    let mut mixed = vec![0.0; w.dim * n];
    for c in 0..w.dim {
        let vc = vp.channel(c);
        for i in 0..n {
            mixed[c * n + i] = a[i * n..(i + 1) * n].iter().zip(vc).map(|(p, v)| p * v).sum();
        }
    }
    let mixed = FeatureMap { c: w.dim, h: q.h, w: q.w, data: mixed };
    pointwise(&mixed, &w.wo, w.dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttentionWeights {
    pub channels: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ChannelAttentionWeights {
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        Self {
            channels,
            hidden,
            w1: vec![0.0; hidden * channels],
            b1: vec![0.0; hidden],
            w2: vec![0.0; channels * hidden],
            b2: vec![0.0; channels],
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z.clamp(-30.0, 30.0)).exp())
}

/// Global average pool, ReLU bottleneck, logistic squash. One weight per channel.
pub fn channel_attention(f: &FeatureMap, w: &ChannelAttentionWeights) -> Result<Vec<f64>, FusionError> {
    if f.c != w.channels {
        return Err(FusionError::Shape(format!("channel attention for {} channels got {}", w.channels, f.c)));
    }
    let n = f.positions() as f64;
    let pooled: Vec<f64> = (0..f.c).map(|c| f.channel(c).iter().sum::<f64>() / n).collect();
    let hidden: Vec<f64> = (0..w.hidden)
        .map(|j| {
            let z = w.b1[j] + (0..f.c).map(|i| w.w1[j * f.c + i] * pooled[i]).sum::<f64>();
            z.max(0.0)
        })
        .collect();
    Ok((0..f.c)
        .map(|i| sigmoid(w.b2[i] + (0..w.hidden).map(|j| w.w2[i * w.hidden + j] * hidden[j]).sum::<f64>()))
        .collect())
}

/// Input channel counts for illumination, mask and reflection.
pub const ACC_INPUTS: [usize; 3] = [1, 1, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub params: FusionParams,
    pub lift: [Vec<f64>; 3],
    pub depthwise: [Vec<f64>; 3],
    pub illm_mask: AttentionWeights,
    pub ref_illm: AttentionWeights,
    pub ref_mask: AttentionWeights,
    pub channel: ChannelAttentionWeights,
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn normal(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.0);
                f32_round(z * std)
            })
            .collect()
    }
}

impl FusionWeights {
    pub fn zeros(params: FusionParams) -> Result<Self, FusionError> {
        params.validate()?;
        let e = params.embed_dim;
        let kk = params.kernel * params.kernel;
        Ok(Self {
            params,
            lift: ACC_INPUTS.map(|c| vec![0.0; e * c]),
            depthwise: [vec![0.0; e * kk], vec![0.0; e * kk], vec![0.0; e * kk]],
            illm_mask: AttentionWeights::zeros(e),
            ref_illm: AttentionWeights::zeros(e),
            ref_mask: AttentionWeights::zeros(e),
            channel: ChannelAttentionWeights::zeros(params.con1_channels(), params.bottleneck()),
        })
    }

    /// Gaussian initialization scaled by fan-in, drawn from `params.seed`.
    /// Values are representable in f32 so a save/load cycle is exact.
    pub fn seeded(params: FusionParams) -> Result<Self, FusionError> {
        params.validate()?;
        let mut g = Gen(ChaCha8Rng::seed_from_u64(params.seed));
        let e = params.embed_dim;
        let k = params.kernel;
        let lift = ACC_INPUTS.map(|c| g.normal(e * c, 1.0 / (c as f64).sqrt()));
        let depthwise = [(); 3].map(|_| g.normal(e * k * k, 1.0 / k as f64));
        let std = 1.0 / (e as f64).sqrt();
        let mut att = || AttentionWeights {
            dim: e,
            wq: g.normal(e * e, std),
            wk: g.normal(e * e, std),
            wv: g.normal(e * e, std),
            wo: g.normal(e * e, std),
        };
        let (illm_mask, ref_illm, ref_mask) = (att(), att(), att());
        let (c, r) = (params.con1_channels(), params.bottleneck());
        let channel = ChannelAttentionWeights {
            channels: c,
            hidden: r,
            w1: g.normal(r * c, 1.0 / (c as f64).sqrt()),
            b1: vec![0.0; r],
            w2: g.normal(c * r, 1.0 / (r as f64).sqrt()),
            b2: vec![0.0; c],
        };
        Ok(Self { params, lift, depthwise, illm_mask, ref_illm, ref_mask, channel })
    }

    pub fn to_store(&self) -> TensorStore {
        let mut s = TensorStore::new();
        let e = self.params.embed_dim;
        let k = self.params.kernel;
        for (i, name) in ["illum", "mask", "reflection"].iter().enumerate() {
            s.insert(&format!("lift.{name}"), &[e, ACC_INPUTS[i]], &self.lift[i]);
            s.insert(&format!("depthwise.{name}"), &[e, k, k], &self.depthwise[i]);
        }
        for (name, a) in [("illm_mask", &self.illm_mask), ("ref_illm", &self.ref_illm), ("ref_mask", &self.ref_mask)] {
            for (p, v) in [("wq", &a.wq), ("wk", &a.wk), ("wv", &a.wv), ("wo", &a.wo)] {
                s.insert(&format!("attn.{name}.{p}"), &[e, e], v);
            }
        }
        let ch = &self.channel;
        s.insert("channel.w1", &[ch.hidden, ch.channels], &ch.w1);
        s.insert("channel.b1", &[ch.hidden], &ch.b1);
        s.insert("channel.w2", &[ch.channels, ch.hidden], &ch.w2);
        s.insert("channel.b2", &[ch.channels], &ch.b2);
        s.meta = serde_json::json!({ "embed_dim": e, "kernel": k, "seed": self.params.seed });
        s
    }

    pub fn from_store(store: &TensorStore, params: FusionParams) -> Result<Self, FusionError> {
        let mut w = Self::zeros(params)?;
        let e = params.embed_dim;
        let k = params.kernel;
        for (i, name) in ["illum", "mask", "reflection"].iter().enumerate() {
            w.lift[i] = store.get(&format!("lift.{name}"), &[e, ACC_INPUTS[i]])?;
            w.depthwise[i] = store.get(&format!("depthwise.{name}"), &[e, k, k])?;
        }
        for (name, a) in [("illm_mask", &mut w.illm_mask), ("ref_illm", &mut w.ref_illm), ("ref_mask", &mut w.ref_mask)] {
            a.wq = store.get(&format!("attn.{name}.wq"), &[e, e])?;
            a.wk = store.get(&format!("attn.{name}.wk"), &[e, e])?;
            a.wv = store.get(&format!("attn.{name}.wv"), &[e, e])?;
            a.wo = store.get(&format!("attn.{name}.wo"), &[e, e])?;
        }
        let (c, r) = (params.con1_channels(), params.bottleneck());
        w.channel.w1 = store.get("channel.w1", &[r, c])?;
        w.channel.b1 = store.get("channel.b1", &[r])?;
        w.channel.w2 = store.get("channel.w2", &[c, r])?;
        w.channel.b2 = store.get("channel.b2", &[c])?;
        Ok(w)
    }
}

/// Every intermediate of one fusion pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AccOutput {
    pub illm_mask: FeatureMap,
    pub ref_illm: FeatureMap,
    pub ref_mask: FeatureMap,
    pub con1: FeatureMap,
    pub channel_weights: Vec<f64>,
    pub con2: FeatureMap,
}

/// Lifts and filters the three inputs, cross-attends them pairwise, gates the
/// concatenation with `i_low` and `i_mask` by channel attention, and sums the
/// gated branches into an `embed_dim`-channel map. The two raw planes are
/// broadcast into every output channel with their own gates.
pub fn acc_fuse_detailed(
    illum: &FeatureMap,
    mask: &FeatureMap,
    reflection: &FeatureMap,
    i_low: &FeatureMap,
    i_mask: &FeatureMap,
    w: &FusionWeights,
) -> Result<AccOutput, FusionError> {
    let inputs = [illum, mask, reflection];
    for (i, f) in inputs.iter().enumerate() {
        if f.c != ACC_INPUTS[i] {
            return Err(FusionError::Shape(format!("input {i} has {} channels, expected {}", f.c, ACC_INPUTS[i])));
        }
        f.same_hw(illum, "fusion inputs")?;
    }
    for f in [i_low, i_mask] {
        if f.c != 1 {
            return Err(FusionError::Shape(format!("raw plane has {} channels", f.c)));
        }
        f.same_hw(illum, "fusion inputs")?;
    }
    let e = w.params.embed_dim;
    let k = w.params.kernel;
    let mut feats = Vec::with_capacity(3);
    for i in 0..3 {
        let lifted = pointwise(inputs[i], &w.lift[i], e)?;
        feats.push(depthwise_conv(&lifted, &w.depthwise[i], k)?);
    }
    let (fi, fm, fr) = (&feats[0], &feats[1], &feats[2]);
    let illm_mask = cross_attention(fi, fm, &w.illm_mask)?;
    let ref_illm = cross_attention(fr, fi, &w.ref_illm)?;
    let ref_mask = cross_attention(fr, fm, &w.ref_mask)?;
    let con1 = FeatureMap::concat(&[&illm_mask, &ref_illm, &ref_mask, i_low, i_mask])?;
    let s = channel_attention(&con1, &w.channel)?;
    let n = illum.positions();
    let mut con2 = FeatureMap::zeros(e, illum.h, illum.w);
    for c in 0..e {
        let out = &mut con2.data[c * n..(c + 1) * n];
        for (b, branch) in [&illm_mask, &ref_illm, &ref_mask].iter().enumerate() {
            let g = s[b * e + c];
            for (o, v) in out.iter_mut().zip(branch.channel(c)) {
                *o += g * v;
            }
        }
        for (o, (l, m)) in out.iter_mut().zip(i_low.data.iter().zip(&i_mask.data)) {
            *o += s[3 * e] * l + s[3 * e + 1] * m;
        }
    }
    Ok(AccOutput { illm_mask, ref_illm, ref_mask, con1, channel_weights: s, con2 })
}

pub fn acc_fuse(
    illum: &FeatureMap,
    mask: &FeatureMap,
    reflection: &FeatureMap,
    i_low: &FeatureMap,
    i_mask: &FeatureMap,
    w: &FusionWeights,
) -> Result<FeatureMap, FusionError> {
    Ok(acc_fuse_detailed(illum, mask, reflection, i_low, i_mask, w)?.con2)
}
