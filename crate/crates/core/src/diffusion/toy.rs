//! Small convolutional noise predictor with a zero-coupled condition branch:
//! ε̂ = F(x) + Z2(Fc(x + Z1(c))), where Fc starts as a copy of F and Z1, Z2
//! start at zero.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    aux_ssim_params, predict_y0, q_sample, simple_loss, standard_normal, to_unit, AuxWeights, Denoiser,
    DiffusionError, NoiseSchedule, ScheduleParams,
};
use crate::fusion::FeatureMap;
use crate::image::RgbImage;
use crate::quality;
use crate::weights::{f32_round, TensorStore};

/// Noisy image channels plus one constant channel carrying t / T.
const IN_CHANNELS: usize = 4;
const OUT_CHANNELS: usize = 3;

/// 2-D convolution with zero padding, weights laid out `[out][in][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        Self { cin, cout, k, weight: vec![0.0; cout * cin * k * k], bias: vec![0.0; cout] }
    }

    fn random(cin: usize, cout: usize, k: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut c = Self::zeros(cin, cout, k);
        for w in &mut c.weight {
            let z: f64 = StandardNormal.sample(rng);
            *w = f32_round(z * std);
        }
        c
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.cin, self.cout, self.k)
    }

    pub fn forward(&self, x: &FeatureMap) -> FeatureMap {
        let (h, w) = (x.height(), x.width());
        let n = h * w;
        let r = (self.k / 2) as isize;
        let mut out = vec![0.0; self.cout * n];
        for o in 0..self.cout {
            let dst = &mut out[o * n..(o + 1) * n];
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.cin {
                let src = x.channel(i);
                for ky in 0..self.k {
                    let dy = ky as isize - r;
                    for kx in 0..self.k {
                        let dx = kx as isize - r;
                        let wv = self.weight[((o * self.cin + i) * self.k + ky) * self.k + kx];
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx.max(0)) as usize);
                            let srow = &src[sy as usize * w..];
                            let drow = &mut dst[y * w..(y + 1) * w];
                            for xx in x0..x1.min(w) {
                                drow[xx] += wv * srow[(xx as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
        FeatureMap::from_fn(self.cout, h, w, |c, y, xx| out[(c * h + y) * w + xx])
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient.
    pub fn backward(&self, x: &FeatureMap, g: &FeatureMap, grad: &mut Conv2d) -> FeatureMap {
        let (h, w) = (x.height(), x.width());
        let n = h * w;
        let r = (self.k / 2) as isize;
        let mut gx = vec![0.0; self.cin * n];
        for o in 0..self.cout {
            let go = g.channel(o);
            grad.bias[o] += go.iter().sum::<f64>();
            for i in 0..self.cin {
                let src = x.channel(i);
                for ky in 0..self.k {
                    let dy = ky as isize - r;
                    for kx in 0..self.k {
                        let dx = kx as isize - r;
                        let widx = ((o * self.cin + i) * self.k + ky) * self.k + kx;
                        let wv = self.weight[widx];
                        let mut acc = 0.0;
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx.max(0)) as usize);
                            for xx in x0..x1.min(w) {
                                let s = sy as usize * w + (xx as isize + dx) as usize;
                                let gv = go[y * w + xx];
                                acc += gv * src[s];
                                gx[i * n + s] += wv * gv;
                            }
                        }
                        grad.weight[widx] += acc;
                    }
                }
            }
        }
        FeatureMap::from_fn(self.cin, h, w, |c, y, xx| gx[(c * h + y) * w + xx])
    }
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

fn silu_grad(v: f64) -> f64 {
    let s = 1.0 / (1.0 + (-v).exp());
    s * (1.0 + v * (1.0 - s))
}

fn map(f: &FeatureMap, op: impl Fn(f64) -> f64) -> FeatureMap {
    let mut out = f.clone();
    out.data_mut().iter_mut().for_each(|v| *v = op(*v));
    out
}

fn add(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    let mut out = a.clone();
    out.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub hidden: usize,
    pub cond_channels: usize,
    pub schedule: ScheduleParams,
    pub f_in: Conv2d,
    pub f_out: Conv2d,
    pub c_in: Conv2d,
    pub c_out: Conv2d,
    pub z1: Conv2d,
    pub z2: Conv2d,
}

struct Cache {
    x0: FeatureMap,
    h1: FeatureMap,
    a1: FeatureMap,
    x1: FeatureMap,
    h2: FeatureMap,
    a2: FeatureMap,
    out_c: FeatureMap,
    cond: FeatureMap,
}

impl ToyDenoiser {
    /// Main branch drawn from `seed`, copy branch equal to it, couplers zero.
    pub fn new(hidden: usize, cond_channels: usize, schedule: ScheduleParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f_in = Conv2d::random(IN_CHANNELS, hidden, 3, (1.0 / (9 * IN_CHANNELS) as f64).sqrt(), &mut rng);
        let f_out = Conv2d::random(hidden, OUT_CHANNELS, 3, (1.0 / (9 * hidden) as f64).sqrt(), &mut rng);
        Self {
            hidden,
            cond_channels,
            schedule,
            c_in: f_in.clone(),
            c_out: f_out.clone(),
            f_in,
            f_out,
            z1: Conv2d::zeros(cond_channels, IN_CHANNELS, 1),
            z2: Conv2d::zeros(OUT_CHANNELS, OUT_CHANNELS, 1),
        }
    }

    fn layers(&self) -> [(&'static str, &Conv2d); 6] {
        [
            ("f_in", &self.f_in),
            ("f_out", &self.f_out),
            ("c_in", &self.c_in),
            ("c_out", &self.c_out),
            ("z1", &self.z1),
            ("z2", &self.z2),
        ]
    }

    fn layers_mut(&mut self) -> [&mut Conv2d; 6] {
        [&mut self.f_in, &mut self.f_out, &mut self.c_in, &mut self.c_out, &mut self.z1, &mut self.z2]
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for l in z.layers_mut() {
            *l = l.zeros_like();
        }
        z
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.weight.len() + l.bias.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers().iter().flat_map(|(_, l)| l.weight.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let mut it = p.iter();
        for l in self.layers_mut() {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("parameter vector too short");
            }
        }
    }

    /// Randomizes every weight, couplers included. Used by gradient checks.
    pub fn randomize(&mut self, seed: u64, std: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.parameter_count();
        let p: Vec<f64> = standard_normal(&mut rng, n).iter().map(|z| z * std).collect();
        self.set_flat_params(&p);
    }

    fn input(&self, y_t: &FeatureMap, t: usize) -> Result<FeatureMap, DiffusionError> {
        if y_t.channels() != OUT_CHANNELS {
            return Err(DiffusionError::Shape(format!("denoiser expects 3 channels, got {}", y_t.channels())));
        }
        let tt = t as f64 / self.schedule.steps as f64;
        let tmap = FeatureMap::from_fn(1, y_t.height(), y_t.width(), |_, _, _| tt);
        Ok(FeatureMap::concat(&[y_t, &tmap])?)
    }

    fn condition(&self, y_t: &FeatureMap, c: Option<&FeatureMap>) -> Result<FeatureMap, DiffusionError> {
        match c {
            None => Ok(FeatureMap::zeros(self.cond_channels, y_t.height(), y_t.width())),
            Some(c) => {
                if c.shape() != (self.cond_channels, y_t.height(), y_t.width()) {
                    return Err(DiffusionError::Shape(format!(
                        "condition {:?} for denoiser with {} condition channels on {}x{}",
                        c.shape(),
                        self.cond_channels,
                        y_t.height(),
                        y_t.width()
                    )));
                }
                Ok(c.clone())
            }
        }
    }

    fn forward(&self, y_t: &FeatureMap, t: usize, c: Option<&FeatureMap>) -> Result<(FeatureMap, Cache), DiffusionError> {
        let x0 = self.input(y_t, t)?;
        let cond = self.condition(y_t, c)?;
        let h1 = self.f_in.forward(&x0);
        let a1 = map(&h1, silu);
        let out_f = self.f_out.forward(&a1);
        let x1 = add(&x0, &self.z1.forward(&cond));
        let h2 = self.c_in.forward(&x1);
        let a2 = map(&h2, silu);
        let out_c = self.c_out.forward(&a2);
        let eps = add(&out_f, &self.z2.forward(&out_c));
        Ok((eps, Cache { x0, h1, a1, x1, h2, a2, out_c, cond }))
    }

    fn backward(&self, cache: &Cache, g: &FeatureMap, grad: &mut ToyDenoiser) {
        let ga1 = self.f_out.backward(&cache.a1, g, &mut grad.f_out);
        let gh1 = mul_grad(&ga1, &cache.h1);
        self.f_in.backward(&cache.x0, &gh1, &mut grad.f_in);
        let gout_c = self.z2.backward(&cache.out_c, g, &mut grad.z2);
        let ga2 = self.c_out.backward(&cache.a2, &gout_c, &mut grad.c_out);
        let gh2 = mul_grad(&ga2, &cache.h2);
        let gx1 = self.c_in.backward(&cache.x1, &gh2, &mut grad.c_in);
        self.z1.backward(&cache.cond, &gx1, &mut grad.z1);
    }

    pub fn to_store(&self) -> TensorStore {
        let mut s = TensorStore::new();
        for (name, l) in self.layers() {
            s.insert(&format!("{name}.weight"), &[l.cout, l.cin, l.k, l.k], &l.weight);
            s.insert(&format!("{name}.bias"), &[l.cout], &l.bias);
        }
        s.meta = serde_json::json!({
            "hidden": self.hidden,
            "cond_channels": self.cond_channels,
            "schedule": self.schedule,
        });
        s
    }

    pub fn from_store(store: &TensorStore) -> Result<Self, DiffusionError> {
        #[derive(Deserialize)]
        struct Meta {
            hidden: usize,
            cond_channels: usize,
            schedule: ScheduleParams,
        }
        let meta: Meta = serde_json::from_value(store.meta.clone())
            .map_err(|e| DiffusionError::Shape(format!("checkpoint metadata: {e}")))?;
        let mut m = ToyDenoiser::new(meta.hidden, meta.cond_channels, meta.schedule, 0);
        for l in m.layers_mut() {
            *l = l.zeros_like();
        }
        let names = ["f_in", "f_out", "c_in", "c_out", "z1", "z2"];
        for (name, l) in names.iter().zip(m.layers_mut()) {
            l.weight = store.get(&format!("{name}.weight"), &[l.cout, l.cin, l.k, l.k])?;
            l.bias = store.get(&format!("{name}.bias"), &[l.cout])?;
        }
        Ok(m)
    }

    pub fn save(&self, stem: &Path, seed: u64) -> Result<(), DiffusionError> {
        let mut s = self.to_store();
        s.meta["seed"] = serde_json::json!(seed);
        s.save(stem)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self, DiffusionError> {
        Self::from_store(&TensorStore::load(stem)?)
    }
}

fn mul_grad(g: &FeatureMap, pre: &FeatureMap) -> FeatureMap {
    let mut out = g.clone();
    out.data_mut().iter_mut().zip(pre.data()).for_each(|(a, h)| *a *= silu_grad(*h));
    out
}

impl Denoiser for ToyDenoiser {
    fn predict(&self, y_t: &FeatureMap, t: usize, condition: Option<&FeatureMap>) -> Result<FeatureMap, DiffusionError> {
        if t == 0 || t > self.schedule.steps {
            return Err(DiffusionError::StepOutOfRange { t, steps: self.schedule.steps });
        }
        Ok(self.forward(y_t, t, condition)?.0)
    }
}

/// Clean target in model space [-1, 1] with an optional condition map.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub target: FeatureMap,
    pub condition: Option<FeatureMap>,
}

struct Draw {
    index: usize,
    t: usize,
    eps: Vec<f64>,
}

fn draw(rng: &mut ChaCha8Rng, data: &[TrainingExample], steps: usize) -> Draw {
    let index = rng.random_range(0..data.len());
    let t = rng.random_range(1..=steps);
    let eps = standard_normal(rng, data[index].target.data().len());
    Draw { index, t, eps }
}

/// Mean loss over `draws` and, when `grad` is given, its gradient.
fn batch_loss(
    model: &ToyDenoiser,
    data: &[TrainingExample],
    draws: &[Draw],
    schedule: &NoiseSchedule,
    aux: &AuxWeights,
    mut grad: Option<&mut ToyDenoiser>,
) -> Result<f64, DiffusionError> {
    let mut total = 0.0;
    let b = draws.len() as f64;
    for d in draws {
        let ex = &data[d.index];
        let target = &ex.target;
        let y_t = q_sample(target.data(), d.t, &d.eps, schedule)?;
        let y_t = FeatureMap::new(3, target.height(), target.width(), y_t)?;
        let (eps_hat, cache) = model.forward(&y_t, d.t, ex.condition.as_ref())?;
        let n = d.eps.len() as f64;
        total += simple_loss(&d.eps, eps_hat.data())? / b;
        let mut g: Vec<f64> = eps_hat.data().iter().zip(&d.eps).map(|(p, e)| 2.0 * (p - e) / (n * b)).collect();
        if aux.w_col > 0.0 || aux.w_ssim > 0.0 {
            let y0_hat = FeatureMap::new(3, target.height(), target.width(), predict_y0(y_t.data(), d.t, eps_hat.data(), schedule)?)?;
            let (pred, truth) = (to_unit(&y0_hat), to_unit(target));
            let mut gu = vec![0.0; pred.data().len()];
            if aux.w_col > 0.0 {
                let (v, gc) = quality::angular_color_loss_with_grad(&pred, &truth)?;
                total += aux.w_col * v / b;
                gu.iter_mut().zip(gc).for_each(|(a, c)| *a += aux.w_col * c);
            }
            if aux.w_ssim > 0.0 {
                let (h, w) = truth.dims();
                let (v, gs) = quality::ssim_with_grad(&pred, &truth, &aux_ssim_params(h, w))?;
                total += aux.w_ssim * (1.0 - v) / b;
                gu.iter_mut().zip(gs).for_each(|(a, s)| *a -= aux.w_ssim * s);
            }
            // unit image u = (ŷ0 + 1) / 2 and ŷ0 = (y_t − √(1−ᾱ) ε̂) / √ᾱ
            let ab = schedule.alpha_bar(d.t);
            let k = -(1.0 - ab).sqrt() / (2.0 * ab.sqrt()) / b;
            let (h, w) = truth.dims();
            for c in 0..3 {
                for p in 0..h * w {
                    g[c * h * w + p] += k * gu[p * 3 + c];
                }
            }
        }
        if let Some(gr) = grad.as_deref_mut() {
            let gmap = FeatureMap::new(3, target.height(), target.width(), g)?;
            model.backward(&cache, &gmap, gr);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub hidden: usize,
    pub schedule: ScheduleParams,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub aux: AuxWeights,
    pub eval_draws: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            schedule: ScheduleParams::short(),
            steps: 2000,
            batch: 8,
            learning_rate: 2e-3,
            seed: 0,
            aux: AuxWeights::ZERO,
            eval_draws: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub denoiser: ToyDenoiser,
    /// `(step, batch loss)` for every optimizer step.
    pub trace: Vec<(usize, f64)>,
    /// Loss on a fixed evaluation set of draws before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl TrainReport {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "step,loss")?;
        for (s, l) in &self.trace {
            writeln!(out, "{s},{l}")?;
        }
        Ok(())
    }
}

/// Adam on the simple (or auxiliary) loss with uniformly drawn steps.
pub fn train_toy_denoiser(data: &[TrainingExample], cfg: &ToyConfig) -> Result<TrainReport, DiffusionError> {
    if data.is_empty() {
        return Err(DiffusionError::BadTraining("dataset is empty".into()));
    }
    if cfg.batch == 0 || cfg.hidden == 0 || !(cfg.learning_rate > 0.0) {
        return Err(DiffusionError::BadTraining(format!("bad config {cfg:?}")));
    }
    cfg.aux.validate()?;
    let cond_channels = data[0].condition.as_ref().map_or(1, |c| c.channels());
    for ex in data {
        if ex.target.channels() != 3 || ex.target.height() > 16 || ex.target.width() > 16 {
            return Err(DiffusionError::BadTraining(format!("target {:?} must be 3 x ≤16 x ≤16", ex.target.shape())));
        }
        if ex.condition.as_ref().map_or(1, |c| c.channels()) != cond_channels {
            return Err(DiffusionError::BadTraining("condition channel counts differ".into()));
        }
    }
    let schedule = NoiseSchedule::from_params(&cfg.schedule)?;
    let mut model = ToyDenoiser::new(cfg.hidden, cond_channels, cfg.schedule, cfg.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e7a1);
    let eval: Vec<Draw> = (0..cfg.eval_draws.max(1)).map(|_| draw(&mut eval_rng, data, schedule.steps())).collect();
    let initial_loss = batch_loss(&model, data, &eval, &schedule, &AuxWeights::ZERO, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let np = model.parameter_count();
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let (b1, b2, eps_adam): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let draws: Vec<Draw> = (0..cfg.batch).map(|_| draw(&mut rng, data, schedule.steps())).collect();
        let mut grad = model.zeros_like();
        let loss = batch_loss(&model, data, &draws, &schedule, &cfg.aux, Some(&mut grad))?;
        let g = grad.flat_params();
        if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(DiffusionError::Divergence { step });
        }
        let mut p = model.flat_params();
        let (c1, c2) = (1.0 - b1.powi(step as i32), 1.0 - b2.powi(step as i32));
        for i in 0..np {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps_adam);
        }
        model.set_flat_params(&p);
        trace.push((step, loss));
    }
    let final_loss = batch_loss(&model, data, &eval, &schedule, &AuxWeights::ZERO, None)?;
    Ok(TrainReport { denoiser: model, trace, initial_loss, final_loss })
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter, on a fixed microbatch.
pub fn gradient_check(
    model: &ToyDenoiser,
    data: &[TrainingExample],
    aux: &AuxWeights,
    seed: u64,
    draws: usize,
) -> Result<f64, DiffusionError> {
    let schedule = NoiseSchedule::from_params(&model.schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds: Vec<Draw> = (0..draws).map(|_| draw(&mut rng, data, schedule.steps())).collect();
    let mut grad = model.zeros_like();
    batch_loss(model, data, &ds, &schedule, aux, Some(&mut grad))?;
    let analytic = grad.flat_params();
    let base = model.flat_params();
    let mut probe = model.clone();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_flat_params(&p);
        let up = batch_loss(&probe, data, &ds, &schedule, aux, None)?;
        p[i] = base[i] - h;
        probe.set_flat_params(&p);
        let down = batch_loss(&probe, data, &ds, &schedule, aux, None)?;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Smooth two-tone gradients with one disc each, values in [0, 1].
pub fn synthetic_images(n: usize, size: usize, seed: u64) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a: [f64; 3] = [rng.random_range(0.05..0.6), rng.random_range(0.05..0.6), rng.random_range(0.05..0.6)];
            let b: [f64; 3] = [rng.random_range(0.05..0.6), rng.random_range(0.05..0.6), rng.random_range(0.05..0.6)];
            let disc: [f64; 3] = [rng.random_range(0.3..1.0), rng.random_range(0.3..1.0), rng.random_range(0.3..1.0)];
            let cy = rng.random_range(0.0..size as f64);
            let cx = rng.random_range(0.0..size as f64);
            let r = rng.random_range(1.0..size as f64 / 2.0);
            let span = (2 * size.max(2) - 2) as f64;
            RgbImage::from_fn(size, size, |y, x| {
                if ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() <= r {
                    disc
                } else {
                    let f = (x + y) as f64 / span;
                    [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * f)
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::from_unit;

    fn examples(n: usize, size: usize, cond: Option<usize>, seed: u64) -> Vec<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synthetic_images(n, size, seed)
            .iter()
            .map(|img| TrainingExample {
                target: from_unit(img),
                condition: cond.map(|c| FeatureMap::from_fn(c, size, size, |_, _, _| rng.random_range(-1.0..1.0))),
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::random(2, 3, 3, 1.0, &mut rng);
        let x = FeatureMap::from_fn(2, 4, 5, |_, _, _| rng.random_range(-1.0..1.0));
        let out = conv.forward(&x);
        for o in 0..3 {
            for y in 0..4i64 {
                for xx in 0..5i64 {
                    let mut acc = conv.bias[o];
                    for i in 0..2 {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if (0..4).contains(&sy) && (0..5).contains(&sx) {
                                    acc += conv.weight[((o * 2 + i) * 3 + ky as usize) * 3 + kx as usize]
                                        * x.get(i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    assert!((out.get(o, y as usize, xx as usize) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_couplers_ignore_condition_bitwise() {
        let m = ToyDenoiser::new(8, 5, ScheduleParams::short(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = FeatureMap::from_fn(3, 6, 7, |_, _, _| rng.random_range(-2.0..2.0));
        let c = FeatureMap::from_fn(5, 6, 7, |_, _, _| rng.random_range(-5.0..5.0));
        for t in [1, 17, 50] {
            let a = m.predict(&y, t, Some(&c)).unwrap();
            let b = m.predict(&y, t, None).unwrap();
            assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        let wrong = FeatureMap::zeros(4, 6, 7);
        assert!(matches!(m.predict(&y, 1, Some(&wrong)), Err(DiffusionError::Shape(_))));
        assert!(matches!(m.predict(&y, 51, None), Err(DiffusionError::StepOutOfRange { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = examples(3, 5, Some(2), 8);
        let mut m = ToyDenoiser::new(4, 2, ScheduleParams::short(), 1);
        m.randomize(99, 0.3);
        let err = gradient_check(&m, &data, &AuxWeights::ZERO, 5, 2).unwrap();
        assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn aux_gradients_match_finite_differences() {
        let data = examples(2, 6, Some(2), 12);
        let mut m = ToyDenoiser::new(3, 2, ScheduleParams::short(), 1);
        m.randomize(7, 0.2);
        let err = gradient_check(&m, &data, &AuxWeights { w_col: 0.1, w_ssim: 0.2 }, 3, 2).unwrap();
        assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = ToyDenoiser::new(4, 3, ScheduleParams::short(), 6);
        let dir = tempfile::tempdir().unwrap();
        m.save(&dir.path().join("ckpt"), 6).unwrap();
        assert_eq!(ToyDenoiser::load(&dir.path().join("ckpt")).unwrap(), m);
    }

    #[test]
    fn short_training_reduces_loss_and_is_deterministic() {
        let data = examples(8, 6, None, 1);
        let cfg = ToyConfig { steps: 150, hidden: 8, eval_draws: 32, ..Default::default() };
        let a = train_toy_denoiser(&data, &cfg).unwrap();
        let b = train_toy_denoiser(&data, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.denoiser, b.denoiser);
        assert!(a.final_loss < a.initial_loss);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step,loss\n1,"));
        assert_eq!(text.lines().count(), 151);
        assert!(train_toy_denoiser(&[], &cfg).is_err());
    }
}
