//! Metric depth regression from a 3-channel image.
//!
//! A U-Net with widths `[16, 32, 64]` feeds a 1×1 head; depth is
//! `s·softplus(z)` with `s = sqrt(d_min·d_max)/ln 2`, so an all-zero head
//! predicts the geometric mean of the depth range. Predictions are clamped to
//! `[d_min, d_max]` and trained with the scale-invariant log loss
//!
//! ```text
//! L = mean(e²) − λ·mean(e)²,   e = ln(pred) − ln(gt)   over valid pixels
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid_arg, Error, Result};
use crate::evaluate::MetricsAccumulator;
use crate::nn::ops::{sigmoid, softplus};
use crate::nn::params::{ParamVisitor, ParamVisitorMut};
use crate::nn::{fit, fit_select, Conv2d, Params, TrainSettings, UNet};
use crate::tensor::{Real, Tensor};

/// The seven input variants compared by the baseline matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputKind {
    Rgb,
    Event,
    RgbSobel,
    RgbEvent,
    Enhanced,
    EnhancedSobel,
    Even,
}

impl InputKind {
    pub const ALL: [InputKind; 7] = [
        InputKind::Rgb,
        InputKind::Event,
        InputKind::RgbSobel,
        InputKind::RgbEvent,
        InputKind::Enhanced,
        InputKind::EnhancedSobel,
        InputKind::Even,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InputKind::Rgb => "rgb",
            InputKind::Event => "event",
            InputKind::RgbSobel => "rgb+sobel",
            InputKind::RgbEvent => "rgb+event",
            InputKind::Enhanced => "enhanced",
            InputKind::EnhancedSobel => "enhanced+sobel",
            InputKind::Even => "even",
        }
    }

    /// File-name friendly form.
    pub fn tag(self) -> &'static str {
        match self {
            InputKind::RgbSobel => "rgb-sobel",
            InputKind::RgbEvent => "rgb-event",
            InputKind::EnhancedSobel => "enhanced-sobel",
            k => k.name(),
        }
    }

    /// Kinds whose depth input is a fusion image produced by a trained fusion network.
    pub fn is_fused(self) -> bool {
        matches!(
            self,
            InputKind::RgbSobel | InputKind::RgbEvent | InputKind::EnhancedSobel | InputKind::Even
        )
    }

    pub fn needs_enhancer(self) -> bool {
        matches!(self, InputKind::Enhanced | InputKind::EnhancedSobel | InputKind::Even)
    }

    pub fn parse_list(s: &str) -> Result<Vec<InputKind>> {
        if s.trim() == "all" {
            return Ok(InputKind::ALL.to_vec());
        }
        let mut out: Vec<InputKind> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let k: InputKind = part.parse()?;
            if !out.contains(&k) {
                out.push(k);
            }
        }
        if out.is_empty() {
            return Err(invalid_arg!("empty input kind list"));
        }
        Ok(out)
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        InputKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.tag() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = InputKind::ALL.iter().map(|k| k.name()).collect();
                invalid_arg!("unknown input kind {s:?} (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthConfig {
    pub widths: Vec<usize>,
    pub depth_range: (f64, f64),
    pub lambda: f64,
    pub train: TrainSettings,
    /// Keep the epoch with the lowest validation Abs. Rel. instead of the last one.
    pub best_val: bool,
}

impl Default for DepthConfig {
    fn default() -> Self {
        DepthConfig {
            widths: vec![16, 32, 64],
            depth_range: (2.0, 50.0),
            lambda: 0.5,
            train: TrainSettings {
                epochs: 40,
                batch_size: 4,
                lr: 1e-4,
                weight_decay: 1e-4,
                step_size: 20,
                decay: 0.5,
                seed: 0,
            },
            best_val: true,
        }
    }
}

impl DepthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(invalid_arg!("depth widths must be non-empty and positive"));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(invalid_arg!("depth range must satisfy 0 < d_min < d_max"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid_arg!("lambda must be in [0, 1]"));
        }
        self.train.validate()
    }
}

/// Pixels whose ground truth lies strictly inside the depth range.
pub fn valid_mask<T: Real>(gt: &Tensor<T>, (lo, hi): (f64, f64)) -> Vec<bool> {
    gt.data
        .iter()
        .map(|&g| {
            let g = g.as_f64();
            g > lo && g < hi
        })
        .collect()
}

/// Scale-invariant log loss over `mask`; `grad` (if given) receives `∂L/∂pred`.
pub fn depth_loss<T: Real>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    mask: &[bool],
    lambda: f64,
    grad: Option<&mut Tensor<T>>,
) -> Result<f64> {
    if !pred.same_shape(gt) || mask.len() != gt.data.len() {
        return Err(invalid_arg!(
            "depth loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        ));
    }
    let mut n = 0usize;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for ((&p, &g), &m) in pred.data.iter().zip(&gt.data).zip(mask) {
        if !m {
            continue;
        }
        let (p, g) = (p.as_f64(), g.as_f64());
        if !(p > 0.0 && g > 0.0) {
            return Err(invalid_arg!("depth values must be positive on valid pixels"));
        }
        let e = p.ln() - g.ln();
        s1 += e;
        s2 += e * e;
        n += 1;
    }
    if n == 0 {
        return Err(invalid_arg!("depth loss needs at least one valid pixel"));
    }
    let nf = n as f64;
    let mean = s1 / nf;
    if let Some(grad) = grad {
        for (j, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            let p = pred.data[j].as_f64();
            let e = p.ln() - gt.data[j].as_f64().ln();
            grad.data[j] += T::lit((2.0 * e - 2.0 * lambda * mean) / (nf * p));
        }
    }
    Ok(s2 / nf - lambda * mean * mean)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthNet<T = f32> {
    pub unet: UNet<T>,
    pub head: Conv2d<T>,
    pub depth_range: (f64, f64),
}

pub struct DepthTrace<T> {
    unet: crate::nn::UNetTrace<T>,
    z: Tensor<T>,
    /// Unclamped `s·softplus(z)`.
    raw: Tensor<T>,
    /// Clamped prediction.
    pub depth: Tensor<T>,
}

impl<T: Real> DepthTrace<T> {
    pub fn relu_pattern(&self, out: &mut Vec<bool>) {
        self.unet.relu_pattern(out);
    }

    /// Per pixel: whether the raw prediction lies inside `range`, where the clamp is inactive.
    pub fn unclamped(&self, (lo, hi): (f64, f64)) -> Vec<bool> {
        self.raw
            .data
            .iter()
            .map(|r| r.as_f64() > lo && r.as_f64() < hi)
            .collect()
    }
}

impl<T: Real> DepthNet<T> {
    pub fn new(widths: &[usize], depth_range: (f64, f64)) -> Self {
        DepthNet {
            unet: UNet::new(3, widths),
            head: Conv2d::new(widths[0], 1, 1),
            depth_range,
        }
    }

    pub fn from_config(config: &DepthConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::new(&config.widths, config.depth_range))
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.unet.init(rng);
        self.head.init_uniform(rng, 0.1);
    }

    fn scale(&self) -> f64 {
        let (lo, hi) = self.depth_range;
        (lo * hi).sqrt() / std::f64::consts::LN_2
    }

    pub fn size_multiple(&self) -> usize {
        1 << self.unet.levels()
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<DepthTrace<T>> {
        if image.c != self.unet.in_channels() {
            return Err(invalid_arg!(
                "depth input needs {} channels, got {}",
                self.unet.in_channels(),
                image.c
            ));
        }
        let m = self.size_multiple();
        if !image.h.is_multiple_of(m) || !image.w.is_multiple_of(m) {
            return Err(invalid_arg!(
                "depth input {}×{} is not divisible by {m}; pad to {}×{}",
                image.h,
                image.w,
                image.h.div_ceil(m) * m,
                image.w.div_ceil(m) * m
            ));
        }
        let unet = self.unet.forward(image);
        let z = self.head.forward(unet.output());
        let s = T::lit(self.scale());
        let raw = z.map(|v| s * softplus(v));
        let (lo, hi) = (T::lit(self.depth_range.0), T::lit(self.depth_range.1));
        let depth = raw.map(|v| v.max(lo).min(hi));
        Ok(DepthTrace { unet, z, raw, depth })
    }

    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(image)?.depth)
    }

    /// Loss of one sample against `gt`; accumulates gradients into `grads`.
    pub fn loss_and_grad(&self, image: &Tensor<T>, gt: &Tensor<T>, lambda: f64, grads: &mut Self) -> Result<f64> {
        let t = self.forward(image)?;
        let mask = valid_mask(gt, self.depth_range);
        let mut g_depth = Tensor::zeros(1, gt.h, gt.w);
        let loss = depth_loss(&t.depth, gt, &mask, lambda, Some(&mut g_depth))?;
        let s = T::lit(self.scale());
        let (lo, hi) = (T::lit(self.depth_range.0), T::lit(self.depth_range.1));
        let mut gz = g_depth;
        for (j, g) in gz.data.iter_mut().enumerate() {
            let r = t.raw.data[j];
            *g = if r > lo && r < hi {
                *g * s * sigmoid(t.z.data[j])
            } else {
                T::zero()
            };
        }
        let g_u = self.head.backward(t.unet.output(), &gz, &mut grads.head, true).unwrap();
        self.unet.backward(&t.unet, g_u, &mut grads.unet, false);
        Ok(loss)
    }
}

impl<T: Real> Params<T> for DepthNet<T> {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, T>) {
        self.unet.visit(&format!("{prefix}.unet"), f);
        self.head.visit(&format!("{prefix}.head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        self.unet.visit_mut(&format!("{prefix}.unet"), f);
        self.head.visit_mut(&format!("{prefix}.head"), f);
    }
}

/// Positive depth for `image`, clamped to the configured range.
pub fn predict_depth(net: &DepthNet<f32>, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    net.predict(image)
}

/// Trains on `(image, gt)` pairs; returns the network and per-epoch mean loss.
/// Trains a depth network; returns it with its training losses and, when
/// `val` is used for checkpoint selection, the validation Abs. Rel. per epoch.
pub fn train_depth(
    samples: &[(Tensor<f32>, Tensor<f32>)],
    val: &[(Tensor<f32>, Tensor<f32>)],
    config: &DepthConfig,
) -> Result<(DepthNet<f32>, Vec<f64>, Vec<f64>)> {
    let mut net = DepthNet::from_config(config)?;
    net.init(&mut crate::seed::rng_for(config.train.seed, "depth-init"));
    let grad = |p: &DepthNet<f32>, i: usize, g: &mut DepthNet<f32>| {
        p.loss_and_grad(&samples[i].0, &samples[i].1, config.lambda, g)
    };
    if !config.best_val || val.is_empty() {
        let history = fit(&mut net, samples.len(), &config.train, grad)?;
        return Ok((net, history, Vec::new()));
    }
    let (history, scores) = fit_select(&mut net, samples.len(), &config.train, grad, |p| {
        abs_rel_on(p, val, config.depth_range)
    })?;
    Ok((net, history, scores))
}

/// Pooled Abs. Rel. of `net` over `data`.
pub fn abs_rel_on(net: &DepthNet<f32>, data: &[(Tensor<f32>, Tensor<f32>)], range: (f64, f64)) -> Result<f64> {
    let parts = crate::parallel::map_indexed(data.len(), |i| -> Result<MetricsAccumulator> {
        let mut acc = MetricsAccumulator::default();
        acc.add_map(&net.predict(&data[i].0)?, &data[i].1, range)?;
        Ok(acc)
    });
    let mut total = MetricsAccumulator::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total.finish()?.abs_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in InputKind::ALL {
            assert_eq!(k.name().parse::<InputKind>().unwrap(), k);
            assert_eq!(k.tag().parse::<InputKind>().unwrap(), k);
        }
        assert!("lidar".parse::<InputKind>().is_err());
        assert_eq!(InputKind::parse_list("all").unwrap().len(), 7);
        assert_eq!(
            InputKind::parse_list("rgb, even,rgb").unwrap(),
            vec![InputKind::Rgb, InputKind::Even]
        );
        assert_eq!(InputKind::ALL.iter().filter(|k| k.is_fused()).count(), 4);
    }

    #[test]
    fn loss_examples() {
        let gt = Tensor::from_vec(1, 1, 3, vec![3.0f64, 7.0, 20.0]).unwrap();
        let mask = vec![true; 3];
        assert_eq!(depth_loss(&gt, &gt, &mask, 0.5, None).unwrap(), 0.0);
        let l = depth_loss(&gt.map(|v| 2.0 * v), &gt, &mask, 0.5, None).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((l - 0.5 * ln2 * ln2).abs() < 1e-12);
        assert!((l - 0.2402).abs() < 1e-4);
        assert!(depth_loss(&gt, &gt, &[false; 3], 0.5, None).is_err());
    }

    #[test]
    fn loss_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for alpha in [0.5, 2.0] {
            let a = random(&mut rng, 1, 4, 4, 2.0, 40.0);
            let b = random(&mut rng, 1, 4, 4, 2.0, 40.0);
            let m = vec![true; 16];
            let la = depth_loss(&a.map(|v| alpha * v), &a, &m, 0.5, None).unwrap();
            let lb = depth_loss(&b.map(|v| alpha * v), &b, &m, 0.5, None).unwrap();
            assert!((la - lb).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_contract() {
        let mut net = DepthNet::<f64>::new(&[4, 8, 8], (2.0, 50.0));
        net.init(&mut ChaCha8Rng::seed_from_u64(2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random(&mut rng, 3, 16, 8, 0.0, 1.0);
        let d = net.predict(&img).unwrap();
        assert_eq!(d.shape(), (1, 16, 8));
        assert!(d.data.iter().all(|&v| v > 0.0));
        assert_eq!(net.predict(&img).unwrap(), d);
        let err = net
            .predict(&random(&mut rng, 3, 12, 8, 0.0, 1.0))
            .unwrap_err()
            .to_string();
        assert!(err.contains("16×8"), "{err}");
        let mut z = net.clone();
        z.head.weight.fill(0.0);
        z.head.bias.fill(0.0);
        let geo = (2.0f64 * 50.0).sqrt();
        assert!(z.predict(&img).unwrap().data.iter().all(|&v| (v - geo).abs() < 1e-9));
    }
}
