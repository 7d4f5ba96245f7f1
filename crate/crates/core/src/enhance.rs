//! Low-light enhancement.
//!
//! Two enhancers share one interface. The analytic one blends each pixel
//! toward a gamma-lifted copy, weighted by the attention map `1 − V` where `V`
//! is the per-pixel channel maximum:
//!
//! ```text
//! out = rgb + (1 − V) · (rgb^(1/γ) − rgb)
//! ```
//!
//! The trainable one feeds `[rgb, 1 − V]` through a small U-Net, gates the
//! predicted residual by the same attention map and clips to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid_arg, Error, Result};
use crate::nn::ops::concat_channels;
use crate::nn::params::{ParamVisitor, ParamVisitorMut};
use crate::nn::{fit, Conv2d, ParamFile, Params, TrainSettings, UNet};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnhancerKind {
    Analytic,
    AttentionUnet,
}

impl EnhancerKind {
    pub fn name(self) -> &'static str {
        match self {
            EnhancerKind::Analytic => "analytic",
            EnhancerKind::AttentionUnet => "attention_unet",
        }
    }
}

impl fmt::Display for EnhancerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnhancerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(EnhancerKind::Analytic),
            "attention_unet" => Ok(EnhancerKind::AttentionUnet),
            _ => Err(invalid_arg!(
                "unknown enhancer kind {s:?} (expected analytic or attention_unet)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhancerConfig {
    pub kind: EnhancerKind,
    pub gamma_target: f64,
    pub unet_channels: usize,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        EnhancerConfig {
            kind: EnhancerKind::Analytic,
            gamma_target: 2.2,
            unet_channels: 16,
        }
    }
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_target > 0.0 && self.gamma_target.is_finite()) {
            return Err(invalid_arg!("gamma_target must be positive, got {}", self.gamma_target));
        }
        if self.unet_channels == 0 {
            return Err(invalid_arg!("unet_channels must be at least 1"));
        }
        Ok(())
    }
}

fn check_rgb<T: Real>(rgb: &Tensor<T>) -> Result<()> {
    if rgb.c != 3 {
        return Err(invalid_arg!("expected a 3-channel image, got {} channels", rgb.c));
    }
    Ok(())
}

/// Per-pixel maximum over the colour channels (the V of HSV).
pub fn illumination_channel<T: Real>(rgb: &Tensor<T>) -> Result<Tensor<T>> {
    check_rgb(rgb)?;
    let n = rgb.plane_len();
    let mut v = Tensor::zeros(1, rgb.h, rgb.w);
    for i in 0..n {
        v.data[i] = rgb.data[i].max(rgb.data[n + i]).max(rgb.data[2 * n + i]);
    }
    Ok(v)
}

/// `1 − V`: large in dark regions, zero on saturated pixels.
pub fn attention_map<T: Real>(rgb: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(illumination_channel(rgb)?.map(|v| T::one() - v))
}

pub fn enhance_analytic(rgb: &Tensor<f32>, gamma_target: f64) -> Result<Tensor<f32>> {
    if !(gamma_target > 0.0 && gamma_target.is_finite()) {
        return Err(invalid_arg!("gamma_target must be positive, got {gamma_target}"));
    }
    let att = attention_map(rgb)?;
    let n = rgb.plane_len();
    let inv = 1.0 / gamma_target;
    let mut out = rgb.clone();
    for (j, v) in out.data.iter_mut().enumerate() {
        let x = (*v as f64).clamp(0.0, 1.0);
        let a = att.data[j % n] as f64;
        *v = (x + a * (x.powf(inv) - x)).clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}

/// Trainable enhancer: U-Net over `[rgb, attention]` predicting a gated residual.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionUNet<T = f32> {
    pub unet: UNet<T>,
    pub head: Conv2d<T>,
}

pub struct EnhanceTrace<T> {
    att: Tensor<T>,
    unet: crate::nn::UNetTrace<T>,
    pre_clip: Tensor<T>,
    pub output: Tensor<T>,
}

impl<T: Real> AttentionUNet<T> {
    pub fn new(channels: usize) -> Self {
        AttentionUNet {
            unet: UNet::new(4, &[channels, 2 * channels]),
            head: Conv2d::new(channels, 3, 3),
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.unet.init(rng);
        self.head.init_uniform(rng, 1.0);
    }

    pub fn forward(&self, rgb: &Tensor<T>) -> Result<EnhanceTrace<T>> {
        check_rgb(rgb)?;
        let levels = self.unet.levels();
        if !rgb.h.is_multiple_of(1 << levels) || !rgb.w.is_multiple_of(1 << levels) {
            return Err(invalid_arg!(
                "enhancer input {}×{} must be divisible by {}",
                rgb.h,
                rgb.w,
                1 << levels
            ));
        }
        let att = attention_map(rgb)?;
        let input = concat_channels(rgb, &att);
        let unet = self.unet.forward(&input);
        let r = self.head.forward(unet.output());
        let n = rgb.plane_len();
        let mut pre_clip = rgb.clone();
        for (j, v) in pre_clip.data.iter_mut().enumerate() {
            *v += att.data[j % n] * r.data[j];
        }
        let output = pre_clip.map(|v| v.max(T::zero()).min(T::one()));
        Ok(EnhanceTrace {
            att,
            unet,
            pre_clip,
            output,
        })
    }

    pub fn enhance(&self, rgb: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(rgb)?.output)
    }

    /// L2 loss against `target`; accumulates parameter gradients into `grads`.
    pub fn loss_and_grad(&self, rgb: &Tensor<T>, target: &Tensor<T>, grads: &mut Self) -> Result<f64> {
        if !rgb.same_shape(target) {
            return Err(invalid_arg!(
                "target shape {:?} != input {:?}",
                target.shape(),
                rgb.shape()
            ));
        }
        let tr = self.forward(rgb)?;
        let n_all = rgb.data.len() as f64;
        let n = rgb.plane_len();
        let mut loss = 0.0;
        let mut gr = Tensor::zeros(3, rgb.h, rgb.w);
        let scale = T::lit(2.0 / n_all);
        for j in 0..rgb.data.len() {
            let e = tr.output.data[j] - target.data[j];
            loss += e.as_f64() * e.as_f64();
            let z = tr.pre_clip.data[j];
            if z > T::zero() && z < T::one() {
                gr.data[j] = scale * e * tr.att.data[j % n];
            }
        }
        let g_unet = self
            .head
            .backward(tr.unet.output(), &gr, &mut grads.head, true)
            .expect("input gradient requested");
        self.unet.backward(&tr.unet, g_unet, &mut grads.unet, false);
        Ok(loss / n_all)
    }
}

impl<T: Real> Params<T> for AttentionUNet<T> {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, T>) {
        self.unet.visit(&format!("{prefix}.unet"), f);
        self.head.visit(&format!("{prefix}.head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        self.unet.visit_mut(&format!("{prefix}.unet"), f);
        self.head.visit_mut(&format!("{prefix}.head"), f);
    }
}

/// A ready-to-use enhancer of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Enhancer {
    Analytic { gamma_target: f64 },
    Trained(AttentionUNet<f32>),
}

const GAMMA_TENSOR: &str = "gamma_target";

impl Enhancer {
    pub fn analytic(gamma_target: f64) -> Self {
        Enhancer::Analytic { gamma_target }
    }

    pub fn enhance(&self, rgb: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            Enhancer::Analytic { gamma_target } => enhance_analytic(rgb, *gamma_target),
            Enhancer::Trained(net) => net.enhance(rgb),
        }
    }

    /// Analytic enhancers store their single `gamma_target` value.
    pub fn to_param_file(&self) -> ParamFile {
        match self {
            Enhancer::Analytic { gamma_target } => {
                let mut f = ParamFile::default();
                f.push(GAMMA_TENSOR, &[1], vec![*gamma_target as f32]);
                f
            }
            Enhancer::Trained(net) => net.to_param_file(),
        }
    }

    pub fn from_param_file(config: &EnhancerConfig, file: &ParamFile) -> Result<Self> {
        config.validate()?;
        match config.kind {
            EnhancerKind::Analytic => {
                let t = file
                    .get(GAMMA_TENSOR)
                    .ok_or_else(|| Error::InvalidData("enhancer file has no gamma_target".into()))?;
                let g = *t
                    .data
                    .first()
                    .ok_or_else(|| Error::InvalidData("empty gamma_target".into()))?;
                Ok(Enhancer::analytic(g as f64))
            }
            EnhancerKind::AttentionUnet => {
                let mut net = AttentionUNet::new(config.unet_channels);
                net.load_param_file(file)?;
                Ok(Enhancer::Trained(net))
            }
        }
    }
}

/// Trains the attention U-Net on `(night, clean)` pairs.
pub fn train_enhancer(
    pairs: &[(Tensor<f32>, Tensor<f32>)],
    config: &EnhancerConfig,
    settings: &TrainSettings,
) -> Result<(AttentionUNet<f32>, Vec<f64>)> {
    config.validate()?;
    if config.kind == EnhancerKind::Analytic {
        return Err(Error::Unsupported(
            "the analytic enhancer has no trainable parameters".into(),
        ));
    }
    let mut net = AttentionUNet::new(config.unet_channels);
    net.init(&mut crate::seed::rng_for(settings.seed, "enhancer-init"));
    let history = fit(&mut net, pairs.len(), settings, |p, i, g| {
        p.loss_and_grad(&pairs[i].0, &pairs[i].1, g)
    })?;
    Ok((net, history))
}

/// Mean L2 loss of `net` over `pairs`.
pub fn enhancer_loss(net: &AttentionUNet<f32>, pairs: &[(Tensor<f32>, Tensor<f32>)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in pairs {
        total += crate::tensor::mse(&net.enhance(x)?, y)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pixel(r: f32, g: f32, b: f32) -> Tensor<f32> {
        Tensor::from_vec(3, 1, 1, vec![r, g, b]).unwrap()
    }

    #[test]
    fn illumination_examples() {
        let v = illumination_channel(&pixel(0.2, 0.5, 0.1)).unwrap();
        assert_eq!(v.data, vec![0.5]);
        assert_eq!(attention_map(&pixel(1.0, 1.0, 1.0)).unwrap().data, vec![0.0]);
        assert_eq!(attention_map(&pixel(0.0, 0.0, 0.0)).unwrap().data, vec![1.0]);
        assert!(illumination_channel(&Tensor::<f32>::zeros(1, 2, 2)).is_err());
    }

    #[test]
    fn analytic_examples() {
        let white = Tensor::filled(3, 4, 4, 1.0f32);
        assert_eq!(enhance_analytic(&white, 2.2).unwrap(), white);
        let black = Tensor::zeros(3, 4, 4);
        assert_eq!(enhance_analytic(&black, 2.2).unwrap(), black);
        let out = enhance_analytic(&pixel(0.1, 0.1, 0.1), 2.2).unwrap();
        let want = 0.1 + 0.9 * (0.1f64.powf(1.0 / 2.2) - 0.1);
        assert!((out.data[0] as f64 - want).abs() < 1e-6);
        assert!((out.data[0] - 0.3260).abs() < 1e-4);
        assert!(enhance_analytic(&white, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn analytic_is_monotone_and_bounded(vals in proptest::collection::vec(0.0f32..=1.0, 12), gamma in 1.0f64..4.0) {
            let img = Tensor::from_vec(3, 2, 2, vals).unwrap();
            let out = enhance_analytic(&img, gamma).unwrap();
            for (o, i) in out.data.iter().zip(&img.data) {
                prop_assert!(*o >= *i - 1e-7);
                prop_assert!((0.0..=1.0).contains(o));
            }
        }
    }

    #[test]
    fn trainable_output_in_range_and_param_roundtrip() {
        let mut net = AttentionUNet::<f32>::new(4);
        net.init(&mut ChaCha8Rng::seed_from_u64(0));
        let img = Tensor::from_vec(3, 8, 8, (0..192).map(|i| (i % 17) as f32 / 16.0).collect()).unwrap();
        let out = net.enhance(&img).unwrap();
        assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let cfg = EnhancerConfig {
            kind: EnhancerKind::AttentionUnet,
            unet_channels: 4,
            ..Default::default()
        };
        let back = Enhancer::from_param_file(&cfg, &Enhancer::Trained(net.clone()).to_param_file()).unwrap();
        assert_eq!(back, Enhancer::Trained(net));
        let a = Enhancer::analytic(2.2);
        assert_eq!(
            Enhancer::from_param_file(&EnhancerConfig::default(), &a.to_param_file()).unwrap(),
            Enhancer::analytic(2.2f32 as f64)
        );
    }

    #[test]
    fn analytic_training_is_unsupported() {
        let s = TrainSettings {
            epochs: 1,
            batch_size: 1,
            lr: 1e-3,
            weight_decay: 0.0,
            step_size: 5,
            decay: 0.5,
            seed: 0,
        };
        assert!(matches!(
            train_enhancer(&[], &EnhancerConfig::default(), &s),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = AttentionUNet::<f64>::new(2);
        net.init(&mut ChaCha8Rng::seed_from_u64(5));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::from_vec(3, 4, 4, (0..48).map(|_| rng.random_range(0.05..0.5)).collect()).unwrap();
        let y = x.map(|v: f64| (v * 1.8).min(1.0));
        let mut g = net.clone();
        g.zero();
        net.loss_and_grad(&x, &y, &mut g).unwrap();
        let ga = g.flatten();
        let theta = net.flatten();
        let h = 1e-5;
        let mut probe = net.clone();
        let mut scratch = net.clone();
        for i in (0..theta.len()).step_by(7) {
            let mut t = theta.clone();
            t[i] = theta[i] + h;
            probe.assign_flat(&t);
            let lp = probe.loss_and_grad(&x, &y, &mut scratch).unwrap();
            t[i] = theta[i] - h;
            probe.assign_flat(&t);
            let lm = probe.loss_and_grad(&x, &y, &mut scratch).unwrap();
            let num = (lp - lm) / (2.0 * h);
            let err = (ga[i] - num).abs() / ga[i].abs().max(num.abs()).max(1e-6);
            assert!(err < 1e-3, "param {i}: analytic {} numeric {num}", ga[i]);
        }
    }
}
