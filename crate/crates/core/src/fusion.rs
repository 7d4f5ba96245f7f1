//! Two-branch attention fusion of an event image and an enhanced RGB image.
//!
//! ```text
//! F_e = g(event)              5×5 conv, 3 → C
//! F_h = h(2·enhanced − 1)     3×3 conv, 3 → C
//! V   = spatial mean of F_e + F_h       (length C)
//! k   = fc·V + bias                     (length d)
//! a_c, b_c = softmax(A_c·k, B_c·k)
//! F   = a ⊙ F_e + b ⊙ F_h
//! Y   = conv(ReLU(conv(UNet(F))))       fusion image, 3 channels
//! ```
//!
//! Training minimizes `β·MSE(Y, enhanced) + (1 − β)·MSE(Y, event)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid_arg, Error, Result};
use crate::io::save_png;
use crate::nn::ops::{relu_backward, relu_inplace};
use crate::nn::params::{ParamVisitor, ParamVisitorMut};
use crate::nn::{fit, Conv2d, Params, TrainSettings, UNet, UNetTrace};
use crate::synthcam::dataset::{DatasetManifest, SampleRecord};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub channels: usize,
    pub compact_dim: usize,
    pub beta: f64,
    pub train: TrainSettings,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            channels: 32,
            compact_dim: 16,
            beta: 0.8,
            train: TrainSettings {
                epochs: 20,
                batch_size: 4,
                lr: 1e-3,
                weight_decay: 1e-3,
                step_size: 5,
                decay: 0.5,
                seed: 0,
            },
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.compact_dim == 0 {
            return Err(invalid_arg!("fusion channels and compact_dim must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid_arg!("beta must be in [0, 1], got {}", self.beta));
        }
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionNet<T = f32> {
    /// Event branch.
    pub g: Conv2d<T>,
    /// RGB branch.
    pub h: Conv2d<T>,
    /// `d × C`, row-major.
    pub fc_weight: Vec<T>,
    pub fc_bias: Vec<T>,
    /// `C × d`, row `c` is `A_c`.
    pub att_a: Vec<T>,
    pub att_b: Vec<T>,
    pub unet: UNet<T>,
    pub head1: Conv2d<T>,
    pub head2: Conv2d<T>,
}

/// Channel attention and the intermediate vectors it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<T> {
    pub v: Vec<T>,
    pub k: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
}

pub struct FusionTrace<T> {
    xe: Tensor<T>,
    xh: Tensor<T>,
    pub f_event: Tensor<T>,
    pub f_enhanced: Tensor<T>,
    pub attention: Attention<T>,
    pub fused: Tensor<T>,
    unet: UNetTrace<T>,
    hidden: Tensor<T>,
    pub image: Tensor<T>,
}

impl<T: Real> FusionTrace<T> {
    /// Sign pattern of every ReLU in the network.
    pub fn relu_pattern(&self, out: &mut Vec<bool>) {
        self.unet.relu_pattern(out);
        out.extend(self.hidden.data.iter().map(|&v| v > T::zero()));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput<T = f32> {
    pub fused_feature: Tensor<T>,
    pub fusion_image: Tensor<T>,
    pub attention_a: Vec<T>,
    pub attention_b: Vec<T>,
}

/// Maps `[0, 1]` images to `[−1, 1]`.
pub fn normalize_rgb<T: Real>(img: &Tensor<T>) -> Tensor<T> {
    let two = T::lit(2.0);
    img.map(|v| two * v - T::one())
}

/// Stable two-way softmax: returns `(a, b)` with `a + b = 1`.
pub fn two_way_softmax<T: Real>(la: T, lb: T) -> (T, T) {
    let m = la.max(lb);
    let ea = (la - m).exp();
    let eb = (lb - m).exp();
    let s = ea + eb;
    (ea / s, eb / s)
}

/// `a_c·F_e[c] + b_c·F_h[c]` per channel.
pub fn fused_features<T: Real>(fe: &Tensor<T>, fh: &Tensor<T>, a: &[T], b: &[T]) -> Result<Tensor<T>> {
    if !fe.same_shape(fh) || a.len() != fe.c || b.len() != fe.c {
        return Err(invalid_arg!("fused_features: mismatched shapes"));
    }
    let n = fe.plane_len();
    let mut out = Tensor::zeros(fe.c, fe.h, fe.w);
    for c in 0..fe.c {
        for i in c * n..(c + 1) * n {
            out.data[i] = a[c] * fe.data[i] + b[c] * fh.data[i];
        }
    }
    Ok(out)
}

/// `β·MSE(fusion, enhanced) + (1 − β)·MSE(fusion, event)`.
pub fn joint_loss<T: Real>(fusion: &Tensor<T>, enhanced: &Tensor<T>, event: &Tensor<T>, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid_arg!("beta must be in [0, 1], got {beta}"));
    }
    if !fusion.same_shape(enhanced) || !fusion.same_shape(event) {
        return Err(invalid_arg!(
            "joint loss shapes differ: {:?}, {:?}, {:?}",
            fusion.shape(),
            enhanced.shape(),
            event.shape()
        ));
    }
    Ok(beta * crate::tensor::mse(fusion, enhanced)? + (1.0 - beta) * crate::tensor::mse(fusion, event)?)
}

impl<T: Real> FusionNet<T> {
    pub fn new(channels: usize, compact_dim: usize) -> Self {
        let (c, d) = (channels, compact_dim);
        FusionNet {
            g: Conv2d::new(3, c, 5),
            h: Conv2d::new(3, c, 3),
            fc_weight: vec![T::zero(); d * c],
            fc_bias: vec![T::zero(); d],
            att_a: vec![T::zero(); c * d],
            att_b: vec![T::zero(); c * d],
            unet: UNet::new(c, &[c, 2 * c]),
            head1: Conv2d::new(c, c, 3),
            head2: Conv2d::new(c, 3, 3),
        }
    }

    pub fn channels(&self) -> usize {
        self.g.out_c
    }

    pub fn compact_dim(&self) -> usize {
        self.fc_bias.len()
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.g.init_uniform(rng, 1.0);
        self.h.init_uniform(rng, 1.0);
        let c = self.channels();
        let bound = (1.0 / c as f64).sqrt();
        for w in self.fc_weight.iter_mut().chain(self.fc_bias.iter_mut()) {
            *w = T::lit(rng.random_range(-bound..bound));
        }
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        for w in self.att_a.iter_mut().chain(self.att_b.iter_mut()) {
            *w = T::lit(normal.sample(rng));
        }
        self.unet.init(rng);
        self.head1.init_uniform(rng, 6.0);
        self.head2.init_uniform(rng, 1.0);
    }

    /// Spatial size multiple required by the U-Net.
    pub fn size_multiple(&self) -> usize {
        1 << self.unet.levels()
    }

    fn check_inputs(&self, event: &Tensor<T>, rgb: &Tensor<T>) -> Result<()> {
        if event.c != 3 || rgb.c != 3 {
            return Err(invalid_arg!(
                "fusion inputs need 3 channels, got {} and {}",
                event.c,
                rgb.c
            ));
        }
        if !event.same_shape(rgb) {
            return Err(invalid_arg!(
                "fusion inputs differ in shape: {:?} vs {:?}",
                event.shape(),
                rgb.shape()
            ));
        }
        Ok(())
    }

    /// Branch convolutions on already-normalized inputs.
    pub fn branch_transform(&self, event: &Tensor<T>, rgb: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_inputs(event, rgb)?;
        Ok((self.g.forward(event), self.h.forward(rgb)))
    }

    pub fn attention_weights(&self, fe: &Tensor<T>, fh: &Tensor<T>) -> Result<Attention<T>> {
        let (c, d) = (self.channels(), self.compact_dim());
        if !fe.same_shape(fh) || fe.c != c {
            return Err(invalid_arg!(
                "attention inputs must both have {c} channels and equal shape"
            ));
        }
        let n = fe.plane_len();
        let inv = T::lit(1.0 / n as f64);
        let v: Vec<T> = (0..c)
            .map(|ch| {
                let mut s = T::zero();
                for i in ch * n..(ch + 1) * n {
                    s += fe.data[i] + fh.data[i];
                }
                s * inv
            })
            .collect();
        let k: Vec<T> = (0..d)
            .map(|j| {
                let mut s = self.fc_bias[j];
                for ch in 0..c {
                    s += self.fc_weight[j * c + ch] * v[ch];
                }
                s
            })
            .collect();
        let mut a = Vec::with_capacity(c);
        let mut b = Vec::with_capacity(c);
        for ch in 0..c {
            let (mut la, mut lb) = (T::zero(), T::zero());
            for j in 0..d {
                la += self.att_a[ch * d + j] * k[j];
                lb += self.att_b[ch * d + j] * k[j];
            }
            let (ac, bc) = two_way_softmax(la, lb);
            a.push(ac);
            b.push(bc);
        }
        Ok(Attention { v, k, a, b })
    }

    /// Full forward pass. `event` is in `[−1, 1]`, `enhanced` in `[0, 1]`.
    pub fn forward(&self, event: &Tensor<T>, enhanced: &Tensor<T>) -> Result<FusionTrace<T>> {
        self.check_inputs(event, enhanced)?;
        let m = self.size_multiple();
        if !event.h.is_multiple_of(m) || !event.w.is_multiple_of(m) {
            return Err(invalid_arg!(
                "fusion input {}×{} is not divisible by {m}; pad to {}×{}",
                event.h,
                event.w,
                event.h.div_ceil(m) * m,
                event.w.div_ceil(m) * m
            ));
        }
        let xe = event.clone();
        let xh = normalize_rgb(enhanced);
        let (f_event, f_enhanced) = self.branch_transform(&xe, &xh)?;
        let attention = self.attention_weights(&f_event, &f_enhanced)?;
        let fused = fused_features(&f_event, &f_enhanced, &attention.a, &attention.b)?;
        let unet = self.unet.forward(&fused);
        let mut hidden = self.head1.forward(unet.output());
        relu_inplace(&mut hidden);
        let image = self.head2.forward(&hidden);
        Ok(FusionTrace {
            xe,
            xh,
            f_event,
            f_enhanced,
            attention,
            fused,
            unet,
            hidden,
            image,
        })
    }

    pub fn fuse(&self, event: &Tensor<T>, enhanced: &Tensor<T>) -> Result<FusionOutput<T>> {
        let t = self.forward(event, enhanced)?;
        Ok(FusionOutput {
            fused_feature: t.fused,
            fusion_image: t.image,
            attention_a: t.attention.a,
            attention_b: t.attention.b,
        })
    }

    /// Joint loss of one pair; accumulates parameter gradients into `grads`.
    pub fn loss_and_grad(&self, event: &Tensor<T>, enhanced: &Tensor<T>, beta: f64, grads: &mut Self) -> Result<f64> {
        let t = self.forward(event, enhanced)?;
        let loss = joint_loss(&t.image, enhanced, event, beta)?;
        let n_all = t.image.data.len() as f64;
        let (wb, we) = (T::lit(2.0 * beta / n_all), T::lit(2.0 * (1.0 - beta) / n_all));
        let mut gy = t.image.clone();
        for (j, g) in gy.data.iter_mut().enumerate() {
            let y = t.image.data[j];
            *g = wb * (y - enhanced.data[j]) + we * (y - event.data[j]);
        }
        self.backward(&t, gy, grads);
        Ok(loss)
    }

    /// Backpropagates the gradient of the fusion image.
    pub fn backward(&self, t: &FusionTrace<T>, g_image: Tensor<T>, grads: &mut Self) {
        let (c, d) = (self.channels(), self.compact_dim());
        let mut g_hidden = self
            .head2
            .backward(&t.hidden, &g_image, &mut grads.head2, true)
            .unwrap();
        relu_backward(&mut g_hidden, &t.hidden);
        let g_u = self
            .head1
            .backward(t.unet.output(), &g_hidden, &mut grads.head1, true)
            .unwrap();
        let g_fused = self.unet.backward(&t.unet, g_u, &mut grads.unet, true).unwrap();

        let n = g_fused.plane_len();
        let att = &t.attention;
        let mut g_fe = Tensor::zeros(c, g_fused.h, g_fused.w);
        let mut g_fh = Tensor::zeros(c, g_fused.h, g_fused.w);
        let mut g_la = vec![T::zero(); c];
        for ch in 0..c {
            let (mut ga, mut gb) = (T::zero(), T::zero());
            for i in ch * n..(ch + 1) * n {
                let g = g_fused.data[i];
                ga += g * t.f_event.data[i];
                gb += g * t.f_enhanced.data[i];
                g_fe.data[i] = att.a[ch] * g;
                g_fh.data[i] = att.b[ch] * g;
            }
            g_la[ch] = (ga - gb) * att.a[ch] * att.b[ch];
        }
        // logits: la = A_c·k, lb = B_c·k, with ∂/∂lb = −∂/∂la
        let mut g_k = vec![T::zero(); d];
        for ch in 0..c {
            for j in 0..d {
                grads.att_a[ch * d + j] += g_la[ch] * att.k[j];
                grads.att_b[ch * d + j] -= g_la[ch] * att.k[j];
                g_k[j] += g_la[ch] * (self.att_a[ch * d + j] - self.att_b[ch * d + j]);
            }
        }
        let mut g_v = vec![T::zero(); c];
        for j in 0..d {
            grads.fc_bias[j] += g_k[j];
            for ch in 0..c {
                grads.fc_weight[j * c + ch] += g_k[j] * att.v[ch];
                g_v[ch] += self.fc_weight[j * c + ch] * g_k[j];
            }
        }
        let inv = T::lit(1.0 / n as f64);
        for ch in 0..c {
            let gs = g_v[ch] * inv;
            for i in ch * n..(ch + 1) * n {
                g_fe.data[i] += gs;
                g_fh.data[i] += gs;
            }
        }
        self.g.backward(&t.xe, &g_fe, &mut grads.g, false);
        self.h.backward(&t.xh, &g_fh, &mut grads.h, false);
    }
}

impl<T: Real> Params<T> for FusionNet<T> {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, T>) {
        let (c, d) = (self.channels(), self.compact_dim());
        self.g.visit(&format!("{prefix}.g"), f);
        self.h.visit(&format!("{prefix}.h"), f);
        f(&format!("{prefix}.fc.weight"), &[d, c], &self.fc_weight);
        f(&format!("{prefix}.fc.bias"), &[d], &self.fc_bias);
        f(&format!("{prefix}.attention.a"), &[c, d], &self.att_a);
        f(&format!("{prefix}.attention.b"), &[c, d], &self.att_b);
        self.unet.visit(&format!("{prefix}.unet"), f);
        self.head1.visit(&format!("{prefix}.head1"), f);
        self.head2.visit(&format!("{prefix}.head2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        self.g.visit_mut(&format!("{prefix}.g"), f);
        self.h.visit_mut(&format!("{prefix}.h"), f);
        f(&format!("{prefix}.fc.weight"), &mut self.fc_weight);
        f(&format!("{prefix}.fc.bias"), &mut self.fc_bias);
        f(&format!("{prefix}.attention.a"), &mut self.att_a);
        f(&format!("{prefix}.attention.b"), &mut self.att_b);
        self.unet.visit_mut(&format!("{prefix}.unet"), f);
        self.head1.visit_mut(&format!("{prefix}.head1"), f);
        self.head2.visit_mut(&format!("{prefix}.head2"), f);
    }
}

/// One training pair: auxiliary image in `[−1, 1]` (event branch) and primary image in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct FusionPair {
    pub event: Tensor<f32>,
    pub enhanced: Tensor<f32>,
}

pub fn train_fusion(pairs: &[FusionPair], config: &FusionConfig) -> Result<(FusionNet<f32>, Vec<f64>)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(invalid_arg!("fusion training split is empty"));
    }
    let mut net = FusionNet::new(config.channels, config.compact_dim);
    net.init(&mut crate::seed::rng_for(config.train.seed, "fusion-init"));
    let history = fit(&mut net, pairs.len(), &config.train, |p, i, g| {
        p.loss_and_grad(&pairs[i].event, &pairs[i].enhanced, config.beta, g)
    })?;
    Ok((net, history))
}

/// Fusion image clamped to `[0, 1]`, the stored form.
pub fn fusion_image(net: &FusionNet<f32>, pair: &FusionPair) -> Result<Tensor<f32>> {
    Ok(net
        .fuse(&pair.event, &pair.enhanced)?
        .fusion_image
        .map(|v| v.clamp(0.0, 1.0)))
}

pub fn fusion_file_name(tag: &str) -> String {
    format!("fusion-{tag}.png")
}

pub fn fusion_extra_key(tag: &str) -> String {
    format!("fusion.{tag}")
}

/// Writes `fusion-<tag>.png` into every sample directory and records it in the manifest.
///
/// `pair_for` builds the network inputs of one sample. Failures are collected
/// and reported together with the offending sample ids.
pub fn export_fusion_images<F>(
    net: &FusionNet<f32>,
    root: &Path,
    manifest: &mut DatasetManifest,
    tag: &str,
    pair_for: F,
) -> Result<usize>
where
    F: Fn(&SampleRecord) -> Result<FusionPair> + Sync + Send,
{
    let file = fusion_file_name(tag);
    let records = &manifest.records;
    let results = crate::parallel::map_indexed(records.len(), |i| -> Result<()> {
        let r = &records[i];
        let img = fusion_image(net, &pair_for(r)?)?;
        save_png(&DatasetManifest::sample_dir(root, &r.id).join(&file), &img)
    });
    let mut failures = BTreeMap::new();
    for (r, res) in manifest.records.iter_mut().zip(results) {
        match res {
            Ok(()) => {
                r.extras.insert(fusion_extra_key(tag), file.clone());
            }
            Err(e) => {
                failures.insert(r.id.clone(), e.to_string());
            }
        }
    }
    if !failures.is_empty() {
        let list: Vec<String> = failures.iter().map(|(id, e)| format!("{id}: {e}")).collect();
        return Err(Error::InvalidData(format!(
            "fusion export failed for {} sample(s): {}",
            list.len(),
            list.join("; ")
        )));
    }
    Ok(manifest.records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    fn net(seed: u64, c: usize, d: usize) -> FusionNet<f64> {
        let mut n = FusionNet::new(c, d);
        n.init(&mut ChaCha8Rng::seed_from_u64(seed));
        n
    }

    #[test]
    fn softmax_examples() {
        let (a, b) = two_way_softmax(0.3f64, 0.3);
        assert_eq!((a, b), (0.5, 0.5));
        let (a, _) = two_way_softmax(20.0f64, 0.0);
        assert!((a - 1.0 / (1.0 + (-20.0f64).exp())).abs() < 1e-15);
        assert!((a - 1.0).abs() < 1e-8);
        let (a, b) = two_way_softmax(1000.0f64, -1000.0);
        assert!(a.is_finite() && b.is_finite());
    }

    #[test]
    fn equal_attention_vectors_give_half() {
        let mut n = net(1, 4, 3);
        n.att_b = n.att_a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fe = random(&mut rng, 4, 8, 8, -1.0, 1.0);
        let fh = random(&mut rng, 4, 8, 8, -1.0, 1.0);
        let att = n.attention_weights(&fe, &fh).unwrap();
        assert!(att.a.iter().chain(&att.b).all(|&v| v == 0.5));
    }

    #[test]
    fn forced_attention_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fe = random(&mut rng, 4, 4, 4, -1.0, 1.0);
        let fh = random(&mut rng, 4, 4, 4, -1.0, 1.0);
        assert_eq!(fused_features(&fe, &fh, &[1.0; 4], &[0.0; 4]).unwrap(), fe);
        assert_eq!(fused_features(&fe, &fe, &[0.5; 4], &[0.5; 4]).unwrap(), fe);
    }

    #[test]
    fn zero_inputs_and_biases_give_zero_features() {
        let mut n = net(4, 4, 3);
        n.g.bias.fill(0.0);
        n.h.bias.fill(0.0);
        let z = Tensor::<f64>::zeros(3, 8, 8);
        let (fe, fh) = n.branch_transform(&z, &z).unwrap();
        assert!(fe.data.iter().chain(&fh.data).all(|&v| v == 0.0));
    }

    #[test]
    fn output_resolution_and_errors() {
        let n = net(5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e = random(&mut rng, 3, 16, 16, -1.0, 1.0);
        let h = random(&mut rng, 3, 16, 16, 0.0, 1.0);
        let out = n.fuse(&e, &h).unwrap();
        assert_eq!(out.fusion_image.shape(), (3, 16, 16));
        assert_eq!(out.fused_feature.shape(), (4, 16, 16));
        let odd = random(&mut rng, 3, 10, 10, 0.0, 1.0);
        let err = n.fuse(&odd, &odd).unwrap_err().to_string();
        assert!(err.contains("12×12"), "{err}");
        assert!(n.fuse(&e, &odd).is_err());
    }

    #[test]
    fn joint_loss_examples() {
        let a = Tensor::filled(3, 2, 2, 0.5f64);
        assert_eq!(joint_loss(&a, &a, &a, 0.8).unwrap(), 0.0);
        let ones = Tensor::filled(3, 2, 2, 1.0f64);
        let zeros = Tensor::zeros(3, 2, 2);
        // MSE(fusion, enhanced) = 1, MSE(fusion, event) = 0
        assert!((joint_loss(&ones, &zeros, &ones, 0.8).unwrap() - 0.8).abs() < 1e-15);
        assert!(joint_loss(&ones, &zeros, &ones, 1.2).is_err());
        assert!(joint_loss(&ones, &Tensor::zeros(3, 2, 3), &ones, 0.5).is_err());
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let n = net(7, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fe = random(&mut rng, 4, 4, 4, -1.0, 1.0);
        let fh = random(&mut rng, 4, 4, 4, -1.0, 1.0);
        let perm = [2usize, 0, 3, 1];
        let permute = |t: &Tensor<f64>| {
            let mut out = t.clone();
            for (to, &from) in perm.iter().enumerate() {
                out.channel_mut(to).copy_from_slice(t.channel(from));
            }
            out
        };
        let (c, d) = (4, 3);
        let mut p = n.clone();
        for (to, &from) in perm.iter().enumerate() {
            for j in 0..d {
                p.att_a[to * d + j] = n.att_a[from * d + j];
                p.att_b[to * d + j] = n.att_b[from * d + j];
                p.fc_weight[j * c + to] = n.fc_weight[j * c + from];
            }
        }
        let base = n.attention_weights(&fe, &fh).unwrap();
        let moved = p.attention_weights(&permute(&fe), &permute(&fh)).unwrap();
        for (to, &from) in perm.iter().enumerate() {
            assert!((moved.a[to] - base.a[from]).abs() < 1e-12);
            assert!((moved.b[to] - base.b[from]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let n = net(9, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let e = random(&mut rng, 3, 8, 8, -1.0, 1.0);
        let h = random(&mut rng, 3, 8, 8, 0.0, 1.0);
        let mut g = n.clone();
        g.zero();
        n.loss_and_grad(&e, &h, 0.8, &mut g).unwrap();
        let ga = g.flatten();
        let theta = n.flatten();
        let mut probe = n.clone();
        let eval = |p: &FusionNet<f64>| {
            let t = p.forward(&e, &h).unwrap();
            let mut pat = Vec::new();
            t.relu_pattern(&mut pat);
            (joint_loss(&t.image, &h, &e, 0.8).unwrap(), pat)
        };
        let step = 1e-5;
        let mut checked = 0;
        for i in (0..theta.len()).step_by(11) {
            let mut t = theta.clone();
            t[i] += step;
            probe.assign_flat(&t);
            let (lp, pp) = eval(&probe);
            t[i] = theta[i] - step;
            probe.assign_flat(&t);
            let (lm, pm) = eval(&probe);
            if pp != pm {
                continue;
            }
            let num = (lp - lm) / (2.0 * step);
            let err = (ga[i] - num).abs() / ga[i].abs().max(num.abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: analytic {} numeric {num}", ga[i]);
            checked += 1;
        }
        assert!(checked > 100);
    }
}
