use rand::Rng;

use super::conv::Conv2d;
use super::ops::{
    avg_pool2, avg_pool2_backward, concat_channels, relu_backward, relu_inplace, split_channels, upsample2,
    upsample2_backward,
};
use super::params::{ParamVisitor, ParamVisitorMut, Params};
use crate::tensor::{Real, Tensor};

/// Encoder/decoder with skip connections.
///
/// For `widths = [w0, …, w(L-1)]` the encoder runs `conv→ReLU` at each of the
/// `L` scales (2×2 average pooling between scales), a bottleneck `conv→ReLU`
/// at scale `L`, then `L` decoder stages that upsample, concatenate the
/// matching encoder output, and apply `conv→ReLU`. Decoder stage `i` outputs
/// `w(i-1)` channels (`w0` at the top), so the network output has `w0`
/// channels at input resolution. Inputs must be divisible by `2^L`.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet<T = f32> {
    pub enc: Vec<Conv2d<T>>,
    pub bottleneck: Conv2d<T>,
    pub dec: Vec<Conv2d<T>>,
}

/// Activations kept from [`UNet::forward`] for the backward pass.
pub struct UNetTrace<T> {
    enc_in: Vec<Tensor<T>>,
    enc_out: Vec<Tensor<T>>,
    bott_in: Tensor<T>,
    bott_out: Tensor<T>,
    dec_in: Vec<Tensor<T>>,
    dec_out: Vec<Tensor<T>>,
}

impl<T: Real> UNetTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.dec_out[0]
    }

    /// Sign pattern of every ReLU, used to detect kinks in finite-difference checks.
    pub fn relu_pattern(&self, out: &mut Vec<bool>) {
        for t in self.enc_out.iter().chain([&self.bott_out]).chain(&self.dec_out) {
            out.extend(t.data.iter().map(|&v| v > T::zero()));
        }
    }
}

impl<T: Real> UNet<T> {
    pub fn new(in_c: usize, widths: &[usize]) -> Self {
        assert!(!widths.is_empty());
        let l = widths.len();
        let mut enc = Vec::with_capacity(l);
        let mut prev = in_c;
        for &w in widths {
            enc.push(Conv2d::new(prev, w, 3));
            prev = w;
        }
        let bottleneck = Conv2d::new(widths[l - 1], widths[l - 1], 3);
        let mut dec = Vec::with_capacity(l);
        for i in 0..l {
            let incoming = if i == l - 1 { widths[l - 1] } else { widths[i] };
            let out = if i == 0 { widths[0] } else { widths[i - 1] };
            dec.push(Conv2d::new(incoming + widths[i], out, 3));
        }
        UNet { enc, bottleneck, dec }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        for conv in self
            .enc
            .iter_mut()
            .chain([&mut self.bottleneck])
            .chain(self.dec.iter_mut())
        {
            conv.init_uniform(rng, 6.0);
        }
    }

    pub fn levels(&self) -> usize {
        self.enc.len()
    }

    pub fn in_channels(&self) -> usize {
        self.enc[0].in_c
    }

    pub fn out_channels(&self) -> usize {
        self.dec[0].out_c
    }

    pub fn forward(&self, x: &Tensor<T>) -> UNetTrace<T> {
        let l = self.levels();
        let mut enc_in = Vec::with_capacity(l);
        let mut enc_out: Vec<Tensor<T>> = Vec::with_capacity(l);
        for (i, conv) in self.enc.iter().enumerate() {
            let input = if i == 0 { x.clone() } else { avg_pool2(&enc_out[i - 1]) };
            let mut y = conv.forward(&input);
            relu_inplace(&mut y);
            enc_in.push(input);
            enc_out.push(y);
        }
        let bott_in = avg_pool2(&enc_out[l - 1]);
        let mut bott_out = self.bottleneck.forward(&bott_in);
        relu_inplace(&mut bott_out);

        let mut dec_in: Vec<Option<Tensor<T>>> = (0..l).map(|_| None).collect();
        let mut dec_out: Vec<Option<Tensor<T>>> = (0..l).map(|_| None).collect();
        for i in (0..l).rev() {
            let cur = if i == l - 1 {
                &bott_out
            } else {
                dec_out[i + 1].as_ref().unwrap()
            };
            let input = concat_channels(&upsample2(cur), &enc_out[i]);
            let mut y = self.dec[i].forward(&input);
            relu_inplace(&mut y);
            dec_in[i] = Some(input);
            dec_out[i] = Some(y);
        }
        UNetTrace {
            enc_in,
            enc_out,
            bott_in,
            bott_out,
            dec_in: dec_in.into_iter().map(Option::unwrap).collect(),
            dec_out: dec_out.into_iter().map(Option::unwrap).collect(),
        }
    }

    /// Backpropagates `g_out` (gradient w.r.t. the network output) and
    /// accumulates parameter gradients into `grads`.
    pub fn backward(
        &self,
        trace: &UNetTrace<T>,
        g_out: Tensor<T>,
        grads: &mut UNet<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let l = self.levels();
        let mut g_enc: Vec<Option<Tensor<T>>> = (0..l).map(|_| None).collect();
        let mut g = g_out;
        for i in 0..l {
            relu_backward(&mut g, &trace.dec_out[i]);
            let g_in = self.dec[i]
                .backward(&trace.dec_in[i], &g, &mut grads.dec[i], true)
                .unwrap();
            let up_c = g_in.c - self.enc[i].out_c;
            let (g_up, g_skip) = split_channels(g_in, up_c);
            g_enc[i] = Some(g_skip);
            g = upsample2_backward(&g_up);
        }
        relu_backward(&mut g, &trace.bott_out);
        let g_bott_in = self
            .bottleneck
            .backward(&trace.bott_in, &g, &mut grads.bottleneck, true)
            .unwrap();
        g_enc[l - 1]
            .as_mut()
            .unwrap()
            .add_assign(&avg_pool2_backward(&g_bott_in));

        for i in (0..l).rev() {
            let mut gi = g_enc[i].take().unwrap();
            relu_backward(&mut gi, &trace.enc_out[i]);
            let need = i > 0 || need_input_grad;
            let g_in = self.enc[i].backward(&trace.enc_in[i], &gi, &mut grads.enc[i], need);
            if i > 0 {
                g_enc[i - 1]
                    .as_mut()
                    .unwrap()
                    .add_assign(&avg_pool2_backward(&g_in.unwrap()));
            } else {
                return g_in;
            }
        }
        unreachable!()
    }
}

impl<T: Real> Params<T> for UNet<T> {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, T>) {
        for (i, c) in self.enc.iter().enumerate() {
            c.visit(&format!("{prefix}.enc{i}"), f);
        }
        self.bottleneck.visit(&format!("{prefix}.bottleneck"), f);
        for (i, c) in self.dec.iter().enumerate() {
            c.visit(&format!("{prefix}.dec{i}"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        for (i, c) in self.enc.iter_mut().enumerate() {
            c.visit_mut(&format!("{prefix}.enc{i}"), f);
        }
        self.bottleneck.visit_mut(&format!("{prefix}.bottleneck"), f);
        for (i, c) in self.dec.iter_mut().enumerate() {
            c.visit_mut(&format!("{prefix}.dec{i}"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_and_parameter_count() {
        let net = UNet::<f32>::new(3, &[16, 32, 64]);
        let x = Tensor::zeros(3, 16, 24);
        let tr = net.forward(&x);
        assert_eq!(tr.output().shape(), (16, 16, 24));
        assert_eq!(net.dec[2].in_c, 128);
        assert_eq!(net.dec[1].out_c, 16);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = UNet::<f64>::new(2, &[3, 4]);
        net.init(&mut rng);
        let x = Tensor::from_vec(2, 4, 4, (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let probe: Vec<f64> = (0..3 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |x: &Tensor<f64>| -> f64 {
            net.forward(x)
                .output()
                .data
                .iter()
                .zip(&probe)
                .map(|(a, b)| a * b)
                .sum()
        };
        let tr = net.forward(&x);
        let mut grads = net.clone();
        grads.zero();
        let g_out = Tensor::from_vec(3, 4, 4, probe.clone()).unwrap();
        let gx = net.backward(&tr, g_out, &mut grads, true).unwrap();
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
            assert!((fd - gx.data[i]).abs() < 1e-6, "i={i}: fd {fd} vs {}", gx.data[i]);
        }
    }
}
