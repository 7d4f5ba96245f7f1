use crate::nn::params::Params;
use crate::tensor::Real;

/// Adam with decoupled weight decay: `θ ← θ − lr·(m̂/(√v̂ + ε) + λ·θ)`.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr`; `grads` has the same layout as `params`.
    pub fn step<T: Real, P: Params<T>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let g = grads.flatten();
        if self.m.is_empty() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
        }
        assert_eq!(self.m.len(), g.len(), "optimizer state does not match parameters");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut off = 0;
        params.visit_mut("", &mut |_, theta| {
            for (j, p) in theta.iter_mut().enumerate() {
                let i = off + j;
                let gi = g[i].as_f64();
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let pv = p.as_f64();
                *p = T::lit(pv - lr * (mhat / (vhat.sqrt() + eps) + wd * pv));
            }
            off += theta.len();
        });
    }
}

/// Multiplies the base rate by `gamma` every `step_size` epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLr {
    pub base: f64,
    pub step_size: usize,
    pub gamma: f64,
}

impl StepLr {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = epoch.checked_div(self.step_size).unwrap_or(0);
        self.base * self.gamma.powi(k as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv::Conv2d;

    #[test]
    fn first_step_moves_by_lr_in_gradient_sign() {
        let mut p = Conv2d::<f64>::new(1, 1, 1);
        p.weight[0] = 0.5;
        let mut g = p.clone();
        g.weight[0] = 3.0;
        g.bias[0] = -0.1;
        let mut opt = AdamW::new(0.0);
        opt.step(&mut p, &g, 0.01);
        assert!((p.weight[0] - 0.49).abs() < 1e-9);
        assert!((p.bias[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut p = Conv2d::<f64>::new(1, 1, 1);
        p.weight[0] = 2.0;
        let g = Conv2d::<f64>::new(1, 1, 1);
        let mut opt = AdamW::new(0.1);
        opt.step(&mut p, &g, 0.5);
        // zero gradient: only the decay term acts
        assert!((p.weight[0] - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn step_schedule_halves_every_five_epochs() {
        let s = StepLr {
            base: 1e-3,
            step_size: 5,
            gamma: 0.5,
        };
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(4), 1e-3);
        assert_eq!(s.lr_at(5), 5e-4);
        assert_eq!(s.lr_at(12), 2.5e-4);
    }
}
