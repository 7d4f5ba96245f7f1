use rand::Rng;

use crate::nn::params::{ParamVisitor, ParamVisitorMut, Params};
use crate::tensor::{Real, Tensor};

/// Stride-1 2-D convolution with "same" zero padding and an odd square kernel.
///
/// Weights are stored `[out_c][in_c][k][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T = f32> {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_c: usize, out_c: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        Conv2d {
            in_c,
            out_c,
            k,
            weight: vec![T::zero(); out_c * in_c * k * k],
            bias: vec![T::zero(); out_c],
        }
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.in_c * self.k * self.k
    }

    /// Uniform in `±sqrt(gain / fan_in)` for weights, `±1/sqrt(fan_in)` for biases.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R, gain: f64) {
        let fan_in = self.fan_in() as f64;
        let wb = (gain / fan_in).sqrt();
        let bb = 1.0 / fan_in.sqrt();
        for w in &mut self.weight {
            *w = T::lit(rng.random_range(-wb..wb));
        }
        for b in &mut self.bias {
            *b = T::lit(rng.random_range(-bb..bb));
        }
    }

    #[inline]
    pub fn w_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_c + i) * self.k + ky) * self.k + kx
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let hw = x.plane_len();
        let kk = self.fan_in();
        let cols_buf;
        let cols: &[T] = if self.k == 1 {
            &x.data
        } else {
            cols_buf = im2col(x, self.k);
            &cols_buf
        };
        let mut y = Tensor::zeros(self.out_c, x.h, x.w);
        for (o, row) in y.data.chunks_mut(hw).enumerate() {
            row.fill(self.bias[o]);
        }
        T::gemm(
            self.out_c,
            kk,
            hw,
            T::one(),
            &self.weight,
            kk as isize,
            1,
            cols,
            hw as isize,
            1,
            T::one(),
            &mut y.data,
            hw as isize,
            1,
        );
        y
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient when asked.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        gy: &Tensor<T>,
        grad: &mut Conv2d<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        assert_eq!(gy.c, self.out_c);
        let hw = x.plane_len();
        let kk = self.fan_in();
        let cols_buf;
        let cols: &[T] = if self.k == 1 {
            &x.data
        } else {
            cols_buf = im2col(x, self.k);
            &cols_buf
        };
        // dW += gy · colsᵀ
        T::gemm(
            self.out_c,
            hw,
            kk,
            T::one(),
            &gy.data,
            hw as isize,
            1,
            cols,
            1,
            hw as isize,
            T::one(),
            &mut grad.weight,
            kk as isize,
            1,
        );
        for (o, row) in gy.data.chunks(hw).enumerate() {
            let mut s = T::zero();
            for &v in row {
                s += v;
            }
            grad.bias[o] += s;
        }
        if !need_input_grad {
            return None;
        }
        // dcols = Wᵀ · gy
        let mut gcols = vec![T::zero(); kk * hw];
        T::gemm(
            kk,
            self.out_c,
            hw,
            T::one(),
            &self.weight,
            1,
            kk as isize,
            &gy.data,
            hw as isize,
            1,
            T::zero(),
            &mut gcols,
            hw as isize,
            1,
        );
        if self.k == 1 {
            return Some(Tensor {
                c: x.c,
                h: x.h,
                w: x.w,
                data: gcols,
            });
        }
        Some(col2im(&gcols, x.c, x.h, x.w, self.k))
    }
}

impl<T: Real> Params<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, T>) {
        f(
            &format!("{prefix}.weight"),
            &[self.out_c, self.in_c, self.k, self.k],
            &self.weight,
        );
        f(&format!("{prefix}.bias"), &[self.out_c], &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Unfolds `x` into a `(c·k·k) × (h·w)` patch matrix with zero padding.
pub fn im2col<T: Real>(x: &Tensor<T>, k: usize) -> Vec<T> {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let p = (k / 2) as isize;
    let mut cols = vec![T::zero(); x.c * k * k * hw];
    let mut r = 0;
    for c in 0..x.c {
        let plane = x.channel(c);
        for ky in 0..k {
            let dy = ky as isize - p;
            for kx in 0..k {
                let dx = kx as isize - p;
                let row = &mut cols[r * hw..(r + 1) * hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let src = sy as usize * w;
                    let dst = y * w;
                    let s0 = (x_lo as isize + dx) as usize;
                    row[dst + x_lo..dst + x_hi].copy_from_slice(&plane[src + s0..src + s0 + (x_hi - x_lo)]);
                }
                r += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Tensor<T> {
    let hw = h * w;
    let p = (k / 2) as isize;
    let mut out = Tensor::zeros(c, h, w);
    let mut r = 0;
    for ch in 0..c {
        let plane = out.channel_mut(ch);
        for ky in 0..k {
            let dy = ky as isize - p;
            for kx in 0..k {
                let dx = kx as isize - p;
                let row = &cols[r * hw..(r + 1) * hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let src = y * w;
                    let dst = sy as usize * w;
                    let d0 = (x_lo as isize + dx) as usize;
                    for (d, &v) in plane[dst + d0..dst + d0 + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&row[src + x_lo..src + x_hi])
                    {
                        *d += v;
                    }
                }
                r += 1;
            }
        }
    }
    out
}

/// Direct sliding-window convolution, used as an independent reference in tests.
pub fn conv2d_naive(x: &Tensor<f64>, conv: &Conv2d<f64>) -> Tensor<f64> {
    let p = (conv.k / 2) as isize;
    let mut y = Tensor::zeros(conv.out_c, x.h, x.w);
    for o in 0..conv.out_c {
        for yy in 0..x.h as isize {
            for xx in 0..x.w as isize {
                let mut acc = conv.bias[o];
                for i in 0..conv.in_c {
                    for ky in 0..conv.k as isize {
                        for kx in 0..conv.k as isize {
                            let sy = yy + ky - p;
                            let sx = xx + kx - p;
                            if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                continue;
                            }
                            acc += conv.weight[conv.w_index(o, i, ky as usize, kx as usize)]
                                * x.at(i, sy as usize, sx as usize);
                        }
                    }
                }
                y.set(o, yy as usize, xx as usize, acc);
            }
        }
    }
    y
}
