//! Parameter-free layers and their adjoints.

use crate::tensor::{Real, Tensor};

pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `g` by the ReLU output `out` (gradient passes where `out > 0`).
pub fn relu_backward<T: Real>(g: &mut Tensor<T>, out: &Tensor<T>) {
    for (gv, &o) in g.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *gv = T::zero();
        }
    }
}

/// 2×2 average pooling; `h` and `w` must be even.
pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    debug_assert!(x.h.is_multiple_of(2) && x.w.is_multiple_of(2));
    let (h2, w2) = (x.h / 2, x.w / 2);
    let q = T::lit(0.25);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h2 {
            let r0 = 2 * y * x.w;
            let r1 = r0 + x.w;
            for xx in 0..w2 {
                let s = src[r0 + 2 * xx] + src[r0 + 2 * xx + 1] + src[r1 + 2 * xx] + src[r1 + 2 * xx + 1];
                dst[y * w2 + xx] = s * q;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let mut up = upsample2(g);
    let q = T::lit(0.25);
    for v in &mut up.data {
        *v *= q;
    }
    up
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h2 {
            let sr = (y / 2) * x.w;
            for xx in 0..w2 {
                dst[y * w2 + xx] = src[sr + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (g.h / 2, g.w / 2);
    let mut out = Tensor::zeros(g.c, h2, w2);
    for c in 0..g.c {
        let src = g.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..g.h {
            let dr = (y / 2) * w2;
            for xx in 0..g.w {
                dst[dr + xx / 2] += src[y * g.w + xx];
            }
        }
    }
    out
}

pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert!(a.h == b.h && a.w == b.w, "concat spatial mismatch");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

pub fn split_channels<T: Real>(g: Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let n = first * g.plane_len();
    let mut data = g.data;
    let tail = data.split_off(n);
    (
        Tensor {
            c: first,
            h: g.h,
            w: g.w,
            data,
        },
        Tensor {
            c: g.c - first,
            h: g.h,
            w: g.w,
            data: tail,
        },
    )
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap()
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        let x = ramp(2, 4, 6);
        let g = ramp(2, 2, 3).map(|v| v.sin());
        assert!((dot(&avg_pool2(&x), &g) - dot(&x, &avg_pool2_backward(&g))).abs() < 1e-9);
        let y = ramp(2, 4, 6).map(|v| v.cos());
        assert!((dot(&upsample2(&g), &y) - dot(&g, &upsample2_backward(&y))).abs() < 1e-9);
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = ramp(2, 3, 3);
        let b = ramp(3, 3, 3).map(|v| -v);
        let (a2, b2) = split_channels(concat_channels(&a, &b), 2);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!((softplus(1000.0f64) - 1000.0).abs() < 1e-9);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((sigmoid(-800.0f64)).is_finite());
    }
}
