//! Image degradations: low light, fog and rain.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid_arg, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeatherKind {
    Clear,
    Rain,
    Fog,
    RainAndFog,
}

impl WeatherKind {
    pub const ALL: [WeatherKind; 4] = [
        WeatherKind::Clear,
        WeatherKind::Rain,
        WeatherKind::Fog,
        WeatherKind::RainAndFog,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeatherKind::Clear => "clear",
            WeatherKind::Rain => "rain",
            WeatherKind::Fog => "fog",
            WeatherKind::RainAndFog => "rain_and_fog",
        }
    }

    pub fn has_rain(self) -> bool {
        matches!(self, WeatherKind::Rain | WeatherKind::RainAndFog)
    }

    pub fn has_fog(self) -> bool {
        matches!(self, WeatherKind::Fog | WeatherKind::RainAndFog)
    }
}

impl fmt::Display for WeatherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeatherKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        WeatherKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid_arg!("unknown weather kind {s:?} (expected clear, rain, fog or rain_and_fog)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeatherTag {
    pub kind: WeatherKind,
    pub intensity: f64,
}

impl WeatherTag {
    pub fn new(kind: WeatherKind, intensity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&intensity) {
            return Err(invalid_arg!("weather intensity {intensity} outside [0, 1]"));
        }
        Ok(WeatherTag { kind, intensity })
    }

    pub fn clear() -> Self {
        WeatherTag {
            kind: WeatherKind::Clear,
            intensity: 0.0,
        }
    }

    /// Fog extinction coefficient in 1/m; spans `[0.05, 0.3]` over the intensity range.
    pub fn fog_beta(&self) -> f64 {
        if self.kind.has_fog() {
            0.05 + 0.25 * self.intensity
        } else {
            0.0
        }
    }

    pub fn rain_intensity(&self) -> f64 {
        if self.kind.has_rain() {
            self.intensity
        } else {
            0.0
        }
    }
}

/// Low-light sensor model: `clip(gain · rgb^gamma + N(0, noise_sigma²), 0, 1)`.
pub fn apply_night<R: Rng>(
    clean: &Tensor<f32>,
    gain: f64,
    gamma: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    if !(gain > 0.0 && gain <= 1.0) {
        return Err(invalid_arg!("night gain must be in (0, 1], got {gain}"));
    }
    if !(gamma >= 1.0) {
        return Err(invalid_arg!("night gamma must be >= 1, got {gamma}"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(invalid_arg!("noise sigma must be >= 0, got {noise_sigma}"));
    }
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| invalid_arg!("noise: {e}"))?;
    let mut out = clean.clone();
    for v in &mut out.data {
        let mut x = gain * (*v as f64).max(0.0).powf(gamma);
        if noise_sigma > 0.0 {
            x += noise.sample(rng);
        }
        *v = x.clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}

/// Scalar attenuation toward the airlight: `I·e^(−βd) + A·(1 − e^(−βd))`.
#[inline]
pub fn fog_pixel(intensity: f64, depth: f64, beta: f64, airlight: f64) -> f64 {
    let t = (-beta * depth).exp();
    intensity * t + airlight * (1.0 - t)
}

pub fn apply_fog(rgb: &Tensor<f32>, depth: &Tensor<f32>, beta: f64, airlight: f64) -> Result<Tensor<f32>> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid_arg!("fog beta must be >= 0, got {beta}"));
    }
    if !(0.0..=1.0).contains(&airlight) {
        return Err(invalid_arg!("airlight must be in [0, 1], got {airlight}"));
    }
    if depth.c != 1 || depth.h != rgb.h || depth.w != rgb.w {
        return Err(invalid_arg!(
            "fog depth shape {:?} does not match image {:?}",
            depth.shape(),
            rgb.shape()
        ));
    }
    if beta == 0.0 {
        return Ok(rgb.clone());
    }
    let n = rgb.plane_len();
    let mut out = rgb.clone();
    for c in 0..rgb.c {
        for i in 0..n {
            let v = out.data[c * n + i] as f64;
            out.data[c * n + i] = fog_pixel(v, depth.data[i] as f64, beta, airlight) as f32;
        }
    }
    Ok(out)
}

/// Overlays bright slanted streaks; the streak count scales with `intensity`.
pub fn apply_rain<R: Rng>(rgb: &Tensor<f32>, intensity: f64, rng: &mut R) -> Result<Tensor<f32>> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(invalid_arg!("rain intensity must be in [0, 1], got {intensity}"));
    }
    if intensity == 0.0 {
        return Ok(rgb.clone());
    }
    let (h, w) = (rgb.h, rgb.w);
    let n = rgb.plane_len();
    let streaks = (intensity * (w * h) as f64 / 80.0).round() as usize;
    let slant: f64 = rng.random_range(-0.35..0.35);
    let mut out = rgb.clone();
    let scale = (h as f64 / 64.0).max(0.25);
    for _ in 0..streaks {
        let x0: f64 = rng.random_range(0.0..w as f64);
        let y0: f64 = rng.random_range(0.0..h as f64);
        let len = (rng.random_range(3.0..8.0) * scale).round() as usize;
        let bright: f32 = rng.random_range(0.12..0.3);
        for s in 0..len {
            let y = y0 + s as f64;
            let x = x0 + slant * s as f64;
            if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
                continue;
            }
            let i = y as usize * w + x as usize;
            for c in 0..rgb.c {
                let v = &mut out.data[c * n + i];
                *v = (*v + bright).min(1.0);
            }
        }
    }
    Ok(out)
}
