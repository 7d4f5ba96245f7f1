//! Browser bindings for the synthetic night-scene demo.
//!
//! Every image accessor returns row-major RGBA bytes of `width() × height()`.

use wasm_bindgen::prelude::*;

use even_core::enhance::{attention_map, enhance_analytic};
use even_core::evaluate::sobel_image;
use even_core::events::EventFrame;
use even_core::synthcam::{generate_sample, DatasetConfig, GeneratedSample, WeatherKind};
use even_core::Tensor;

fn js_err(e: even_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 1- or 3-channel image in `[0, 1]` to RGBA.
pub fn tensor_rgba(img: &Tensor<f32>) -> Vec<u8> {
    let n = img.h * img.w;
    let mut out = Vec::with_capacity(4 * n);
    for i in 0..n {
        for c in 0..3 {
            let ch = if img.c == 1 { 0 } else { c };
            out.push(to_byte(img.data[ch * n + i] as f64));
        }
        out.push(255);
    }
    out
}

/// Diverging colouring: positive (ON) red, negative (OFF) blue, zero black.
pub fn event_rgba(frame: &EventFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * frame.data.len());
    for &v in &frame.data {
        let m = to_byte((v.abs() as f64).sqrt());
        let (r, b) = if v > 0.0 { (m, m / 4) } else { (m / 4, m) };
        out.extend_from_slice(&[r, m / 5, b, 255]);
    }
    out
}

/// Inverse-log depth colouring: near is bright.
pub fn depth_rgba(depth: &Tensor<f32>, (dmin, dmax): (f64, f64)) -> Vec<u8> {
    let (lo, hi) = (dmin.ln(), dmax.ln());
    let mut out = Vec::with_capacity(4 * depth.data.len());
    for &d in &depth.data {
        let t = 1.0 - ((d as f64).max(dmin).ln() - lo) / (hi - lo);
        out.extend_from_slice(&[to_byte(t), to_byte(t * t * 0.8), to_byte(0.3 * (1.0 - t)), 255]);
    }
    out
}

fn parse_weather(name: &str) -> Result<WeatherKind, JsError> {
    WeatherKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| JsError::new(&format!("unknown weather {name:?}")))
}

/// One rendered scene with its night frame and events.
#[wasm_bindgen]
pub struct Demo {
    sample: GeneratedSample,
    depth_range: (f64, f64),
}

#[wasm_bindgen]
impl Demo {
    /// Renders scene `seed` at `size × size` under `weather`, with event threshold `threshold`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: u32, weather: &str, threshold: f64) -> Result<Demo, JsError> {
        let config = DatasetConfig {
            samples: 1,
            width: size as usize,
            height: size as usize,
            weather_mix: vec![(parse_weather(weather)?, 1.0)],
            seed: seed as u64,
            threshold,
            ..DatasetConfig::default()
        };
        config.validate().map_err(js_err)?;
        let sample = generate_sample(&config, 0).map_err(js_err)?;
        Ok(Demo {
            sample,
            depth_range: config.depth_range,
        })
    }

    pub fn width(&self) -> u32 {
        self.sample.rgb.w as u32
    }

    pub fn height(&self) -> u32 {
        self.sample.rgb.h as u32
    }

    pub fn scene(&self) -> String {
        self.sample.spec.kind.name().to_string()
    }

    pub fn weather_intensity(&self) -> f64 {
        self.sample.weather.intensity
    }

    pub fn event_count(&self) -> f64 {
        self.sample.event_frame.event_count() as f64
    }

    pub fn night_rgba(&self) -> Vec<u8> {
        tensor_rgba(&self.sample.rgb)
    }

    pub fn clean_rgba(&self) -> Vec<u8> {
        tensor_rgba(&self.sample.clean)
    }

    pub fn depth_rgba(&self) -> Vec<u8> {
        depth_rgba(&self.sample.depth, self.depth_range)
    }

    pub fn events_rgba(&self) -> Vec<u8> {
        event_rgba(&self.sample.event_frame)
    }

    /// Attention-gated gamma lift of the night frame.
    pub fn enhanced_rgba(&self, gamma_target: f64) -> Result<Vec<u8>, JsError> {
        Ok(tensor_rgba(
            &enhance_analytic(&self.sample.rgb, gamma_target).map_err(js_err)?,
        ))
    }

    pub fn attention_rgba(&self) -> Result<Vec<u8>, JsError> {
        Ok(tensor_rgba(&attention_map(&self.sample.rgb).map_err(js_err)?))
    }

    /// Sobel edges of the enhanced frame, the non-event edge cue.
    pub fn sobel_rgba(&self, gamma_target: f64) -> Result<Vec<u8>, JsError> {
        let enh = enhance_analytic(&self.sample.rgb, gamma_target).map_err(js_err)?;
        Ok(tensor_rgba(&sobel_image(&enh)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panels_have_rgba_size() {
        let d = Demo::new(3, 32, "rain", 0.4).unwrap_or_else(|_| panic!("demo"));
        let n = 4 * 32 * 32;
        assert_eq!(d.night_rgba().len(), n);
        assert_eq!(d.clean_rgba().len(), n);
        assert_eq!(d.depth_rgba().len(), n);
        assert_eq!(d.events_rgba().len(), n);
        assert_eq!(d.enhanced_rgba(2.2).unwrap_or_default().len(), n);
        assert_eq!(d.sobel_rgba(2.2).unwrap_or_default().len(), n);
        assert!(d.night_rgba().chunks(4).all(|p| p[3] == 255));
    }

    #[test]
    fn enhancement_brightens_night_frame() {
        let d = Demo::new(1, 32, "clear", 0.4).unwrap_or_else(|_| panic!("demo"));
        let sum = |v: Vec<u8>| {
            v.chunks(4)
                .map(|p| p[0] as u64 + p[1] as u64 + p[2] as u64)
                .sum::<u64>()
        };
        assert!(sum(d.enhanced_rgba(2.2).unwrap_or_default()) >= sum(d.night_rgba()));
    }

    #[test]
    fn higher_threshold_fewer_events() {
        let lo = Demo::new(5, 32, "clear", 0.2).unwrap_or_else(|_| panic!("demo"));
        let hi = Demo::new(5, 32, "clear", 0.8).unwrap_or_else(|_| panic!("demo"));
        assert!(hi.event_count() <= lo.event_count());
    }

    #[test]
    fn event_colours() {
        let frame =
            even_core::events::stack_events(&even_core::events::EventStream::empty((2, 1), 0.0, 1.0).unwrap(), 1.0)
                .unwrap()
                .swap_remove(0);
        assert_eq!(event_rgba(&frame), vec![0, 0, 0, 255, 0, 0, 0, 255]);
    }
}
