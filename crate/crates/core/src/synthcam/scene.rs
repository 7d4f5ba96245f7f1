//! Analytic night-road scenes with exact depth.
//!
//! A pinhole camera (90° horizontal field of view) looks over a flat road.
//! Rows below the horizon see the ground plane, rows above see the sky (or
//! a ceiling plane in tunnels). Vehicles and pedestrians are fronto-parallel
//! rectangles or ellipses at a fixed depth that translate across the image.
//! Surfaces are lit by an ambient term plus headlights whose irradiance
//! falls off with distance.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid_arg, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SceneKind {
    City,
    Rural,
    Tunnel,
    Highway,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [SceneKind::City, SceneKind::Rural, SceneKind::Tunnel, SceneKind::Highway];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::City => "city",
            SceneKind::Rural => "rural",
            SceneKind::Tunnel => "tunnel",
            SceneKind::Highway => "highway",
        }
    }

    fn ambient(self) -> f64 {
        match self {
            SceneKind::City => 0.18,
            SceneKind::Rural => 0.04,
            SceneKind::Tunnel => 0.22,
            SceneKind::Highway => 0.08,
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid_arg!("unknown scene kind {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Rect,
    Ellipse,
}

/// A flat object at constant depth; geometry in pixels at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub cx: f64,
    pub cy: f64,
    pub half_w: f64,
    pub half_h: f64,
    /// Meters.
    pub depth: f64,
    pub albedo: [f64; 3],
    /// Pixels per second.
    pub velocity: (f64, f64),
}

impl SceneObject {
    fn covers(&self, px: f64, py: f64, time: f64) -> bool {
        let dx = px - (self.cx + self.velocity.0 * time);
        let dy = py - (self.cy + self.velocity.1 * time);
        match self.shape {
            Shape::Rect => dx.abs() <= self.half_w && dy.abs() <= self.half_h,
            Shape::Ellipse => {
                let u = dx / self.half_w;
                let v = dy / self.half_h;
                u * u + v * v <= 1.0
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// `(d_min, d_max)` in meters; sky and far ground read `d_max`.
    pub depth_range: (f64, f64),
    pub kind: SceneKind,
    /// Horizon row, in pixels from the top.
    pub horizon: f64,
    pub camera_height: f64,
    pub objects: Vec<SceneObject>,
}

const HEADLIGHT: f64 = 0.95;
const HEADLIGHT_REACH: f64 = 9.0;
const TUNNEL_CEILING: f64 = 3.5;

impl SceneSpec {
    /// A scene with no objects yet; call [`SceneSpec::validate`] after adding some.
    pub fn empty(width: usize, height: usize, depth_range: (f64, f64), kind: SceneKind) -> Self {
        SceneSpec {
            seed: 0,
            width,
            height,
            depth_range,
            kind,
            horizon: height as f64 * 0.45,
            camera_height: 1.5,
            objects: Vec::new(),
        }
    }

    /// Random road scene with `object_count` vehicles/pedestrians standing on the road.
    pub fn random(
        seed: u64,
        (width, height): (usize, usize),
        object_count: usize,
        depth_range: (f64, f64),
        kind: SceneKind,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = SceneSpec::empty(width, height, depth_range, kind);
        spec.seed = seed;
        spec.horizon = height as f64 * rng.random_range(0.38..0.5);
        let f = spec.focal();
        let (dmin, dmax) = depth_range;
        if !(dmin > 0.0 && dmin < dmax && dmax.is_finite()) {
            return Err(invalid_arg!(
                "depth range must satisfy 0 < d_min < d_max, got {depth_range:?}"
            ));
        }
        let (lo, hi) = ((dmin * 1.3).ln(), (dmax * 0.75).ln());
        if !(lo < hi) {
            return Err(invalid_arg!("depth range {depth_range:?} too narrow for objects"));
        }
        let scale = width as f64 / 64.0;
        for _ in 0..object_count {
            let depth = rng.random_range(lo..hi).exp();
            let pedestrian = rng.random_bool(0.2);
            let (wm, hm) = if pedestrian {
                (rng.random_range(0.5..0.8), rng.random_range(1.6..1.9))
            } else {
                (rng.random_range(1.6..2.6), rng.random_range(1.3..3.2))
            };
            let half_w = (0.5 * wm * f / depth).max(0.6);
            let half_h = (0.5 * hm * f / depth).max(0.6);
            let bottom = spec.horizon + spec.camera_height * f / depth;
            let albedo = if pedestrian {
                let g = rng.random_range(0.25..0.6);
                [g, g * 0.9, g * 0.8]
            } else {
                [
                    rng.random_range(0.15..1.0),
                    rng.random_range(0.15..1.0),
                    rng.random_range(0.15..1.0),
                ]
            };
            let speed = rng.random_range(8.0..48.0) * scale;
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            spec.objects.push(SceneObject {
                shape: if pedestrian || rng.random_bool(0.25) {
                    Shape::Ellipse
                } else {
                    Shape::Rect
                },
                cx: rng.random_range(0.0..width as f64),
                cy: bottom - half_h,
                half_w,
                half_h,
                depth,
                albedo,
                velocity: (dir * speed, rng.random_range(-1.0..1.0) * scale),
            });
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (dmin, dmax) = self.depth_range;
        if !(dmin > 0.0 && dmin < dmax) {
            return Err(invalid_arg!(
                "depth range must satisfy 0 < d_min < d_max, got {:?}",
                self.depth_range
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid_arg!("empty resolution"));
        }
        if self.objects.is_empty() {
            return Err(invalid_arg!("a scene needs at least one object"));
        }
        if let Some(o) = self.objects.iter().find(|o| !(o.depth >= dmin && o.depth <= dmax)) {
            return Err(invalid_arg!("object depth {} outside {:?}", o.depth, self.depth_range));
        }
        Ok(())
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    /// Focal length in pixels for a 90° horizontal field of view.
    pub fn focal(&self) -> f64 {
        self.width as f64 / 2.0
    }

    fn lighting(&self, depth: f64) -> f64 {
        let r = depth / HEADLIGHT_REACH;
        self.kind.ambient() + HEADLIGHT / (1.0 + r * r)
    }

    /// Depth and shaded color of the static background at pixel centre `(px, py)`.
    fn background(&self, px: f64, py: f64) -> (f64, [f64; 3]) {
        let (dmin, dmax) = self.depth_range;
        let f = self.focal();
        let below = py - self.horizon;
        if below > 0.0 {
            let d = (self.camera_height * f / below).clamp(dmin, dmax);
            let lateral = (px - self.width as f64 / 2.0) * d / f;
            let albedo = if (lateral.abs() < 0.12 && (d % 6.0) < 3.0) || (lateral.abs() - 3.6).abs() < 0.15 {
                0.85
            } else if lateral.abs() > 4.0 && self.kind == SceneKind::Rural {
                0.12
            } else {
                0.28
            };
            let l = self.lighting(d);
            (d, [albedo * l, albedo * l, albedo * l * 0.95])
        } else if self.kind == SceneKind::Tunnel && -below > 1.0 {
            let d = (TUNNEL_CEILING * f / -below).clamp(dmin, dmax);
            let lamp = (d % 8.0) < 0.8 && (px - self.width as f64 / 2.0).abs() * d / f < 0.6;
            let c = if lamp { 0.9 } else { 0.2 * self.lighting(d) };
            (d, [c, c * 0.85, c * 0.6])
        } else {
            let sky = 0.02 + 0.04 * (py / self.height as f64);
            (dmax, [sky * 0.6, sky * 0.7, sky])
        }
    }
}

/// Renders the clean (well-exposed, weather-free) frame and its exact depth at `time` seconds.
pub fn render_scene(spec: &SceneSpec, time: f64) -> Result<(Tensor<f32>, Tensor<f32>)> {
    spec.validate()?;
    if !(time >= 0.0) {
        return Err(invalid_arg!("render time must be non-negative, got {time}"));
    }
    let (w, h) = (spec.width, spec.height);
    let mut rgb = Tensor::zeros(3, h, w);
    let mut depth = Tensor::zeros(1, h, w);
    for y in 0..h {
        let py = y as f64 + 0.5;
        for x in 0..w {
            let px = x as f64 + 0.5;
            let (mut d, mut color) = spec.background(px, py);
            let mut nearest = f64::INFINITY;
            for o in &spec.objects {
                if o.depth < nearest && o.covers(px, py, time) {
                    nearest = o.depth;
                    let l = spec.lighting(o.depth);
                    color = [o.albedo[0] * l, o.albedo[1] * l, o.albedo[2] * l];
                }
            }
            if nearest.is_finite() {
                d = nearest;
            }
            depth.set(0, y, x, d as f32);
            for (c, v) in color.iter().enumerate() {
                rgb.set(c, y, x, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok((rgb, depth))
}

/// Rec. 601 luma of a 3-channel image.
pub fn luminance(rgb: &Tensor<f32>) -> Tensor<f32> {
    let n = rgb.plane_len();
    let mut out = Tensor::zeros(1, rgb.h, rgb.w);
    for i in 0..n {
        out.data[i] = 0.299 * rgb.data[i] + 0.587 * rgb.data[n + i] + 0.114 * rgb.data[2 * n + i];
    }
    out
}

/// `ln(eps + luminance)`, the quantity an event pixel responds to.
pub fn log_intensity(rgb: &Tensor<f32>, eps: f64) -> Tensor<f64> {
    let lum = luminance(rgb);
    Tensor {
        c: 1,
        h: lum.h,
        w: lum.w,
        data: lum.data.iter().map(|&v| (eps + v as f64).ln()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(cx: f64, cy: f64, half: f64, depth: f64) -> SceneObject {
        SceneObject {
            shape: Shape::Rect,
            cx,
            cy,
            half_w: half,
            half_h: half,
            depth,
            albedo: [0.5, 0.5, 0.5],
            velocity: (0.0, 0.0),
        }
    }

    #[test]
    fn object_depth_is_exact() {
        let mut spec = SceneSpec::empty(32, 32, (1.0, 60.0), SceneKind::City);
        spec.objects.push(rect(10.5, 10.5, 3.0, 5.0));
        let (_, depth) = render_scene(&spec, 0.0).unwrap();
        assert_eq!(depth.at(0, 10, 10), 5.0);
    }

    #[test]
    fn background_where_no_object() {
        let mut spec = SceneSpec::empty(32, 32, (1.0, 60.0), SceneKind::Rural);
        spec.objects.push(rect(3.0, 3.0, 1.0, 5.0));
        let (_, depth) = render_scene(&spec, 0.0).unwrap();
        let (bg, _) = spec.background(20.5, 28.5);
        assert_eq!(depth.at(0, 28, 20), bg as f32);
        // sky row
        assert_eq!(depth.at(0, 0, 20), 60.0);
    }

    #[test]
    fn nearer_object_occludes() {
        let mut spec = SceneSpec::empty(32, 32, (1.0, 60.0), SceneKind::City);
        spec.objects.push(rect(12.0, 12.0, 5.0, 7.0));
        spec.objects.push(rect(16.0, 16.0, 5.0, 3.0));
        let (_, depth) = render_scene(&spec, 0.0).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut want = None::<f64>;
                for o in &spec.objects {
                    if o.covers(px, py, 0.0) {
                        want = Some(want.map_or(o.depth, |w| w.min(o.depth)));
                    }
                }
                if let Some(w) = want {
                    assert_eq!(depth.at(0, y, x), w as f32);
                }
            }
        }
        assert_eq!(depth.at(0, 14, 14), 3.0);
    }

    #[test]
    fn objects_move_with_time() {
        let mut spec = SceneSpec::empty(32, 32, (1.0, 60.0), SceneKind::City);
        let mut o = rect(5.0, 5.0, 1.0, 4.0);
        o.velocity = (80.0, 0.0);
        spec.objects.push(o);
        let (_, d0) = render_scene(&spec, 0.0).unwrap();
        let (_, d1) = render_scene(&spec, 0.125).unwrap();
        assert_eq!(d0.at(0, 4, 4), 4.0);
        assert_ne!(d1.at(0, 4, 4), 4.0);
        assert_eq!(d1.at(0, 4, 14), 4.0);
    }

    #[test]
    fn random_scene_is_valid_and_deterministic() {
        for kind in SceneKind::ALL {
            let a = SceneSpec::random(11, (64, 64), 4, (2.0, 50.0), kind).unwrap();
            let b = SceneSpec::random(11, (64, 64), 4, (2.0, 50.0), kind).unwrap();
            assert_eq!(a, b);
            let (rgb, depth) = render_scene(&a, 0.1).unwrap();
            assert!(rgb.data.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(depth.data.iter().all(|&d| (2.0..=50.0).contains(&d)));
        }
    }

    #[test]
    fn invalid_specs() {
        let spec = SceneSpec::empty(8, 8, (1.0, 10.0), SceneKind::City);
        assert!(render_scene(&spec, 0.0).is_err());
        assert!(SceneSpec::random(0, (8, 8), 1, (0.0, 10.0), SceneKind::City).is_err());
        let mut ok = SceneSpec::empty(8, 8, (1.0, 10.0), SceneKind::City);
        ok.objects.push(rect(2.0, 2.0, 1.0, 2.0));
        assert!(render_scene(&ok, -1.0).is_err());
    }
}
