//! Depth metrics, the Sobel edge baseline, report formats and the weather folds.
//!
//! Metrics are pooled over every valid pixel of the evaluated set:
//!
//! | metric  | definition                                   |
//! |---------|----------------------------------------------|
//! | abs_rel | mean(\|p − g\| / g)                          |
//! | sq_rel  | mean((p − g)² / g)                           |
//! | rmse    | sqrt(mean((p − g)²))                         |
//! | log10   | mean(\|log10 p − log10 g\|)                  |
//! | a_i     | fraction with max(p/g, g/p) < 1.25^i         |

use std::fmt::Write as _;

use crate::depth::valid_mask;
use crate::error::{invalid_arg, Error, Result};
use crate::synthcam::dataset::DatasetManifest;
use crate::synthcam::weather::WeatherKind;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub log10: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub n_pixels: u64,
}

impl MetricsReport {
    pub fn values(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.log10,
            self.alpha1,
            self.alpha2,
            self.alpha3,
        ]
    }

    pub fn alphas_monotone(&self) -> bool {
        self.alpha1 <= self.alpha2 && self.alpha2 <= self.alpha3
    }
}

pub const METRIC_NAMES: [&str; 7] = ["abs_rel", "sq_rel", "rmse", "log10", "a1", "a2", "a3"];

const THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

/// Running sums for pooled metrics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsAccumulator {
    n: u64,
    abs_rel: f64,
    sq_rel: f64,
    sq: f64,
    log10: f64,
    hits: [u64; 3],
}

impl MetricsAccumulator {
    pub fn add_pixel(&mut self, p: f64, g: f64) {
        let d = p - g;
        self.n += 1;
        self.abs_rel += d.abs() / g;
        self.sq_rel += d * d / g;
        self.sq += d * d;
        self.log10 += (p.log10() - g.log10()).abs();
        let ratio = (p / g).max(g / p);
        for (h, t) in self.hits.iter_mut().zip(THRESHOLDS) {
            if ratio < t {
                *h += 1;
            }
        }
    }

    /// Adds every valid pixel of one prediction/ground-truth pair.
    pub fn add_map<T: Real>(&mut self, pred: &Tensor<T>, gt: &Tensor<T>, depth_range: (f64, f64)) -> Result<()> {
        if !pred.same_shape(gt) {
            return Err(invalid_arg!(
                "metric shapes differ: {:?} vs {:?}",
                pred.shape(),
                gt.shape()
            ));
        }
        for ((&p, &g), m) in pred.data.iter().zip(&gt.data).zip(valid_mask(gt, depth_range)) {
            if !m {
                continue;
            }
            let (p, g) = (p.as_f64(), g.as_f64());
            if !(g > 0.0) {
                return Err(invalid_arg!("ground truth must be positive on valid pixels"));
            }
            if !(p > 0.0) {
                return Err(invalid_arg!("predicted depth must be positive, got {p}"));
            }
            self.add_pixel(p, g);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        self.n += other.n;
        self.abs_rel += other.abs_rel;
        self.sq_rel += other.sq_rel;
        self.sq += other.sq;
        self.log10 += other.log10;
        for (a, b) in self.hits.iter_mut().zip(other.hits) {
            *a += b;
        }
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.n == 0 {
            return Err(invalid_arg!("no valid pixels to evaluate"));
        }
        let n = self.n as f64;
        Ok(MetricsReport {
            abs_rel: self.abs_rel / n,
            sq_rel: self.sq_rel / n,
            rmse: (self.sq / n).sqrt(),
            log10: self.log10 / n,
            alpha1: self.hits[0] as f64 / n,
            alpha2: self.hits[1] as f64 / n,
            alpha3: self.hits[2] as f64 / n,
            n_pixels: self.n,
        })
    }
}

pub fn compute_metrics<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, depth_range: (f64, f64)) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::default();
    acc.add_map(pred, gt, depth_range)?;
    acc.finish()
}

/// Unnormalized Sobel gradient magnitude of the channel-mean image, replicate padding.
pub fn sobel_magnitude<T: Real>(rgb: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (rgb.h, rgb.w);
    let n = rgb.plane_len();
    let inv = T::lit(1.0 / rgb.c as f64);
    let gray: Vec<T> = (0..n)
        .map(|i| {
            let mut s = T::zero();
            for c in 0..rgb.c {
                s += rgb.data[c * n + i];
            }
            s * inv
        })
        .collect();
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        gray[y * w + x]
    };
    let two = T::lit(2.0);
    let mut out = Tensor::zeros(1, h, w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + two * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + two * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + two * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + two * at(y - 1, x) + at(y - 1, x + 1));
            out.data[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Sobel edge image: magnitude, divided by its maximum, replicated to 3 channels.
pub fn sobel_image<T: Real>(rgb: &Tensor<T>) -> Tensor<T> {
    let mag = sobel_magnitude(rgb);
    let max = mag.max_abs();
    let norm = if max > T::zero() { mag.map(|v| v / max) } else { mag };
    norm.replicate_channels(3)
}

/// Aligned human-readable table, one row per input.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(5);
    let mut s = format!("{:<width$}", "input");
    for name in METRIC_NAMES {
        let _ = write!(s, " {name:>8}");
    }
    s.push_str("   pixels\n");
    for (kind, r) in rows {
        let _ = write!(s, "{kind:<width$}");
        for v in r.values() {
            let _ = write!(s, " {v:>8.4}");
        }
        let _ = writeln!(s, " {:>8}", r.n_pixels);
    }
    s
}

/// Machine-readable records: `label abs_rel sq_rel rmse log10 a1 a2 a3 n_pixels`.
pub fn format_records(rows: &[(String, MetricsReport)]) -> String {
    let mut s = String::from("# label abs_rel sq_rel rmse log10 a1 a2 a3 n_pixels\n");
    for (kind, r) in rows {
        if kind.contains(char::is_whitespace) {
            // labels are single tokens by construction; keep the format parseable regardless
            let _ = write!(s, "{}", kind.replace(char::is_whitespace, "_"));
        } else {
            s.push_str(kind);
        }
        for v in r.values() {
            let _ = write!(s, " {v}");
        }
        let _ = writeln!(s, " {}", r.n_pixels);
    }
    s
}

pub fn parse_records(text: &str) -> Result<Vec<(String, MetricsReport)>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::InvalidData(format!("metrics record line {}: {line:?}", ln + 1));
        if f.len() != 9 {
            return Err(bad());
        }
        let v: Vec<f64> = f[1..8]
            .iter()
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        rows.push((
            f[0].to_string(),
            MetricsReport {
                abs_rel: v[0],
                sq_rel: v[1],
                rmse: v[2],
                log10: v[3],
                alpha1: v[4],
                alpha2: v[5],
                alpha3: v[6],
                n_pixels: f[8].parse().map_err(|_| bad())?,
            },
        ));
    }
    Ok(rows)
}

/// Two weather folds: single conditions versus simultaneous rain and fog.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossValSplit {
    /// Rain only or fog only.
    pub fold_a: Vec<String>,
    /// Rain and fog together.
    pub fold_b: Vec<String>,
}

impl CrossValSplit {
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let mut fold_a = Vec::new();
        let mut fold_b = Vec::new();
        for r in &manifest.records {
            match r.weather.kind {
                WeatherKind::Rain | WeatherKind::Fog => fold_a.push(r.id.clone()),
                WeatherKind::RainAndFog => fold_b.push(r.id.clone()),
                WeatherKind::Clear => {}
            }
        }
        if fold_a.is_empty() || fold_b.is_empty() {
            return Err(invalid_arg!(
                "cross-validation needs both folds: {} single-condition and {} rain_and_fog samples",
                fold_a.len(),
                fold_b.len()
            ));
        }
        Ok(CrossValSplit { fold_a, fold_b })
    }
}

/// One direction of the weather cross-validation.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossValResult {
    pub train_fold: String,
    pub test_fold: String,
    pub report: MetricsReport,
}

pub const FOLD_A: &str = "rain|fog";
pub const FOLD_B: &str = "rain+fog";

pub fn format_crossval_table(results: &[CrossValResult]) -> String {
    let rows: Vec<(String, MetricsReport)> = results
        .iter()
        .map(|r| (format!("{}->{}", r.train_fold, r.test_fold), r.report))
        .collect();
    format_table(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RANGE: (f64, f64) = (0.001, 1000.0);

    fn single(v: f64) -> Tensor<f64> {
        Tensor::filled(1, 1, 1, v)
    }

    #[test]
    fn identical_maps_are_perfect() {
        let gt = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = compute_metrics(&gt, &gt, RANGE).unwrap();
        assert_eq!(r.values(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(r.n_pixels, 4);
    }

    #[test]
    fn single_pixel_example() {
        let r = compute_metrics(&single(1.1), &single(1.0), RANGE).unwrap();
        assert!((r.abs_rel - 0.1).abs() < 1e-12);
        assert!((r.sq_rel - 0.01).abs() < 1e-12);
        assert!((r.rmse - 0.1).abs() < 1e-12);
        assert!((r.log10 - 1.1f64.log10()).abs() < 1e-15);
        assert!((r.log10 - 0.04139).abs() < 1e-5);
        assert_eq!(r.alpha1, 1.0);
    }

    #[test]
    fn threshold_is_strict() {
        let r = compute_metrics(&single(5.0), &single(4.0), RANGE).unwrap();
        assert_eq!((r.alpha1, r.alpha2, r.alpha3), (0.0, 1.0, 1.0));
        let r = compute_metrics(&single(4.0), &single(5.0), RANGE).unwrap();
        assert_eq!((r.alpha1, r.alpha2, r.alpha3), (0.0, 1.0, 1.0));
    }

    #[test]
    fn errors() {
        assert!(compute_metrics(&single(1.0), &Tensor::zeros(1, 1, 2), RANGE).is_err());
        // ground truth outside the valid range leaves nothing to evaluate
        assert!(compute_metrics(&single(1.0), &single(5000.0), RANGE).is_err());
        assert!(compute_metrics(&single(-1.0), &single(1.0), RANGE).is_err());
    }

    #[test]
    fn valid_mask_is_open_interval() {
        let gt = Tensor::from_vec(1, 1, 4, vec![2.0f32, 3.0, 49.0, 50.0]).unwrap();
        assert_eq!(valid_mask(&gt, (2.0, 50.0)), vec![false, true, true, false]);
    }

    #[test]
    fn sobel_examples() {
        let flat = Tensor::filled(3, 5, 5, 0.4f64);
        assert!(sobel_image(&flat).data.iter().all(|&v| v == 0.0));
        let mut step = Tensor::zeros(3, 5, 5);
        for c in 0..3 {
            for y in 0..5 {
                for x in 3..5 {
                    step.set(c, y, x, 1.0);
                }
            }
        }
        let m = sobel_magnitude(&step);
        for y in 0..5 {
            assert_eq!(m.at(0, y, 2), 4.0);
            assert_eq!(m.at(0, y, 3), 4.0);
            assert_eq!(m.at(0, y, 0), 0.0);
        }
        let img = sobel_image(&step);
        assert_eq!(img.c, 3);
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sobel_translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img: Tensor<f64> =
            Tensor::from_vec(3, 8, 9, (0..216).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let mut shifted = img.clone();
        for c in 0..3 {
            for y in 0..8 {
                for x in 1..9 {
                    shifted.set(c, y, x, img.at(c, y, x - 1));
                }
            }
        }
        let a = sobel_magnitude(&img);
        let b = sobel_magnitude(&shifted);
        for y in 0..8 {
            for x in 2..8 {
                assert!((b.at(0, y, x) - a.at(0, y, x - 1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn records_roundtrip() {
        let r = compute_metrics(&single(1.3), &single(1.0), RANGE).unwrap();
        let rows = vec![("even".to_string(), r), ("rgb+sobel".to_string(), r)];
        assert_eq!(parse_records(&format_records(&rows)).unwrap(), rows);
        let table = format_table(&rows);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().next().unwrap().contains("abs_rel"));
    }
}
