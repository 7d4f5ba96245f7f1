//! Minimal raster plots: loss curves and bar charts, written as PNG.
//!
//! Plots carry no text; the accompanying `table.txt` / history files hold the numbers.

use image::{Rgb, RgbImage};

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const PALETTE: [Rgb<u8>; 7] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([227, 119, 194]),
];
const MARGIN: u32 = 12;

fn canvas(w: u32, h: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(w, h, BG);
    for k in 1..4 {
        let y = MARGIN + (h - 2 * MARGIN) * k / 4;
        for x in MARGIN..w - MARGIN {
            img.put_pixel(x, y, GRID);
        }
    }
    for x in MARGIN..w - MARGIN {
        img.put_pixel(x, h - MARGIN, AXIS);
    }
    for y in MARGIN..=h - MARGIN {
        img.put_pixel(MARGIN, y, AXIS);
    }
    img
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).round();
        let y = (y0 + t * (y1 - y0)).round();
        for (dx, dy) in [(0.0, 0.0), (0.0, 1.0)] {
            let (px, py) = (x + dx, y + dy);
            if px >= 0.0 && py >= 0.0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

/// One polyline per series on a shared linear scale starting at zero.
pub fn line_plot(series: &[&[f64]], w: u32, h: u32) -> RgbImage {
    let mut img = canvas(w, h);
    let max_len = series.iter().map(|s| s.len()).max().unwrap_or(0);
    let max_v = series
        .iter()
        .flat_map(|s| s.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    if max_len == 0 || max_v <= 0.0 {
        return img;
    }
    let (pw, ph) = ((w - 2 * MARGIN) as f64, (h - 2 * MARGIN) as f64);
    let to_xy = |i: usize, v: f64| {
        let x = MARGIN as f64
            + if max_len > 1 {
                i as f64 / (max_len - 1) as f64 * pw
            } else {
                pw / 2.0
            };
        let y = (h - MARGIN) as f64 - v.max(0.0) / max_v * ph;
        (x, y)
    };
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for i in 1..s.len() {
            line(&mut img, to_xy(i - 1, s[i - 1]), to_xy(i, s[i]), color);
        }
        if s.len() == 1 {
            line(&mut img, to_xy(0, s[0]), to_xy(0, s[0]), color);
        }
    }
    img
}

/// Vertical bars, one per value, coloured by position.
pub fn bar_plot(values: &[f64], w: u32, h: u32) -> RgbImage {
    let mut img = canvas(w, h);
    let max_v = values.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    if values.is_empty() || max_v <= 0.0 {
        return img;
    }
    let slot = (w - 2 * MARGIN) / values.len() as u32;
    let ph = (h - 2 * MARGIN) as f64;
    for (k, &v) in values.iter().enumerate() {
        let bh = (v.max(0.0) / max_v * ph).round() as u32;
        let x0 = MARGIN + 1 + k as u32 * slot + slot / 6;
        let x1 = MARGIN + (k as u32 + 1) * slot - slot / 6;
        for x in x0..x1.max(x0 + 1) {
            for y in (h - MARGIN - bh)..(h - MARGIN) {
                img.put_pixel(x, y, PALETTE[k % PALETTE.len()]);
            }
        }
    }
    img
}

pub fn encode(img: &RgbImage) -> crate::Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_have_requested_size_and_ink() {
        let a = [3.0, 2.0, 1.5, 1.0];
        let img = line_plot(&[&a], 160, 100);
        assert_eq!(img.dimensions(), (160, 100));
        assert!(img.pixels().any(|p| *p == PALETTE[0]));
        let bars = bar_plot(&[0.2, 0.1, 0.4], 160, 100);
        assert!(bars.pixels().any(|p| *p == PALETTE[2]));
        assert!(encode(&bars).unwrap().starts_with(b"\x89PNG"));
        // degenerate input still renders the axes
        assert_eq!(line_plot(&[], 50, 50).dimensions(), (50, 50));
    }
}
