//! File formats shared by the pipeline stages.
//!
//! * RGB images: 8-bit PNG.
//! * Depth maps (`DPT1`): `"DPT1"`, `u16` width, `u16` height, 4 reserved zero
//!   bytes (12-byte header), then `f32` values row-major, all little-endian.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{ImageFormat, RgbImage};

use crate::error::{invalid_arg, Error, Result};
use crate::tensor::Tensor;

/// Writes through a temporary sibling and renames, so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Converts a 3-channel image in `[0, 1]` to an 8-bit RGB buffer.
pub fn to_rgb8(img: &Tensor<f32>) -> Result<RgbImage> {
    if img.c != 3 {
        return Err(invalid_arg!("expected 3 channels, got {}", img.c));
    }
    let (h, w) = (img.h, img.w);
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([to_u8(img.at(0, y, x)), to_u8(img.at(1, y, x)), to_u8(img.at(2, y, x))])
    }))
}

pub fn from_rgb8(buf: &RgbImage) -> Tensor<f32> {
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut t = Tensor::zeros(3, h, w);
    for (x, y, px) in buf.enumerate_pixels() {
        for c in 0..3 {
            t.set(c, y as usize, x as usize, px[c] as f32 / 255.0);
        }
    }
    t
}

/// Rounds an image through 8-bit storage.
pub fn quantize8(img: &Tensor<f32>) -> Tensor<f32> {
    img.map(|v| to_u8(v) as f32 / 255.0)
}

pub fn encode_png(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let buf = to_rgb8(img)?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn save_png(path: &Path, img: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let bytes = read_file(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)?;
    Ok(from_rgb8(&img.to_rgb8()))
}

const DEPTH_MAGIC: &[u8; 4] = b"DPT1";

pub fn write_depth<W: Write>(mut w: W, depth: &Tensor<f32>) -> Result<()> {
    if depth.c != 1 {
        return Err(invalid_arg!("depth map must have one channel"));
    }
    if depth.w > u16::MAX as usize || depth.h > u16::MAX as usize {
        return Err(invalid_arg!("depth map too large for DPT1"));
    }
    w.write_all(DEPTH_MAGIC)?;
    w.write_u16::<LittleEndian>(depth.w as u16)?;
    w.write_u16::<LittleEndian>(depth.h as u16)?;
    w.write_all(&[0u8; 4])?;
    for &v in &depth.data {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_depth<R: Read>(mut r: R) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DEPTH_MAGIC {
        return Err(Error::InvalidData("not a DPT1 depth file".into()));
    }
    let w = r.read_u16::<LittleEndian>()? as usize;
    let h = r.read_u16::<LittleEndian>()? as usize;
    let mut reserved = [0u8; 4];
    r.read_exact(&mut reserved)?;
    let mut data = vec![0f32; w * h];
    r.read_f32_into::<LittleEndian>(&mut data)
        .map_err(|_| Error::InvalidData("truncated DPT1 payload".into()))?;
    Tensor::from_vec(1, h, w, data)
}

pub fn save_depth(path: &Path, depth: &Tensor<f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * depth.data.len());
    write_depth(&mut buf, depth)?;
    write_atomic(path, &buf)
}

pub fn load_depth(path: &Path) -> Result<Tensor<f32>> {
    read_depth(&read_file(path)?[..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_header_is_twelve_bytes() {
        let d = Tensor::from_vec(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        let mut buf = Vec::new();
        write_depth(&mut buf, &d).unwrap();
        assert_eq!(&buf[..4], b"DPT1");
        assert_eq!(&buf[4..8], &[3, 0, 2, 0]);
        assert_eq!(buf.len(), 12 + 6 * 4);
        assert_eq!(read_depth(&buf[..]).unwrap(), d);
    }

    #[test]
    fn truncated_depth_is_invalid_data() {
        let d = Tensor::from_vec(1, 2, 2, vec![1.0; 4]).unwrap();
        let mut buf = Vec::new();
        write_depth(&mut buf, &d).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(read_depth(&buf[..]), Err(Error::InvalidData(_))));
    }

    #[test]
    fn png_roundtrip_is_8bit_exact() {
        let img = Tensor::from_vec(3, 2, 2, (0..12).map(|i| i as f32 / 11.0).collect()).unwrap();
        let q = quantize8(&img);
        let bytes = encode_png(&img).unwrap();
        let back = from_rgb8(
            &image::load_from_memory_with_format(&bytes, ImageFormat::Png)
                .unwrap()
                .to_rgb8(),
        );
        assert_eq!(back, q);
    }
}
