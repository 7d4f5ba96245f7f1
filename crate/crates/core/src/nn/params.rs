//! Parameter traversal and the `EVNP` parameter container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "EVNP" | version: u8
//! repeated until EOF:
//!   name_len: u16 | name: utf-8 bytes | rank: u8 | dims: u32 × rank | data: f32 × prod(dims)
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::Real;

pub type ParamVisitor<'a, T> = dyn FnMut(&str, &[usize], &[T]) + 'a;
pub type ParamVisitorMut<'a, T> = dyn FnMut(&str, &mut [T]) + 'a;

/// A bundle of named, shaped parameter tensors.
///
/// Gradients are stored in a second instance of the same type, so both
/// sides can be flattened in the same visitation order.
pub trait Params<T: Real> {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, T>);
    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>);

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, v| out.extend_from_slice(v));
        out
    }

    fn assign_flat(&mut self, flat: &[T]) {
        let mut off = 0;
        self.visit_mut("", &mut |_, v| {
            v.copy_from_slice(&flat[off..off + v.len()]);
            off += v.len();
        });
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    fn zero(&mut self) {
        self.visit_mut("", &mut |_, v| v.fill(T::zero()));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }

    fn to_param_file(&self) -> ParamFile {
        let mut tensors = Vec::new();
        self.visit("", &mut |name, dims, v| {
            tensors.push(NamedTensor {
                name: name.trim_start_matches('.').to_string(),
                dims: dims.to_vec(),
                data: v.iter().map(|x| x.as_f64() as f32).collect(),
            })
        });
        ParamFile { tensors }
    }

    /// Fills every parameter from `file`, matching by name and checking lengths.
    fn load_param_file(&mut self, file: &ParamFile) -> Result<()> {
        let mut err = None;
        self.visit_mut("", &mut |name, v| {
            if err.is_some() {
                return;
            }
            let name = name.trim_start_matches('.');
            match file.get(name) {
                Some(t) if t.data.len() == v.len() => {
                    for (d, &s) in v.iter_mut().zip(&t.data) {
                        *d = T::lit(s as f64);
                    }
                }
                Some(t) => {
                    err = Some(Error::InvalidData(format!(
                        "parameter {name}: expected {} values, file has {}",
                        v.len(),
                        t.data.len()
                    )))
                }
                None => err = Some(Error::InvalidData(format!("parameter {name} missing from file"))),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamFile {
    pub tensors: Vec<NamedTensor>,
}

const MAGIC: &[u8; 4] = b"EVNP";
const VERSION: u8 = 1;

impl ParamFile {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn push(&mut self, name: &str, dims: &[usize], data: Vec<f32>) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            dims: dims.to_vec(),
            data,
        });
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u8(VERSION)?;
        for t in &self.tensors {
            let name = t.name.as_bytes();
            w.write_u16::<LittleEndian>(name.len() as u16)?;
            w.write_all(name)?;
            w.write_u8(t.dims.len() as u8)?;
            for &d in &t.dims {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            for &v in &t.data {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidData("not an EVNP parameter file".into()));
        }
        let version = r.read_u8()?;
        if version != VERSION {
            return Err(Error::InvalidData(format!("unsupported EVNP version {version}")));
        }
        let mut tensors = Vec::new();
        loop {
            let name_len = match r.read_u16::<LittleEndian>() {
                Ok(n) => n as usize,
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            };
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::InvalidData("tensor name is not utf-8".into()))?;
            let rank = r.read_u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.read_u32::<LittleEndian>()? as usize);
            }
            let n: usize = dims.iter().product();
            let mut data = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut data)?;
            tensors.push(NamedTensor { name, dims, data });
        }
        Ok(ParamFile { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::read_from(&bytes[..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn container_roundtrip(
            entries in prop::collection::vec(
                ("[a-z.]{1,12}", prop::collection::vec(1usize..4, 0..3), -1e3f32..1e3f32), 0..5)
        ) {
            let mut file = ParamFile::default();
            for (name, dims, v) in &entries {
                let n: usize = dims.iter().product();
                file.push(name, dims, (0..n).map(|i| v + i as f32).collect());
            }
            let mut buf = Vec::new();
            file.write_to(&mut buf).unwrap();
            prop_assert_eq!(ParamFile::read_from(&buf[..]).unwrap(), file);
        }
    }

    #[test]
    fn header_bytes() {
        let mut file = ParamFile::default();
        file.push("w", &[2], vec![1.0, -2.0]);
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"EVNP\x01");
        assert_eq!(&buf[5..7], &[1, 0]);
        assert_eq!(buf[7], b'w');
        assert_eq!(buf[8], 1);
        assert_eq!(&buf[9..13], &[2, 0, 0, 0]);
        assert_eq!(&buf[13..17], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 21);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(ParamFile::read_from(&b"NOPE\x01"[..]).is_err());
    }
}
