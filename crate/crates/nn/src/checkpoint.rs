//! Binary tensor container used for checkpoints and debug dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            4 bytes   b"NAHT"
//! format_version   u32       currently 1
//! float_width      u32       bytes per value: 4 (f32) or 8 (f64)
//! entry_count      u64
//! entry_count x {
//!     name_len     u32
//!     name         name_len bytes, UTF-8
//!     rank         u32
//!     dims         rank x u64
//!     values       product(dims) x float_width bytes, little-endian IEEE 754
//! }
//! ```
//!
//! Reading a file written at the same width reproduces every value bit for
//! bit. Reading at a different width converts through `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::real::{FloatWidth, Real};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"NAHT";

pub fn write_tensors<T: Real, W: Write>(w: &mut W, entries: &[(&str, &Tensor<T>)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(T::WIDTH.bytes() as u32).to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut buf);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format(format!("truncated at byte {pos}")))?;
    let out = &bytes[*pos..end];
    *pos = end;
    Ok(out)
}

fn take_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4)?.try_into().expect("4 bytes")))
}

fn take_u64(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, pos, 8)?.try_into().expect("8 bytes")))
}

pub fn read_tensors<T: Real, R: Read>(r: &mut R) -> Result<Vec<(String, Tensor<T>)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    if take(&bytes, &mut pos, 4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = take_u32(&bytes, &mut pos)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let width_bytes = take_u32(&bytes, &mut pos)?;
    let width = FloatWidth::from_bytes(width_bytes)
        .ok_or_else(|| Error::Format(format!("unsupported float width {width_bytes}")))?;
    let count = take_u64(&bytes, &mut pos)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = take_u32(&bytes, &mut pos)? as usize;
        let name = std::str::from_utf8(take(&bytes, &mut pos, name_len)?)
            .map_err(|e| Error::Format(format!("entry name: {e}")))?
            .to_string();
        let rank = take_u32(&bytes, &mut pos)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u64(&bytes, &mut pos)? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = take(&bytes, &mut pos, len * width.bytes())?;
        let data: Vec<T> = raw
            .chunks_exact(width.bytes())
            .map(|c| match (width, T::WIDTH) {
                (a, b) if a == b => T::read_le(c),
                (FloatWidth::F32, _) => T::lit(f32::read_le(c) as f64),
                (FloatWidth::F64, _) => T::lit(f64::read_le(c)),
            })
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(out)
}

impl<T: Real> ParamStore<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_tensors(&mut w, &self.named_values())?;
        w.flush()?;
        Ok(())
    }

    /// Load values saved by [`ParamStore::save`] into a store with the same
    /// layout.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let mut r = BufReader::new(File::open(path)?);
        self.load_values(read_tensors(&mut r)?)
    }
}
