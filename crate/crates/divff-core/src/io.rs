//! Binary container, image formats and content hashing.
//!
//! The "DVFF" container holds named little-endian arrays:
//!
//! ```text
//! magic   b"DVFF"
//! version u32
//! count   u32
//! per array:
//!   name_len u32, name bytes (utf-8)
//!   dtype    u8  (0 = f32, 1 = u8, 2 = u16, 3 = f64)
//!   ndim     u32, dims u32 each
//!   payload  little-endian values
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("missing array {0}")]
    MissingArray(String),
}

pub type Result<T> = std::result::Result<T, IoError>;

const MAGIC: &[u8; 4] = b"DVFF";
const VERSION: u32 = 1;

/// One named array inside a DVFF file.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
    U16(Vec<u16>),
    F64(Vec<f64>),
}

impl Payload {
    fn dtype(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::U8(_) => 1,
            Payload::U16(_) => 2,
            Payload::F64(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::U8(v) => v.len(),
            Payload::U16(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Payload,
}

impl Array {
    pub fn f32(name: &str, dims: &[usize], data: Vec<f32>) -> Self {
        Self { name: name.into(), dims: dims.to_vec(), data: Payload::F32(data) }
    }

    pub fn f64(name: &str, dims: &[usize], data: Vec<f64>) -> Self {
        Self { name: name.into(), dims: dims.to_vec(), data: Payload::F64(data) }
    }

    pub fn u8(name: &str, dims: &[usize], data: Vec<u8>) -> Self {
        Self { name: name.into(), dims: dims.to_vec(), data: Payload::U8(data) }
    }

    pub fn u16(name: &str, dims: &[usize], data: Vec<u16>) -> Self {
        Self { name: name.into(), dims: dims.to_vec(), data: Payload::U16(data) }
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            Payload::F32(v) => Ok(v),
            _ => Err(IoError::Format(format!("array {} is not f32", self.name))),
        }
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            Payload::F64(v) => Ok(v),
            _ => Err(IoError::Format(format!("array {} is not f64", self.name))),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            Payload::U8(v) => Ok(v),
            _ => Err(IoError::Format(format!("array {} is not u8", self.name))),
        }
    }

    pub fn as_u16(&self) -> Result<&[u16]> {
        match &self.data {
            Payload::U16(v) => Ok(v),
            _ => Err(IoError::Format(format!("array {} is not u16", self.name))),
        }
    }
}

pub fn write_dvff(path: &Path, arrays: &[Array]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        let expect: usize = a.dims.iter().product();
        if expect != a.data.len() {
            return Err(IoError::Format(format!(
                "array {}: dims {:?} want {} values, got {}",
                a.name,
                a.dims,
                expect,
                a.data.len()
            )));
        }
        buf.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(a.name.as_bytes());
        buf.push(a.data.dtype());
        buf.extend_from_slice(&(a.dims.len() as u32).to_le_bytes());
        for &d in &a.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &a.data {
            Payload::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => buf.extend_from_slice(v),
            Payload::U16(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_dvff(path: &Path) -> Result<Vec<Array>> {
    let bytes = fs::read(path)?;
    let mut cur = std::io::Cursor::new(bytes.as_slice());
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IoError::Format(format!("{}: bad magic", path.display())));
    }
    let version = read_u32(&mut cur)?;
    if version != VERSION {
        return Err(IoError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut cur)? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut cur)? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| IoError::Format("name".into()))?;
        let mut dtype = [0u8; 1];
        cur.read_exact(&mut dtype)?;
        let ndim = read_u32(&mut cur)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u32(&mut cur)? as usize);
        }
        let n: usize = dims.iter().product();
        let data = match dtype[0] {
            0 => {
                let mut raw = vec![0u8; n * 4];
                cur.read_exact(&mut raw)?;
                Payload::F32(
                    raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
                )
            }
            1 => {
                let mut v = vec![0u8; n];
                cur.read_exact(&mut v)?;
                Payload::U8(v)
            }
            2 => {
                let mut raw = vec![0u8; n * 2];
                cur.read_exact(&mut raw)?;
                Payload::U16(
                    raw.chunks_exact(2).map(|b| u16::from_le_bytes(b.try_into().unwrap())).collect(),
                )
            }
            3 => {
                let mut raw = vec![0u8; n * 8];
                cur.read_exact(&mut raw)?;
                Payload::F64(
                    raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
                )
            }
            d => return Err(IoError::Format(format!("unknown dtype {d}"))),
        };
        arrays.push(Array { name, dims, data });
    }
    Ok(arrays)
}

pub fn find_array<'a>(arrays: &'a [Array], name: &str) -> Result<&'a Array> {
    arrays.iter().find(|a| a.name == name).ok_or_else(|| IoError::MissingArray(name.into()))
}

fn read_u32(cur: &mut std::io::Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Write a binary P6 PPM from floats in [0,1].
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[f32]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(IoError::Format(format!(
            "ppm wants {} values, got {}",
            width * height * 3,
            rgb.len()
        )));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P6\n{} {}\n255\n", width, height)?;
    let bytes: Vec<u8> = rgb.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Read a binary P6 PPM into floats in [0,1].
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path)?;
    let header_err = || IoError::Format(format!("{}: bad ppm header", path.display()));
    let mut fields: Vec<String> = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| header_err())?.to_owned());
    }
    pos += 1; // single whitespace byte after maxval
    if fields.len() != 4 || fields[0] != "P6" || fields[3] != "255" {
        return Err(header_err());
    }
    let width: usize = fields[1].parse().map_err(|_| header_err())?;
    let height: usize = fields[2].parse().map_err(|_| header_err())?;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(IoError::Format(format!("{}: truncated ppm", path.display())));
    }
    let rgb = bytes[pos..pos + need].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((width, height, rgb))
}

/// Write a raw P4 PBM from a binary mask (nonzero = set).
pub fn write_pbm(path: &Path, width: usize, height: usize, mask: &[u8]) -> Result<()> {
    if mask.len() != width * height {
        return Err(IoError::Format("pbm size mismatch".into()));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P4\n{} {}\n", width, height)?;
    let row_bytes = width.div_ceil(8);
    let mut data = vec![0u8; row_bytes * height];
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] != 0 {
                data[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    f.write_all(&data)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Stable content hash of a directory tree: sha256 over sorted
/// (relative path, file hash) lines.
pub fn hash_tree(root: &Path) -> Result<String> {
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    collect_files(root, root, &mut entries)?;
    let mut acc = String::new();
    for (rel, h) in entries {
        acc.push_str(&rel);
        acc.push(' ');
        acc.push_str(&h);
        acc.push('\n');
    }
    Ok(sha256_hex(acc.as_bytes()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    let mut items: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    items.sort_by_key(|e| e.file_name());
    for item in items {
        let path = item.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            out.insert(rel, hash_file(&path)?);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dvff_round_trip() {
        let dir = std::env::temp_dir().join("divff_io_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.bin");
        let arrays = vec![
            Array::f32("phi", &[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            Array::u8("mask", &[4], vec![0, 1, 1, 0]),
            Array::u16("ids", &[2], vec![7, 513]),
            Array::f64("w", &[1], vec![0.25]),
        ];
        write_dvff(&path, &arrays).unwrap();
        let back = read_dvff(&path).unwrap();
        assert_eq!(arrays, back);
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn ppm_round_trip_quantized() {
        let dir = std::env::temp_dir().join("divff_io_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.ppm");
        let rgb = vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1];
        write_ppm(&path, 2, 1, &rgb).unwrap();
        let (w, h, back) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (2, 1));
        for (a, b) in rgb.iter().zip(&back) {
            assert!((a - b).abs() < 1.0 / 255.0 + 1e-6);
        }
        fs::remove_file(&path).unwrap();
    }
}
