//! Bit-exact binary file formats.
//!
//! All formats are little-endian with a 4-byte ASCII magic and a u16 version.
//! Volumes (`.svol`): magic "SVOL", version 1, dtype code 1 (f32), dims 3×u32,
//! spacing 3×f32, then D·H·W f32 voxels slice-major (32-byte header).
//! Label maps (`.slab`): magic "SLAB", version 1, num_classes u16, dims 3×u32,
//! then D·H·W u16 labels slice-major.
//!
//! Readers are strict: wrong magic or header fields are format errors, files
//! that end before the declared payload are length errors, and non-finite
//! voxels are validation errors. Writers refuse non-finite data so a saved
//! file always loads.

use crate::error::{Error, Result};
use crate::volume::{LabelMap, Volume};
use std::path::Path;

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8], what: &'a str) -> Self {
        Cursor { buf, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::length(format!(
                "{}: needed {} bytes at offset {}, file has {}",
                self.what,
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expect {
            return Err(Error::format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expect)
            )));
        }
        Ok(())
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u16_vec(&mut self, n: usize) -> Result<Vec<u16>> {
        let bytes = self.take(n * 2)?;
        Ok(bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(format!(
                "{}: {} trailing bytes after payload",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() && !dir.exists() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

const SVOL_MAGIC: &[u8; 4] = b"SVOL";
const SLAB_MAGIC: &[u8; 4] = b"SLAB";
const SVOL_VERSION: u16 = 1;
const SLAB_VERSION: u16 = 1;
const DTYPE_F32: u16 = 1;

pub fn save_volume(v: &Volume<f32>, path: impl AsRef<Path>) -> Result<()> {
    v.ensure_finite()?;
    let [d, h, w] = v.dims();
    let mut out = Vec::with_capacity(32 + v.len() * 4);
    out.extend_from_slice(SVOL_MAGIC);
    push_u16(&mut out, SVOL_VERSION);
    push_u16(&mut out, DTYPE_F32);
    push_u32(&mut out, d as u32);
    push_u32(&mut out, h as u32);
    push_u32(&mut out, w as u32);
    for s in v.spacing() {
        push_f32(&mut out, s);
    }
    for &x in v.data() {
        push_f32(&mut out, x);
    }
    write_bytes(path.as_ref(), &out)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume<f32>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let what = format!("volume {}", path.display());
    let mut c = Cursor::new(&bytes, &what);
    c.magic(SVOL_MAGIC)?;
    let version = c.u16()?;
    if version != SVOL_VERSION {
        return Err(Error::format(format!("{what}: unsupported version {version}")));
    }
    let dtype = c.u16()?;
    if dtype != DTYPE_F32 {
        return Err(Error::format(format!("{what}: unsupported dtype code {dtype}")));
    }
    let dims = [c.u32()? as usize, c.u32()? as usize, c.u32()? as usize];
    let spacing = [c.f32()?, c.f32()?, c.f32()?];
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::format(format!("{what}: zero dimension in header {dims:?}")));
    }
    let data = c.f32_vec(dims[0] * dims[1] * dims[2])?;
    c.finish()?;
    let v = Volume::new(dims, spacing, data)?;
    v.ensure_finite()?;
    Ok(v)
}

pub fn save_labels(m: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let [d, h, w] = m.dims();
    let mut out = Vec::with_capacity(20 + m.labels().len() * 2);
    out.extend_from_slice(SLAB_MAGIC);
    push_u16(&mut out, SLAB_VERSION);
    push_u16(&mut out, m.num_classes());
    push_u32(&mut out, d as u32);
    push_u32(&mut out, h as u32);
    push_u32(&mut out, w as u32);
    for &l in m.labels() {
        push_u16(&mut out, l);
    }
    write_bytes(path.as_ref(), &out)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let what = format!("labels {}", path.display());
    let mut c = Cursor::new(&bytes, &what);
    c.magic(SLAB_MAGIC)?;
    let version = c.u16()?;
    if version != SLAB_VERSION {
        return Err(Error::format(format!("{what}: unsupported version {version}")));
    }
    let num_classes = c.u16()?;
    let dims = [c.u32()? as usize, c.u32()? as usize, c.u32()? as usize];
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::format(format!("{what}: zero dimension in header {dims:?}")));
    }
    let labels = c.u16_vec(dims[0] * dims[1] * dims[2])?;
    c.finish()?;
    LabelMap::new(dims, num_classes, labels)
}

/// Volumes (`*.svol`) in a directory, sorted by file name for a stable order.
pub fn volume_paths(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    paths_with_extension(dir.as_ref(), "svol")
}

/// Label maps (`*.slab`) in a directory, sorted by file name.
pub fn label_paths(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    paths_with_extension(dir.as_ref(), "slab")
}

fn paths_with_extension(dir: &Path, ext: &str) -> Result<Vec<std::path::PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn volume_roundtrip_zero() {
        let dir = tmp();
        let p = dir.path().join("v.svol");
        let v = Volume::constant([4, 4, 4], [1.0; 3], 0.0f32).unwrap();
        save_volume(&v, &p).unwrap();
        assert_eq!(load_volume(&p).unwrap(), v);
    }

    #[test]
    fn volume_roundtrip_ramp_bits() {
        let dir = tmp();
        let p = dir.path().join("v.svol");
        let n = 3 * 4 * 5;
        let data: Vec<f32> = (0..n).map(|i| i as f32 / n as f32).collect();
        let v = Volume::new([3, 4, 5], [0.5, 1.0, 1.5], data).unwrap();
        save_volume(&v, &p).unwrap();
        let back = load_volume(&p).unwrap();
        for (a, b) in v.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(v.spacing(), back.spacing());
    }

    #[test]
    fn volume_file_size_is_header_plus_payload() {
        let dir = tmp();
        let p = dir.path().join("v.svol");
        let v = Volume::constant([2, 3, 4], [1.0; 3], 1.0f32).unwrap();
        save_volume(&v, &p).unwrap();
        let size = std::fs::metadata(&p).unwrap().len();
        assert_eq!(size, 32 + 4 * 2 * 3 * 4);
    }

    #[test]
    fn zero_volume_payload_is_zero_bytes() {
        let dir = tmp();
        let p = dir.path().join("v.svol");
        let v = Volume::constant([2, 2, 2], [1.0; 3], 0.0f32).unwrap();
        save_volume(&v, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 64);
        assert!(bytes[32..].iter().all(|&b| b == 0));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tmp();
        let p = dir.path().join("x.svol");
        std::fs::write(&p, b"XXXX_________________________________").unwrap();
        match load_volume(&p) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_length_error() {
        let dir = tmp();
        let p = dir.path().join("v.svol");
        let v = Volume::constant([4, 4, 4], [1.0; 3], 1.0f32).unwrap();
        save_volume(&v, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        match load_volume(&p) {
            Err(Error::Length(_)) => {}
            other => panic!("expected length error, got {other:?}"),
        }
    }

    #[test]
    fn nan_rejected_on_save_and_load() {
        let dir = tmp();
        let p = dir.path().join("v.svol");
        let mut data = vec![0.0f32; 8];
        data[3] = f32::NAN;
        let v = Volume::new([2, 2, 2], [1.0; 3], data).unwrap();
        match save_volume(&v, &p) {
            Err(Error::Validation(_)) => {}
            other => panic!("expected validation error, got {other:?}"),
        }

        // hand-build a file holding an infinity
        let good = Volume::constant([2, 2, 2], [1.0; 3], 1.0f32).unwrap();
        save_volume(&good, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[32..36].copy_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        match load_volume(&p) {
            Err(Error::Validation(_)) => {}
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn labels_roundtrip() {
        let dir = tmp();
        let p = dir.path().join("m.slab");
        let labels: Vec<u16> = (0..24).map(|i| (i % 3) as u16).collect();
        let m = LabelMap::new([2, 3, 4], 3, labels).unwrap();
        save_labels(&m, &p).unwrap();
        assert_eq!(load_labels(&p).unwrap(), m);
    }

    #[test]
    fn missing_file_is_io_error() {
        match load_volume("/nonexistent/v.svol") {
            Err(Error::Io { .. }) => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }
}
