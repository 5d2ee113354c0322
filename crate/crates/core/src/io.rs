//! FSR/FSM container formats.
//!
//! FSR raster: magic "FSR1" | u16 version=1 | u32 width | u32 height |
//! u32 band_count | f32 resolution_m | per band: u8 name_len + ASCII name |
//! payload band-major, row-major f32, little-endian.
//!
//! FSM mask: magic "FSM1" | u16 version=1 | u32 width | u32 height |
//! payload u8 codes.

use crate::error::{CoreError, Result};
use crate::num::Scalar;
use crate::raster::{ClassMask, Code, Raster};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const FSR_MAGIC: &[u8; 4] = b"FSR1";
const FSM_MAGIC: &[u8; 4] = b"FSM1";
const VERSION: u16 = 1;

fn read_exact_or(reader: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|e| CoreError::io(path, e))
}

fn read_u16(reader: &mut impl Read, path: &Path) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact_or(reader, &mut b, path)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(reader: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(reader, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(reader: &mut impl Read, path: &Path) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact_or(reader, &mut b, path)?;
    Ok(f32::from_le_bytes(b))
}

pub fn write_raster<F: Scalar>(raster: &Raster<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| CoreError::io(path, e);
    w.write_all(FSR_MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(raster.width() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(raster.height() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(raster.n_bands() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&raster.resolution_m().to_le_bytes()).map_err(io_err)?;
    for (name, _) in raster.bands() {
        if !name.is_ascii() || name.is_empty() || name.len() > u8::MAX as usize {
            return Err(CoreError::Format(format!("band name '{name}' not storable")));
        }
        w.write_all(&[name.len() as u8]).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
    }
    for (_, data) in raster.bands() {
        for &v in data {
            w.write_all(&v.as_f32().to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_raster<F: Scalar>(path: impl AsRef<Path>) -> Result<Raster<F>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, path)?;
    if &magic != FSR_MAGIC {
        return Err(CoreError::Format(format!(
            "bad magic {magic:?}, expected FSR1"
        )));
    }
    let version = read_u16(&mut r, path)?;
    if version != VERSION {
        return Err(CoreError::Format(format!("unsupported FSR version {version}")));
    }
    let width = read_u32(&mut r, path)? as usize;
    let height = read_u32(&mut r, path)? as usize;
    let band_count = read_u32(&mut r, path)? as usize;
    let resolution_m = read_f32(&mut r, path)?;
    if width == 0 || height == 0 {
        return Err(CoreError::Format("zero raster dimension in header".into()));
    }
    if band_count == 0 {
        return Err(CoreError::Format("zero band count in header".into()));
    }
    if !(resolution_m > 0.0) {
        return Err(CoreError::Format("non-positive resolution in header".into()));
    }
    let mut names = Vec::with_capacity(band_count);
    for _ in 0..band_count {
        let mut len = [0u8; 1];
        read_exact_or(&mut r, &mut len, path)?;
        if len[0] == 0 {
            return Err(CoreError::Format("empty band name".into()));
        }
        let mut name = vec![0u8; len[0] as usize];
        read_exact_or(&mut r, &mut name, path)?;
        let name = String::from_utf8(name)
            .map_err(|_| CoreError::Format("non-ASCII band name".into()))?;
        if !name.is_ascii() {
            return Err(CoreError::Format("non-ASCII band name".into()));
        }
        names.push(name);
    }
    let mut bands = Vec::with_capacity(band_count);
    let mut payload = vec![0u8; width * height * 4];
    for name in names {
        read_exact_or(&mut r, &mut payload, path)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| F::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        bands.push((name, data));
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(CoreError::Format("trailing bytes after payload".into())),
        Err(e) => return Err(CoreError::io(path, e)),
    }
    Raster::new(width, height, resolution_m, bands)
        .map_err(|e| CoreError::Format(format!("invalid raster in file: {e}")))
}

pub fn write_mask(mask: &ClassMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| CoreError::io(path, e);
    w.write_all(FSM_MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(mask.width() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(mask.height() as u32).to_le_bytes()).map_err(io_err)?;
    let bytes: Vec<u8> = mask.codes().iter().map(|&c| c as u8).collect();
    w.write_all(&bytes).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<ClassMask> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, path)?;
    if &magic != FSM_MAGIC {
        return Err(CoreError::Format(format!(
            "bad magic {magic:?}, expected FSM1"
        )));
    }
    let version = read_u16(&mut r, path)?;
    if version != VERSION {
        return Err(CoreError::Format(format!("unsupported FSM version {version}")));
    }
    let width = read_u32(&mut r, path)? as usize;
    let height = read_u32(&mut r, path)? as usize;
    if width == 0 || height == 0 {
        return Err(CoreError::Format("zero mask dimension in header".into()));
    }
    let mut payload = vec![0u8; width * height];
    read_exact_or(&mut r, &mut payload, path)?;
    let codes = payload
        .into_iter()
        .map(Code::from_u8)
        .collect::<Result<Vec<_>>>()?;
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(CoreError::Format("trailing bytes after payload".into())),
        Err(e) => return Err(CoreError::io(path, e)),
    }
    ClassMask::new(width, height, codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn raster_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.fsr");
        let r = Raster::<f32>::new(
            4,
            4,
            16.0,
            vec![
                ("VV".into(), (0..16).map(|i| i as f32 * 0.5).collect()),
                ("VH".into(), (0..16).map(|i| -(i as f32)).collect()),
            ],
        )
        .unwrap();
        write_raster(&r, &path).unwrap();
        let back: Raster<f32> = read_raster(&path).unwrap();
        assert_eq!(r, back);
        // write again from the read copy: byte-identical
        let path2 = dir.path().join("r2.fsr");
        write_raster(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.fsr");
        std::fs::write(&path, b"NOPE\x01\x00").unwrap();
        assert!(matches!(
            read_raster::<f32>(&path),
            Err(CoreError::Format(_))
        ));
    }

    #[test]
    fn zero_band_header_is_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("zero.fsr");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"FSR1");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&10.0f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_raster::<f32>(&path),
            Err(CoreError::Format(_))
        ));
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.fsr");
        let r = Raster::<f32>::new(4, 4, 10.0, vec![("VV".into(), vec![1.0; 16])]).unwrap();
        write_raster(&r, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_raster::<f32>(&path), Err(CoreError::Io { .. })));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.fsm");
        let codes = vec![Code::Dry, Code::Water, Code::Cloud, Code::Invalid];
        let m = ClassMask::new(2, 2, codes).unwrap();
        write_mask(&m, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
    }
}
