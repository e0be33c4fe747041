//! PFM float images (little-endian, bottom-to-top rows per the format).

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::maps::{Buffer2, ScalarMap, VectorMap};
use crate::scalar::Real;

pub fn write_pfm_scalar<T: Real>(path: &Path, map: &ScalarMap<T>) -> Result<()> {
    let mut buf = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    for y in (0..map.height).rev() {
        for x in 0..map.width {
            buf.extend_from_slice(&(map.at(x, y).f64() as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_pfm_vector<T: Real>(path: &Path, map: &VectorMap<T>) -> Result<()> {
    let mut buf = format!("PF\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    for y in (0..map.height).rev() {
        for x in 0..map.width {
            let v = map.at(x, y);
            for c in 0..3 {
                buf.extend_from_slice(&(v[c].f64() as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_header<'a>(path: &Path, bytes: &'a [u8], magic: &str) -> Result<(usize, usize, &'a [u8])> {
    let mut pos = 0;
    let mut token = |what: &str| -> Result<String> {
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::malformed(path, format!("missing {what}")));
        }
        let t = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::malformed(path, "non-ascii header"))?
            .to_string();
        pos += 1; // single whitespace separator
        Ok(t)
    };
    if token("magic")? != magic {
        return Err(Error::malformed(path, format!("expected {magic}")));
    }
    let w: usize = token("width")?.parse().map_err(|_| Error::malformed(path, "bad width"))?;
    let h: usize = token("height")?.parse().map_err(|_| Error::malformed(path, "bad height"))?;
    let scale: f64 = token("scale")?.parse().map_err(|_| Error::malformed(path, "bad scale"))?;
    if scale >= 0.0 {
        return Err(Error::malformed(path, "big-endian PFM unsupported"));
    }
    Ok((w, h, &bytes[pos..]))
}

pub fn read_pfm_scalar<T: Real>(path: &Path) -> Result<ScalarMap<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, data) = read_header(path, &bytes, "Pf")?;
    if data.len() != w * h * 4 {
        return Err(Error::malformed(path, "wrong payload size"));
    }
    let mut map = Buffer2::filled(w, h, T::zero());
    for y in 0..h {
        for x in 0..w {
            let i = ((h - 1 - y) * w + x) * 4;
            *map.at_mut(x, y) =
                T::c(f32::from_le_bytes(data[i..i + 4].try_into().unwrap()) as f64);
        }
    }
    Ok(map)
}

pub fn read_pfm_vector<T: Real>(path: &Path) -> Result<VectorMap<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, data) = read_header(path, &bytes, "PF")?;
    if data.len() != w * h * 12 {
        return Err(Error::malformed(path, "wrong payload size"));
    }
    let mut map = Buffer2::filled(w, h, Vector3::zeros());
    for y in 0..h {
        for x in 0..w {
            let i = ((h - 1 - y) * w + x) * 12;
            let f = |c: usize| {
                T::c(f32::from_le_bytes(data[i + 4 * c..i + 4 * c + 4].try_into().unwrap()) as f64)
            };
            *map.at_mut(x, y) = Vector3::new(f(0), f(1), f(2));
        }
    }
    Ok(map)
}
