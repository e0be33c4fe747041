//! Flat binary serialization of the voxel field: a small header (magic,
//! version, resolutions, bounds, sharpness) followed by the grids as
//! little-endian f64.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sdf::VoxelSdfField;

const MAGIC: &[u8; 4] = b"VSDF";
const VERSION: u32 = 1;

pub fn write_field<T: Real>(path: &Path, field: &VoxelSdfField<T>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(field.resolution as u32).to_le_bytes());
    buf.extend_from_slice(&(field.conf_resolution as u32).to_le_bytes());
    for a in 0..3 {
        buf.extend_from_slice(&field.bounds_min[a].f64().to_le_bytes());
    }
    for a in 0..3 {
        buf.extend_from_slice(&field.bounds_max[a].f64().to_le_bytes());
    }
    buf.extend_from_slice(&field.log_sharpness.f64().to_le_bytes());
    for v in &field.sdf {
        buf.extend_from_slice(&v.f64().to_le_bytes());
    }
    for v in &field.radiance {
        for c in 0..3 {
            buf.extend_from_slice(&v[c].f64().to_le_bytes());
        }
    }
    for v in &field.confidence_logit {
        buf.extend_from_slice(&v.f64().to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_field<T: Real>(path: &Path) -> Result<VoxelSdfField<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::malformed(path, "truncated field file"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::malformed(path, "bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::malformed(path, format!("unsupported version {version}")));
    }
    let resolution = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let conf_resolution = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let f = |pos: &mut usize| -> Result<f64> {
        Ok(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
    };
    let bounds_min = Vector3::new(T::c(f(&mut pos)?), T::c(f(&mut pos)?), T::c(f(&mut pos)?));
    let bounds_max = Vector3::new(T::c(f(&mut pos)?), T::c(f(&mut pos)?), T::c(f(&mut pos)?));
    let log_sharpness = T::c(f(&mut pos)?);
    let n3 = resolution.pow(3);
    let c3 = conf_resolution.pow(3);
    if bytes.len() != pos + 8 * (n3 + 3 * n3 + c3) {
        return Err(Error::malformed(path, "payload size mismatch"));
    }
    let mut sdf = Vec::with_capacity(n3);
    for _ in 0..n3 {
        sdf.push(T::c(f(&mut pos)?));
    }
    let mut radiance = Vec::with_capacity(n3);
    for _ in 0..n3 {
        radiance.push(Vector3::new(
            T::c(f(&mut pos)?),
            T::c(f(&mut pos)?),
            T::c(f(&mut pos)?),
        ));
    }
    let mut confidence_logit = Vec::with_capacity(c3);
    for _ in 0..c3 {
        confidence_logit.push(T::c(f(&mut pos)?));
    }
    Ok(VoxelSdfField {
        resolution,
        conf_resolution,
        bounds_min,
        bounds_max,
        sdf,
        radiance,
        confidence_logit,
        log_sharpness,
    })
}
