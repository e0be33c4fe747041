//! Binary little-endian PLY export/import of the surfel model. Every surfel
//! serializes a fixed 48-slot SH block (upper slots zero-padded below order
//! 3) so the element layout is order-independent.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::geometry::{sh_basis_count, Surfel, Task};
use crate::scalar::Real;

const SH_SLOTS: usize = 48;
const FLOATS_PER_SURFEL: usize = 3 + 4 + 2 + 1 + 1 + SH_SLOTS;

fn header(count: usize) -> String {
    let mut h = String::new();
    h.push_str("ply\nformat binary_little_endian 1.0\n");
    h.push_str(&format!("element vertex {count}\n"));
    for name in ["x", "y", "z", "qw", "qx", "qy", "qz", "sx", "sy", "opacity_logit", "confidence_logit"] {
        h.push_str(&format!("property float {name}\n"));
    }
    for i in 0..SH_SLOTS {
        h.push_str(&format!("property float sh_{i}\n"));
    }
    h.push_str("property uchar task\nproperty uchar order\nend_header\n");
    h
}

/// Serialized byte size of a surfel list in this PLY layout.
pub fn ply_byte_size(count: usize) -> usize {
    header(count).len() + count * (FLOATS_PER_SURFEL * 4 + 2)
}

pub fn write_surfels_ply<T: Real>(path: &Path, surfels: &[Surfel<T>]) -> Result<()> {
    let mut buf = Vec::with_capacity(ply_byte_size(surfels.len()));
    buf.extend_from_slice(header(surfels.len()).as_bytes());
    for s in surfels {
        let mut floats = [0.0f32; FLOATS_PER_SURFEL];
        for a in 0..3 {
            floats[a] = s.center[a].f64() as f32;
        }
        for a in 0..4 {
            floats[3 + a] = s.rotation[a].f64() as f32;
        }
        floats[7] = s.log_scale.x.f64() as f32;
        floats[8] = s.log_scale.y.f64() as f32;
        floats[9] = s.opacity_logit.f64() as f32;
        floats[10] = s.confidence_logit.f64() as f32;
        for (b, coeff) in s.sh.iter().enumerate() {
            for c in 0..3 {
                floats[11 + 3 * b + c] = coeff[c].f64() as f32;
            }
        }
        for f in floats {
            buf.extend_from_slice(&f.to_le_bytes());
        }
        buf.push(s.task.tag());
        buf.push(s.order as u8);
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_surfels_ply<T: Real>(path: &Path) -> Result<Vec<Surfel<T>>> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let marker = b"end_header\n";
    let head_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::malformed(path, "no end_header"))?
        + marker.len();
    let head = std::str::from_utf8(&bytes[..head_end])
        .map_err(|_| Error::malformed(path, "non-utf8 header"))?;
    let count: usize = head
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .ok_or_else(|| Error::malformed(path, "no vertex element"))?
        .trim()
        .parse()
        .map_err(|_| Error::malformed(path, "bad vertex count"))?;
    if head != header(count) {
        return Err(Error::malformed(path, "unexpected property layout"));
    }
    let stride = FLOATS_PER_SURFEL * 4 + 2;
    if bytes.len() != head_end + count * stride {
        return Err(Error::malformed(path, "truncated vertex data"));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let row = &bytes[head_end + i * stride..head_end + (i + 1) * stride];
        let f = |j: usize| {
            T::c(f32::from_le_bytes(row[4 * j..4 * j + 4].try_into().unwrap()) as f64)
        };
        let task = Task::from_tag(row[stride - 2])
            .ok_or_else(|| Error::malformed(path, format!("bad task tag {}", row[stride - 2])))?;
        let order = row[stride - 1] as usize;
        if order > 3 {
            return Err(Error::malformed(path, format!("bad SH order {order}")));
        }
        let n_basis = sh_basis_count(order);
        let sh = (0..n_basis)
            .map(|b| Vector3::new(f(11 + 3 * b), f(12 + 3 * b), f(13 + 3 * b)))
            .collect();
        out.push(Surfel {
            center: Vector3::new(f(0), f(1), f(2)),
            rotation: Vector4::new(f(3), f(4), f(5), f(6)),
            log_scale: Vector2::new(f(7), f(8)),
            opacity_logit: f(9),
            confidence_logit: f(10),
            sh,
            order,
            task,
        });
    }
    Ok(out)
}

/// Level-set points as a plain xyz point-cloud PLY.
pub fn write_points_ply<T: Real>(path: &Path, points: &[Vector3<T>]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(
        format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
            points.len()
        )
        .as_bytes(),
    );
    for p in points {
        for a in 0..3 {
            buf.extend_from_slice(&(p[a].f64() as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}
