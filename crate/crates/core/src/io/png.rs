//! 8-bit PNG previews of rendered maps.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::maps::{ScalarMap, VectorMap};
use crate::scalar::Real;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png_color<T: Real>(path: &Path, map: &VectorMap<T>) -> Result<()> {
    let mut pixels = Vec::with_capacity(map.data.len() * 3);
    for p in &map.data {
        pixels.push(to_u8(p.x.f64()));
        pixels.push(to_u8(p.y.f64()));
        pixels.push(to_u8(p.z.f64()));
    }
    image::save_buffer(
        path,
        &pixels,
        map.width as u32,
        map.height as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| Error::malformed(path, e.to_string()))
}

/// Normals mapped from [-1,1] to [0,1] per channel.
pub fn write_png_normal<T: Real>(path: &Path, map: &VectorMap<T>) -> Result<()> {
    let mut pixels = Vec::with_capacity(map.data.len() * 3);
    for p in &map.data {
        for c in 0..3 {
            pixels.push(to_u8(p[c].f64() * 0.5 + 0.5));
        }
    }
    image::save_buffer(
        path,
        &pixels,
        map.width as u32,
        map.height as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| Error::malformed(path, e.to_string()))
}

pub fn write_png_gray<T: Real>(path: &Path, map: &ScalarMap<T>, scale: f64) -> Result<()> {
    let pixels: Vec<u8> = map.data.iter().map(|v| to_u8(v.f64() * scale)).collect();
    image::save_buffer(
        path,
        &pixels,
        map.width as u32,
        map.height as u32,
        image::ColorType::L8,
    )
    .map_err(|e| Error::malformed(path, e.to_string()))
}
