//! Per-view image buffers produced by either rendering branch.

use nalgebra::Vector3;

use crate::scalar::Real;

/// Row-major 2D buffer of copyable pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer2<P> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<P>,
}

impl<P: Copy> Buffer2<P> {
    pub fn filled(width: usize, height: usize, value: P) -> Self {
        Buffer2 {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> P {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut P {
        &mut self.data[y * self.width + x]
    }

    pub fn same_shape<Q>(&self, other: &Buffer2<Q>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub type ScalarMap<T> = Buffer2<T>;
pub type VectorMap<T> = Buffer2<Vector3<T>>;

/// Color, depth, normal, confidence and coverage images for one view.
///
/// Depth is 0 and the normal is the zero vector wherever coverage is below
/// the renderer's threshold; rendered normals are unit length elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMaps<T: Real> {
    pub color: VectorMap<T>,
    pub depth: ScalarMap<T>,
    /// Camera-frame unit normals.
    pub normal: VectorMap<T>,
    pub confidence: ScalarMap<T>,
    /// Alpha mask 1 - T_{n+1} of the color pass.
    pub alpha: ScalarMap<T>,
}

impl<T: Real> RenderedMaps<T> {
    pub fn new(width: usize, height: usize) -> Self {
        RenderedMaps {
            color: Buffer2::filled(width, height, Vector3::zeros()),
            depth: Buffer2::filled(width, height, T::zero()),
            normal: Buffer2::filled(width, height, Vector3::zeros()),
            confidence: Buffer2::filled(width, height, T::zero()),
            alpha: Buffer2::filled(width, height, T::zero()),
        }
    }

    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    pub fn all_finite(&self) -> bool {
        self.color.data.iter().all(|c| c.iter().all(|v| v.is_finite()))
            && self.depth.data.iter().all(|v| v.is_finite())
            && self.normal.data.iter().all(|c| c.iter().all(|v| v.is_finite()))
            && self.confidence.data.iter().all(|v| v.is_finite())
            && self.alpha.data.iter().all(|v| v.is_finite())
    }
}
