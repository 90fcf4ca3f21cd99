//! Dense flow fields and image rasters.

use crate::error::{Error, Result};

/// Dense per-pixel displacement in pixels per frame, stored as two row-major planes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract(format!("flow dimensions must be >= 1, got {width}x{height}")));
        }
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(Error::contract(format!(
                "flow planes have {} and {} values, expected {n}",
                u.len(),
                v.len()
            )));
        }
        if let Some(i) = u.iter().chain(v.iter()).position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("flow value at linear index {i}")));
        }
        Ok(Self { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "flow dimensions must be >= 1");
        let n = width * height;
        Self { width, height, u: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        let mut f = Self::zeros(width, height);
        f.u.fill(u);
        f.v.fill(v);
        f
    }

    /// Builds a field from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Result<Self> {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(width, height, u, v)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    /// Mutable access to both planes. Callers must keep values finite.
    pub fn planes_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        (&mut self.u, &mut self.v)
    }

    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn set(&mut self, x: usize, y: usize, value: (f32, f32)) {
        debug_assert!(value.0.is_finite() && value.1.is_finite());
        let i = y * self.width + x;
        self.u[i] = value.0;
        self.v[i] = value.1;
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|x| x * factor).collect(),
            v: self.v.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    pub fn magnitudes(&self) -> Vec<f32> {
        self.u.iter().zip(&self.v).map(|(a, b)| a.hypot(*b)).collect()
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitudes().iter().map(|&m| m as f64).sum::<f64>() / self.len() as f64
    }

    pub fn max_magnitude(&self) -> f32 {
        self.magnitudes().into_iter().fold(0.0, f32::max)
    }

    pub(crate) fn same_dims(&self, other: &FlowField, op: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::contract(format!(
                "{op}: flow dimensions differ ({}x{} vs {}x{})",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Row-major raster with 1 or 3 interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    /// Values are clamped into `[0, 1]`; NaN maps to 0.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract(format!("image dimensions must be >= 1, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::contract(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::contract(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        for x in &mut data {
            *x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    /// Assembles an image from per-channel row-major planes.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f32>]) -> Result<Self> {
        let channels = planes.len();
        let n = width * height;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::contract("image planes must all have width*height values"));
        }
        let mut data = vec![0.0; n * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, &val) in plane.iter().enumerate() {
                data[i * channels + c] = val;
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn plane(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn planes(&self) -> Vec<Vec<f32>> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    /// Rec. 601 luma for RGB images; the single plane otherwise.
    pub fn luminance(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub(crate) fn same_dims(&self, other: &ImageBuffer, op: &str) -> Result<()> {
        if self.dims() != other.dims() || self.channels != other.channels {
            return Err(Error::contract(format!(
                "{op}: image shapes differ ({}x{}x{} vs {}x{}x{})",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }
}

/// Multi-plane rasters that share the per-plane resampling and filtering code.
pub trait Raster: Sized {
    fn raster_dims(&self) -> (usize, usize);
    fn to_planes(&self) -> Vec<Vec<f32>>;
    fn with_planes(&self, width: usize, height: usize, planes: Vec<Vec<f32>>) -> Result<Self>;
    /// Whether plane values are displacements that must follow a spatial rescale.
    fn values_scale_with_space(&self) -> bool;
}

impl Raster for FlowField {
    fn raster_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn to_planes(&self) -> Vec<Vec<f32>> {
        vec![self.u.clone(), self.v.clone()]
    }

    fn with_planes(&self, width: usize, height: usize, mut planes: Vec<Vec<f32>>) -> Result<Self> {
        let v = planes.pop().ok_or_else(|| Error::contract("flow needs two planes"))?;
        let u = planes.pop().ok_or_else(|| Error::contract("flow needs two planes"))?;
        FlowField::new(width, height, u, v)
    }

    fn values_scale_with_space(&self) -> bool {
        true
    }
}

impl Raster for ImageBuffer {
    fn raster_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn to_planes(&self) -> Vec<Vec<f32>> {
        self.planes()
    }

    fn with_planes(&self, width: usize, height: usize, planes: Vec<Vec<f32>>) -> Result<Self> {
        ImageBuffer::from_planes(width, height, &planes)
    }

    fn values_scale_with_space(&self) -> bool {
        false
    }
}
