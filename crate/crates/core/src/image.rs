//! Float RGB framebuffer and binary PPM (P6) export.

use std::io::Write;

use crate::error::{Error, Result};
use crate::Vec3;

/// Float RGB image, row-major. Channels are unclamped composites and may
/// exceed 1 slightly; all values must stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<Vec3>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![Vec3::zeros(); width * height],
        }
    }

    pub fn from_fill(width: usize, height: usize, fill: Vec3) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_rows(width: usize, height: usize, rows: Vec<Vec<Vec3>>) -> Self {
        debug_assert_eq!(rows.len(), height);
        let mut data = Vec::with_capacity(width * height);
        for row in rows {
            debug_assert_eq!(row.len(), width);
            data.extend(row);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> Vec3 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut Vec3 {
        &mut self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &Vec3> {
        self.data.iter()
    }

    pub fn pixels_mut(&mut self) -> impl Iterator<Item = &mut Vec3> {
        self.data.iter_mut()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|p| p.iter().all(|c| c.is_finite()))
    }

    /// Scale every channel in place; used when combining loss cotangents.
    pub fn scale_in_place(&mut self, factor: f64) {
        for p in &mut self.data {
            *p *= factor;
        }
    }

    /// self += factor * other. Sizes must match.
    pub fn add_scaled(&mut self, other: &Image, factor: f64) -> Result<()> {
        if !self.same_size(other) {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Copy of a pixel rectangle. Panics if out of bounds.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Image {
        assert!(x0 + width <= self.width && y0 + height <= self.height);
        let mut out = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                *out.pixel_mut(x, y) = self.pixel(x0 + x, y0 + y);
            }
        }
        out
    }

    /// Binary PPM (P6), 8-bit: clamp to [0,1], scale by 255, round half-up.
    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.width * self.height * 3);
        for p in &self.data {
            for c in 0..3 {
                let v = p[c].clamp(0.0, 1.0);
                buf.push((v * 255.0 + 0.5).floor() as u8);
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn ppm_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_ppm(&mut out).expect("in-memory write");
        out
    }

    pub fn save_ppm(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_ppm(std::io::BufWriter::new(file))
    }
}
