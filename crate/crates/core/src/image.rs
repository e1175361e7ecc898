//! Linear RGB float images and their PNG / raw float encodings.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{ImageBuffer, ImageFormat, Rgb};

use crate::error::{Error, Result};
use crate::model::Mask;

/// Interleaved RGB image with `f64` channels, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Image::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, color: [f64; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&color);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_shape(&self, other: &Image, context: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ResolutionMismatch {
                expected: (self.width, self.height),
                found: (other.width, other.height),
                context: context.to_string(),
            })
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: [f64; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Copy with every pixel outside `mask` set to zero.
    pub fn masked(&self, mask: &Mask) -> Image {
        let mut out = self.clone();
        for p in 0..self.pixel_count() {
            if !mask.get_index(p) {
                out.data[3 * p..3 * p + 3].fill(0.0);
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::from_raw(self.width, self.height, bytes).expect("buffer matches dimensions")
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_png_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = image::load_from_memory(&bytes)?.to_rgb8();
        Ok(Image {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        })
    }

    /// Planar little-endian `f32` dump: width, height (u32), then the R, G and B planes.
    pub fn write_raw(&self, mut w: impl Write) -> Result<()> {
        w.write_u32::<LittleEndian>(self.width)?;
        w.write_u32::<LittleEndian>(self.height)?;
        for c in 0..3 {
            for p in 0..self.pixel_count() {
                w.write_f32::<LittleEndian>(self.data[3 * p + c] as f32)?;
            }
        }
        Ok(())
    }

    pub fn read_raw(mut r: impl std::io::Read) -> Result<Image> {
        let width = r.read_u32::<LittleEndian>()?;
        let height = r.read_u32::<LittleEndian>()?;
        let mut img = Image::new(width, height);
        for c in 0..3 {
            for p in 0..img.pixel_count() {
                img.data[3 * p + c] = r.read_f32::<LittleEndian>()? as f64;
            }
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_quantizes() {
        let mut img = Image::new(3, 2);
        img.set(1, 1, [1.0, 0.5, 0.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.get(1, 1), [1.0, 128.0 / 255.0, 0.0]);
        assert_eq!(back.get(0, 0), [0.0; 3]);
    }

    #[test]
    fn raw_dump_is_planar() {
        let mut img = Image::new(2, 1);
        img.set(0, 0, [0.25, 0.5, 0.75]);
        let mut buf = Vec::new();
        img.write_raw(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 2 * 3 * 4);
        let back = Image::read_raw(buf.as_slice()).unwrap();
        assert_eq!(back, img);
    }
}
