//! Floating-point RGB image container and raster I/O.
//!
//! Pixels are stored row-major as `height x width x 3` doubles in `[0, 1]`.
//! PNG loading maps stored integers to `code / (2^bits - 1)`; saving
//! quantizes with round-half-up.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// All-black image.
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    /// Constant-color image.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    /// Builds an image from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::validation(format!(
                "image data length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Edge-clamped lookup; coordinates may fall outside the image.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> [f64; 3] {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// 8-bit quantization of the whole buffer, round-half-up.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Loads an 8- or 16-bit RGB raster file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
        match img {
            image::DynamicImage::ImageRgb8(rgb) => {
                let (w, h) = rgb.dimensions();
                let data = rgb.as_raw().iter().map(|&c| c as f64 / 255.0).collect();
                Self::from_raw(w as usize, h as usize, data)
            }
            image::DynamicImage::ImageRgb16(rgb) => {
                let (w, h) = rgb.dimensions();
                let data = rgb.as_raw().iter().map(|&c| c as f64 / 65535.0).collect();
                Self::from_raw(w as usize, h as usize, data)
            }
            other => Err(Error::validation(format!(
                "unsupported pixel format {:?} in {}; expected 8- or 16-bit RGB",
                other.color(),
                path.display()
            ))),
        }
    }

    /// Saves as an 8-bit RGB PNG.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw = self.to_rgb8();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("raw buffer sized from dimensions");
        img.save(path).map_err(|source| Error::Image { path: path.into(), source })
    }

    /// Saves as a binary PPM (P6); handy for debug dumps without PNG tooling.
    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let hdr = format!("P6\n{} {}\n255\n", self.width, self.height);
        w.write_all(hdr.as_bytes())
            .and_then(|_| w.write_all(&self.to_rgb8()))
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn eight_bit_codes_map_to_unit_range() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("codes.png");
        // one row holding every 8-bit code
        let img = ImageBuffer::from_fn(256, 1, |x, _| {
            let v = x as f64 / 255.0;
            [v, v, v]
        });
        img.save(&path).unwrap();
        let back = ImageBuffer::load(&path).unwrap();
        assert_eq!(back.get(255, 0)[0], 1.0);
        assert_eq!(back.get(0, 0)[0], 0.0);
        for x in 0..256 {
            assert_eq!(back.get(x, 0)[0], x as f64 / 255.0);
        }
    }

    #[test]
    fn save_load_error_bounded_by_half_step() {
        // Quantization error of round-half-up is at most 1/510 per channel;
        // checked against brute force over all 256 codes plus random values.
        for code in 0..256u32 {
            let v = code as f64 / 255.0;
            let q = (v * 255.0).round() / 255.0;
            assert!((q - v).abs() <= 1.0 / 510.0 + 1e-12);
        }
        let dir = tempdir().unwrap();
        let path = dir.path().join("rand.png");
        let mut rng = crate::rng::stream(11, "imgtest", 0);
        let img = ImageBuffer::from_fn(16, 16, |_, _| {
            use rand::RngExt;
            [rng.random(), rng.random(), rng.random()]
        });
        img.save(&path).unwrap();
        let back = ImageBuffer::load(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn sixteen_bit_png_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let raw: Vec<u16> = (0..4 * 4 * 3).map(|i| (i * 4371) as u16).collect();
        let img16 = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(4, 4, raw.clone()).unwrap();
        img16.save(&path).unwrap();
        let img = ImageBuffer::load(&path).unwrap();
        for (i, &c) in raw.iter().enumerate() {
            assert!((img.data()[i] - c as f64 / 65535.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_rgb_input_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let gray = image::GrayImage::from_pixel(4, 4, image::Luma([128]));
        gray.save(&path).unwrap();
        assert!(matches!(ImageBuffer::load(&path), Err(Error::Validation(_))));
    }
}
