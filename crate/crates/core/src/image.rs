//! Grayscale frames, resampling and 16-bit PNG I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkSet, Point};

/// Pixel spacing in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Spacing {
    pub row_mm: f64,
    pub col_mm: f64,
}

impl Spacing {
    pub fn isotropic(mm: f64) -> Self {
        Spacing {
            row_mm: mm,
            col_mm: mm,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.row_mm > 0.0 && self.col_mm > 0.0 && self.row_mm.is_finite() && self.col_mm.is_finite()
    }

    /// Physical distance between two pixel coordinates.
    pub fn distance_mm(&self, a: Point, b: Point) -> f64 {
        ((a.x - b.x) * self.col_mm).hypot((a.y - b.y) * self.row_mm)
    }
}

impl From<[f64; 2]> for Spacing {
    fn from(v: [f64; 2]) -> Self {
        Spacing {
            row_mm: v[0],
            col_mm: v[1],
        }
    }
}

impl From<Spacing> for [f64; 2] {
    fn from(s: Spacing) -> Self {
        [s.row_mm, s.col_mm]
    }
}

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    spacing: Spacing,
    pixels: Vec<f32>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, spacing: Spacing, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Image(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                width * height
            )));
        }
        if !spacing.is_valid() {
            return Err(Error::Image(format!("invalid spacing {spacing:?}")));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Image("non-finite intensity".into()));
        }
        Ok(Image2D {
            width,
            height,
            spacing,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize, spacing: Spacing) -> Self {
        Image2D {
            width,
            height,
            spacing,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        spacing: Spacing,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Image2D {
            width,
            height,
            spacing,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    /// Replaces the pixel buffer, keeping geometry. Panics on size mismatch.
    pub fn with_pixels(&self, pixels: Vec<f32>) -> Image2D {
        assert_eq!(pixels.len(), self.pixels.len());
        Image2D {
            pixels,
            ..self.clone()
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    /// Bilinear sample; taps outside the image read as zero.
    pub fn sample_zero(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let tap = |xi: i64, yi: i64| -> f64 {
            if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 {
                0.0
            } else {
                self.pixels[yi as usize * self.width + xi as usize] as f64
            }
        };
        let top = tap(x0, y0) * (1.0 - fx) + if fx != 0.0 { tap(x0 + 1, y0) * fx } else { 0.0 };
        if fy == 0.0 {
            return top;
        }
        let bottom = tap(x0, y0 + 1) * (1.0 - fx)
            + if fx != 0.0 {
                tap(x0 + 1, y0 + 1) * fx
            } else {
                0.0
            };
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear sample with border replication.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (xc.floor() as usize).min(self.width - 1);
        let y0 = (yc.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let p = |xi: usize, yi: usize| self.pixels[yi * self.width + xi] as f64;
        let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * fx;
        let bottom = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * fx;
        top + (bottom - top) * fy
    }

    /// Bilinear resampling to a new grid. Pixel centres are aligned so that
    /// coordinate `x` maps to `(x + 0.5) * new_w / w - 0.5`. Spacing is
    /// adjusted so the physical field of view is unchanged.
    pub fn resample(&self, new_width: usize, new_height: usize) -> Image2D {
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        let out = Image2D::from_fn(new_width, new_height, self.spacing, |x, y| {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            self.sample_clamped(src_x, src_y) as f32
        });
        Image2D {
            spacing: Spacing {
                row_mm: self.spacing.row_mm * sy,
                col_mm: self.spacing.col_mm * sx,
            },
            ..out
        }
    }

    /// Linear rescale of intensities to [0, 1]. Constant images map to 0.
    pub fn normalized(&self) -> Image2D {
        let (lo, hi) = self
            .pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        let pixels = if range > 0.0 {
            self.pixels.iter().map(|&v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.pixels.len()]
        };
        self.with_pixels(pixels)
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.pixels.iter().enumerate() {
            if v > self.pixels[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    /// Writes a 16-bit grayscale PNG. Intensities are clamped to [0, 1] and
    /// quantized to `round(v * 65535)`.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut encoder =
            png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Sixteen);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Image(e.to_string()))?;
        let mut data = Vec::with_capacity(self.pixels.len() * 2);
        for &v in &self.pixels {
            data.extend_from_slice(&quantize_u16(v).to_be_bytes());
        }
        writer
            .write_image_data(&data)
            .map_err(|e| Error::Image(e.to_string()))?;
        writer.finish().map_err(|e| Error::Image(e.to_string()))?;
        Ok(())
    }

    /// Reads an 8- or 16-bit grayscale PNG into [0, 1] intensities.
    pub fn load_png(path: &Path, spacing: Spacing) -> Result<Image2D> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let info = reader.info();
        let (width, height) = (info.width as usize, info.height as usize);
        let (color, depth) = (info.color_type, info.bit_depth);
        if color != png::ColorType::Grayscale {
            return Err(Error::Image(format!(
                "{}: expected grayscale PNG, found {color:?}",
                path.display()
            )));
        }
        let mut buf = vec![
            0;
            reader
                .output_buffer_size()
                .ok_or_else(|| Error::Image("PNG too large".into()))?
        ];
        let frame = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Image(e.to_string()))?;
        let bytes = &buf[..frame.buffer_size()];
        let pixels: Vec<f32> = match depth {
            png::BitDepth::Sixteen => bytes
                .chunks_exact(2)
                .map(|c| dequantize_u16(u16::from_be_bytes([c[0], c[1]])))
                .collect(),
            png::BitDepth::Eight => bytes.iter().map(|&b| b as f32 / 255.0).collect(),
            other => return Err(Error::Image(format!("unsupported PNG bit depth {other:?}"))),
        };
        Image2D::new(width, height, spacing, pixels)
    }
}

pub fn quantize_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16
}

pub fn dequantize_u16(q: u16) -> f32 {
    (q as f64 / 65535.0) as f32
}

/// Snaps intensities onto the 16-bit storage grid so that a PNG round trip
/// is lossless.
pub fn snap_to_u16_grid(img: &mut Image2D) {
    for v in img.pixels_mut() {
        *v = dequantize_u16(quantize_u16(*v));
    }
}

/// Resamples a frame to `size`×`size`, rescales intensities to [0, 1], and
/// maps the landmarks onto the new grid. Landmarks that fall outside after
/// scaling become absent.
pub fn preprocess(img: &Image2D, lms: &LandmarkSet, size: usize) -> Result<(Image2D, LandmarkSet)> {
    if size < 32 || !size.is_multiple_of(32) {
        return Err(Error::Image(format!(
            "network input size {size} must be a positive multiple of 32"
        )));
    }
    let resampled = if img.width() == size && img.height() == size {
        img.clone()
    } else {
        img.resample(size, size)
    };
    let sx = size as f64 / img.width() as f64;
    let sy = size as f64 / img.height() as f64;
    let lms = if sx == 1.0 && sy == 1.0 {
        *lms
    } else {
        lms.map_points(size, size, |p| {
            Point::new((p.x + 0.5) * sx - 0.5, (p.y + 0.5) * sy - 0.5)
        })
    };
    Ok((resampled.normalized(), lms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::LandmarkId;

    #[test]
    fn bilinear_zero_padding() {
        let img = Image2D::from_fn(4, 4, Spacing::isotropic(1.0), |x, y| (x + 4 * y) as f32);
        assert_eq!(img.sample_zero(1.0, 2.0), 9.0);
        assert!((img.sample_zero(1.5, 2.0) - 9.5).abs() < 1e-12);
        assert_eq!(img.sample_zero(-1.0, 0.0), 0.0);
        assert!((img.sample_zero(3.5, 0.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn resample_preserves_constant_and_fov() {
        let img = Image2D::from_fn(64, 48, Spacing::isotropic(1.0), |_, _| 0.25);
        let r = img.resample(32, 32);
        assert!(r.pixels().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        assert!((r.spacing().col_mm - 2.0).abs() < 1e-12);
        assert!((r.spacing().row_mm - 1.5).abs() < 1e-12);
    }

    #[test]
    fn preprocess_scales_landmarks() {
        let img = Image2D::from_fn(128, 128, Spacing::isotropic(1.0), |x, _| x as f32);
        let id = LandmarkId::new(1).unwrap();
        let lms = LandmarkSet::empty()
            .with(id, Point::new(63.5, 31.5))
            .unwrap();
        let (out, lms) = preprocess(&img, &lms, 64).unwrap();
        assert_eq!(out.width(), 64);
        let p = lms.get(id).unwrap();
        assert!((p.x - 31.5).abs() < 1e-12 && (p.y - 15.5).abs() < 1e-12);
        let max = out.pixels().iter().cloned().fold(0.0f32, f32::max);
        assert!((max - 1.0).abs() < 1e-6);
        assert!(preprocess(&img, &lms, 48).is_err());
    }

    #[test]
    fn png_round_trip_on_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let mut img = Image2D::from_fn(5, 3, Spacing::isotropic(1.5), |x, y| {
            (x as f32 * 0.173 + y as f32 * 0.05) % 1.0
        });
        snap_to_u16_grid(&mut img);
        img.save_png16(&path).unwrap();
        let back = Image2D::load_png(&path, Spacing::isotropic(1.5)).unwrap();
        assert_eq!(back, img);
    }
}
