//! Small raster-image type used throughout the crate.
//!
//! Images are RGB, row-major, channel-interleaved `f64` in `[0, 1]`. PNG is
//! the on-disk format (8-bit per channel, lossless); conversion rounds to the
//! nearest of 256 levels, so a load/store round trip is exact for values that
//! were themselves produced from 8-bit data.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    /// len = width * height * 3, interleaved RGB.
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Raster {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut r = Raster::new(width, height);
        for px in r.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        r
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
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

    /// Alpha-blend `rgb` over the current pixel value.
    #[inline]
    pub fn blend(&mut self, x: usize, y: usize, rgb: [f64; 3], alpha: f64) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = alpha * rgb[c] + (1.0 - alpha) * self.data[i + c];
        }
    }

    pub fn same_size(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Clamp every channel into `[0, 1]`.
    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Maximum absolute channel difference; images must be the same size.
    pub fn max_abs_diff(&self, other: &Raster) -> f64 {
        assert!(self.same_size(other), "max_abs_diff on mismatched sizes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.data.len());
        for v in &self.data {
            buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
            .ok_or_else(|| Error::BadFormat("raster buffer size".into()))?;
        img.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Raster> {
        let img = image::open(path)?.into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut r = Raster::new(w, h);
        for (i, v) in img.into_raw().into_iter().enumerate() {
            r.data[i] = f64::from(v) / 255.0;
        }
        Ok(r)
    }

    /// Quantize to the 8-bit grid that PNG storage uses, in place. Rendered
    /// bundles are quantized before annotation so in-memory and reloaded
    /// frames behave identically.
    pub fn quantize8(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    /// Horizontal motion blur over a rectangular region. `half_width` is the
    /// box filter's half-width in pixels and may be fractional; tap weights
    /// are the kernel's coverage of each pixel, so the smear grows
    /// continuously with the parameter instead of jumping at integer sizes.
    /// Values at or below 0.5 are a no-op (the kernel fits inside one
    /// pixel). Pixels outside the region are read but never written, so
    /// edges stay seam-free.
    pub fn directional_blur_region(
        &mut self,
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        half_width: f64,
    ) {
        if half_width <= 0.5 {
            return;
        }
        let x1 = x1.min(self.width);
        let y1 = y1.min(self.height);
        if x0 >= x1 || y0 >= y1 {
            return;
        }
        let reach = (half_width - 0.5).ceil() as isize;
        let taps: Vec<f64> = (-reach..=reach)
            .map(|d| {
                let lo = (d as f64 - 0.5).max(-half_width);
                let hi = (d as f64 + 0.5).min(half_width);
                (hi - lo).max(0.0)
            })
            .collect();
        let norm = 1.0 / taps.iter().sum::<f64>();
        let src = self.data.clone();
        for y in y0..y1 {
            for x in x0..x1 {
                let mut acc = [0.0f64; 3];
                for (t, wgt) in taps.iter().enumerate() {
                    let dx = t as isize - reach;
                    let xs = (x as isize + dx).clamp(0, self.width as isize - 1) as usize;
                    let i = (y * self.width + xs) * 3;
                    acc[0] += src[i] * wgt;
                    acc[1] += src[i + 1] * wgt;
                    acc[2] += src[i + 2] * wgt;
                }
                let o = (y * self.width + x) * 3;
                self.data[o] = acc[0] * norm;
                self.data[o + 1] = acc[1] * norm;
                self.data[o + 2] = acc[2] * norm;
            }
        }
    }

    /// Full-image separable box blur (used for modality corruption).
    pub fn box_blur(&mut self, radius: usize) {
        if radius == 0 {
            return;
        }
        let (w, h) = (self.width, self.height);
        self.directional_blur_region(0, 0, w, h, radius as f64 + 0.5);
        // vertical pass
        let src = self.data.clone();
        let norm = 1.0 / (2 * radius + 1) as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f64; 3];
                for dy in -(radius as isize)..=(radius as isize) {
                    let ys = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let i = (ys * w + x) * 3;
                    acc[0] += src[i];
                    acc[1] += src[i + 1];
                    acc[2] += src[i + 2];
                }
                let o = (y * w + x) * 3;
                self.data[o] = acc[0] * norm;
                self.data[o + 1] = acc[1] * norm;
                self.data[o + 2] = acc[2] * norm;
            }
        }
    }
}

/// Draw an anti-aliased filled disc.
pub fn draw_disc(img: &mut Raster, cx: f64, cy: f64, radius: f64, rgb: [f64; 3], alpha: f64) {
    draw_disc_ramp(img, cx, cy, radius, rgb, alpha, 1.0);
}

/// Draw a filled disc with a crisp quarter-pixel edge. Ink stops a quarter
/// pixel past the radius, so two discs whose radii do not overlap leave
/// each other's interior pixels untouched.
pub fn draw_disc_crisp(img: &mut Raster, cx: f64, cy: f64, radius: f64, rgb: [f64; 3], alpha: f64) {
    draw_disc_ramp(img, cx, cy, radius, rgb, alpha, 0.5);
}

fn draw_disc_ramp(
    img: &mut Raster,
    cx: f64,
    cy: f64,
    radius: f64,
    rgb: [f64; 3],
    alpha: f64,
    ramp: f64,
) {
    let x_lo = ((cx - radius - 1.0).floor().max(0.0)) as usize;
    let y_lo = ((cy - radius - 1.0).floor().max(0.0)) as usize;
    let x_hi = ((cx + radius + 1.0).ceil().min(img.width() as f64)) as usize;
    let y_hi = ((cy + radius + 1.0).ceil().min(img.height() as f64)) as usize;
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
            // anti-alias ramp at the rim, `ramp` pixels wide
            let cover = ((radius - d) / ramp + 0.5).clamp(0.0, 1.0);
            if cover > 0.0 {
                img.blend(x, y, rgb, alpha * cover);
            }
        }
    }
}

/// Draw an anti-aliased thick line segment (a capsule stroke).
pub fn draw_stroke(
    img: &mut Raster,
    a: (f64, f64),
    b: (f64, f64),
    half_width: f64,
    rgb: [f64; 3],
    alpha: f64,
) {
    let x_lo = (a.0.min(b.0) - half_width - 1.0).floor().max(0.0) as usize;
    let y_lo = (a.1.min(b.1) - half_width - 1.0).floor().max(0.0) as usize;
    let x_hi = ((a.0.max(b.0) + half_width + 1.0).ceil()).min(img.width() as f64) as usize;
    let y_hi = ((a.1.max(b.1) + half_width + 1.0).ceil()).min(img.height() as f64) as usize;
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = dist_to_segment(p, a, b);
            let cover = (half_width - d + 0.5).clamp(0.0, 1.0);
            if cover > 0.0 {
                img.blend(x, y, rgb, alpha * cover);
            }
        }
    }
}

/// Distance from point `p` to segment `ab`.
pub fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (ax + t * dx, ay + t * dy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}
