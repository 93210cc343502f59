//! Planar CHW tensor of `f64`.

use crate::error::{Error, Result};
use crate::raster::Raster;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    /// len = c * h * w, channel-major.
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Tensor {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != c * h * w {
            return Err(Error::shape(
                format!("{c}x{h}x{w} = {}", c * h * w),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor { c, h, w, data })
    }

    pub fn randn(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor {
        let data = (0..c * h * w)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor { c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.h * self.w;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn check_shape(&self, c: usize, h: usize, w: usize) -> Result<()> {
        if self.shape() != (c, h, w) {
            return Err(Error::shape(
                format!("{c}x{h}x{w}"),
                format!("{}x{}x{}", self.c, self.h, self.w),
            ));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self + s * other`, into a new tensor.
    pub fn axpy(&self, s: f64, other: &Tensor) -> Tensor {
        assert!(self.same_shape(other), "axpy shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + s * b)
            .collect();
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Stack tensors along the channel axis; all must share `(h, w)`.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let (h, w) = (first.h, first.w);
        let mut data = Vec::new();
        let mut c = 0;
        for p in parts {
            if p.h != h || p.w != w {
                return Err(Error::shape(
                    format!("{h}x{w} spatial"),
                    format!("{}x{}", p.h, p.w),
                ));
            }
            data.extend_from_slice(&p.data);
            c += p.c;
        }
        Ok(Tensor { c, h, w, data })
    }

    /// Split a gradient back into channel groups of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor>> {
        if sizes.iter().sum::<usize>() != self.c {
            return Err(Error::shape(
                format!("{} channels", self.c),
                format!("{:?}", sizes),
            ));
        }
        let plane = self.h * self.w;
        let mut out = Vec::with_capacity(sizes.len());
        let mut off = 0;
        for &c in sizes {
            out.push(Tensor {
                c,
                h: self.h,
                w: self.w,
                data: self.data[off * plane..(off + c) * plane].to_vec(),
            });
            off += c;
        }
        Ok(out)
    }

    /// Nearest-neighbour 2x upsample.
    pub fn upsample2x(&self) -> Tensor {
        let mut out = Tensor::zeros(self.c, self.h * 2, self.w * 2);
        for c in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    let v = self.get(c, y, x);
                    out.set(c, 2 * y, 2 * x, v);
                    out.set(c, 2 * y, 2 * x + 1, v);
                    out.set(c, 2 * y + 1, 2 * x, v);
                    out.set(c, 2 * y + 1, 2 * x + 1, v);
                }
            }
        }
        out
    }

    /// Gradient of `upsample2x`: sum each 2x2 block.
    pub fn upsample2x_backward(gout: &Tensor) -> Tensor {
        let (h, w) = (gout.h / 2, gout.w / 2);
        let mut gin = Tensor::zeros(gout.c, h, w);
        for c in 0..gout.c {
            for y in 0..h {
                for x in 0..w {
                    let s = gout.get(c, 2 * y, 2 * x)
                        + gout.get(c, 2 * y, 2 * x + 1)
                        + gout.get(c, 2 * y + 1, 2 * x)
                        + gout.get(c, 2 * y + 1, 2 * x + 1);
                    gin.set(c, y, x, s);
                }
            }
        }
        gin
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Convert an RGB raster into a 3-channel tensor, values unchanged.
    pub fn from_raster(img: &Raster) -> Tensor {
        let (w, h) = img.size();
        let mut t = Tensor::zeros(3, h, w);
        for y in 0..h {
            for x in 0..w {
                let px = img.get(x, y);
                for c in 0..3 {
                    t.set(c, y, x, px[c]);
                }
            }
        }
        t
    }

    /// Convert a 3-channel tensor back to a raster, clamping to `[0, 1]`.
    pub fn to_raster(&self) -> Result<Raster> {
        if self.c != 3 {
            return Err(Error::shape("3 channels", format!("{}", self.c)));
        }
        let mut img = Raster::new(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                img.set(
                    x,
                    y,
                    [
                        self.get(0, y, x).clamp(0.0, 1.0),
                        self.get(1, y, x).clamp(0.0, 1.0),
                        self.get(2, y, x).clamp(0.0, 1.0),
                    ],
                );
            }
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, Domain};

    #[test]
    fn concat_then_split_round_trips() {
        let mut rng = rng_for(1, Domain::Probe, 0);
        let a = Tensor::randn(2, 4, 5, &mut rng);
        let b = Tensor::randn(3, 4, 5, &mut rng);
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), (5, 4, 5));
        let parts = cat.split_channels(&[2, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        // <up(x), g> == <x, up_backward(g)> for random x, g
        let mut rng = rng_for(2, Domain::Probe, 0);
        let x = Tensor::randn(2, 3, 3, &mut rng);
        let g = Tensor::randn(2, 6, 6, &mut rng);
        let up = x.upsample2x();
        let down = Tensor::upsample2x_backward(&g);
        let lhs: f64 = up.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&down.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn raster_round_trip_preserves_values() {
        let mut img = Raster::new(6, 4);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i % 17) as f64 / 16.0;
        }
        let t = Tensor::from_raster(&img);
        let back = t.to_raster().unwrap();
        assert!(img.max_abs_diff(&back) < 1e-15);
    }
}
