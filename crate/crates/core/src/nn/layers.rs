//! Convolution, linear, and activation primitives with explicit backward
//! passes. Layers own their weights and accumulate gradients in place; the
//! caller keeps forward activations and replays them into `backward`.

use super::tensor::Tensor;
use super::ParamVisitor;
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// 2D convolution with square kernel, symmetric zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// [out_ch, in_ch, k, k]
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gw: Vec<f64>,
    pub gb: Vec<f64>,
}

impl Conv2d {
    /// Kaiming-normal init: std = sqrt(2 / fan_in).
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Conv2d {
        let n = out_ch * in_ch * k * k;
        let std = (2.0 / (in_ch * k * k) as f64).sqrt();
        let w = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
            .collect();
        Conv2d {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            w,
            b: vec![0.0; out_ch],
            gw: vec![0.0; n],
            gb: vec![0.0; out_ch],
        }
    }

    /// All-zero weights and biases. Output is identically zero until the
    /// first optimizer step, which is what conditioning injections rely on.
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Conv2d {
        let n = out_ch * in_ch * k * k;
        Conv2d {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            w: vec![0.0; n],
            b: vec![0.0; out_ch],
            gw: vec![0.0; n],
            gb: vec![0.0; out_ch],
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn visit(&mut self, prefix: &str, f: ParamVisitor<'_>) {
        f(&format!("{prefix}.w"), &mut self.w, &mut self.gw);
        f(&format!("{prefix}.b"), &mut self.b, &mut self.gb);
    }

    /// Valid output-column range for a given kernel column, so the inner
    /// loops never branch on bounds. Returns `(ox_lo, ox_hi_exclusive)`.
    #[inline]
    fn ox_range(&self, kx: usize, in_w: usize, out_w: usize) -> (usize, usize) {
        // ix = ox * stride + kx - pad must lie in [0, in_w)
        let s = self.stride as isize;
        let off = kx as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = ((in_w as isize - 1 - off) / s + 1).min(out_w as isize);
        if hi <= lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.c != self.in_ch {
            return Err(Error::shape(
                format!("{} channels", self.in_ch),
                format!("{}", x.c),
            ));
        }
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut out = Tensor::zeros(self.out_ch, oh, ow);
        for co in 0..self.out_ch {
            out.channel_mut(co).fill(self.b[co]);
        }
        let (s, p, k) = (self.stride, self.pad as isize, self.k);
        for co in 0..self.out_ch {
            for ci in 0..self.in_ch {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.w[((co * self.in_ch + ci) * k + ky) * k + kx];
                        let (ox_lo, ox_hi) = self.ox_range(kx, x.w, ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let ix0 = (ox_lo * s) as isize + kx as isize - p;
                        for oy in 0..oh {
                            let iy = (oy * s) as isize + ky as isize - p;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let xrow = &x.data[(ci * x.h + iy as usize) * x.w..][..x.w];
                            let orow =
                                &mut out.data[(co * oh + oy) * ow..][..ow][ox_lo..ox_hi];
                            if s == 1 {
                                let xs = &xrow[ix0 as usize..][..ox_hi - ox_lo];
                                for (o, xv) in orow.iter_mut().zip(xs) {
                                    *o += wv * xv;
                                }
                            } else {
                                let mut ix = ix0 as usize;
                                for o in orow.iter_mut() {
                                    *o += wv * xrow[ix];
                                    ix += s;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulate weight gradients from `(x, gout)` and return the input
    /// gradient. `x` must be the tensor given to the matching `forward`.
    pub fn backward(&mut self, x: &Tensor, gout: &Tensor) -> Result<Tensor> {
        let (oh, ow) = self.out_hw(x.h, x.w);
        gout.check_shape(self.out_ch, oh, ow)?;
        let mut gx = Tensor::zeros(x.c, x.h, x.w);
        for co in 0..self.out_ch {
            self.gb[co] += gout.channel(co).iter().sum::<f64>();
        }
        let (s, p, k) = (self.stride, self.pad as isize, self.k);
        for co in 0..self.out_ch {
            for ci in 0..self.in_ch {
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = ((co * self.in_ch + ci) * k + ky) * k + kx;
                        let wv = self.w[wi];
                        let (ox_lo, ox_hi) = self.ox_range(kx, x.w, ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let ix0 = (ox_lo * s) as isize + kx as isize - p;
                        let mut wgrad = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * s) as isize + ky as isize - p;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let xoff = (ci * x.h + iy as usize) * x.w;
                            let grow = &gout.data[(co * oh + oy) * ow..][..ow][ox_lo..ox_hi];
                            if s == 1 {
                                let xs = &x.data[xoff + ix0 as usize..][..ox_hi - ox_lo];
                                let gxs = &mut gx.data[xoff + ix0 as usize..][..ox_hi - ox_lo];
                                for ((g, xv), gxv) in grow.iter().zip(xs).zip(gxs) {
                                    wgrad += g * xv;
                                    *gxv += wv * g;
                                }
                            } else {
                                let mut ix = xoff + ix0 as usize;
                                for g in grow {
                                    wgrad += g * x.data[ix];
                                    gx.data[ix] += wv * g;
                                    ix += s;
                                }
                            }
                        }
                        self.gw[wi] += wgrad;
                    }
                }
            }
        }
        Ok(gx)
    }
}

/// Fully connected layer on flat vectors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// [out_dim, in_dim]
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gw: Vec<f64>,
    pub gb: Vec<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Linear {
        let std = (2.0 / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
            .collect();
        Linear {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
            gw: vec![0.0; in_dim * out_dim],
            gb: vec![0.0; out_dim],
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn visit(&mut self, prefix: &str, f: ParamVisitor<'_>) {
        f(&format!("{prefix}.w"), &mut self.w, &mut self.gw);
        f(&format!("{prefix}.b"), &mut self.b, &mut self.gb);
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::shape(
                format!("dim {}", self.in_dim),
                format!("{}", x.len()),
            ));
        }
        let mut out = self.b.clone();
        for (o, wrow) in out.iter_mut().zip(self.w.chunks_exact(self.in_dim)) {
            *o += wrow.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &[f64], gout: &[f64]) -> Result<Vec<f64>> {
        if gout.len() != self.out_dim {
            return Err(Error::shape(
                format!("dim {}", self.out_dim),
                format!("{}", gout.len()),
            ));
        }
        let mut gx = vec![0.0; self.in_dim];
        for (i, (&g, wrow)) in gout.iter().zip(self.w.chunks_exact(self.in_dim)).enumerate() {
            self.gb[i] += g;
            let gwrow = &mut self.gw[i * self.in_dim..(i + 1) * self.in_dim];
            for j in 0..self.in_dim {
                gwrow[j] += g * x[j];
                gx[j] += g * wrow[j];
            }
        }
        Ok(gx)
    }
}

/// A sequence of convolutions with SiLU between them. The trailing
/// activation is optional so a stack can end in raw logits or features.
#[derive(Debug, Clone)]
pub struct ConvStack {
    pub convs: Vec<Conv2d>,
    pub activate_last: bool,
}

/// Forward activations of one [`ConvStack`] pass, replayed into `backward`.
#[derive(Debug, Clone)]
pub struct StackTrace {
    /// Input seen by each layer.
    xs: Vec<Tensor>,
    /// Each layer's pre-activation output.
    pres: Vec<Tensor>,
    pub output: Tensor,
}

impl ConvStack {
    fn activate_at(&self, i: usize) -> bool {
        i + 1 < self.convs.len() || self.activate_last
    }

    pub fn forward(&self, x: &Tensor) -> Result<StackTrace> {
        let mut xs = Vec::with_capacity(self.convs.len());
        let mut pres = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let pre = conv.forward(&cur)?;
            let next = if self.activate_at(i) {
                silu_tensor(&pre)
            } else {
                pre.clone()
            };
            xs.push(std::mem::replace(&mut cur, next));
            pres.push(pre);
        }
        Ok(StackTrace {
            xs,
            pres,
            output: cur,
        })
    }

    /// Accumulate parameter gradients and return the input gradient. `trace`
    /// must come from `forward` on this stack with the current parameters.
    pub fn backward(&mut self, trace: &StackTrace, gout: &Tensor) -> Result<Tensor> {
        let mut g = gout.clone();
        for i in (0..self.convs.len()).rev() {
            if self.activate_at(i) {
                g = silu_backward(&trace.pres[i], &g);
            }
            g = self.convs[i].backward(&trace.xs[i], &g)?;
        }
        Ok(g)
    }

    pub fn out_hw(&self, mut h: usize, mut w: usize) -> (usize, usize) {
        for conv in &self.convs {
            (h, w) = conv.out_hw(h, w);
        }
        (h, w)
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2d::param_count).sum()
    }

    pub fn visit(&mut self, prefix: &str, f: ParamVisitor<'_>) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit(&format!("{prefix}.{i}"), f);
        }
    }
}

/// SiLU (swish) activation, `x * sigmoid(x)`. Smooth everywhere, which keeps
/// finite-difference gradient checks clean.
#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_deriv(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub fn silu_tensor(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        *v = silu(*v);
    }
    out
}

/// Backward through the activation: `gin = gout * silu'(x)` with `x` the
/// pre-activation input.
pub fn silu_backward(x: &Tensor, gout: &Tensor) -> Tensor {
    assert!(x.same_shape(gout), "silu_backward shape mismatch");
    let mut gin = gout.clone();
    for (g, xv) in gin.data.iter_mut().zip(&x.data) {
        *g *= silu_deriv(*xv);
    }
    gin
}
