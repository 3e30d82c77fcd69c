//! Convolutional and dense layers with hand-written backward passes.
//!
//! Convolutional activations use a channel-major batch layout `[C][B][H][W]`
//! so that a whole batch goes through a single matrix product per layer.
//! Dense activations are row-major `[B][features]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::{gemm, MatRef};

/// A learnable tensor together with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn zeros(len: usize) -> Self {
        Param {
            value: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn normal<R: Rng + ?Sized>(len: usize, std: f32, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        Param {
            value: (0..len).map(|_| dist.sample(rng)).collect(),
            grad: vec![0.0; len],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Spatial geometry of a square-kernel convolution mapping `(h, w)` to `(out_h, out_w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(h: usize, w: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        assert!(h + 2 * pad >= kernel && w + 2 * pad >= kernel);
        ConvGeom {
            h,
            w,
            kernel,
            stride,
            pad,
            out_h: (h + 2 * pad - kernel) / stride + 1,
            out_w: (w + 2 * pad - kernel) / stride + 1,
        }
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `[C][B][H][W]` into a `(C·k·k) × (B·OH·OW)` column matrix.
pub fn im2col(input: &[f32], channels: usize, batch: usize, g: &ConvGeom, cols: &mut Vec<f32>) {
    let k = g.kernel;
    let ncols = batch * g.out_plane();
    cols.clear();
    cols.resize(channels * k * k * ncols, 0.0);
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..batch {
                    let plane = &input[(c * batch + b) * g.in_plane()..][..g.in_plane()];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.w..][..g.w];
                        let dst_row = &mut dst[(b * g.out_h + oy) * g.out_w..][..g.out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds a column matrix back into `[C][B][H][W]`.
pub fn col2im(cols: &[f32], channels: usize, batch: usize, g: &ConvGeom, out: &mut Vec<f32>) {
    let k = g.kernel;
    let ncols = batch * g.out_plane();
    out.clear();
    out.resize(channels * batch * g.in_plane(), 0.0);
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..batch {
                    let plane = &mut out[(c * batch + b) * g.in_plane()..][..g.in_plane()];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[(b * g.out_h + oy) * g.out_w..][..g.out_w];
                        let dst_row = &mut plane[iy as usize * g.w..][..g.w];
                        for (ox, s) in src_row.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_channel_bias(y: &mut [f32], bias: &[f32], plane: usize) {
    for (c, chunk) in y.chunks_mut(plane).enumerate() {
        let b = bias[c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_channel_sums(dy: &[f32], grad: &mut [f32], plane: usize) {
    for (c, chunk) in dy.chunks(plane).enumerate() {
        grad[c] += chunk.iter().map(|&v| v as f64).sum::<f64>() as f32;
    }
}

/// Strided 2D convolution.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeom,
    /// `[out_channels][in_channels·k·k]`
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * geom.kernel * geom.kernel;
        Conv2d {
            in_channels,
            out_channels,
            geom,
            weight: Param::normal(out_channels * fan_in, (2.0 / fan_in as f32).sqrt(), rng),
            bias: Param::zeros(out_channels),
        }
    }

    fn fan_in(&self) -> usize {
        self.in_channels * self.geom.kernel * self.geom.kernel
    }

    /// Returns the output and the unfolded input needed by [`Conv2d::backward`].
    pub fn forward(&self, x: &[f32], batch: usize) -> (Vec<f32>, Vec<f32>) {
        let mut cols = Vec::new();
        im2col(x, self.in_channels, batch, &self.geom, &mut cols);
        let ncols = batch * self.geom.out_plane();
        let mut y = vec![0.0; self.out_channels * ncols];
        gemm(
            1.0,
            MatRef::new(&self.weight.value, self.out_channels, self.fan_in()),
            MatRef::new(&cols, self.fan_in(), ncols),
            0.0,
            &mut y,
        );
        add_channel_bias(&mut y, &self.bias.value, ncols);
        (y, cols)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &[f32], cols: &[f32], batch: usize) -> Vec<f32> {
        let ncols = batch * self.geom.out_plane();
        let fan_in = self.fan_in();
        let dy_m = MatRef::new(dy, self.out_channels, ncols);
        gemm(
            1.0,
            dy_m,
            MatRef::new(cols, fan_in, ncols).t(),
            1.0,
            &mut self.weight.grad,
        );
        accumulate_channel_sums(dy, &mut self.bias.grad, ncols);
        let mut dcols = vec![0.0; fan_in * ncols];
        gemm(
            1.0,
            MatRef::new(&self.weight.value, self.out_channels, fan_in).t(),
            dy_m,
            0.0,
            &mut dcols,
        );
        let mut dx = Vec::new();
        col2im(&dcols, self.in_channels, batch, &self.geom, &mut dx);
        dx
    }
}

/// Transposed convolution: the adjoint of a [`Conv2d`] with geometry `geom`,
/// mapping `(geom.out_h, geom.out_w)` back up to `(geom.h, geom.w)`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeom,
    /// `[in_channels][out_channels·k·k]`
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
        rng: &mut R,
    ) -> Self {
        let k2 = geom.kernel * geom.kernel;
        // Each output pixel receives roughly in_channels·k²/stride² contributions.
        let fan_in = (in_channels * k2 / (geom.stride * geom.stride)).max(1);
        ConvTranspose2d {
            in_channels,
            out_channels,
            geom,
            weight: Param::normal(
                in_channels * out_channels * k2,
                (2.0 / fan_in as f32).sqrt(),
                rng,
            ),
            bias: Param::zeros(out_channels),
        }
    }

    fn unfolded(&self) -> usize {
        self.out_channels * self.geom.kernel * self.geom.kernel
    }

    pub fn forward(&self, x: &[f32], batch: usize) -> Vec<f32> {
        let ncols = batch * self.geom.out_plane();
        let mut cols = vec![0.0; self.unfolded() * ncols];
        gemm(
            1.0,
            MatRef::new(&self.weight.value, self.in_channels, self.unfolded()).t(),
            MatRef::new(x, self.in_channels, ncols),
            0.0,
            &mut cols,
        );
        let mut y = Vec::new();
        col2im(&cols, self.out_channels, batch, &self.geom, &mut y);
        add_channel_bias(&mut y, &self.bias.value, batch * self.geom.in_plane());
        y
    }

    pub fn backward(&mut self, dy: &[f32], x: &[f32], batch: usize) -> Vec<f32> {
        let ncols = batch * self.geom.out_plane();
        accumulate_channel_sums(dy, &mut self.bias.grad, batch * self.geom.in_plane());
        let mut dcols = Vec::new();
        im2col(dy, self.out_channels, batch, &self.geom, &mut dcols);
        let dcols_m = MatRef::new(&dcols, self.unfolded(), ncols);
        gemm(
            1.0,
            MatRef::new(x, self.in_channels, ncols),
            dcols_m.t(),
            1.0,
            &mut self.weight.grad,
        );
        let mut dx = vec![0.0; self.in_channels * ncols];
        gemm(
            1.0,
            MatRef::new(&self.weight.value, self.in_channels, self.unfolded()),
            dcols_m,
            0.0,
            &mut dx,
        );
        dx
    }
}

/// Fully connected layer, `y = x Wᵀ + b` over row-major `[B][in]` inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out_features][in_features]`
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        in_features: usize,
        out_features: usize,
        gain: f32,
        rng: &mut R,
    ) -> Self {
        Linear {
            in_features,
            out_features,
            weight: Param::normal(
                in_features * out_features,
                gain / (in_features as f32).sqrt(),
                rng,
            ),
            bias: Param::zeros(out_features),
        }
    }

    pub fn forward(&self, x: &[f32], batch: usize) -> Vec<f32> {
        let mut y = Vec::with_capacity(batch * self.out_features);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(
            1.0,
            MatRef::new(x, batch, self.in_features),
            MatRef::new(&self.weight.value, self.out_features, self.in_features).t(),
            1.0,
            &mut y,
        );
        y
    }

    pub fn backward(&mut self, dy: &[f32], x: &[f32], batch: usize) -> Vec<f32> {
        let dy_m = MatRef::new(dy, batch, self.out_features);
        gemm(
            1.0,
            dy_m.t(),
            MatRef::new(x, batch, self.in_features),
            1.0,
            &mut self.weight.grad,
        );
        for row in dy.chunks(self.out_features) {
            for (g, v) in self.bias.grad.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![0.0; batch * self.in_features];
        gemm(
            1.0,
            dy_m,
            MatRef::new(&self.weight.value, self.out_features, self.in_features),
            0.0,
            &mut dx,
        );
        dx
    }
}

pub fn relu_inplace(x: &mut [f32]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `dy` by the positive part of the ReLU output `y`.
pub fn relu_backward(dy: &mut [f32], y: &[f32]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
}

pub fn sigmoid_inplace(x: &mut [f32]) {
    x.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
}

pub fn sigmoid_backward(dy: &mut [f32], y: &[f32]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        *d *= v * (1.0 - v);
    }
}

/// `[C][B][P]` → `[B][C·P]`
pub fn channels_to_rows(x: &[f32], channels: usize, batch: usize, plane: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        for b in 0..batch {
            let src = &x[(c * batch + b) * plane..][..plane];
            out[(b * channels + c) * plane..][..plane].copy_from_slice(src);
        }
    }
    out
}

/// `[B][C·P]` → `[C][B][P]`
pub fn rows_to_channels(x: &[f32], channels: usize, batch: usize, plane: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let src = &x[(b * channels + c) * plane..][..plane];
            out[(c * batch + b) * plane..][..plane].copy_from_slice(src);
        }
    }
    out
}
