//! Convolutional encoder and mirrored transposed-convolution decoder.

use rand::Rng;

use crate::nn::{
    channels_to_rows, relu_backward, relu_inplace, rows_to_channels, sigmoid_backward,
    sigmoid_inplace, Conv2d, ConvGeom, ConvTranspose2d, Linear, Param,
};

use super::ModelConfig;

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

/// Channel counts and spatial geometry of every conv block, shared by the
/// encoder and (reversed) the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPlan {
    pub channels: Vec<usize>,
    pub geoms: Vec<ConvGeom>,
}

impl BlockPlan {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (c, mut h, mut w) = cfg.input_shape;
        let mut channels = vec![c];
        let mut geoms = Vec::new();
        for b in 0..cfg.conv_blocks {
            let g = ConvGeom::new(h, w, KERNEL, STRIDE, PAD);
            geoms.push(g);
            channels.push(cfg.base_channels << b);
            h = g.out_h;
            w = g.out_w;
        }
        BlockPlan { channels, geoms }
    }

    pub fn flat_channels(&self) -> usize {
        *self.channels.last().unwrap()
    }

    pub fn flat_plane(&self, cfg: &ModelConfig) -> usize {
        match self.geoms.last() {
            Some(g) => g.out_h * g.out_w,
            None => cfg.input_shape.1 * cfg.input_shape.2,
        }
    }

    pub fn flat_len(&self, cfg: &ModelConfig) -> usize {
        self.flat_channels() * self.flat_plane(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub plan: BlockPlan,
    pub convs: Vec<Conv2d>,
    pub hidden: Option<Linear>,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    flat_plane: usize,
}

/// Activations kept from an encoder forward pass for backpropagation.
#[derive(Debug)]
pub struct EncoderCache {
    batch: usize,
    conv_cols: Vec<Vec<f32>>,
    conv_out: Vec<Vec<f32>>,
    flat: Vec<f32>,
    hidden_out: Option<Vec<f32>>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let plan = BlockPlan::new(cfg);
        let convs = plan
            .geoms
            .iter()
            .enumerate()
            .map(|(i, g)| Conv2d::new(plan.channels[i], plan.channels[i + 1], *g, rng))
            .collect();
        let mut features = plan.flat_len(cfg);
        let hidden = (cfg.hidden_dim > 0).then(|| {
            let l = Linear::new(features, cfg.hidden_dim, 2f32.sqrt(), rng);
            features = cfg.hidden_dim;
            l
        });
        let mu_head = Linear::new(features, cfg.latent_dim, 1.0, rng);
        // Small log-variance weights start every posterior near unit variance.
        let logvar_head = Linear::new(features, cfg.latent_dim, 0.1, rng);
        let flat_plane = plan.flat_plane(cfg);
        Encoder {
            plan,
            convs,
            hidden,
            mu_head,
            logvar_head,
            flat_plane,
        }
    }

    /// `x` is `[B][C][H][W]`. Returns `(mu, logvar)`, each `[B][d]`.
    pub fn forward(&self, x: &[f32], batch: usize) -> (Vec<f32>, Vec<f32>, EncoderCache) {
        let mut conv_cols = Vec::with_capacity(self.convs.len());
        let mut conv_out = Vec::with_capacity(self.convs.len());
        let flat = if self.convs.is_empty() {
            x.to_vec()
        } else {
            let plane = self.plan.geoms[0].h * self.plan.geoms[0].w;
            let mut act = rows_to_channels(x, self.plan.channels[0], batch, plane);
            for conv in &self.convs {
                let (mut y, cols) = conv.forward(&act, batch);
                relu_inplace(&mut y);
                conv_cols.push(cols);
                act = y.clone();
                conv_out.push(y);
            }
            channels_to_rows(&act, self.plan.flat_channels(), batch, self.flat_plane)
        };
        let hidden_out = self.hidden.as_ref().map(|h| {
            let mut y = h.forward(&flat, batch);
            relu_inplace(&mut y);
            y
        });
        let features = hidden_out.as_deref().unwrap_or(&flat);
        let mu = self.mu_head.forward(features, batch);
        let logvar = self.logvar_head.forward(features, batch);
        let cache = EncoderCache {
            batch,
            conv_cols,
            conv_out,
            flat,
            hidden_out,
        };
        (mu, logvar, cache)
    }

    /// Accumulates parameter gradients from `dmu`, `dlogvar` (both `[B][d]`).
    pub fn backward(&mut self, cache: &EncoderCache, dmu: &[f32], dlogvar: &[f32]) {
        let batch = cache.batch;
        let features = cache.hidden_out.as_deref().unwrap_or(&cache.flat);
        let mut dfeat = self.mu_head.backward(dmu, features, batch);
        let dfeat_lv = self.logvar_head.backward(dlogvar, features, batch);
        dfeat.iter_mut().zip(&dfeat_lv).for_each(|(a, b)| *a += b);
        let dflat = match (&mut self.hidden, &cache.hidden_out) {
            (Some(h), Some(out)) => {
                relu_backward(&mut dfeat, out);
                h.backward(&dfeat, &cache.flat, batch)
            }
            _ => dfeat,
        };
        if self.convs.is_empty() {
            return;
        }
        let mut dact = rows_to_channels(&dflat, self.plan.flat_channels(), batch, self.flat_plane);
        for i in (0..self.convs.len()).rev() {
            relu_backward(&mut dact, &cache.conv_out[i]);
            let dx = self.convs[i].backward(&dact, &cache.conv_cols[i], batch);
            if i == 0 {
                break;
            }
            dact = dx;
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("encoder.conv{i}.weight"), &c.weight));
            out.push((format!("encoder.conv{i}.bias"), &c.bias));
        }
        if let Some(h) = &self.hidden {
            out.push(("encoder.hidden.weight".into(), &h.weight));
            out.push(("encoder.hidden.bias".into(), &h.bias));
        }
        out.push(("encoder.mu.weight".into(), &self.mu_head.weight));
        out.push(("encoder.mu.bias".into(), &self.mu_head.bias));
        out.push(("encoder.logvar.weight".into(), &self.logvar_head.weight));
        out.push(("encoder.logvar.bias".into(), &self.logvar_head.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        if let Some(h) = &mut self.hidden {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out.push(&mut self.mu_head.weight);
        out.push(&mut self.mu_head.bias);
        out.push(&mut self.logvar_head.weight);
        out.push(&mut self.logvar_head.bias);
        out
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub plan: BlockPlan,
    pub hidden: Option<Linear>,
    pub expand: Linear,
    /// Ordered from the latent side towards the image.
    pub deconvs: Vec<ConvTranspose2d>,
    flat_plane: usize,
}

#[derive(Debug)]
pub struct DecoderCache {
    batch: usize,
    z: Vec<f32>,
    hidden_out: Option<Vec<f32>>,
    /// Input of every transposed conv, post-activation.
    deconv_in: Vec<Vec<f32>>,
    /// Sigmoid output in `[B][C·H·W]`.
    output: Vec<f32>,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let plan = BlockPlan::new(cfg);
        let mut features = cfg.latent_dim;
        let hidden = (cfg.hidden_dim > 0).then(|| {
            let l = Linear::new(features, cfg.hidden_dim, 2f32.sqrt(), rng);
            features = cfg.hidden_dim;
            l
        });
        let expand = Linear::new(features, plan.flat_len(cfg), 2f32.sqrt(), rng);
        let n = plan.geoms.len();
        let deconvs = (0..n)
            .rev()
            .map(|i| {
                ConvTranspose2d::new(plan.channels[i + 1], plan.channels[i], plan.geoms[i], rng)
            })
            .collect();
        let flat_plane = plan.flat_plane(cfg);
        Decoder {
            plan,
            hidden,
            expand,
            deconvs,
            flat_plane,
        }
    }

    /// `z` is `[B][d]`; the output is `[B][C][H][W]` with values in `[0, 1]`.
    pub fn forward(&self, z: &[f32], batch: usize) -> (Vec<f32>, DecoderCache) {
        let hidden_out = self.hidden.as_ref().map(|h| {
            let mut y = h.forward(z, batch);
            relu_inplace(&mut y);
            y
        });
        let mut y = self
            .expand
            .forward(hidden_out.as_deref().unwrap_or(z), batch);
        let mut deconv_in = Vec::with_capacity(self.deconvs.len());
        let output = if self.deconvs.is_empty() {
            sigmoid_inplace(&mut y);
            y
        } else {
            relu_inplace(&mut y);
            let mut act = rows_to_channels(&y, self.plan.flat_channels(), batch, self.flat_plane);
            let last = self.deconvs.len() - 1;
            for (i, dc) in self.deconvs.iter().enumerate() {
                let mut out = dc.forward(&act, batch);
                if i == last {
                    sigmoid_inplace(&mut out);
                } else {
                    relu_inplace(&mut out);
                }
                deconv_in.push(std::mem::replace(&mut act, out));
            }
            let g = &self.plan.geoms[0];
            channels_to_rows(&act, self.plan.channels[0], batch, g.h * g.w)
        };
        let cache = DecoderCache {
            batch,
            z: z.to_vec(),
            hidden_out,
            deconv_in,
            output: output.clone(),
        };
        (output, cache)
    }

    /// Accumulates parameter gradients and returns `∂L/∂z` (`[B][d]`).
    pub fn backward(&mut self, cache: &DecoderCache, doutput: &[f32]) -> Vec<f32> {
        let batch = cache.batch;
        let mut dy = doutput.to_vec();
        sigmoid_backward(&mut dy, &cache.output);
        let dexpand = if self.deconvs.is_empty() {
            dy
        } else {
            let g = self.plan.geoms[0];
            let mut dact = rows_to_channels(&dy, self.plan.channels[0], batch, g.h * g.w);
            for i in (0..self.deconvs.len()).rev() {
                // the ReLU output of layer i is the input of layer i + 1
                if let Some(out) = cache.deconv_in.get(i + 1) {
                    relu_backward(&mut dact, out);
                }
                dact = self.deconvs[i].backward(&dact, &cache.deconv_in[i], batch);
            }
            let mut d = channels_to_rows(&dact, self.plan.flat_channels(), batch, self.flat_plane);
            let expanded = channels_to_rows(
                &cache.deconv_in[0],
                self.plan.flat_channels(),
                batch,
                self.flat_plane,
            );
            relu_backward(&mut d, &expanded);
            d
        };
        let expand_in = cache.hidden_out.as_deref().unwrap_or(&cache.z);
        let mut dfeat = self.expand.backward(&dexpand, expand_in, batch);
        match (&mut self.hidden, &cache.hidden_out) {
            (Some(h), Some(out)) => {
                relu_backward(&mut dfeat, out);
                h.backward(&dfeat, &cache.z, batch)
            }
            _ => dfeat,
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.push(("decoder.hidden.weight".into(), &h.weight));
            out.push(("decoder.hidden.bias".into(), &h.bias));
        }
        out.push(("decoder.expand.weight".into(), &self.expand.weight));
        out.push(("decoder.expand.bias".into(), &self.expand.bias));
        for (i, d) in self.deconvs.iter().enumerate() {
            out.push((format!("decoder.deconv{i}.weight"), &d.weight));
            out.push((format!("decoder.deconv{i}.bias"), &d.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        if let Some(h) = &mut self.hidden {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out.push(&mut self.expand.weight);
        out.push(&mut self.expand.bias);
        for d in &mut self.deconvs {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }
}
