//! The glass-box classification pipeline: encode an image into a Gaussian
//! posterior, sample a latent code, compare it with every class prototype, and
//! classify the similarity scores with a bias-free linear layer. A decoder maps
//! latent codes (and prototypes) back to image space.

mod latent;
mod network;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;

pub use latent::{
    argmax, classify, reparameterize, similarity, similarity_from_sq_distance,
    similarity_sq_distance_derivative, softmax, squared_distance, ClassifierHead, LatentCode,
    PosteriorParams, PrototypeBank, SimilarityMatrix,
};
pub use network::{BlockPlan, Decoder, DecoderCache, Encoder, EncoderCache};

/// Initial classifier weight linking a prototype to its own class.
pub const HEAD_OWN_CLASS: f64 = 1.0;
/// Initial classifier weight linking a prototype to every other class.
pub const HEAD_OTHER_CLASS: f64 = -0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub prototypes_per_class: usize,
    pub latent_dim: usize,
    /// `(channels, height, width)`
    pub input_shape: (usize, usize, usize),
    pub epsilon: f64,
    pub seed: u64,
    /// Stride-2 convolution blocks in the encoder (mirrored in the decoder).
    pub conv_blocks: usize,
    /// Channels of the first block; every further block doubles them.
    pub base_channels: usize,
    /// Width of an optional dense hidden layer on both sides; 0 disables it.
    pub hidden_dim: usize,
}

impl ModelConfig {
    /// Defaults for 28×28-scale image benchmarks.
    pub fn for_images(num_classes: usize, input_shape: (usize, usize, usize)) -> Self {
        ModelConfig {
            num_classes,
            prototypes_per_class: 5,
            latent_dim: 256,
            input_shape,
            epsilon: 1e-4,
            seed: 0,
            conv_blocks: 4,
            base_channels: 16,
            hidden_dim: 0,
        }
    }

    /// Defaults for the small synthetic blob-image fixtures.
    pub fn for_synthetic(num_classes: usize, input_shape: (usize, usize, usize)) -> Self {
        ModelConfig {
            num_classes,
            prototypes_per_class: 2,
            latent_dim: 16,
            input_shape,
            epsilon: 1e-4,
            seed: 0,
            conv_blocks: 2,
            base_channels: 8,
            hidden_dim: 64,
        }
    }

    pub fn input_len(&self) -> usize {
        let (c, h, w) = self.input_shape;
        c * h * w
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return fail(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            ));
        }
        if self.prototypes_per_class < 1 {
            return fail("prototypes_per_class must be >= 1".into());
        }
        if self.latent_dim < self.prototypes_per_class {
            return fail(format!(
                "latent_dim ({}) must be >= prototypes_per_class ({})",
                self.latent_dim, self.prototypes_per_class
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return fail(format!(
                "input_shape {:?} has an empty dimension",
                self.input_shape
            ));
        }
        if self.conv_blocks > 0 && self.base_channels == 0 {
            return fail("base_channels must be positive when conv_blocks > 0".into());
        }
        Ok(())
    }
}

/// Everything a forward pass produces for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub prediction: Vec<f64>,
    pub reconstruction: Vec<f32>,
    pub similarities: SimilarityMatrix,
    pub posterior: PosteriorParams,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub bank: PrototypeBank,
    pub head: ClassifierHead,
}

/// Images are encoded in chunks of this many during inference.
const INFERENCE_CHUNK: usize = 256;

impl Model {
    /// Fresh model with every parameter drawn from a generator seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = Encoder::new(&config, &mut rng);
        let decoder = Decoder::new(&config, &mut rng);
        let bank = PrototypeBank::random(
            config.num_classes,
            config.prototypes_per_class,
            config.latent_dim,
            &mut rng,
        );
        let head = ClassifierHead::class_connected(
            config.num_classes,
            config.prototypes_per_class,
            HEAD_OWN_CLASS,
            HEAD_OTHER_CLASS,
        );
        Ok(Model {
            config,
            encoder,
            decoder,
            bank,
            head,
        })
    }

    fn check_images(&self, images: &[f32]) -> Result<usize> {
        let len = self.config.input_len();
        if images.is_empty() || !images.len().is_multiple_of(len) {
            return Err(Error::Config(format!(
                "image buffer of {} values does not match input shape {:?}",
                images.len(),
                self.config.input_shape
            )));
        }
        Ok(images.len() / len)
    }

    /// Posterior parameters of every image in a `[B][C][H][W]` buffer, in order.
    pub fn encode_batch(&self, images: &[f32]) -> Result<Vec<PosteriorParams>> {
        let n = self.check_images(images)?;
        let d = self.config.latent_dim;
        let len = self.config.input_len();
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let b = INFERENCE_CHUNK.min(n - start);
            let (mu, logvar, _) = self
                .encoder
                .forward(&images[start * len..(start + b) * len], b);
            for i in 0..b {
                let m: Vec<f64> = mu[i * d..(i + 1) * d].iter().map(|&v| v as f64).collect();
                let lv: Vec<f64> = logvar[i * d..(i + 1) * d]
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                out.push(PosteriorParams::from_log_variance(m, &lv));
            }
        }
        Ok(out)
    }

    pub fn encode(&self, image: &[f32]) -> Result<PosteriorParams> {
        if image.len() != self.config.input_len() {
            return Err(Error::Config(format!(
                "image has {} values, input shape {:?} needs {}",
                image.len(),
                self.config.input_shape,
                self.config.input_len()
            )));
        }
        Ok(self.encode_batch(image)?.remove(0))
    }

    /// Deterministic embeddings (`z = mu`) of a batch of images.
    pub fn embed(&self, images: &[f32]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .encode_batch(images)?
            .into_iter()
            .map(|p| p.mu)
            .collect())
    }

    pub fn decode(&self, z: &LatentCode) -> Vec<f32> {
        self.decode_batch(std::slice::from_ref(&z.z)).remove(0)
    }

    pub fn decode_batch(&self, codes: &[Vec<f64>]) -> Vec<Vec<f32>> {
        let d = self.config.latent_dim;
        let len = self.config.input_len();
        let mut out = Vec::with_capacity(codes.len());
        for chunk in codes.chunks(INFERENCE_CHUNK) {
            let flat: Vec<f32> = chunk
                .iter()
                .flat_map(|z| {
                    assert_eq!(z.len(), d, "latent dimension");
                    z.iter().map(|&v| v as f32)
                })
                .collect();
            let (images, _) = self.decoder.forward(&flat, chunk.len());
            out.extend(images.chunks(len).map(|c| c.to_vec()));
        }
        out
    }

    /// Decoded image of every prototype, active or not, in `(class, proto)` order.
    pub fn decode_prototypes(&self) -> Vec<Vec<f32>> {
        let codes: Vec<Vec<f64>> = self
            .bank
            .phi
            .chunks(self.config.latent_dim)
            .map(|c| c.to_vec())
            .collect();
        self.decode_batch(&codes)
    }

    pub fn similarity(&self, z: &LatentCode) -> SimilarityMatrix {
        similarity(z, &self.bank, self.config.epsilon)
    }

    /// Class probabilities with inactive prototypes masked out.
    pub fn classify(&self, s: &SimilarityMatrix) -> Vec<f64> {
        classify(&s.masked(&self.bank.active), &self.head)
    }

    pub fn forward(&self, image: &[f32], noise: &[f64]) -> Result<ForwardOutput> {
        let posterior = self.encode(image)?;
        if noise.len() != posterior.dim() {
            return Err(Error::Config(format!(
                "noise has {} entries, latent dimension is {}",
                noise.len(),
                posterior.dim()
            )));
        }
        let z = reparameterize(&posterior, noise);
        let similarities = self.similarity(&z);
        let prediction = self.classify(&similarities);
        let reconstruction = self.decode(&z);
        Ok(ForwardOutput {
            prediction,
            reconstruction,
            similarities,
            posterior,
        })
    }

    /// Deterministic (`z = mu`) class probabilities for a batch of images.
    pub fn predict(&self, images: &[f32]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .embed(images)?
            .into_iter()
            .map(|z| self.classify(&self.similarity(&LatentCode { z })))
            .collect())
    }

    /// Network parameters keyed by module path, in a fixed order.
    pub fn named_network_params(&self) -> Vec<(String, &Param)> {
        let mut out = self.encoder.named_params();
        out.extend(self.decoder.named_params());
        out
    }

    pub fn network_params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.encoder.params_mut();
        out.extend(self.decoder.params_mut());
        out
    }
}
