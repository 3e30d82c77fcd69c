//! The latent part of a training step: similarities, classification, the
//! prototype-weighted KL and the diversity term, with gradients for every
//! continuous input. The reconstruction term lives on the decoder side and is
//! passed in as a value.

use crate::error::Result;
use crate::model::{
    similarity_from_sq_distance, similarity_sq_distance_derivative, softmax, squared_distance,
    ClassifierHead, PosteriorParams, PrototypeBank, SimilarityMatrix,
};

use super::prediction::cross_entropy_from_logits;
use super::vae::image_kl_grad;
use super::{
    orthonormality_loss_grad, total_loss, volumetric_loss, volumetric_loss_grad, LossBreakdown,
    LossComponents, LossWeights, Variant,
};

/// Row-major `[B][d]` posterior parameters, noise draws and labels of one batch.
#[derive(Clone, Copy, Debug)]
pub struct LatentBatch<'a> {
    pub mu: &'a [f64],
    pub sigma: &'a [f64],
    pub noise: &'a [f64],
    pub labels: &'a [usize],
}

impl LatentBatch<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `z = mu + sigma ⊙ noise` for the whole batch.
    pub fn latent_codes(&self) -> Vec<f64> {
        self.mu
            .iter()
            .zip(self.sigma)
            .zip(self.noise)
            .map(|((m, s), e)| m + s * e)
            .collect()
    }
}

/// Weighted gradients of the latent objective.
#[derive(Clone, Debug)]
pub struct LatentGrads {
    /// `∂L/∂z` through the similarities, `[B][d]`.
    pub z: Vec<f64>,
    /// Direct `∂L/∂mu` from the KL term, `[B][d]`.
    pub mu: Vec<f64>,
    /// Direct `∂L/∂sigma` from the KL term, `[B][d]`.
    pub sigma: Vec<f64>,
    /// `[K][M][d]`
    pub phi: Vec<f64>,
    /// `[K·M][K]`
    pub head: Vec<f64>,
}

impl LatentGrads {
    /// Total posterior gradients after adding `extra_z` (e.g. from the decoder)
    /// and chaining through `z = mu + sigma ⊙ noise`.
    pub fn posterior(&self, extra_z: Option<&[f64]>, noise: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut dmu = self.mu.clone();
        let mut dsigma = self.sigma.clone();
        for i in 0..dmu.len() {
            let dz = self.z[i] + extra_z.map_or(0.0, |e| e[i]);
            dmu[i] += dz;
            dsigma[i] += dz * noise[i];
        }
        (dmu, dsigma)
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveOutput {
    pub breakdown: LossBreakdown,
    pub grads: LatentGrads,
    /// Number of images whose argmax prediction equals the label.
    pub correct: usize,
}

/// Evaluates the weighted objective for one batch; `recon` is the already
/// computed reconstruction term.
pub fn latent_objective(
    variant: Variant,
    weights: &LossWeights,
    epsilon: f64,
    bank: &PrototypeBank,
    head: &ClassifierHead,
    batch: &LatentBatch<'_>,
    recon: f64,
) -> Result<ObjectiveOutput> {
    let b = batch.len();
    let d = bank.dim;
    let kk = bank.num_classes;
    let inputs = kk * bank.per_class;
    assert_eq!(batch.mu.len(), b * d, "mu shape");
    assert_eq!(batch.sigma.len(), b * d, "sigma shape");
    assert_eq!(batch.noise.len(), b * d, "noise shape");
    let scale = 1.0 / b as f64;
    let z_all = batch.latent_codes();

    let mut grads = LatentGrads {
        z: vec![0.0; b * d],
        mu: vec![0.0; b * d],
        sigma: vec![0.0; b * d],
        phi: vec![0.0; bank.phi.len()],
        head: vec![0.0; head.weights.len()],
    };
    let mut kl_phi = vec![0.0; bank.phi.len()];
    let (mut pred_sum, mut kl_sum) = (0.0, 0.0);
    let mut correct = 0;

    let mut sq = vec![0.0; inputs];
    for i in 0..b {
        let z = &z_all[i * d..(i + 1) * d];
        let label = batch.labels[i];
        for (p, proto) in bank.phi.chunks(d).enumerate() {
            sq[p] = squared_distance(z, proto);
        }
        let sims = SimilarityMatrix {
            num_classes: kk,
            per_class: bank.per_class,
            values: sq
                .iter()
                .map(|&q| similarity_from_sq_distance(q, epsilon))
                .collect(),
        };
        let masked = sims.masked(&bank.active);

        // prediction term
        let logits = head.logits(&masked.values);
        pred_sum += cross_entropy_from_logits(&logits, label);
        let probs = softmax(&logits);
        if crate::model::argmax(&probs) == label {
            correct += 1;
        }
        let mut dlogits = probs;
        dlogits[label] -= 1.0;
        dlogits.iter_mut().for_each(|g| *g *= weights.pred * scale);
        let mut dsim = vec![0.0; inputs];
        for p in 0..inputs {
            if !bank.active[p] {
                continue;
            }
            let row = &head.weights[p * kk..(p + 1) * kk];
            let grow = &mut grads.head[p * kk..(p + 1) * kk];
            let mut acc = 0.0;
            for c in 0..kk {
                grow[c] += masked.values[p] * dlogits[c];
                acc += row[c] * dlogits[c];
            }
            dsim[p] = acc;
        }

        // prototype-weighted KL term
        let post = PosteriorParams {
            mu: batch.mu[i * d..(i + 1) * d].to_vec(),
            sigma: batch.sigma[i * d..(i + 1) * d].to_vec(),
        };
        let kl = image_kl_grad(
            &post,
            &sims,
            label,
            bank,
            weights.vae_kl * scale,
            &mut kl_phi,
        );
        kl_sum += kl.value;
        grads.mu[i * d..(i + 1) * d].copy_from_slice(&kl.mu);
        grads.sigma[i * d..(i + 1) * d].copy_from_slice(&kl.sigma);
        for (a, g) in dsim.iter_mut().zip(&kl.similarity) {
            *a += g;
        }

        // back through s = log((D + 1) / (D + ε)), D = ‖z − φ‖²
        let dz = &mut grads.z[i * d..(i + 1) * d];
        for p in 0..inputs {
            if dsim[p] == 0.0 {
                continue;
            }
            let dd = dsim[p] * similarity_sq_distance_derivative(sq[p], epsilon);
            let proto = &bank.phi[p * d..(p + 1) * d];
            let gphi = &mut grads.phi[p * d..(p + 1) * d];
            for t in 0..d {
                let g = 2.0 * dd * (z[t] - proto[t]);
                dz[t] += g;
                gphi[t] -= g;
            }
        }
    }
    for (g, k) in grads.phi.iter_mut().zip(&kl_phi) {
        *g += k;
    }

    let (diversity, per_class_volume) = match variant {
        Variant::PanVae => {
            let (loss, volumes, dphi) = volumetric_loss_grad(bank, weights.jitter)?;
            for (g, v) in grads.phi.iter_mut().zip(&dphi) {
                *g += weights.diversity * v;
            }
            (loss, volumes)
        }
        Variant::ProtoVae => {
            let (loss, dphi) = orthonormality_loss_grad(bank);
            for (g, v) in grads.phi.iter_mut().zip(&dphi) {
                *g += weights.diversity * v;
            }
            (loss, volumetric_loss(bank, weights.jitter)?.1)
        }
    };

    let components = LossComponents {
        pred: pred_sum * scale,
        recon,
        kl: kl_sum * scale,
        diversity,
        per_class_volume,
    };
    let breakdown = total_loss(variant, &components, weights)?;
    Ok(ObjectiveOutput {
        breakdown,
        grads,
        correct,
    })
}
