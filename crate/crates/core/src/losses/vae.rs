//! Reconstruction and prototype-anchored KL terms of the mixture-of-VAEs loss.

use crate::model::{PosteriorParams, PrototypeBank, SimilarityMatrix};

/// `KL(N(mu, diag σ²) ‖ N(center, I))`.
pub fn kl_diag_gaussian_to_unit(p: &PosteriorParams, center: &[f64]) -> f64 {
    assert_eq!(center.len(), p.dim(), "center dimension");
    0.5 * p
        .mu
        .iter()
        .zip(&p.sigma)
        .zip(center)
        .map(|((m, s), c)| {
            let var = s * s;
            var + (m - c) * (m - c) - 1.0 - var.ln()
        })
        .sum::<f64>()
}

/// Partial derivatives of [`kl_diag_gaussian_to_unit`].
#[derive(Clone, Debug, PartialEq)]
pub struct KlGrad {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub center: Vec<f64>,
}

pub fn kl_diag_gaussian_to_unit_grad(p: &PosteriorParams, center: &[f64]) -> (f64, KlGrad) {
    let value = kl_diag_gaussian_to_unit(p, center);
    let mu: Vec<f64> = p.mu.iter().zip(center).map(|(m, c)| m - c).collect();
    let grad = KlGrad {
        center: mu.iter().map(|v| -v).collect(),
        mu,
        sigma: p.sigma.iter().map(|s| s - 1.0 / s).collect(),
    };
    (value, grad)
}

/// Sum of squared pixel errors per image, averaged over the batch.
pub fn reconstruction_loss(images: &[f32], reconstructions: &[f32], batch: usize) -> f64 {
    assert_eq!(
        images.len(),
        reconstructions.len(),
        "image buffers differ in size"
    );
    assert!(
        batch > 0 && images.len().is_multiple_of(batch),
        "batch does not divide buffer"
    );
    let sse: f64 = images
        .iter()
        .zip(reconstructions)
        .map(|(x, r)| {
            let d = (*x - *r) as f64;
            d * d
        })
        .sum();
    sse / batch as f64
}

/// Normalized similarity weights `s(k,j) / Σ_l s(k,l)` over the active
/// prototypes of `class`, as `(j, weight)` pairs.
pub fn mixture_weights(
    s: &SimilarityMatrix,
    bank: &PrototypeBank,
    class: usize,
) -> Vec<(usize, f64)> {
    let active = bank.active_in_class(class);
    let total: f64 = active.iter().map(|&j| s.get(class, j)).sum();
    active
        .into_iter()
        .map(|j| (j, s.get(class, j) / total))
        .collect()
}

/// Batch mean of `Σ_j w_ij KL(N(μ_i, σ_i) ‖ N(φ_{y_i j}, I))` over the active
/// prototypes of each image's true class.
pub fn mixture_kl(
    posteriors: &[PosteriorParams],
    similarities: &[SimilarityMatrix],
    labels: &[usize],
    bank: &PrototypeBank,
) -> f64 {
    assert_eq!(posteriors.len(), labels.len());
    assert_eq!(similarities.len(), labels.len());
    let total: f64 = posteriors
        .iter()
        .zip(similarities)
        .zip(labels)
        .map(|((p, s), &y)| {
            mixture_weights(s, bank, y)
                .into_iter()
                .map(|(j, w)| w * kl_diag_gaussian_to_unit(p, bank.prototype(y, j)))
                .sum::<f64>()
        })
        .sum();
    total / labels.len() as f64
}

/// Gradients of [`mixture_kl`] with respect to its continuous inputs.
#[derive(Clone, Debug)]
pub struct MixtureKlGrad {
    /// Per image, `d` entries.
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    /// Per image, `K·M` entries (zero outside the true class).
    pub similarity: Vec<Vec<f64>>,
    /// `[K][M][d]`, same layout as the bank.
    pub phi: Vec<f64>,
}

pub fn mixture_kl_grad(
    posteriors: &[PosteriorParams],
    similarities: &[SimilarityMatrix],
    labels: &[usize],
    bank: &PrototypeBank,
) -> (f64, MixtureKlGrad) {
    let n = labels.len() as f64;
    let d = bank.dim;
    let mut grad = MixtureKlGrad {
        mu: Vec::with_capacity(labels.len()),
        sigma: Vec::with_capacity(labels.len()),
        similarity: Vec::with_capacity(labels.len()),
        phi: vec![0.0; bank.phi.len()],
    };
    let mut total = 0.0;
    for ((p, s), &y) in posteriors.iter().zip(similarities).zip(labels) {
        let contrib = image_kl_grad(p, s, y, bank, 1.0 / n, &mut grad.phi);
        total += contrib.value;
        grad.mu.push(contrib.mu);
        grad.sigma.push(contrib.sigma);
        grad.similarity.push(contrib.similarity);
    }
    debug_assert!(grad.mu.iter().all(|g| g.len() == d));
    (total / n, grad)
}

pub(crate) struct ImageKl {
    pub value: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub similarity: Vec<f64>,
}

/// One image's weighted KL and its gradients scaled by `scale`; prototype
/// gradients are accumulated into `dphi`.
pub(crate) fn image_kl_grad(
    p: &PosteriorParams,
    s: &SimilarityMatrix,
    label: usize,
    bank: &PrototypeBank,
    scale: f64,
    dphi: &mut [f64],
) -> ImageKl {
    let d = bank.dim;
    let active = bank.active_in_class(label);
    let sum_s: f64 = active.iter().map(|&j| s.get(label, j)).sum();
    let kls: Vec<f64> = active
        .iter()
        .map(|&j| kl_diag_gaussian_to_unit(p, bank.prototype(label, j)))
        .collect();
    let value: f64 = active
        .iter()
        .zip(&kls)
        .map(|(&j, kl)| s.get(label, j) / sum_s * kl)
        .sum();

    let mut dmu = vec![0.0; d];
    let mut dsim = vec![0.0; s.values.len()];
    for (&j, kl) in active.iter().zip(&kls) {
        let w = s.get(label, j) / sum_s;
        let proto = bank.prototype(label, j);
        let base = bank.index(label, j) * d;
        for t in 0..d {
            let diff = p.mu[t] - proto[t];
            dmu[t] += scale * w * diff;
            dphi[base + t] -= scale * w * diff;
        }
        dsim[bank.index(label, j)] = scale * (kl - value) / sum_s;
    }
    // weights sum to one, so the σ-gradient does not depend on them
    let dsigma = p.sigma.iter().map(|s| scale * (s - 1.0 / s)).collect();
    ImageKl {
        value,
        mu: dmu,
        sigma: dsigma,
        similarity: dsim,
    }
}

/// `(recon, kl)` terms of the mixture-of-VAEs loss.
pub fn vae_loss(
    images: &[f32],
    reconstructions: &[f32],
    posteriors: &[PosteriorParams],
    similarities: &[SimilarityMatrix],
    labels: &[usize],
    bank: &PrototypeBank,
) -> (f64, f64) {
    (
        reconstruction_loss(images, reconstructions, posteriors.len()),
        mixture_kl(posteriors, similarities, labels, bank),
    )
}
