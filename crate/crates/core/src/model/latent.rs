//! Latent-space side of the model: posteriors, prototypes, similarities and
//! the glass-box classifier head. Everything here is `f64`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder output for one image. `sigma` holds standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl PosteriorParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::Config(format!(
                "mu has {} entries but sigma has {}",
                mu.len(),
                sigma.len()
            )));
        }
        if let Some(i) = sigma.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::Data(format!(
                "sigma[{i}] = {} is not positive",
                sigma[i]
            )));
        }
        Ok(PosteriorParams { mu, sigma })
    }

    /// Posterior from a log-variance head: `sigma = exp(logvar / 2)`.
    pub fn from_log_variance(mu: Vec<f64>, logvar: &[f64]) -> Self {
        let sigma = logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
        PosteriorParams { mu, sigma }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
}

/// `z = mu + sigma ⊙ noise`. The caller supplies standard normal noise.
pub fn reparameterize(p: &PosteriorParams, noise: &[f64]) -> LatentCode {
    assert_eq!(noise.len(), p.dim(), "noise dimension");
    LatentCode {
        z: p.mu
            .iter()
            .zip(&p.sigma)
            .zip(noise)
            .map(|((m, s), e)| m + s * e)
            .collect(),
    }
}

/// `K × M` prototypes in a `d`-dimensional latent space, plus the mask of
/// prototypes that still take part in inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Row-major `[K][M][d]`.
    pub phi: Vec<f64>,
    /// Row-major `[K][M]`.
    pub active: Vec<bool>,
}

impl PrototypeBank {
    /// Standard normal entries scaled by `1/√d`.
    pub fn random<R: Rng + ?Sized>(
        num_classes: usize,
        per_class: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let phi = (0..num_classes * per_class * dim)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v * scale
            })
            .collect();
        PrototypeBank {
            num_classes,
            per_class,
            dim,
            phi,
            active: vec![true; num_classes * per_class],
        }
    }

    pub fn from_vectors(
        num_classes: usize,
        per_class: usize,
        dim: usize,
        phi: Vec<f64>,
    ) -> Result<Self> {
        if phi.len() != num_classes * per_class * dim {
            return Err(Error::Config(format!(
                "expected {}x{}x{} prototype entries, got {}",
                num_classes,
                per_class,
                dim,
                phi.len()
            )));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("prototype coordinates must be finite".into()));
        }
        Ok(PrototypeBank {
            num_classes,
            per_class,
            dim,
            phi,
            active: vec![true; num_classes * per_class],
        })
    }

    #[inline]
    pub fn index(&self, class: usize, proto: usize) -> usize {
        class * self.per_class + proto
    }

    pub fn prototype(&self, class: usize, proto: usize) -> &[f64] {
        let start = self.index(class, proto) * self.dim;
        &self.phi[start..start + self.dim]
    }

    pub fn prototype_mut(&mut self, class: usize, proto: usize) -> &mut [f64] {
        let start = self.index(class, proto) * self.dim;
        &mut self.phi[start..start + self.dim]
    }

    pub fn is_active(&self, class: usize, proto: usize) -> bool {
        self.active[self.index(class, proto)]
    }

    /// Indices `j` of the active prototypes of `class`, ascending.
    pub fn active_in_class(&self, class: usize) -> Vec<usize> {
        (0..self.per_class)
            .filter(|&j| self.is_active(class, j))
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// All active `(class, proto)` pairs in class-major order.
    pub fn active_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.num_classes)
            .flat_map(|k| self.active_in_class(k).into_iter().map(move |j| (k, j)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi.len() != self.num_classes * self.per_class * self.dim
            || self.active.len() != self.num_classes * self.per_class
        {
            return Err(Error::Config(
                "prototype bank dimensions are inconsistent".into(),
            ));
        }
        if self.phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("prototype coordinates must be finite".into()));
        }
        for k in 0..self.num_classes {
            if self.active_in_class(k).is_empty() {
                return Err(Error::Config(format!("class {k} has no active prototype")));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `log((D + 1) / (D + ε))` for a squared distance `D`.
#[inline]
pub fn similarity_from_sq_distance(sq_dist: f64, epsilon: f64) -> f64 {
    ((sq_dist + 1.0) / (sq_dist + epsilon)).ln()
}

/// `∂s/∂D` of [`similarity_from_sq_distance`].
#[inline]
pub fn similarity_sq_distance_derivative(sq_dist: f64, epsilon: f64) -> f64 {
    1.0 / (sq_dist + 1.0) - 1.0 / (sq_dist + epsilon)
}

/// Per-image `K × M` similarity scores.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub num_classes: usize,
    pub per_class: usize,
    /// Row-major `[K][M]`.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, class: usize, proto: usize) -> f64 {
        self.values[class * self.per_class + proto]
    }

    pub fn class_row(&self, class: usize) -> &[f64] {
        &self.values[class * self.per_class..(class + 1) * self.per_class]
    }

    /// Copy with the entries of inactive prototypes set to zero.
    pub fn masked(&self, active: &[bool]) -> SimilarityMatrix {
        SimilarityMatrix {
            num_classes: self.num_classes,
            per_class: self.per_class,
            values: self
                .values
                .iter()
                .zip(active)
                .map(|(v, a)| if *a { *v } else { 0.0 })
                .collect(),
        }
    }
}

/// Similarity of `z` to every prototype in the bank (inactive ones included).
pub fn similarity(z: &LatentCode, bank: &PrototypeBank, epsilon: f64) -> SimilarityMatrix {
    assert!(epsilon > 0.0 && epsilon < 1.0, "epsilon must lie in (0, 1)");
    assert_eq!(z.z.len(), bank.dim, "latent dimension");
    let values = bank
        .phi
        .chunks(bank.dim)
        .map(|p| similarity_from_sq_distance(squared_distance(&z.z, p), epsilon))
        .collect();
    SimilarityMatrix {
        num_classes: bank.num_classes,
        per_class: bank.per_class,
        values,
    }
}

/// Bias-free linear map from the flattened `K·M` similarities to `K` logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub num_classes: usize,
    pub inputs: usize,
    /// Row-major `[K·M][K]`: `weights[p][c]` is the contribution of
    /// prototype `p` to the logit of class `c`.
    pub weights: Vec<f64>,
}

impl ClassifierHead {
    pub fn zeros(num_classes: usize, per_class: usize) -> Self {
        let inputs = num_classes * per_class;
        ClassifierHead {
            num_classes,
            inputs,
            weights: vec![0.0; inputs * num_classes],
        }
    }

    /// `own` for a prototype's own class, `other` elsewhere.
    pub fn class_connected(num_classes: usize, per_class: usize, own: f64, other: f64) -> Self {
        let mut head = Self::zeros(num_classes, per_class);
        for p in 0..head.inputs {
            for c in 0..num_classes {
                head.weights[p * num_classes + c] = if p / per_class == c { own } else { other };
            }
        }
        head
    }

    pub fn weight(&self, input: usize, class: usize) -> f64 {
        self.weights[input * self.num_classes + class]
    }

    pub fn logits(&self, s: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), self.inputs, "classifier input size");
        let mut out = vec![0.0; self.num_classes];
        for (p, sp) in s.iter().enumerate() {
            if *sp == 0.0 {
                continue;
            }
            let row = &self.weights[p * self.num_classes..(p + 1) * self.num_classes];
            for (o, w) in out.iter_mut().zip(row) {
                *o += sp * w;
            }
        }
        out
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class probabilities from similarities that already have inactive entries zeroed.
pub fn classify(s: &SimilarityMatrix, head: &ClassifierHead) -> Vec<f64> {
    softmax(&head.logits(&s.values))
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
