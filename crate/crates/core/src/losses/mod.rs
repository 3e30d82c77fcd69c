//! Training objectives for the two model variants.
//!
//! Both variants share the cross-entropy prediction term and the
//! mixture-of-VAEs term; they differ only in the intra-class diversity term:
//!
//! * `protovae`: orthonormality of the mean-subtracted class prototypes;
//! * `panvae`: the inverse square-rooted Gram determinant of each class,
//!   i.e. the reciprocal of the volume spanned by its prototypes.

mod diversity;
mod objective;
mod prediction;
mod vae;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use diversity::{
    gramian, orthonormality_loss, orthonormality_loss_grad, volumetric_loss, volumetric_loss_grad,
    Gramian, JITTER_RETRIES,
};
pub use objective::{latent_objective, LatentBatch, LatentGrads, ObjectiveOutput};
pub use prediction::{cross_entropy_from_logits, prediction_loss, prediction_loss_logit_grad};
pub use vae::{
    kl_diag_gaussian_to_unit, kl_diag_gaussian_to_unit_grad, mixture_kl, mixture_kl_grad,
    mixture_weights, reconstruction_loss, vae_loss, KlGrad, MixtureKlGrad,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(rename = "protovae")]
    ProtoVae,
    #[serde(rename = "panvae")]
    PanVae,
}

impl Variant {
    pub fn diversity_name(self) -> &'static str {
        match self {
            Variant::ProtoVae => "orthonormality",
            Variant::PanVae => "volumetric",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::ProtoVae => "protovae",
            Variant::PanVae => "panvae",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "protovae" => Ok(Variant::ProtoVae),
            "panvae" => Ok(Variant::PanVae),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected `protovae` or `panvae`)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pred: f64,
    pub vae_recon: f64,
    pub vae_kl: f64,
    /// Scale on the diversity term (orthonormality or volumetric).
    pub diversity: f64,
    /// Diagonal stabilizer added to every Gram matrix.
    pub jitter: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pred: 1.0,
            vae_recon: 1.0,
            vae_kl: 1.0,
            diversity: 1.0,
            jitter: 1e-8,
        }
    }
}

impl LossWeights {
    pub fn with_diversity(diversity: f64) -> Self {
        LossWeights {
            diversity,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pred", self.pred),
            ("vae_recon", self.vae_recon),
            ("vae_kl", self.vae_kl),
            ("diversity", self.diversity),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "loss weight `{name}` must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(1e-12..=1e-3).contains(&self.jitter) {
            return Err(Error::Config(format!(
                "jitter must lie in [1e-12, 1e-3], got {:e}",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Unweighted component values for one batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub pred: f64,
    pub recon: f64,
    pub kl: f64,
    /// Orthonormality loss for `protovae`, volumetric loss for `panvae`.
    pub diversity: f64,
    pub per_class_volume: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pred: f64,
    pub recon: f64,
    pub kl: f64,
    pub diversity: f64,
    pub total: f64,
    pub per_class_volume: Vec<f64>,
}

/// Weighted sum of the components, rejecting non-finite values by name.
pub fn total_loss(
    variant: Variant,
    components: &LossComponents,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    for (name, v) in [
        ("prediction", components.pred),
        ("reconstruction", components.recon),
        ("kl", components.kl),
        (variant.diversity_name(), components.diversity),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { component: name });
        }
    }
    let total = weights.pred * components.pred
        + weights.vae_recon * components.recon
        + weights.vae_kl * components.kl
        + weights.diversity * components.diversity;
    Ok(LossBreakdown {
        pred: components.pred,
        recon: components.recon,
        kl: components.kl,
        diversity: components.diversity,
        total,
        per_class_volume: components.per_class_volume.clone(),
    })
}
