//! Group-level diversity: entropy of the prototypes' group distribution and
//! accuracy gaps between groups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{similarity_from_sq_distance, squared_distance, PrototypeBank};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityDistribution {
    pub probabilities: Vec<f64>,
}

impl DiversityDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Data("distribution over zero groups".into()));
        }
        if probabilities.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Data(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Data(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(DiversityDistribution { probabilities })
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Data("cannot normalize all-zero counts".into()));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }
}

/// `H = −Σ p ln p` with `0 · ln 0 = 0`.
pub fn combinatorial_diversity(dist: &DiversityDistribution) -> f64 {
    -dist
        .probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Tallies, over active prototypes, the group of the most similar evaluation
/// embedding (ties toward lower indices) and normalizes the tally.
pub fn prototype_group_distribution(
    embeddings: &[Vec<f64>],
    groups: Option<&[usize]>,
    bank: &PrototypeBank,
    epsilon: f64,
) -> Result<DiversityDistribution> {
    let groups = groups.ok_or_else(|| Error::Data("evaluation set has no group labels".into()))?;
    if groups.len() != embeddings.len() || embeddings.is_empty() {
        return Err(Error::Data(format!(
            "{} group labels for {} embeddings",
            groups.len(),
            embeddings.len()
        )));
    }
    let num_groups = groups.iter().max().map_or(0, |g| g + 1);
    let mut counts = vec![0usize; num_groups];
    for (k, j) in bank.active_pairs() {
        let proto = bank.prototype(k, j);
        let mut best = (0, f64::NEG_INFINITY);
        for (i, z) in embeddings.iter().enumerate() {
            let s = similarity_from_sq_distance(squared_distance(z, proto), epsilon);
            if s > best.1 {
                best = (i, s);
            }
        }
        counts[groups[best.0]] += 1;
    }
    DiversityDistribution::from_counts(&counts)
}

/// Accuracy on `group_a` minus accuracy on `group_b`.
pub fn accuracy_gap(
    predictions: &[usize],
    labels: &[usize],
    groups: &[usize],
    group_a: usize,
    group_b: usize,
) -> Result<f64> {
    Ok(group_accuracy(predictions, labels, groups, group_a)?
        - group_accuracy(predictions, labels, groups, group_b)?)
}

pub fn group_accuracy(
    predictions: &[usize],
    labels: &[usize],
    groups: &[usize],
    group: usize,
) -> Result<f64> {
    if predictions.len() != labels.len() || labels.len() != groups.len() {
        return Err(Error::Data(
            "predictions, labels and groups differ in length".into(),
        ));
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for i in 0..labels.len() {
        if groups[i] == group {
            total += 1;
            hit += usize::from(predictions[i] == labels[i]);
        }
    }
    if total == 0 {
        return Err(Error::Data(format!(
            "group {group} has no evaluation items"
        )));
    }
    Ok(hit as f64 / total as f64)
}
