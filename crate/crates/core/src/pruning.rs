//! Post-training removal of prototypes that never win an image of their class.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{similarity_from_sq_distance, squared_distance, PrototypeBank};

/// `counts[k·M + j]`: training images of class `k` whose most similar active
/// class-`k` prototype is `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponsibilityCount {
    pub num_classes: usize,
    pub per_class: usize,
    pub counts: Vec<usize>,
}

impl ResponsibilityCount {
    pub fn get(&self, class: usize, proto: usize) -> usize {
        self.counts[class * self.per_class + proto]
    }
}

/// Counts responsibilities from deterministic embeddings (`z = mu`). Ties go
/// to the lowest prototype index.
pub fn responsibility_counts(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    bank: &PrototypeBank,
    epsilon: f64,
) -> Result<ResponsibilityCount> {
    let (kk, m) = (bank.num_classes, bank.per_class);
    let mut counts = vec![0; kk * m];
    let mut seen = vec![false; kk];
    for (z, &k) in embeddings.iter().zip(labels) {
        if k >= kk {
            return Err(Error::Data(format!(
                "label {k} out of range for {kk} classes"
            )));
        }
        seen[k] = true;
        let mut best: Option<(usize, f64)> = None;
        for j in bank.active_in_class(k) {
            let s = similarity_from_sq_distance(squared_distance(z, bank.prototype(k, j)), epsilon);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        let (j, _) =
            best.ok_or_else(|| Error::Data(format!("class {k} has no active prototype")))?;
        counts[k * m + j] += 1;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!("class {k} has no training images")));
    }
    Ok(ResponsibilityCount {
        num_classes: kk,
        per_class: m,
        counts,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneRow {
    pub class: usize,
    pub prototype_index: usize,
    pub count: usize,
    pub pruned: bool,
}

/// Deactivates every active prototype with zero responsibility, except that the
/// last active prototype of a class is kept (with a warning). Returns the new
/// bank and one report row per prototype.
pub fn prune(counts: &ResponsibilityCount, bank: &PrototypeBank) -> (PrototypeBank, Vec<PruneRow>) {
    let mut out = bank.clone();
    let mut rows = Vec::with_capacity(bank.active.len());
    for k in 0..bank.num_classes {
        let active = bank.active_in_class(k);
        let mut survivors = active.iter().filter(|&&j| counts.get(k, j) > 0).count();
        for j in 0..bank.per_class {
            let idx = bank.index(k, j);
            let mut pruned = false;
            if bank.active[idx] && counts.get(k, j) == 0 {
                if survivors == 0 && active.last() == Some(&j) {
                    log::warn!("class {k}: keeping prototype {j}, the last active one, despite zero responsibility");
                    survivors = 1;
                } else {
                    out.active[idx] = false;
                    pruned = true;
                }
            }
            rows.push(PruneRow {
                class: k,
                prototype_index: j,
                count: counts.get(k, j),
                pruned,
            });
        }
    }
    (out, rows)
}

pub fn write_prune_report(path: &Path, rows: &[PruneRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
