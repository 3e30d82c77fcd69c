//! Davies-Bouldin index over prototype-induced clusters.

use crate::error::{Error, Result};
use crate::model::{similarity_from_sq_distance, squared_distance, PrototypeBank};

/// Observation-to-prototype assignment; prototype indices are flat bank
/// indices `k·M + j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub assignment: Vec<usize>,
    /// `K·M` member lists (empty for inactive or unchosen prototypes).
    pub member_lists: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    fn from_assignment(assignment: Vec<usize>, prototypes: usize) -> Self {
        let mut member_lists = vec![Vec::new(); prototypes];
        for (i, &p) in assignment.iter().enumerate() {
            member_lists[p].push(i);
        }
        ClusterAssignment {
            assignment,
            member_lists,
        }
    }
}

/// Index of the maximal similarity among `candidates`, ties going to the
/// first candidate.
fn most_similar(
    z: &[f64],
    bank: &PrototypeBank,
    epsilon: f64,
    candidates: impl Iterator<Item = usize>,
) -> Option<usize> {
    let d = bank.dim;
    let mut best: Option<(usize, f64)> = None;
    for p in candidates {
        let s = similarity_from_sq_distance(
            squared_distance(z, &bank.phi[p * d..(p + 1) * d]),
            epsilon,
        );
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((p, s));
        }
    }
    best.map(|(p, _)| p)
}

/// Assigns every embedding to its most similar active prototype of any class.
pub fn assign_global(
    embeddings: &[Vec<f64>],
    bank: &PrototypeBank,
    epsilon: f64,
) -> ClusterAssignment {
    let n_protos = bank.active.len();
    let assignment = embeddings
        .iter()
        .map(|z| {
            most_similar(z, bank, epsilon, (0..n_protos).filter(|&p| bank.active[p]))
                .expect("bank has active prototypes")
        })
        .collect();
    ClusterAssignment::from_assignment(assignment, n_protos)
}

/// Assigns every embedding to its most similar active prototype of its own class.
pub fn assign_within_class(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    bank: &PrototypeBank,
    epsilon: f64,
) -> ClusterAssignment {
    let m = bank.per_class;
    let assignment = embeddings
        .iter()
        .zip(labels)
        .map(|(z, &k)| {
            most_similar(
                z,
                bank,
                epsilon,
                (k * m..(k + 1) * m).filter(|&p| bank.active[p]),
            )
            .expect("every class has an active prototype")
        })
        .collect();
    ClusterAssignment::from_assignment(assignment, bank.active.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbScore {
    pub value: f64,
    /// Active prototypes left out because no observation was assigned to them.
    pub excluded: Vec<usize>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// `DB = (1/n) Σ_i max_{j≠i} (s_i + s_j) / d_ij` over active prototypes with
/// at least one member, where `s_i` is the mean distance of prototype `i` to
/// its members and `d_ij` the distance between prototypes.
pub fn db_index(
    embeddings: &[Vec<f64>],
    bank: &PrototypeBank,
    assignment: &ClusterAssignment,
) -> Result<DbScore> {
    let d = bank.dim;
    let proto = |p: usize| &bank.phi[p * d..(p + 1) * d];
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    for p in 0..bank.active.len() {
        if !bank.active[p] {
            continue;
        }
        if assignment.member_lists[p].is_empty() {
            excluded.push(p);
        } else {
            used.push(p);
        }
    }
    if used.len() < 2 {
        return Err(Error::Geometry(format!(
            "Davies-Bouldin index needs at least 2 prototypes with members, found {}",
            used.len()
        )));
    }
    let spread: Vec<f64> = used
        .iter()
        .map(|&p| {
            let members = &assignment.member_lists[p];
            members
                .iter()
                .map(|&i| euclidean(&embeddings[i], proto(p)))
                .sum::<f64>()
                / members.len() as f64
        })
        .collect();
    let mut total = 0.0;
    for (a, &p) in used.iter().enumerate() {
        let mut worst = f64::NEG_INFINITY;
        for (b, &q) in used.iter().enumerate() {
            if a == b {
                continue;
            }
            let dist = euclidean(proto(p), proto(q));
            if dist == 0.0 {
                let (k1, j1) = (p / bank.per_class, p % bank.per_class);
                let (k2, j2) = (q / bank.per_class, q % bank.per_class);
                return Err(Error::Geometry(format!(
                    "prototypes ({k1},{j1}) and ({k2},{j2}) coincide"
                )));
            }
            worst = worst.max((spread[a] + spread[b]) / dist);
        }
        total += worst;
    }
    Ok(DbScore {
        value: total / used.len() as f64,
        excluded,
    })
}

/// Davies-Bouldin index of each class, restricted to that class's observations
/// and active prototypes; `None` for classes where it is undefined.
pub fn db_index_per_class(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    bank: &PrototypeBank,
    epsilon: f64,
) -> Vec<Option<f64>> {
    (0..bank.num_classes)
        .map(|k| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
            let emb: Vec<Vec<f64>> = idx.iter().map(|&i| embeddings[i].clone()).collect();
            let lab = vec![k; emb.len()];
            let assignment = assign_within_class(&emb, &lab, bank, epsilon);
            db_index(&emb, bank, &assignment).ok().map(|s| s.value)
        })
        .collect()
}
