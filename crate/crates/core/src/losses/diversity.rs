//! Intra-class prototype diversity terms: the orthonormality baseline and the
//! volumetric (Gram determinant) loss.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_inverse, cholesky_log_det, gram_of_columns};
use crate::model::PrototypeBank;

/// Number of times the jitter is multiplied by ten before giving up.
pub const JITTER_RETRIES: usize = 3;

fn centered_columns(bank: &PrototypeBank, class: usize, active: &[usize]) -> Vec<Vec<f64>> {
    let d = bank.dim;
    let mut mean = vec![0.0; d];
    for &j in active {
        for (m, v) in mean.iter_mut().zip(bank.prototype(class, j)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= active.len() as f64);
    active
        .iter()
        .map(|&j| {
            bank.prototype(class, j)
                .iter()
                .zip(&mean)
                .map(|(v, m)| v - m)
                .collect()
        })
        .collect()
}

/// `‖ΦᵀΦ − I‖²_F` for already-centered columns, with `∂/∂Φ = 4 Φ (ΦᵀΦ − I)`.
fn centered_orthonormality(cols: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let m = cols.len();
    let d = cols.first().map_or(0, |c| c.len());
    let col_refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    let mut residual = gram_of_columns(&col_refs);
    for i in 0..m {
        residual[i * m + i] -= 1.0;
    }
    let value = residual.iter().map(|r| r * r).sum::<f64>();
    let mut grad = vec![vec![0.0; d]; m];
    for j in 0..m {
        for i in 0..m {
            let r = residual[i * m + j];
            if r == 0.0 {
                continue;
            }
            for t in 0..d {
                grad[j][t] += 4.0 * cols[i][t] * r;
            }
        }
    }
    (value, grad)
}

/// `Σ_k ‖Φ̄_kᵀ Φ̄_k − I‖²_F` over the active, mean-subtracted prototypes of each class.
pub fn orthonormality_loss(bank: &PrototypeBank) -> f64 {
    orthonormality_loss_grad(bank).0
}

/// [`orthonormality_loss`] and its gradient in bank layout.
pub fn orthonormality_loss_grad(bank: &PrototypeBank) -> (f64, Vec<f64>) {
    let d = bank.dim;
    let mut grad = vec![0.0; bank.phi.len()];
    let mut total = 0.0;
    for k in 0..bank.num_classes {
        let active = bank.active_in_class(k);
        let m = active.len();
        if m == 0 {
            continue;
        }
        let cols = centered_columns(bank, k, &active);
        let (value, dcentered) = centered_orthonormality(&cols);
        total += value;
        let mut mean = vec![0.0; d];
        for dc in &dcentered {
            for (a, v) in mean.iter_mut().zip(dc) {
                *a += v / m as f64;
            }
        }
        for (dc, &j) in dcentered.iter().zip(&active) {
            let base = bank.index(k, j) * d;
            for t in 0..d {
                grad[base + t] = dc[t] - mean[t];
            }
        }
    }
    (total, grad)
}

/// Jittered Gram matrix of one class with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct Gramian {
    pub class: usize,
    /// Bank indices `j` of the columns, ascending.
    pub columns: Vec<usize>,
    /// `M × M`, row-major: `Φ_kᵀ Φ_k + jitter · I`.
    pub gram: Vec<f64>,
    pub cholesky: Vec<f64>,
    pub log_det: f64,
    /// Jitter actually applied after escalation.
    pub jitter: f64,
}

impl Gramian {
    pub fn size(&self) -> usize {
        self.columns.len()
    }

    /// `|G|^{1/2}`, the volume of the parallelotope spanned by the prototypes.
    pub fn volume(&self) -> f64 {
        (0.5 * self.log_det).exp()
    }
}

/// Gram matrix of the active prototypes of `class`, stabilized by `jitter · I`.
/// A failed factorization is retried with the jitter multiplied by ten, up to
/// [`JITTER_RETRIES`] times.
pub fn gramian(bank: &PrototypeBank, class: usize, jitter: f64) -> Result<Gramian> {
    let columns = bank.active_in_class(class);
    let m = columns.len();
    let col_refs: Vec<&[f64]> = columns.iter().map(|&j| bank.prototype(class, j)).collect();
    let base = gram_of_columns(&col_refs);
    let mut jitter = jitter;
    for attempt in 0..=JITTER_RETRIES {
        let mut gram = base.clone();
        for i in 0..m {
            gram[i * m + i] += jitter;
        }
        if let Some(l) = cholesky(&gram, m) {
            let log_det = cholesky_log_det(&l, m);
            if log_det.is_finite() {
                return Ok(Gramian {
                    class,
                    columns,
                    gram,
                    cholesky: l,
                    log_det,
                    jitter,
                });
            }
        }
        if attempt < JITTER_RETRIES {
            jitter *= 10.0;
        }
    }
    Err(Error::NumericalDegeneracy { class, jitter })
}

/// `(1/K) Σ_k |G_k|^{-1/2}` together with the per-class volumes `|G_k|^{1/2}`.
pub fn volumetric_loss(bank: &PrototypeBank, jitter: f64) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    let mut volumes = Vec::with_capacity(bank.num_classes);
    for k in 0..bank.num_classes {
        let g = gramian(bank, k, jitter)?;
        loss += (-0.5 * g.log_det).exp();
        volumes.push(g.volume());
    }
    Ok((loss / bank.num_classes as f64, volumes))
}

/// Loss value, per-class volumes, and `∂L/∂Φ` in bank layout.
///
/// `∂|G|^{-1/2}/∂Φ = -|G|^{-1/2} Φ G⁻¹` for `G = ΦᵀΦ + jitter · I`.
pub fn volumetric_loss_grad(
    bank: &PrototypeBank,
    jitter: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let d = bank.dim;
    let kf = bank.num_classes as f64;
    let mut grad = vec![0.0; bank.phi.len()];
    let mut loss = 0.0;
    let mut volumes = Vec::with_capacity(bank.num_classes);
    for k in 0..bank.num_classes {
        let g = gramian(bank, k, jitter)?;
        let m = g.size();
        let inv_vol = (-0.5 * g.log_det).exp();
        loss += inv_vol;
        volumes.push(g.volume());
        let ginv = cholesky_inverse(&g.cholesky, m);
        for (jj, &j) in g.columns.iter().enumerate() {
            let base = bank.index(k, j) * d;
            for (ii, &i) in g.columns.iter().enumerate() {
                let coeff = -inv_vol * ginv[ii * m + jj] / kf;
                for (t, v) in bank.prototype(k, i).iter().enumerate() {
                    grad[base + t] += coeff * v;
                }
            }
        }
    }
    Ok((loss / kf, volumes, grad))
}
