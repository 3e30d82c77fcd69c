//! 2-D projections of latent embeddings for hull-based coverage.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    /// Top two principal components.
    Pca,
    /// Coordinates read from a file produced by an outside tool.
    External,
}

impl fmt::Display for ProjectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionMethod::Pca => "pca",
            ProjectionMethod::External => "external",
        })
    }
}

impl FromStr for ProjectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(ProjectionMethod::Pca),
            "external" => Ok(ProjectionMethod::External),
            other => Err(Error::Config(format!(
                "unknown projection `{other}` (expected `pca` or `external`)"
            ))),
        }
    }
}

/// Relative eigenvalue below which a direction counts as uninformative.
const RANK_TOLERANCE: f64 = 1e-12;

/// Projects onto the top two principal components of the centered data. Each
/// component is signed so that its largest-magnitude loading is positive
/// (the first such loading on ties).
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Vec<Point2>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Projection(format!(
            "need at least 3 points, got {n}"
        )));
    }
    let d = points[0].len();
    if d < 2 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Projection(
            "points must share a dimension of at least 2".into(),
        ));
    }
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) || !(l2 > RANK_TOLERANCE * l1) {
        return Err(Error::Projection(format!(
            "data has fewer than 2 informative directions (top eigenvalues {l1:e}, {l2:e})"
        )));
    }
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = (0..v.len()).fold(
                0usize,
                |best, i| if v[i].abs() > v[best].abs() { i } else { best },
            );
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let dot = |a: &Vec<f64>| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [dot(&axes[0]), dot(&axes[1])]
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
}

/// Reads `x,y` rows, one per observation in dataset order.
pub fn load_projection_csv(path: &Path) -> Result<Vec<Point2>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    reader
        .deserialize::<Row>()
        .map(|r| {
            r.map(|r| [r.x, r.y])
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}

pub fn write_projection_csv(path: &Path, points: &[Point2]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for p in points {
        writer
            .serialize(Row { x: p[0], y: p[1] })
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
