//! Planar convex hulls and the prototype coverage ratio.

use serde::{Deserialize, Serialize};

use super::projection::Point2;
use crate::error::{Error, Result};
use crate::model::{similarity_from_sq_distance, squared_distance, PrototypeBank};

/// Counter-clockwise, strictly convex polygon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullPolygon {
    pub vertices: Vec<Point2>,
    pub area: f64,
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a counter-clockwise polygon.
pub fn shoelace_area(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice
}

/// Monotone-chain hull. Duplicates are removed first and collinear boundary
/// points are dropped.
pub fn convex_hull(points: &[Point2]) -> Result<HullPolygon> {
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Geometry(
            "hull input contains non-finite coordinates".into(),
        ));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::Geometry(format!(
            "convex hull needs 3 distinct points, got {}",
            pts.len()
        )));
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return Err(Error::Geometry(
            "all points are collinear; the hull has zero area".into(),
        ));
    }
    let area = shoelace_area(&hull);
    Ok(HullPolygon {
        vertices: hull,
        area,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub class: usize,
    pub ratio: f64,
    pub class_hull: HullPolygon,
    pub sample_hull: HullPolygon,
    /// Positions (into the class observations) of the union of prototype neighborhoods, ascending.
    pub sample: Vec<usize>,
}

/// Union, over the active prototypes of `class`, of the `n_nearest` most
/// similar observations (ties toward lower indices). Similarity is measured in
/// the full latent space.
pub fn prototype_neighborhoods(
    embeddings: &[Vec<f64>],
    bank: &PrototypeBank,
    class: usize,
    epsilon: f64,
    n_nearest: usize,
) -> Vec<usize> {
    let mut chosen = vec![false; embeddings.len()];
    for j in bank.active_in_class(class) {
        let proto = bank.prototype(class, j);
        let sims: Vec<f64> = embeddings
            .iter()
            .map(|z| similarity_from_sq_distance(squared_distance(z, proto), epsilon))
            .collect();
        let mut order: Vec<usize> = (0..embeddings.len()).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        for &i in order.iter().take(n_nearest) {
            chosen[i] = true;
        }
    }
    (0..embeddings.len()).filter(|&i| chosen[i]).collect()
}

/// Hull area of the prototype neighborhoods over the hull area of the whole
/// class, both measured on `projected` (the 2-D coordinates of `embeddings`).
pub fn coverage_ratio(
    embeddings: &[Vec<f64>],
    projected: &[Point2],
    bank: &PrototypeBank,
    class: usize,
    epsilon: f64,
    n_nearest: usize,
) -> Result<Coverage> {
    if embeddings.len() != projected.len() {
        return Err(Error::Data(format!(
            "{} embeddings but {} projected points",
            embeddings.len(),
            projected.len()
        )));
    }
    if embeddings.len() < 3 {
        return Err(Error::Data(format!(
            "class {class} has {} observations, coverage needs at least 3",
            embeddings.len()
        )));
    }
    if n_nearest == 0 {
        return Err(Error::Config("n_nearest must be positive".into()));
    }
    let sample = prototype_neighborhoods(embeddings, bank, class, epsilon, n_nearest);
    let class_hull = convex_hull(projected)?;
    let sample_points: Vec<Point2> = sample.iter().map(|&i| projected[i]).collect();
    let sample_hull = convex_hull(&sample_points)?;
    Ok(Coverage {
        class,
        ratio: sample_hull.area / class_hull.area,
        class_hull,
        sample_hull,
        sample,
    })
}
