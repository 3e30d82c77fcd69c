//! Gaussian-mode fixtures with known cluster structure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};

/// Modes are listed class-major: the first `modes_per_class[0]` entries of
/// `mode_centers` and `mode_scales` belong to class 0, and so on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub modes_per_class: Vec<usize>,
    pub mode_centers: Vec<Vec<f64>>,
    pub mode_scales: Vec<f64>,
    pub samples_per_mode: usize,
    pub seed: u64,
    /// Side length of rendered blob images.
    #[serde(default = "default_image_size")]
    pub image_size: usize,
}

fn default_image_size() -> usize {
    12
}

/// Two classes with two modes each, laid out so that no single direction
/// separates the classes: class 0 at `(±r, ±r)`, class 1 at `(∓r, ±r)`.
pub fn two_mode_spec(samples_per_mode: usize, seed: u64) -> SyntheticSpec {
    let r = 4.0;
    SyntheticSpec {
        modes_per_class: vec![2, 2],
        mode_centers: vec![vec![-r, -r], vec![r, r], vec![-r, r], vec![r, -r]],
        mode_scales: vec![0.5; 4],
        samples_per_mode,
        seed,
        image_size: default_image_size(),
    }
}

impl SyntheticSpec {
    pub fn num_modes(&self) -> usize {
        self.modes_per_class.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.mode_centers.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let modes = self.num_modes();
        if self.modes_per_class.is_empty() || self.modes_per_class.contains(&0) {
            return Err(Error::Config("every class needs at least one mode".into()));
        }
        if self.mode_centers.len() != modes || self.mode_scales.len() != modes {
            return Err(Error::Config(format!(
                "{modes} modes need {modes} centers and scales, got {} and {}",
                self.mode_centers.len(),
                self.mode_scales.len()
            )));
        }
        let d = self.dim();
        if d == 0
            || self
                .mode_centers
                .iter()
                .any(|c| c.len() != d || c.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Config(
                "mode centers must be finite and share one positive dimension".into(),
            ));
        }
        if self
            .mode_scales
            .iter()
            .any(|s| !(*s > 0.0) || !s.is_finite())
        {
            return Err(Error::Config("mode scales must be positive".into()));
        }
        if self.samples_per_mode == 0 {
            return Err(Error::Config("samples_per_mode must be positive".into()));
        }
        if self.image_size < 4 {
            return Err(Error::Config("image_size must be at least 4".into()));
        }
        Ok(())
    }
}

/// Raw samples, class-major then mode-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPoints {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Global mode index of every sample.
    pub modes: Vec<usize>,
}

pub fn synthetic_points(spec: &SyntheticSpec) -> Result<SyntheticPoints> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_modes() * spec.samples_per_mode;
    let mut out = SyntheticPoints {
        points: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        modes: Vec::with_capacity(n),
    };
    let mut mode = 0;
    for (class, &count) in spec.modes_per_class.iter().enumerate() {
        for _ in 0..count {
            let (center, scale) = (&spec.mode_centers[mode], spec.mode_scales[mode]);
            for _ in 0..spec.samples_per_mode {
                let p = center
                    .iter()
                    .map(|c| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        c + scale * e
                    })
                    .collect();
                out.points.push(p);
                out.labels.push(class);
                out.modes.push(mode);
            }
            mode += 1;
        }
    }
    Ok(out)
}

/// Renders every sample as a Gaussian blob on an `image_size²` canvas, placed
/// by the first two coordinates (the second is taken as 0 for 1-D specs).
/// Group labels are the global mode indices.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let pts = synthetic_points(spec)?;
    let size = spec.image_size;
    let extent = spec
        .mode_centers
        .iter()
        .zip(&spec.mode_scales)
        .map(|(c, s)| c.iter().take(2).fold(0.0f64, |m, v| m.max(v.abs())) + 3.0 * s)
        .fold(0.0f64, f64::max);
    let to_pixel = |v: f64| ((v + extent) / (2.0 * extent)).clamp(0.0, 1.0) * (size - 1) as f64;
    let width = size as f64 / 8.0;
    let mut images = Vec::with_capacity(pts.points.len() * size * size);
    for p in &pts.points {
        let cx = to_pixel(p[0]);
        let cy = to_pixel(p.get(1).copied().unwrap_or(0.0));
        for row in 0..size {
            for col in 0..size {
                let dx = col as f64 - cx;
                let dy = row as f64 - cy;
                images.push((-(dx * dx + dy * dy) / (2.0 * width * width)).exp() as f32);
            }
        }
    }
    Dataset::new(
        images,
        (1, size, size),
        pts.labels,
        Some(pts.modes),
        Some(spec.modes_per_class.len()),
        Split::Train,
    )
}
