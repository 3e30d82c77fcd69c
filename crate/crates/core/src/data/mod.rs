//! Datasets: IDX and array-archive ingestion, seeded splits, and synthetic
//! fixtures with known structure.

mod archive;
mod idx;
mod synthetic;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use archive::{
    load_archive, load_group_csv, write_archive, write_group_csv, ArchiveManifest, MANIFEST_FILE,
};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx};
pub use synthetic::{
    make_synthetic, synthetic_points, two_mode_spec, SyntheticPoints, SyntheticSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected `train` or `test`)"
            ))),
        }
    }
}

/// Images in `[0, 1]`, stored `[N][C][H][W]`, with class labels and optional group labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<f32>,
    /// `(channels, height, width)`
    pub shape: (usize, usize, usize),
    pub labels: Vec<usize>,
    pub group_labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub split: Split,
}

/// `e_label` in `{0,1}^K`.
pub fn one_hot(label: usize, num_classes: usize) -> Result<Vec<f64>> {
    if label >= num_classes {
        return Err(Error::Data(format!(
            "label {label} out of range for {num_classes} classes"
        )));
    }
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    Ok(v)
}

/// A seeded permutation of `0..n`; a pure function of `(n, seed)`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

impl Dataset {
    /// Builds and validates a dataset; `num_classes` of `None` means `max(label) + 1`.
    pub fn new(
        images: Vec<f32>,
        shape: (usize, usize, usize),
        labels: Vec<usize>,
        group_labels: Option<Vec<usize>>,
        num_classes: Option<usize>,
        split: Split,
    ) -> Result<Self> {
        let num_classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let ds = Dataset {
            images,
            shape,
            labels,
            group_labels,
            num_classes,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        let n = self.labels.len();
        if self.images.len() != n * self.image_len() {
            return Err(Error::Data(format!(
                "{} pixel values do not match {} images of shape {:?}",
                self.images.len(),
                n,
                self.shape
            )));
        }
        if let Some(i) = self.labels.iter().position(|&l| l >= self.num_classes) {
            return Err(Error::Data(format!(
                "label {} of item {i} out of range for {} classes",
                self.labels[i], self.num_classes
            )));
        }
        if let Some(g) = &self.group_labels {
            if g.len() != n {
                return Err(Error::Data(format!(
                    "{} group labels for {n} images",
                    g.len()
                )));
            }
        }
        if let Some(i) = self.images.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data(format!(
                "pixel {i} has value {} outside [0, 1]",
                self.images[i]
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.images[i * len..(i + 1) * len]
    }

    /// Items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let len = self.image_len();
        let mut images = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            shape: self.shape,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            group_labels: self
                .group_labels
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// The first `n` items (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Seeded split into `(train, validation)` with `round(fraction · N)` validation items.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must lie in (0, 1), got {fraction}"
            )));
        }
        let n = self.len();
        let n_val = ((fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
        if n < 2 {
            return Err(Error::Data(
                "cannot split a dataset with fewer than 2 items".into(),
            ));
        }
        let perm = permutation(n, seed);
        let mut val = self.subset(&perm[..n_val]);
        let mut train = self.subset(&perm[n_val..]);
        val.split = Split::Test;
        train.split = Split::Train;
        Ok((train, val))
    }

    /// Indices of all items labelled `class`, ascending.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == class)
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Loads a dataset from a directory or IDX image file.
///
/// Accepted layouts:
/// * a directory holding an array archive (`manifest.json`);
/// * a directory holding IDX files, either `train-`/`t10k-` prefixed or bare
///   `images-idx3-ubyte` + `labels-idx1-ubyte`;
/// * the path of an IDX image file whose label file sits next to it with
///   `images-idx3` replaced by `labels-idx1`.
///
/// A `groups.csv` sidecar in the same directory supplies group labels.
pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::Data(format!(
            "data path {} does not exist",
            path.display()
        )));
    }
    let (mut ds, dir) = if path.is_dir() {
        if path.join(MANIFEST_FILE).is_file() {
            (load_archive(path)?, path.to_path_buf())
        } else {
            let prefixed = match split {
                Split::Train => "train-",
                Split::Test => "t10k-",
            };
            let candidates = [prefixed, ""];
            let prefix = candidates
                .iter()
                .find(|p| path.join(format!("{p}images-idx3-ubyte")).is_file())
                .ok_or_else(|| {
                    Error::Data(format!(
                        "{} holds neither {MANIFEST_FILE} nor IDX image files",
                        path.display()
                    ))
                })?;
            let ds = load_idx(
                &path.join(format!("{prefix}images-idx3-ubyte")),
                &path.join(format!("{prefix}labels-idx1-ubyte")),
            )?;
            (ds, path.to_path_buf())
        }
    } else {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if !name.contains("images-idx3") {
            return Err(Error::Data(format!(
                "{} is not an IDX image file",
                path.display()
            )));
        }
        let labels = path.with_file_name(name.replace("images-idx3", "labels-idx1"));
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (load_idx(path, &labels)?, dir)
    };
    ds.split = split;
    let sidecar = dir.join("groups.csv");
    if ds.group_labels.is_none() && sidecar.is_file() {
        ds.group_labels = Some(load_group_csv(&sidecar, ds.len())?);
    }
    Ok(ds)
}
