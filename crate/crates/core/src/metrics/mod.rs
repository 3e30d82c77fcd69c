//! Diversity and representativity measures: Davies-Bouldin index, convex-hull
//! coverage in a 2-D projection, and group entropy.

mod db;
mod diversity;
mod hull;
mod projection;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use db::{
    assign_global, assign_within_class, db_index, db_index_per_class, ClusterAssignment, DbScore,
};
pub use diversity::{
    accuracy_gap, combinatorial_diversity, group_accuracy, prototype_group_distribution,
    DiversityDistribution,
};
pub use hull::{
    convex_hull, coverage_ratio, prototype_neighborhoods, shoelace_area, Coverage, HullPolygon,
};
pub use projection::{load_projection_csv, pca_2d, write_projection_csv, Point2, ProjectionMethod};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyGap {
    pub group_a: usize,
    pub group_b: usize,
    pub gap: f64,
}

/// Evaluation summary. Group fields are present only when the evaluation set
/// carries group labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub num_items: usize,
    /// Global-assignment Davies-Bouldin index; `None` when fewer than two
    /// prototypes receive observations.
    pub db: Option<f64>,
    pub db_excluded: Vec<usize>,
    pub per_class_volume: Vec<f64>,
    pub active_prototypes: usize,
    pub total_prototypes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_distribution: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_accuracy: Option<Vec<Option<f64>>>,
    /// Best-scoring group minus worst-scoring group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_gap: Option<AccuracyGap>,
}

impl MetricsReport {
    /// `metric,value` rows; vector fields are spread over indexed keys.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut row = |k: &str, v: String| {
            let _ = writeln!(out, "{k},{v}");
        };
        row("accuracy", self.accuracy.to_string());
        row("num_items", self.num_items.to_string());
        row("db", self.db.map_or_else(String::new, |v| v.to_string()));
        row(
            "db_excluded",
            self.db_excluded
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        );
        row("active_prototypes", self.active_prototypes.to_string());
        row("total_prototypes", self.total_prototypes.to_string());
        for (k, v) in self.per_class_volume.iter().enumerate() {
            row(&format!("volume_class_{k}"), v.to_string());
        }
        if let Some(h) = self.entropy {
            row("entropy", h.to_string());
        }
        if let Some(dist) = &self.group_distribution {
            for (g, p) in dist.iter().enumerate() {
                row(&format!("group_{g}_prototype_share"), p.to_string());
            }
        }
        if let Some(acc) = &self.group_accuracy {
            for (g, a) in acc.iter().enumerate() {
                row(
                    &format!("group_{g}_accuracy"),
                    a.map_or_else(String::new, |v| v.to_string()),
                );
            }
        }
        if let Some(gap) = &self.accuracy_gap {
            row("accuracy_gap_group_a", gap.group_a.to_string());
            row("accuracy_gap_group_b", gap.group_b.to_string());
            row("accuracy_gap", gap.gap.to_string());
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes JSON when `path` ends in `.json`, CSV otherwise.
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = if path.extension().is_some_and(|e| e == "json") {
            self.to_json()
        } else {
            self.to_csv()
        };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
