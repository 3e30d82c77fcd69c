//! Array archive: a directory with `manifest.json` describing dense binary
//! arrays, for datasets that do not ship as IDX files.
//!
//! ```text
//! manifest.json   {"format": "panvae-array-v1", "shape": [N, C, H, W],
//!                  "dtype": "u8" | "f32", "images": "images.bin",
//!                  "labels": "labels.bin", "num_classes": K?,
//!                  "label_map": [..]?, "groups": "groups.bin"?, "group_map": [..]?}
//! images.bin      N·C·H·W pixels; u8 (scaled by 1/255) or little-endian f32 in [0, 1]
//! labels.bin      N little-endian u32
//! groups.bin      N little-endian u32 (optional)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_TAG: &str = "panvae-array-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub images: String,
    pub labels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_map: Option<Vec<String>>,
}

fn read_u32s(path: &Path, n: usize) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * n {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(4 * n) as u64,
            reason: format!(
                "expected {n} little-endian u32 values ({} bytes), found {} bytes",
                4 * n,
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .collect())
}

fn write_u32s(path: &Path, values: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(4 * values.len());
    for &v in values {
        let v =
            u32::try_from(v).map_err(|_| Error::Data(format!("value {v} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_archive(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: ArchiveManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: manifest_path.clone(),
        offset: 0,
        reason: e.to_string(),
    })?;
    if m.format != FORMAT_TAG {
        return Err(Error::Data(format!(
            "{}: unsupported archive format `{}` (expected `{FORMAT_TAG}`)",
            manifest_path.display(),
            m.format
        )));
    }
    let [n, c, h, w] = <[usize; 4]>::try_from(m.shape.as_slice()).map_err(|_| {
        Error::Data(format!(
            "archive shape must be [N, C, H, W], got {:?}",
            m.shape
        ))
    })?;
    let count = n * c * h * w;
    let images_path = dir.join(&m.images);
    let raw = fs::read(&images_path).map_err(|e| Error::io(&images_path, e))?;
    let width = match m.dtype.as_str() {
        "u8" => 1,
        "f32" => 4,
        other => return Err(Error::Data(format!("unsupported archive dtype `{other}`"))),
    };
    if raw.len() != width * count {
        return Err(Error::Format {
            path: images_path,
            offset: raw.len().min(width * count) as u64,
            reason: format!(
                "expected {} bytes for shape {:?}, found {}",
                width * count,
                m.shape,
                raw.len()
            ),
        });
    }
    let images: Vec<f32> = if width == 1 {
        raw.iter().map(|&b| b as f32 / 255.0).collect()
    } else {
        raw.chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect()
    };
    let labels = read_u32s(&dir.join(&m.labels), n)?;
    let groups = match &m.groups {
        Some(g) => Some(read_u32s(&dir.join(g), n)?),
        None => None,
    };
    let num_classes = m.num_classes.or(m.label_map.as_ref().map(Vec::len));
    Dataset::new(images, (c, h, w), labels, groups, num_classes, Split::Train)
}

/// Writes `ds` as an archive in `dir`. Pixels that are all exact multiples of
/// `1/255` are stored as bytes, anything else as f32.
pub fn write_archive(ds: &Dataset, dir: &Path, label_map: Option<Vec<String>>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes_exact = ds
        .images
        .iter()
        .all(|&v| (((v * 255.0).round()) / 255.0).to_bits() == v.to_bits());
    let (dtype, payload): (&str, Vec<u8>) = if bytes_exact {
        (
            "u8",
            ds.images
                .iter()
                .map(|&v| (v * 255.0).round() as u8)
                .collect(),
        )
    } else {
        (
            "f32",
            ds.images.iter().flat_map(|v| v.to_le_bytes()).collect(),
        )
    };
    let (c, h, w) = ds.shape;
    let manifest = ArchiveManifest {
        format: FORMAT_TAG.into(),
        shape: vec![ds.len(), c, h, w],
        dtype: dtype.into(),
        images: "images.bin".into(),
        labels: "labels.bin".into(),
        num_classes: Some(ds.num_classes),
        label_map,
        groups: ds.group_labels.as_ref().map(|_| "groups.bin".into()),
        group_map: None,
    };
    let images_path = dir.join(&manifest.images);
    fs::write(&images_path, payload).map_err(|e| Error::io(&images_path, e))?;
    write_u32s(&dir.join(&manifest.labels), &ds.labels)?;
    if let Some(g) = &ds.group_labels {
        write_u32s(&dir.join("groups.bin"), g)?;
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupRow {
    index: usize,
    group: usize,
}

/// Reads an `index,group` CSV; every index in `0..n` must appear exactly once.
pub fn load_group_csv(path: &Path, n: usize) -> Result<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut groups = vec![None; n];
    for row in reader.deserialize::<GroupRow>() {
        let row = row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let slot = groups.get_mut(row.index).ok_or_else(|| {
            Error::Data(format!(
                "{}: index {} out of range for {n} items",
                path.display(),
                row.index
            ))
        })?;
        if slot.replace(row.group).is_some() {
            return Err(Error::Data(format!(
                "{}: index {} listed twice",
                path.display(),
                row.index
            )));
        }
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            g.ok_or_else(|| {
                Error::Data(format!(
                    "{}: missing group label for item {i}",
                    path.display()
                ))
            })
        })
        .collect()
}

pub fn write_group_csv(path: &Path, groups: &[usize]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for (index, &group) in groups.iter().enumerate() {
        writer
            .serialize(GroupRow { index, group })
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(images: Vec<f32>) -> Dataset {
        Dataset::new(
            images,
            (1, 1, 2),
            vec![1, 0, 2],
            Some(vec![4, 4, 0]),
            Some(3),
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn byte_archive_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample((0..6).map(|b| b as f32 * 40.0 / 255.0).collect());
        write_archive(&ds, dir.path(), None).unwrap();
        let m: ArchiveManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap())
                .unwrap();
        assert_eq!(m.dtype, "u8");
        assert_eq!(load_archive(dir.path()).unwrap(), ds);
    }

    #[test]
    fn float_archive_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample(vec![0.1, 0.2, 0.3, 0.123_456, 0.999, 0.0]);
        write_archive(
            &ds,
            dir.path(),
            Some(vec!["a".into(), "b".into(), "c".into()]),
        )
        .unwrap();
        assert_eq!(load_archive(dir.path()).unwrap(), ds);
    }

    #[test]
    fn short_payload_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_archive(&sample(vec![0.0; 6]), dir.path(), None).unwrap();
        fs::write(dir.path().join("images.bin"), [0u8; 5]).unwrap();
        assert!(matches!(
            load_archive(dir.path()),
            Err(Error::Format { offset: 5, .. })
        ));
    }

    #[test]
    fn group_sidecar_round_trips_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("groups.csv");
        write_group_csv(&path, &[3, 1, 2]).unwrap();
        assert_eq!(load_group_csv(&path, 3).unwrap(), vec![3, 1, 2]);
        assert!(load_group_csv(&path, 4).is_err());
        assert!(load_group_csv(&path, 2).is_err());
        fs::write(&path, "index,group\n0,1\n0,2\n").unwrap();
        assert!(load_group_csv(&path, 1).is_err());
    }
}
