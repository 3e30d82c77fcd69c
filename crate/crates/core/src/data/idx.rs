//! The IDX container: big-endian magic `0x00000803` (images) or `0x00000801`
//! (labels), 32-bit big-endian dimension sizes, then an unsigned-byte payload.

use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len(), format!("file ends inside the {what}")))
}

/// Parses an IDX file with the given magic, returning `(dims, payload)`.
fn parse(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let found = read_u32(&bytes, 0, path, "magic number")?;
    if found != magic {
        return Err(format_err(
            path,
            0,
            format!("magic number {found:#010x}, expected {magic:#010x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        dims.push(read_u32(&bytes, 4 + 4 * i, path, "dimension sizes")? as usize);
    }
    let header = 4 + 4 * ndims;
    let expected = dims.iter().product::<usize>();
    let available = bytes.len() - header;
    if available < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!("payload truncated: header promises {expected} bytes from offset {header}, found {available}"),
        ));
    }
    if available > expected {
        return Err(format_err(
            path,
            header + expected,
            format!("{} trailing bytes after the payload", available - expected),
        ));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Raw image bytes and `(count, rows, cols)` of an IDX image file.
pub fn read_idx_images(path: &Path) -> Result<(Vec<u8>, (usize, usize, usize))> {
    let (dims, payload) = parse(path, IMAGE_MAGIC)?;
    Ok((payload, (dims[0], dims[1], dims[2])))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    Ok(parse(path, LABEL_MAGIC)?.1)
}

/// Loads an image/label IDX pair, scaling pixel bytes by `1/255`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (pixels, (n, rows, cols)) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(format_err(
            labels_path,
            4,
            format!(
                "{} labels for {n} images in {}",
                labels.len(),
                images_path.display()
            ),
        ));
    }
    if n == 0 {
        return Err(Error::Data(format!(
            "{} holds no images",
            images_path.display()
        )));
    }
    Dataset::new(
        pixels.iter().map(|&b| b as f32 / 255.0).collect(),
        (1, rows, cols),
        labels.iter().map(|&l| l as usize).collect(),
        None,
        None,
        Split::Train,
    )
}

/// Writes a single-channel dataset as an IDX pair. Pixels are rounded to the
/// nearest multiple of `1/255`, so loaded IDX data round-trips exactly.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (c, h, w) = ds.shape;
    if c != 1 {
        return Err(Error::Data(format!(
            "IDX images hold one channel, dataset has {c}"
        )));
    }
    if let Some(&l) = ds.labels.iter().find(|&&l| l > u8::MAX as usize) {
        return Err(Error::Data(format!("label {l} does not fit in a byte")));
    }
    let mut img = Vec::with_capacity(16 + ds.images.len());
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for dim in [ds.len(), h, w] {
        img.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    img.extend(ds.images.iter().map(|&v| (v * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lab.extend(ds.labels.iter().map(|&l| l as u8));
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}
