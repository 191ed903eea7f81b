//! IDX reader/writer (the MNIST distribution format).
//!
//! Layout: a big-endian magic `0x0000_08NN` where `08` marks unsigned bytes
//! and `NN` the number of dimensions, then `NN` big-endian `u32` sizes, then
//! the raw bytes. Images use three dimensions (count, rows, cols), labels one.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Shape;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_header(path: &Path, bytes: &[u8], magic: u32) -> Result<(Vec<usize>, usize)> {
    let dims = (magic & 0xff) as usize;
    let header = 4 + 4 * dims;
    if bytes.len() < header {
        return Err(Error::format(path, "truncated header"));
    }
    let found = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    if found != magic {
        return Err(Error::format(
            path,
            format!("bad magic {found:#010x}, expected {magic:#010x}"),
        ));
    }
    let sizes: Vec<usize> = (0..dims)
        .map(|d| {
            let at = 4 + 4 * d;
            u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
        })
        .collect();
    let payload: usize = sizes.iter().product();
    if bytes.len() - header < payload {
        return Err(Error::format(
            path,
            format!(
                "truncated payload: {} bytes present, {payload} declared",
                bytes.len() - header
            ),
        ));
    }
    Ok((sizes, header))
}

/// Reads an image file, returning `(count, rows, cols, pixels scaled to [0, 1])`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bytes = read_file(path)?;
    let (sizes, header) = parse_header(path, &bytes, IMAGES_MAGIC)?;
    let (n, h, w) = (sizes[0], sizes[1], sizes[2]);
    let pixels = bytes[header..header + n * h * w]
        .iter()
        .map(|&b| f32::from(b) / 255.0)
        .collect();
    Ok((n, h, w, pixels))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    let (sizes, header) = parse_header(path, &bytes, LABELS_MAGIC)?;
    Ok(bytes[header..header + sizes[0]]
        .iter()
        .map(|&b| usize::from(b))
        .collect())
}

/// Loads a grayscale image/label IDX pair. The class count is one more than
/// the largest label present.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (n, h, w, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::format(
            labels_path,
            format!(
                "{} labels but {} holds {n} images",
                labels.len(),
                images_path.display()
            ),
        ));
    }
    if n == 0 {
        return Err(Error::format(images_path, "no images"));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    LabeledDataset::new(Shape::new(1, h, w), pixels, labels, classes)
}

fn write_file(path: &Path, magic: u32, sizes: &[u32], payload: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(4 + 4 * sizes.len() + payload.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for s in sizes {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out.extend_from_slice(payload);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a single-channel dataset's images, quantizing `[0, 1]` to bytes.
pub fn write_idx_images(path: &Path, ds: &LabeledDataset) -> Result<()> {
    let s = ds.shape();
    if s.channels != 1 {
        return Err(Error::Config("IDX export supports single-channel images only".into()));
    }
    let payload: Vec<u8> = ds
        .images()
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_file(
        path,
        IMAGES_MAGIC,
        &[ds.len() as u32, s.height as u32, s.width as u32],
        &payload,
    )
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    if labels.iter().any(|&l| l > 255) {
        return Err(Error::Config("IDX labels must fit in a byte".into()));
    }
    let payload: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    write_file(path, LABELS_MAGIC, &[labels.len() as u32], &payload)
}
