//! On-disk dataset formats: CIFAR-10 binary batches, IDX image/label pairs,
//! and the native `QTDS` container.

use std::path::{Path, PathBuf};

use super::{Dataset, Provenance};
use crate::container::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
const CIFAR_CLASSES: usize = 10;
const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const QTDS_MAGIC: &[u8; 4] = b"QTDS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageFormat {
    /// Records of one label byte followed by 3×1024 channel-planar pixel bytes.
    CifarBinary,
    /// IDX3 images at the given path plus an IDX1 label file.
    IdxPair { labels: PathBuf },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads images scaled to `[0, 1]`.
pub fn load_image_dataset(path: &Path, format: &ImageFormat) -> Result<Dataset> {
    match format {
        ImageFormat::CifarBinary => parse_cifar(&read(path)?),
        ImageFormat::IdxPair { labels } => parse_idx(&read(path)?, &read(labels)?),
    }
}

fn format_err(what: &'static str, offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        what,
        offset,
        reason: reason.into(),
    }
}

pub(crate) fn parse_cifar(bytes: &[u8]) -> Result<Dataset> {
    let record = CIFAR_PIXELS + 1;
    if bytes.is_empty() {
        return Err(format_err("cifar-binary", 0, "empty file"));
    }
    if bytes.len() % record != 0 {
        let n = bytes.len() / record;
        return Err(format_err(
            "cifar-binary",
            n * record,
            format!("truncated record: {} of {record} bytes", bytes.len() - n * record),
        ));
    }
    let n = bytes.len() / record;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(format_err("cifar-binary", i * record, format!("label {label} out of range")));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    let images = Tensor::new(&[n, 3, CIFAR_SIDE, CIFAR_SIDE], pixels)?;
    Dataset::new(images, labels, CIFAR_CLASSES, Provenance::File, None)
}

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(what, at, "truncated header"))
}

pub(crate) fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "idx images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err("idx images", 0, format!("bad magic {magic:#010x}")));
    }
    let n = be_u32(images, 4, "idx images")? as usize;
    let rows = be_u32(images, 8, "idx images")? as usize;
    let cols = be_u32(images, 12, "idx images")? as usize;
    let need = 16 + n * rows * cols;
    if images.len() != need {
        return Err(format_err(
            "idx images",
            images.len().min(need),
            format!("expected {need} bytes, found {}", images.len()),
        ));
    }
    let magic = be_u32(labels, 0, "idx labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err("idx labels", 0, format!("bad magic {magic:#010x}")));
    }
    let ln = be_u32(labels, 4, "idx labels")? as usize;
    if ln != n {
        return Err(format_err("idx labels", 4, format!("{ln} labels for {n} images")));
    }
    if labels.len() != 8 + n {
        return Err(format_err(
            "idx labels",
            labels.len().min(8 + n),
            format!("expected {} bytes, found {}", 8 + n, labels.len()),
        ));
    }
    let labels: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let pixels = images[16..].iter().map(|&b| b as f32 / 255.0).collect();
    let images = Tensor::new(&[n, 1, rows, cols], pixels)?;
    Dataset::new(images, labels, classes, Provenance::File, None)
}

/// Serializes `d` as a `QTDS` container (count = N).
pub fn dataset_to_bytes(d: &Dataset) -> Vec<u8> {
    let mut w = ByteWriter::with_header(QTDS_MAGIC, d.len() as u32);
    let [c, h, wd] = d.image_shape();
    w.usize(c);
    w.usize(h);
    w.usize(wd);
    w.usize(d.classes());
    w.u8(match d.provenance() {
        Provenance::File => 0,
        Provenance::Synthetic => 1,
    });
    for &l in d.labels() {
        w.usize(l);
    }
    w.f32_slice(d.images().data());
    match d.outliers() {
        Some(o) => {
            w.u8(1);
            w.usize(o.len());
            o.iter().for_each(|&i| w.usize(i));
        }
        None => w.u8(0),
    }
    w.finish()
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let (mut r, n) = ByteReader::open(bytes, QTDS_MAGIC, "dataset")?;
    let n = n as usize;
    let (c, h, w, classes) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
    let provenance = match r.u8()? {
        0 => Provenance::File,
        1 => Provenance::Synthetic,
        t => return Err(r.err(format!("unknown provenance tag {t}"))),
    };
    let label_at = r.offset();
    let labels = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    if let Some(k) = labels.iter().position(|&l| l >= classes) {
        return Err(r.err_at(label_at + 4 * k, format!("label {} out of range", labels[k])));
    }
    let pixels = r.f32_vec(n * c * h * w)?;
    let outliers = match r.u8()? {
        0 => None,
        1 => {
            let k = r.usize()?;
            Some((0..k).map(|_| r.usize()).collect::<Result<Vec<_>>>()?)
        }
        t => return Err(r.err(format!("unknown outlier flag {t}"))),
    };
    r.finish()?;
    Dataset::new(Tensor::new(&[n, c, h, w], pixels)?, labels, classes, provenance, outliers)
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(d)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_bytes(&read(path)?)
}
