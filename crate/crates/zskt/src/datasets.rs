//! Dataset files: IDX pairs (optionally gzip-compressed) and toy point clouds.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use zskt_core::data::{self, Dataset, NormStats, Split};

use crate::error::{Error, Result};

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Read a file, transparently inflating gzip content.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Write bytes, gzip-compressing when the path ends in `.gz`.
pub fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        let packed = enc.finish().map_err(|e| Error::io(path, e))?;
        crate::checkpoint::write_file(path, &packed)
    } else {
        crate::checkpoint::write_file(path, bytes)
    }
}

pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img = read_maybe_gz(images)?;
    let lab = read_maybe_gz(labels)?;
    Ok(data::dataset_from_idx(&img, &lab, split)?)
}

pub fn save_idx(ds: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    let (img, lab) = data::encode_idx(ds)?;
    write_maybe_gz(images, &img)?;
    write_maybe_gz(labels, &lab)
}

/// Locate `stem` or `stem.gz` inside `dir`.
fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    let packed = dir.join(format!("{stem}.gz"));
    [plain, packed]
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Config(format!("{} has neither {stem} nor {stem}.gz", dir.display())))
}

/// The four standard IDX files of a digit dataset directory.
pub fn idx_paths(dir: &Path) -> Result<[PathBuf; 4]> {
    Ok([
        find(dir, "train-images-idx3-ubyte")?,
        find(dir, "train-labels-idx1-ubyte")?,
        find(dir, "t10k-images-idx3-ubyte")?,
        find(dir, "t10k-labels-idx1-ubyte")?,
    ])
}

/// Train and test splits normalized with the training split's channel
/// statistics, optionally truncated to the first `limit` samples.
pub fn load_digits(dir: &Path, train_limit: Option<usize>, test_limit: Option<usize>) -> Result<(Dataset, Dataset, NormStats)> {
    let [tri, trl, tei, tel] = idx_paths(dir)?;
    let train = truncate(load_idx(&tri, &trl, Split::Train)?, train_limit)?;
    let test = truncate(load_idx(&tei, &tel, Split::Test)?, test_limit)?;
    let stats = train.channel_stats()?;
    Ok((data::normalize(&train, &stats)?, data::normalize(&test, &stats)?, stats))
}

fn truncate(ds: Dataset, limit: Option<usize>) -> Result<Dataset> {
    match limit {
        Some(n) if n < ds.len() => Ok(ds.subset(&(0..n).collect::<Vec<_>>())?),
        _ => Ok(ds),
    }
}
