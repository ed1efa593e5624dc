//! Datasets: synthetic 2-D blobs, IDX decoding and encoding, normalization
//! and few-shot subsets.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which part of a dataset a [`Dataset`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Split {
    Train,
    Test,
}

/// Per-channel normalization statistics.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "{} means for {} stds",
                mean.len(),
                std.len()
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) || std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("normalization stats must be finite with std > 0".into()));
        }
        Ok(Self { mean, std })
    }

    /// Map a normalized value of `channel` back to the raw scale.
    pub fn denormalize(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }

    pub fn normalize(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }
}

/// Labelled samples. `inputs` has shape `n × input-shape`; channels are the
/// second axis for image data and the single feature axis otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
    norm: Option<NormStats>,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if inputs.rank() < 2 || inputs.batch() != labels.len() {
            return Err(Error::CountMismatch {
                images: if inputs.rank() == 0 { 0 } else { inputs.batch() },
                labels: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if classes < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::ClassMismatch {
                expected: classes,
                found: bad + 1,
            });
        }
        if !inputs.is_finite() {
            return Err(Error::InvalidConfig("dataset inputs must be finite".into()));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            split,
            norm: None,
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Statistics applied by [`normalize`], if any.
    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    pub fn is_normalized(&self) -> bool {
        self.norm.is_some()
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    fn channels(&self) -> usize {
        self.inputs.shape()[1]
    }

    /// Inputs and labels at `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.inputs.select(indices)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// Subset keeping the given samples in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (inputs, labels) = self.batch(indices)?;
        Ok(Dataset {
            inputs,
            labels,
            classes: self.classes,
            split: self.split,
            norm: self.norm.clone(),
        })
    }

    /// Per-channel population mean and standard deviation of the inputs.
    pub fn channel_stats(&self) -> Result<NormStats> {
        let c = self.channels();
        let per = self.inputs.len() / (self.len() * c);
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for (k, v) in self.inputs.data().iter().enumerate() {
            let ch = (k / per) % c;
            sum[ch] += v;
            sq[ch] += v * v;
        }
        let count = (self.len() * per) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| libm::sqrt((q / count - m * m).max(0.0)))
            .collect();
        NormStats::new(mean, std)
    }

    /// Axis-aligned bounds `(min, max)` of each feature of 2-D inputs.
    pub fn bounding_box(&self) -> Result<[(f64, f64); 2]> {
        if self.inputs.shape() != [self.len(), 2] {
            return Err(Error::shape("bounding-box", format!("inputs {:?} are not 2-D points", self.inputs.shape())));
        }
        let mut b = [(f64::INFINITY, f64::NEG_INFINITY); 2];
        for row in self.inputs.data().chunks(2) {
            for (d, v) in row.iter().enumerate() {
                b[d].0 = b[d].0.min(*v);
                b[d].1 = b[d].1.max(*v);
            }
        }
        Ok(b)
    }

    /// Count of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Gaussian blobs around `classes` evenly spaced centers on the unit
/// circle, split 80/20 per class into train and test.
pub fn make_toy_blobs(classes: usize, per_class: usize, spread: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if classes < 2 || per_class < 2 || !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "toy blobs need ≥2 classes, ≥2 points per class and spread ≥ 0 (got {classes}, {per_class}, {spread})"
        )));
    }
    let mut rng = crate::rng(seed);
    let n_train = (per_class * 4 + 2) / 5;
    let mut parts = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for c in 0..classes {
        let angle = 2.0 * core::f64::consts::PI * c as f64 / classes as f64;
        let (cx, cy) = (libm::cos(angle), libm::sin(angle));
        for i in 0..per_class {
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            let part = &mut parts[usize::from(i >= n_train)];
            part.0.extend_from_slice(&[cx + spread * dx, cy + spread * dy]);
            part.1.push(c);
        }
    }
    let [(trx, try_), (tex, tey)] = parts;
    let train = Dataset::new(Tensor::new(&[try_.len(), 2], trx)?, try_, classes, Split::Train)?;
    let test = Dataset::new(Tensor::new(&[tey.len(), 2], tex)?, tey, classes, Split::Test)?;
    Ok((train, test))
}

/// Image file magic: unsigned bytes, three dimensions.
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Label file magic: unsigned bytes, one dimension.
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(format!("{what} header ends at byte {}", bytes.len())))
}

/// Decoded image file: `(count, rows, cols, pixels)`.
pub fn decode_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4, "image")? as usize;
    let rows = be_u32(bytes, 8, "image")? as usize;
    let cols = be_u32(bytes, 12, "image")? as usize;
    let need = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Truncated("image dimensions overflow".to_string()))?;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Truncated(format!(
            "image payload has {} of {need} bytes",
            body.len()
        )));
    }
    Ok((n, rows, cols, &body[..need]))
}

/// Decoded label file.
pub fn decode_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "label")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4, "label")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Truncated(format!("label payload has {} of {n} bytes", body.len())));
    }
    Ok(&body[..n])
}

/// Build a dataset from IDX image and label file contents. Pixels are
/// scaled to `[0, 1]`; the class count is one past the largest label.
pub fn dataset_from_idx(images: &[u8], labels: &[u8], split: Split) -> Result<Dataset> {
    let (n, rows, cols, pixels) = decode_idx_images(images)?;
    let labels = decode_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(Tensor::new(&[n, 1, rows, cols], data)?, labels, classes, split)
}

/// Encode a single-channel image dataset as IDX image and label files.
/// Pixels are mapped back to bytes by `round(255·x)`.
pub fn encode_idx(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    if ds.is_normalized() {
        return Err(Error::InvalidConfig("encode the dataset before normalizing it".into()));
    }
    let s = ds.inputs.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::shape("encode-idx", format!("expected n × 1 × h × w, got {s:?}")));
    }
    if ds.classes > 256 {
        return Err(Error::InvalidConfig(format!("{} classes do not fit in a byte", ds.classes)));
    }
    let mut images = Vec::with_capacity(16 + ds.inputs.len());
    for v in [IDX_IMAGES_MAGIC, s[0] as u32, s[2] as u32, s[3] as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    for &v in ds.inputs.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidConfig(format!("pixel {v} outside [0, 1]")));
        }
        images.push(libm::round(v * 255.0) as u8);
    }
    let mut labels = Vec::with_capacity(8 + ds.len());
    for v in [IDX_LABELS_MAGIC, ds.len() as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend(ds.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

/// Apply `x ← (x − mean)/std` per channel. A dataset can be normalized once.
pub fn normalize(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    if ds.is_normalized() {
        return Err(Error::InvalidConfig("dataset is already normalized".into()));
    }
    let c = ds.channels();
    if stats.mean.len() != c {
        return Err(Error::shape(
            "normalize",
            format!("{} channel stats for {c} channels", stats.mean.len()),
        ));
    }
    let stats = NormStats::new(stats.mean.clone(), stats.std.clone())?;
    let per = ds.inputs.len() / (ds.len() * c);
    let mut inputs = ds.inputs.clone();
    for (k, v) in inputs.data_mut().iter_mut().enumerate() {
        *v = stats.normalize((k / per) % c, *v);
    }
    Ok(Dataset {
        inputs,
        labels: ds.labels.clone(),
        classes: ds.classes,
        split: ds.split,
        norm: Some(stats),
    })
}

/// Exactly `m` samples per class drawn without replacement, kept in their
/// original order.
pub fn few_shot_subset(ds: &Dataset, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::InvalidConfig("few-shot subset needs m ≥ 1".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(m * ds.classes);
    for class in 0..ds.classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        if idx.len() < m {
            return Err(Error::SubsetTooLarge {
                class,
                available: idx.len(),
                requested: m,
            });
        }
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..m]);
    }
    chosen.sort_unstable();
    ds.subset(&chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_idx() -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        for v in [IDX_IMAGES_MAGIC, 3, 2, 2] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        img.extend_from_slice(&[0, 255, 51, 102, 1, 2, 3, 4, 200, 100, 50, 25]);
        let mut lab = Vec::new();
        for v in [IDX_LABELS_MAGIC, 3] {
            lab.extend_from_slice(&v.to_be_bytes());
        }
        lab.extend_from_slice(&[2, 0, 1]);
        (img, lab)
    }

    #[test]
    fn toy_blobs_counts_and_determinism() {
        let (tr, te) = make_toy_blobs(3, 100, 0.2, 7).unwrap();
        assert_eq!(tr.len() + te.len(), 300);
        assert_eq!(tr.len(), 240);
        assert_eq!(tr.class_counts(), vec![80, 80, 80]);
        assert_eq!(te.classes(), 3);
        let (tr2, _) = make_toy_blobs(3, 100, 0.2, 7).unwrap();
        assert_eq!(tr, tr2);
        let (tr3, _) = make_toy_blobs(3, 100, 0.2, 8).unwrap();
        assert_ne!(tr, tr3);
    }

    #[test]
    fn zero_spread_sits_on_centers() {
        let (tr, _) = make_toy_blobs(4, 5, 0.0, 0).unwrap();
        for (row, &y) in tr.inputs().data().chunks(2).zip(tr.labels()) {
            let a = core::f64::consts::FRAC_PI_2 * y as f64;
            assert!((row[0] - libm::cos(a)).abs() < 1e-15 && (row[1] - libm::sin(a)).abs() < 1e-15);
        }
        assert!(make_toy_blobs(1, 5, 0.1, 0).is_err());
        assert!(make_toy_blobs(3, 5, -0.1, 0).is_err());
    }

    #[test]
    fn idx_decode_and_roundtrip() {
        let (img, lab) = tiny_idx();
        let ds = dataset_from_idx(&img, &lab, Split::Test).unwrap();
        assert_eq!(ds.inputs().shape(), &[3, 1, 2, 2]);
        assert_eq!(ds.labels(), &[2, 0, 1]);
        assert_eq!(ds.classes(), 3);
        assert_eq!(ds.inputs().data()[1], 1.0);
        assert_eq!(ds.inputs().data()[2], 0.2);
        let (img2, lab2) = encode_idx(&ds).unwrap();
        assert_eq!(img2, img);
        assert_eq!(lab2, lab);
        let again = dataset_from_idx(&img2, &lab2, Split::Test).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn idx_guards() {
        let (mut img, lab) = tiny_idx();
        assert!(matches!(
            dataset_from_idx(&lab, &lab, Split::Test),
            Err(Error::BadMagic { expected: 0x803, found: 0x801 })
        ));
        assert!(matches!(
            dataset_from_idx(&img[..20], &lab, Split::Test),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(dataset_from_idx(&img[..6], &lab, Split::Test), Err(Error::Truncated(_))));
        assert!(matches!(
            dataset_from_idx(&img, &lab[..9], Split::Test),
            Err(Error::Truncated(_))
        ));
        let mut short = lab.clone();
        short[7] = 2;
        short.pop();
        assert!(matches!(
            dataset_from_idx(&img, &short, Split::Test),
            Err(Error::CountMismatch { images: 3, labels: 2 })
        ));
        img[3] = 0x01;
        assert!(matches!(dataset_from_idx(&img, &lab, Split::Test), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn normalize_examples() {
        let x = Tensor::full(&[2, 1, 2, 2], 0.5);
        let ds = Dataset::new(x, vec![0, 1], 2, Split::Train).unwrap();
        let id = normalize(&ds, &NormStats::new(vec![0.0], vec![1.0]).unwrap()).unwrap();
        assert_eq!(id.inputs(), ds.inputs());
        let z = normalize(&ds, &NormStats::new(vec![0.5], vec![0.25]).unwrap()).unwrap();
        assert!(z.inputs().data().iter().all(|v| *v == 0.0));
        assert_eq!(z.labels(), ds.labels());
        assert!(z.is_normalized());
        assert!(normalize(&z, z.norm_stats().unwrap()).is_err());
        assert!(NormStats::new(vec![0.0], vec![0.0]).is_err());
        assert!(encode_idx(&z).is_err());
    }

    #[test]
    fn channel_stats_per_channel() {
        let x = Tensor::new(&[2, 2, 1, 2], vec![1.0, 3.0, 9.0, 11.0, 1.0, 3.0, 9.0, 11.0]).unwrap();
        let ds = Dataset::new(x, vec![0, 1], 2, Split::Train).unwrap();
        let s = ds.channel_stats().unwrap();
        assert_eq!(s.mean, vec![2.0, 10.0]);
        assert_eq!(s.std[0], 1.0);
    }

    #[test]
    fn few_shot_is_balanced_and_seeded() {
        let (tr, _) = make_toy_blobs(10, 20, 0.1, 0).unwrap();
        let one = few_shot_subset(&tr, 1, 3).unwrap();
        assert_eq!(one.len(), 10);
        let five = few_shot_subset(&tr, 5, 3).unwrap();
        assert_eq!(five.class_counts(), vec![5; 10]);
        assert_eq!(five, few_shot_subset(&tr, 5, 3).unwrap());
        assert_ne!(five, few_shot_subset(&tr, 5, 4).unwrap());
        let all = few_shot_subset(&tr, 16, 0).unwrap();
        assert_eq!(all.len(), tr.len());
        assert!(matches!(
            few_shot_subset(&tr, 17, 0),
            Err(Error::SubsetTooLarge { available: 16, requested: 17, .. })
        ));
    }
}
