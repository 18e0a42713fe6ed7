//! Dataset ingestion: IDX files (big-endian, the public MNIST layout) and a
//! synthetic Gaussian-blob generator for fast fixtures.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {got:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: String,
        got: u32,
        expected: u32,
    },
    #[error("{path}: truncated file")]
    Truncated { path: String },
    #[error("images file has {images} samples but labels file has {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("cannot pool {rows}x{cols} images to side {side}")]
    BadPool { rows: usize, cols: usize, side: usize },
    #[error("synthetic dataset needs n_features >= log2(n_classes); got {classes} classes in {features} dims")]
    TooManyClasses { classes: usize, features: usize },
}

/// A labelled dataset with features normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copy out the rows in `indices` (a client shard).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(ndarray::Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

struct IdxReader {
    path: String,
    bytes: Vec<u8>,
    pos: usize,
}

impl IdxReader {
    fn open(path: &Path) -> Result<Self, DataError> {
        let display = path.display().to_string();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| DataError::Io {
                path: display.clone(),
                source,
            })?;
        Ok(IdxReader {
            path: display,
            bytes,
            pos: 0,
        })
    }

    fn u32_be(&mut self) -> Result<u32, DataError> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(DataError::Truncated {
                path: self.path.clone(),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..end].try_into().unwrap());
        self.pos = end;
        Ok(v)
    }

    fn expect_magic(&mut self, expected: u32) -> Result<(), DataError> {
        let got = self.u32_be()?;
        if got != expected {
            return Err(DataError::BadMagic {
                path: self.path.clone(),
                got,
                expected,
            });
        }
        Ok(())
    }

    fn payload(&self, n: usize) -> Result<&[u8], DataError> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::Truncated {
                path: self.path.clone(),
            });
        }
        Ok(&self.bytes[self.pos..self.pos + n])
    }
}

/// Load an IDX image/label pair, normalizing pixels to `[0, 1]` and
/// optionally average-pooling each image down to `pool_to_side`.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    pool_to_side: Option<usize>,
) -> Result<Dataset, DataError> {
    let mut img = IdxReader::open(images_path)?;
    img.expect_magic(IDX_IMAGE_MAGIC)?;
    let n = img.u32_be()? as usize;
    let rows = img.u32_be()? as usize;
    let cols = img.u32_be()? as usize;
    let pixels = img.payload(n * rows * cols)?;

    let mut lab = IdxReader::open(labels_path)?;
    lab.expect_magic(IDX_LABEL_MAGIC)?;
    let n_labels = lab.u32_be()? as usize;
    if n_labels != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    let label_bytes = lab.payload(n)?;

    let (out_rows, out_cols, pool) = match pool_to_side {
        Some(side) if side != rows || side != cols => {
            if side == 0 || rows % side != 0 || cols % side != 0 {
                return Err(DataError::BadPool { rows, cols, side });
            }
            (side, side, (rows / side, cols / side))
        }
        _ => (rows, cols, (1, 1)),
    };

    let d = out_rows * out_cols;
    let mut features = Array2::zeros((n, d));
    let kernel = (pool.0 * pool.1) as f64;
    for i in 0..n {
        let base = i * rows * cols;
        for r in 0..out_rows {
            for c in 0..out_cols {
                let mut acc = 0.0;
                for pr in 0..pool.0 {
                    for pc in 0..pool.1 {
                        let px = pixels[base + (r * pool.0 + pr) * cols + (c * pool.1 + pc)];
                        acc += px as f64;
                    }
                }
                features[(i, r * out_cols + c)] = acc / (kernel * 255.0);
            }
        }
    }

    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        features,
        labels,
        n_classes,
    })
}

/// Synthetic blobs with the default within-class noise.
pub fn synth_dataset<R: Rng>(
    n_classes: usize,
    n_per_class: usize,
    n_features: usize,
    rng: &mut R,
) -> Result<Dataset, DataError> {
    synth_dataset_with(n_classes, n_per_class, n_features, 0.1, rng)
}

/// One Gaussian blob per class. Class centres sit at `0.5 +/- 0.3` per
/// coordinate with distinct sign patterns, so any two centres are at least
/// `0.6` apart; with `sigma <= 0.1` that is a >= 6-sigma separation and the
/// classes are linearly separable.
pub fn synth_dataset_with<R: Rng>(
    n_classes: usize,
    n_per_class: usize,
    n_features: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Dataset, DataError> {
    assert!(n_classes >= 1 && n_per_class >= 1 && n_features >= 1);
    if n_features < usize::BITS as usize && n_classes > (1usize << n_features) {
        return Err(DataError::TooManyClasses {
            classes: n_classes,
            features: n_features,
        });
    }

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    let mut patterns: Vec<Vec<bool>> = Vec::new();
    while centers.len() < n_classes {
        let pattern: Vec<bool> = (0..n_features).map(|_| rng.random::<bool>()).collect();
        if patterns.contains(&pattern) {
            continue;
        }
        centers.push(
            pattern
                .iter()
                .map(|&up| if up { 0.8 } else { 0.2 })
                .collect(),
        );
        patterns.push(pattern);
    }

    let normal = Normal::new(0.0, sigma).unwrap();
    let n = n_classes * n_per_class;
    let mut features = Array2::zeros((n, n_features));
    let mut labels = Vec::with_capacity(n);
    for class in 0..n_classes {
        for s in 0..n_per_class {
            let row = class * n_per_class + s;
            for j in 0..n_features {
                features[(row, j)] = (centers[class][j] + normal.sample(rng)).clamp(0.0, 1.0);
            }
            labels.push(class);
        }
    }
    Ok(Dataset {
        features,
        labels,
        n_classes,
    })
}

/// Serialize a dataset as an IDX image/label file pair (features quantized
/// to bytes). Written for the synthetic-data CLI path; round-trips through
/// [`load_idx`].
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> std::io::Result<()> {
    let n = dataset.len();
    let d = dataset.features.ncols();
    // Store as n x d x 1 "images".
    let mut img: Vec<u8> = Vec::with_capacity(16 + n * d);
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(d as u32).to_be_bytes());
    img.extend_from_slice(&1u32.to_be_bytes());
    for v in dataset.features.iter() {
        img.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    std::fs::write(images_path, img)?;

    let mut lab: Vec<u8> = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend(dataset.labels.iter().map(|&l| l as u8));
    std::fs::write(labels_path, lab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};

    fn write_pair_named(
        dir: &Path,
        prefix: &str,
        n: usize,
        rows: usize,
        cols: usize,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let images = dir.join(format!("{prefix}-images.idx"));
        let labels = dir.join(format!("{prefix}-labels.idx"));
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        img.extend_from_slice(&(n as u32).to_be_bytes());
        img.extend_from_slice(&(rows as u32).to_be_bytes());
        img.extend_from_slice(&(cols as u32).to_be_bytes());
        for i in 0..n * rows * cols {
            img.push((i % 251) as u8);
        }
        std::fs::write(&images, img).unwrap();
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(n as u32).to_be_bytes());
        for i in 0..n {
            lab.push((i % 10) as u8);
        }
        std::fs::write(&labels, lab).unwrap();
        (images, labels)
    }

    #[test]
    fn idx_loads_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_pair_named(dir.path(), "a", 20, 28, 28);
        let ds = load_idx(&images, &labels, None).unwrap();
        assert_eq!(ds.len(), 20);
        assert_eq!(ds.features.ncols(), 784);
        assert_eq!(ds.n_classes, 10);
        assert!(ds.features.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pooling_to_14_gives_196_features() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_pair_named(dir.path(), "b", 4, 28, 28);
        let ds = load_idx(&images, &labels, Some(14)).unwrap();
        assert_eq!(ds.features.ncols(), 196);
    }

    #[test]
    fn pooling_preserves_means() {
        // A constant image average-pools to the same constant.
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("im.idx");
        let labels = dir.path().join("la.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&4u32.to_be_bytes());
        img.extend_from_slice(&4u32.to_be_bytes());
        img.extend(std::iter::repeat(102u8).take(16));
        std::fs::write(&images, img).unwrap();
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        lab.extend_from_slice(&1u32.to_be_bytes());
        lab.push(3);
        std::fs::write(&labels, lab).unwrap();
        let ds = load_idx(&images, &labels, Some(2)).unwrap();
        for v in ds.features.iter() {
            assert!((v - 102.0 / 255.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_magic_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_pair_named(dir.path(), "c", 2, 4, 4);
        // Labels file passed where images are expected: label magic != image magic.
        let err = load_idx(&labels, &images, None).unwrap_err();
        match err {
            DataError::BadMagic { path, got, expected } => {
                assert!(path.contains("labels.idx"));
                assert_eq!(got, IDX_LABEL_MAGIC);
                assert_eq!(expected, IDX_IMAGE_MAGIC);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, _) = write_pair_named(dir.path(), "d", 3, 4, 4);
        let (_, labels) = write_pair_named(dir.path(), "e", 5, 4, 4);
        assert!(matches!(
            load_idx(&images, &labels, None),
            Err(DataError::CountMismatch { images: 3, labels: 5 })
        ));
    }

    #[test]
    fn synth_is_balanced_and_deterministic() {
        let mk = || {
            let mut rng = stream(4, StreamId::DatasetGen { service: 1 });
            synth_dataset(2, 50, 4, &mut rng).unwrap()
        };
        let a = mk();
        assert_eq!(a.len(), 100);
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 50);
        assert_eq!(a.labels.iter().filter(|&&l| l == 1).count(), 50);
        assert_eq!(a, mk());
        assert!(a.features.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn synth_idx_roundtrip() {
        let mut rng = stream(8, StreamId::DatasetGen { service: 0 });
        let ds = synth_dataset(3, 10, 8, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("s.images.idx");
        let labels = dir.path().join("s.labels.idx");
        write_idx(&ds, &images, &labels).unwrap();
        let back = load_idx(&images, &labels, None).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.features.dim(), ds.features.dim());
        for (a, b) in back.features.iter().zip(ds.features.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
