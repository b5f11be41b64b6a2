//! Datasets: CSV regression tables, IDX image archives, seeded synthetic
//! teacher data, and train/test splitting.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ColVec, Mat};
use crate::network::TwoLayerNet;
use crate::rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Hidden width of the teacher network behind [`synthetic_teacher`].
pub const TEACHER_WIDTH: usize = 32;

/// Per-feature affine map `normalized = raw · scale + shift`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub scale: f64,
    pub shift: f64,
}

impl FeatureTransform {
    pub const IDENTITY: FeatureTransform = FeatureTransform {
        scale: 1.0,
        shift: 0.0,
    };

    pub fn apply(&self, raw: f64) -> f64 {
        raw * self.scale + self.shift
    }

    pub fn invert(&self, normalized: f64) -> f64 {
        (normalized - self.shift) / self.scale
    }
}

/// Feature scaling requested when loading a table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Normalize {
    None,
    ZScore,
    MinMax { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Mat,
    y: Vec<f64>,
    transforms: Vec<FeatureTransform>,
}

impl Dataset {
    /// Samples are the rows of `x`; `transforms` holds one entry per feature
    /// (identity maps when the data was not normalized).
    pub fn new(x: Mat, y: Vec<f64>, transforms: Vec<FeatureTransform>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::dims("Dataset::new", x.rows(), y.len()));
        }
        if transforms.len() != x.cols() {
            return Err(Error::dims("Dataset::new (transforms)", x.cols(), transforms.len()));
        }
        // reuse the finiteness check of ColVec
        ColVec::new(y.clone())?;
        Ok(Dataset { x, y, transforms })
    }

    pub fn from_samples(x: Mat, y: Vec<f64>) -> Result<Self> {
        let n = x.cols();
        Dataset::new(x, y, vec![FeatureTransform::IDENTITY; n])
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn target(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn transforms(&self) -> &[FeatureTransform] {
        &self.transforms
    }

    /// The features of sample `i` mapped back to raw units.
    pub fn raw_input(&self, i: usize) -> Vec<f64> {
        self.input(i)
            .iter()
            .zip(&self.transforms)
            .map(|(&z, t)| t.invert(z))
            .collect()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::InsufficientData {
                available: self.len(),
                requested: 0,
            });
        }
        let n = self.input_dim();
        let mut x = Vec::with_capacity(indices.len() * n);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            x.extend_from_slice(self.input(i));
            y.push(self.y[i]);
        }
        Dataset::new(Mat::new(indices.len(), n, x)?, y, self.transforms.clone())
    }
}

fn fit_transform(column: &[f64], normalize: Normalize) -> FeatureTransform {
    match normalize {
        Normalize::None => FeatureTransform::IDENTITY,
        Normalize::ZScore => {
            let n = column.len() as f64;
            let mean = column.iter().sum::<f64>() / n;
            let var = if column.len() > 1 {
                column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let std = var.sqrt();
            let scale = if std > 0.0 { 1.0 / std } else { 1.0 };
            FeatureTransform {
                scale,
                shift: -mean * scale,
            }
        }
        Normalize::MinMax { lo, hi } => {
            let min = column.iter().copied().fold(f64::INFINITY, f64::min);
            let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                let scale = (hi - lo) / (max - min);
                FeatureTransform {
                    scale,
                    shift: lo - min * scale,
                }
            } else {
                // constant column: send it to the middle of the range
                FeatureTransform {
                    scale: 1.0,
                    shift: 0.5 * (lo + hi) - min,
                }
            }
        }
    }
}

/// Loads a headed CSV table. Every column except `target_column` becomes a
/// feature, in header order.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str, normalize: Normalize) -> Result<Dataset> {
    let path = path.as_ref();
    if let Normalize::MinMax { lo, hi } = normalize {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!("minmax range [{lo}, {hi}] is empty")));
        }
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let target = headers
        .iter()
        .position(|h| h.trim() == target_column)
        .ok_or_else(|| Error::MissingTarget {
            path: path.to_path_buf(),
            column: target_column.to_string(),
        })?;
    let n = headers.len() - 1;
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}: no feature columns besides the target",
            path.display()
        )));
    }

    let mut features = Vec::new();
    let mut y = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = row_idx + 2;
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: col + 1,
                message: format!("non-numeric cell `{cell}`"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: col + 1,
                    message: format!("non-finite cell `{cell}`"),
                });
            }
            if col == target {
                y.push(value);
            } else {
                features.push(value);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::InsufficientData {
            available: 0,
            requested: 1,
        });
    }

    let rows = y.len();
    let transforms: Vec<FeatureTransform> = (0..n)
        .map(|j| {
            let column: Vec<f64> = (0..rows).map(|i| features[i * n + j]).collect();
            fit_transform(&column, normalize)
        })
        .collect();
    for (i, v) in features.iter_mut().enumerate() {
        *v = transforms[i % n].apply(*v);
    }
    Dataset::new(Mat::new(rows, n, features)?, y, transforms)
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Maps a pixel intensity in `[0, 255]` onto `[-1, 1]`.
pub fn pixel_to_unit(p: u8) -> f64 {
    f64::from(p) / 127.5 - 1.0
}

/// Loads an IDX image archive (magic `0x00000803`) with its label file
/// (magic `0x00000801`). Images are flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, images_path, &labels, labels_path)
}

pub(crate) fn parse_idx(images: &[u8], images_path: &Path, labels: &[u8], labels_path: &Path) -> Result<Dataset> {
    let magic = read_be_u32(images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(images, 4, images_path)? as usize;
    let rows = read_be_u32(images, 8, images_path)? as usize;
    let cols = read_be_u32(images, 12, images_path)? as usize;

    let magic = read_be_u32(labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = read_be_u32(labels, 4, labels_path)? as usize;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let dim = rows * cols;
    let pixels = images.get(16..16 + count * dim).ok_or_else(|| Error::Truncated {
        path: images_path.to_path_buf(),
        expected: 16 + count * dim,
        found: images.len(),
    })?;
    let label_bytes = labels.get(8..8 + count).ok_or_else(|| Error::Truncated {
        path: labels_path.to_path_buf(),
        expected: 8 + count,
        found: labels.len(),
    })?;
    if count == 0 || dim == 0 {
        return Err(Error::InsufficientData {
            available: 0,
            requested: 1,
        });
    }

    let x = pixels.iter().copied().map(pixel_to_unit).collect();
    let y = label_bytes.iter().map(|&l| f64::from(l)).collect();
    let pixel = FeatureTransform {
        scale: 1.0 / 127.5,
        shift: -1.0,
    };
    Dataset::new(Mat::new(count, dim, x)?, y, vec![pixel; dim])
}

/// Synthetic regression data together with the network that generated it.
#[derive(Clone, Debug)]
pub struct TeacherData {
    pub dataset: Dataset,
    pub teacher: TwoLayerNet,
}

/// Draws `samples` inputs `x ~ N(0, I_n)` and labels them with a seeded
/// teacher network of width [`TEACHER_WIDTH`] whose first-layer matrix has
/// exact rank `rank`, plus `N(0, noise_std²)` label noise.
pub fn synthetic_teacher(n: usize, samples: usize, rank: usize, noise_std: f64, seed: u64) -> Result<TeacherData> {
    if rank == 0 || rank > n {
        return Err(Error::InvalidArgument(format!(
            "teacher rank must lie in [1, {n}], got {rank}"
        )));
    }
    if samples == 0 {
        return Err(Error::InsufficientData {
            available: 0,
            requested: 1,
        });
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidArgument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let m = TEACHER_WIDTH;
    let mut rng = rng::seeded(seed, rng::INIT_STREAM);
    let mut draw = |count: usize, std: f64| -> Vec<f64> {
        let dist = Normal::new(0.0, std).expect("positive std");
        (0..count).map(|_| dist.sample(&mut rng)).collect()
    };
    // Pre-activations have unit variance for x ~ N(0, I).
    let left = Mat::new(m, rank, draw(m * rank, (1.0 / rank as f64).sqrt()))?;
    let right = Mat::new(rank, n, draw(rank * n, (1.0 / n as f64).sqrt()))?;
    let v = left.matmul(&right)?;
    let u = Mat::new(1, m, draw(m, (2.0 / m as f64).sqrt()))?;
    let b = ColVec::new(draw(m, 0.1))?;
    let teacher = TwoLayerNet::new(u, v, b)?;

    let x: Vec<f64> = (0..samples * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = Mat::new(samples, n, x)?;
    let y = (0..samples)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            teacher.forward_unchecked(x.row(i)) + noise_std * z
        })
        .collect();
    Ok(TeacherData {
        dataset: Dataset::from_samples(x, y)?,
        teacher,
    })
}

/// Disjoint seeded subsamples of sizes `n_train` and `n_test`, drawn without
/// replacement.
pub fn split(dataset: &Dataset, n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_test == 0 || n_train + n_test > dataset.len() {
        return Err(Error::InsufficientData {
            available: dataset.len(),
            requested: n_train + n_test,
        });
    }
    let (train_idx, test_idx) = split_indices(dataset.len(), n_train, n_test, seed);
    Ok((dataset.subset(&train_idx)?, dataset.subset(&test_idx)?))
}

pub(crate) fn split_indices(len: usize, n_train: usize, n_test: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng::seeded(seed, rng::INIT_STREAM);
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng);
    let test = idx[n_train..n_train + n_test].to_vec();
    idx.truncate(n_train);
    (idx, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::numerical_rank;
    use std::collections::HashSet;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_identity() {
        let f = write_tmp("a,target,b\n1.5,10,-2\n3,20,4.25\n");
        let d = load_csv(f.path(), "target", Normalize::None).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.input(0), &[1.5, -2.0]);
        assert_eq!(d.input(1), &[3.0, 4.25]);
        assert_eq!(d.targets(), &[10.0, 20.0]);
    }

    #[test]
    fn csv_zscore() {
        let f = write_tmp("a,b,y\n1,10,0\n2,20,0\n4,50,0\n7,80,1\n");
        let d = load_csv(f.path(), "y", Normalize::ZScore).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..d.len()).map(|i| d.input(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
            assert!(mean.abs() < 1e-12);
            assert!((sd - 1.0).abs() < 1e-12);
        }
        for i in 0..d.len() {
            let raw = d.raw_input(i);
            let expect = [[1.0, 10.0], [2.0, 20.0], [4.0, 50.0], [7.0, 80.0]][i];
            for (r, e) in raw.iter().zip(expect) {
                assert!((r - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn csv_minmax() {
        let f = write_tmp("p,y\n0,1\n255,2\n100,3\n");
        let d = load_csv(f.path(), "y", Normalize::MinMax { lo: -1.0, hi: 1.0 }).unwrap();
        assert_eq!(d.input(0)[0], -1.0);
        assert_eq!(d.input(1)[0], 1.0);
        // independent affine recomputation
        let expect = -1.0 + 2.0 * 100.0 / 255.0;
        assert!((d.input(2)[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn csv_errors() {
        let f = write_tmp("a,y\n1,2\n3,x\n");
        match load_csv(f.path(), "y", Normalize::None) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        let f = write_tmp("a,b\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), "y", Normalize::None),
            Err(Error::MissingTarget { .. })
        ));
    }

    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        // two 2x3 images
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        images.extend_from_slice(&[0, 127, 255, 10, 20, 30]);
        images.extend_from_slice(&[255, 0, 1, 2, 3, 4]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (images, labels)
    }

    #[test]
    fn idx_fixture_parses() {
        let (images, labels) = idx_fixture();
        let p = Path::new("fixture");
        let d = parse_idx(&images, p, &labels, p).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.input_dim(), 6);
        assert_eq!(d.targets(), &[7.0, 3.0]);
        assert_eq!(d.input(0)[0], -1.0);
        assert_eq!(d.input(0)[2], 1.0);
        assert_eq!(d.input(0)[1], 127.0 / 127.5 - 1.0);
        assert_eq!(d.input(1)[5], 4.0 / 127.5 - 1.0);
        assert!(d.x().as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn idx_errors_are_distinct() {
        let (images, labels) = idx_fixture();
        let p = Path::new("fixture");
        let mut bad = images.clone();
        bad[3] = 1;
        assert!(matches!(parse_idx(&bad, p, &labels, p), Err(Error::BadMagic { .. })));
        assert!(matches!(
            parse_idx(&images[..20], p, &labels, p),
            Err(Error::Truncated { .. })
        ));
        let mut short = labels.clone();
        short[7] = 1;
        assert!(matches!(
            parse_idx(&images, p, &short, p),
            Err(Error::CountMismatch { images: 2, labels: 1 })
        ));
    }

    #[test]
    fn teacher_is_self_consistent() {
        let t = synthetic_teacher(6, 40, 2, 0.0, 8).unwrap();
        for i in 0..t.dataset.len() {
            let r = t.teacher.forward(t.dataset.input(i)).unwrap() - t.dataset.target(i);
            assert_eq!(r, 0.0);
        }
        assert_eq!(numerical_rank(t.teacher.v(), 1e-9), 2);
        assert!(synthetic_teacher(3, 10, 4, 0.0, 0).is_err());
    }

    #[test]
    fn teacher_label_variance_tracks_noise() {
        let variance = |noise: f64| -> f64 {
            (0..20)
                .map(|seed| {
                    let clean = synthetic_teacher(4, 2000, 2, 0.0, seed).unwrap();
                    let noisy = synthetic_teacher(4, 2000, 2, noise, seed).unwrap();
                    let diff: Vec<f64> = noisy
                        .dataset
                        .targets()
                        .iter()
                        .zip(clean.dataset.targets())
                        .map(|(a, b)| a - b)
                        .collect();
                    let mean = diff.iter().sum::<f64>() / diff.len() as f64;
                    diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diff.len() - 1) as f64
                })
                .sum::<f64>()
                / 20.0
        };
        for noise in [0.5, 1.0, 2.0] {
            let v = variance(noise);
            assert!((v - noise * noise).abs() / (noise * noise) < 0.1, "{noise}: {v}");
        }
    }

    #[test]
    fn split_partitions_and_is_deterministic() {
        let t = synthetic_teacher(3, 30, 1, 0.1, 1).unwrap();
        let (a, b) = split(&t.dataset, 20, 10, 5).unwrap();
        assert_eq!((a.len(), b.len()), (20, 10));
        let (a2, _) = split(&t.dataset, 20, 10, 5).unwrap();
        assert_eq!(a, a2);
        let (a3, _) = split(&t.dataset, 20, 10, 6).unwrap();
        assert_ne!(a, a3);

        let (tr, te) = split_indices(30, 20, 10, 5);
        let all: HashSet<usize> = tr.iter().chain(&te).copied().collect();
        assert_eq!(all.len(), 30);
        for (k, &i) in tr.iter().enumerate() {
            assert_eq!(a.input(k), t.dataset.input(i));
            assert_eq!(a.target(k), t.dataset.target(i));
        }
        assert!(split(&t.dataset, 25, 10, 0).is_err());
    }

    #[test]
    fn housing_scale_split() {
        let (tr, te) = split_indices(20640, 1800, 600, 0);
        let a: HashSet<usize> = tr.into_iter().collect();
        assert_eq!(a.len(), 1800);
        assert!(te.iter().all(|i| !a.contains(i)));
    }
}
