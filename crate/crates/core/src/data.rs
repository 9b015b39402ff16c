//! Datasets: MNIST IDX ingestion, a synthetic blob generator, and
//! partitioning into class-incremental batches.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, SeededRng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Borrowed view of one example. One-hot labels are built on demand at the
/// current class count, which grows over increments.
#[derive(Clone, Copy, Debug)]
pub struct LabeledExample<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

impl LabeledExample<'_> {
    pub fn one_hot(&self, num_classes: usize) -> Result<Vec<f64>> {
        if self.label >= num_classes {
            return Err(Error::shape(format!(
                "label {} does not fit {num_classes} classes",
                self.label
            )));
        }
        let mut v = vec![0.0; num_classes];
        v[self.label] = 1.0;
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    split: Split,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, split: Split) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            features,
            labels,
            split,
            num_classes,
        })
    }

    /// Empty dataset of the given feature dimension.
    pub fn empty(dim: usize, split: Split) -> Self {
        Self {
            features: Matrix::zeros(0, dim),
            labels: Vec::new(),
            split,
            num_classes: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// One past the largest label present.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn example(&self, i: usize) -> LabeledExample<'_> {
        LabeledExample {
            features: self.features.row(i),
            label: self.labels[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = LabeledExample<'_>> {
        (0..self.len()).map(move |i| self.example(i))
    }

    /// Sorted set of labels that actually occur.
    pub fn classes(&self) -> Vec<usize> {
        self.labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Dataset {
            features: self.features.select_rows(indices),
            labels,
            split: self.split,
            num_classes,
        }
    }

    /// Examples whose label is in `classes`, original order kept.
    pub fn filter_classes(&self, classes: &[usize]) -> Dataset {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.subset(&keep)
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let features = self.features.vstack(&other.features)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(features, labels, self.split)
    }

    /// `len × num_classes` one-hot matrix.
    pub fn one_hot(&self, num_classes: usize) -> Result<Matrix> {
        let mut m = Matrix::zeros(self.len(), num_classes);
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::shape(format!(
                    "label {l} does not fit {num_classes} classes"
                )));
            }
            m.set(i, l, 1.0);
        }
        Ok(m)
    }
}

/// Ordered class groups fed one group per increment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBatchSchedule {
    groups: Vec<Vec<usize>>,
}

impl ClassBatchSchedule {
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        let first = groups
            .first()
            .ok_or_else(|| Error::Schedule("schedule has no groups".into()))?;
        if first.len() < 2 {
            return Err(Error::Schedule(
                "first group must hold at least two classes".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for c in groups.iter().flatten() {
            if !seen.insert(*c) {
                return Err(Error::Schedule(format!("class {c} scheduled twice")));
            }
        }
        Ok(Self { groups })
    }

    /// `[[0,1],[2,3],…]` over `num_classes` classes.
    pub fn pairs(num_classes: usize) -> Result<Self> {
        let groups = (0..num_classes)
            .collect::<Vec<_>>()
            .chunks(2)
            .map(<[usize]>::to_vec)
            .collect();
        Self::new(groups)
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// All classes of groups `0..=t`, in schedule order.
    pub fn seen_through(&self, t: usize) -> Vec<usize> {
        self.groups[..=t].iter().flatten().copied().collect()
    }

    /// Number of classes seen through increment `t`; the output width.
    pub fn classes_through(&self, t: usize) -> usize {
        self.seen_through(t).iter().max().map_or(0, |m| m + 1)
    }

    pub fn group_of(&self, class: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&class))
    }
}

pub fn split_by_schedule(dataset: &Dataset, schedule: &ClassBatchSchedule) -> Result<Vec<Dataset>> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); schedule.len()];
    for (i, &l) in dataset.labels.iter().enumerate() {
        let g = schedule
            .group_of(l)
            .ok_or_else(|| Error::Schedule(format!("class {l} is not scheduled")))?;
        buckets[g].push(i);
    }
    Ok(buckets.iter().map(|idx| dataset.subset(idx)).collect())
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into())
}

/// Reads an IDX image/label file pair. Pixels are scaled by 1/255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let images = read_all(images_path.as_ref())?;
    let labels = read_all(labels_path.as_ref())?;

    let magic = be_u32(&images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("image magic {magic:#010x}")));
    }
    let magic = be_u32(&labels, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("label magic {magic:#010x}")));
    }
    let count = be_u32(&images, 4)? as usize;
    let rows = be_u32(&images, 8)? as usize;
    let cols = be_u32(&images, 12)? as usize;
    let label_count = be_u32(&labels, 4)? as usize;
    if count != label_count {
        return Err(Error::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let dim = rows * cols;
    let pixels = images
        .get(16..16 + count * dim)
        .ok_or_else(|| std::io::Error::from(std::io::ErrorKind::UnexpectedEof))?;
    let label_bytes = labels
        .get(8..8 + count)
        .ok_or_else(|| std::io::Error::from(std::io::ErrorKind::UnexpectedEof))?;

    let features = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    Dataset::new(
        Matrix::from_vec_unchecked(count, dim, features),
        label_bytes.iter().map(|&b| usize::from(b)).collect(),
        split,
    )
}

/// Writes a dataset as an IDX pair. Features must be multiples of 1/255 in
/// `[0, 1]` for the round trip to be exact; labels must fit a byte.
pub fn write_idx(dataset: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let dim = dataset.dim();
    let side = (dim as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == dim { (side, side) } else { (1, dim) };

    let mut w = BufWriter::new(File::create(images_path)?);
    w.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for v in [dataset.len(), rows, cols] {
        w.write_all(&(v as u32).to_be_bytes())?;
    }
    for &x in dataset.features.data() {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Format(format!("feature {x} outside [0, 1]")));
        }
        w.write_all(&[(x * 255.0).round() as u8])?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(labels_path)?);
    w.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(dataset.len() as u32).to_be_bytes())?;
    for &l in &dataset.labels {
        let b = u8::try_from(l).map_err(|_| Error::Format(format!("label {l} exceeds a byte")))?;
        w.write_all(&[b])?;
    }
    w.flush()?;
    Ok(())
}

/// Gaussian blobs: class `c` is centred at `separation · e_(c mod dim)` with
/// unit isotropic noise. Examples are grouped by class.
pub fn synthetic_blobs(
    k_classes: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    rng: &mut SeededRng,
    split: Split,
) -> Result<Dataset> {
    if k_classes < 2 {
        return Err(Error::param("synthetic blobs need at least two classes"));
    }
    if dim == 0 || !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::param(format!(
            "blobs need dim > 0 and finite separation >= 0 (dim {dim}, separation {separation})"
        )));
    }
    let mut data = Vec::with_capacity(k_classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(k_classes * n_per_class);
    for c in 0..k_classes {
        for _ in 0..n_per_class {
            for j in 0..dim {
                let centre = if j == c % dim { separation } else { 0.0 };
                data.push(centre + rng.standard_normal());
            }
            labels.push(c);
        }
    }
    let mut ds = Dataset::new(
        Matrix::from_vec_unchecked(labels.len(), dim, data),
        labels,
        split,
    )?;
    ds.num_classes = k_classes;
    Ok(ds)
}
