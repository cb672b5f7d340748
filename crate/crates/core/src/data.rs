//! Synthetic hierarchical Gaussian classes, CSV ingestion and seeded batching.
//!
//! Classes are grouped into superclasses: superclass centers sit far apart,
//! the class means inside one superclass sit close together, so a classifier's
//! mistakes tend to land on a sibling class.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, IndexVector, Matrix, RandomStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub superclasses: usize,
    pub classes_per_super: usize,
    pub dim: usize,
    /// Approximate distance between two superclass centers.
    pub super_spread: f64,
    /// Approximate distance between two class means of one superclass.
    pub sub_spread: f64,
    pub noise_std: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            superclasses: 5,
            classes_per_super: 4,
            dim: 32,
            super_spread: 10.0,
            sub_spread: 4.0,
            noise_std: 1.0,
            n_train: 100,
            n_val: 100,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn num_classes(&self) -> usize {
        self.superclasses * self.classes_per_super
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("superclasses", self.superclasses),
            ("classes_per_super", self.classes_per_super),
            ("dim", self.dim),
            ("n_train", self.n_train),
            ("n_val", self.n_val),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParam(format!("dataset.{name} must be >= 1")));
        }
        if !(self.sub_spread >= 0.0 && self.sub_spread < self.super_spread) {
            return Err(Error::InvalidParam(format!(
                "dataset needs 0 <= sub_spread ({}) < super_spread ({})",
                self.sub_spread, self.super_spread
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidParam(format!("dataset.noise_std = {}", self.noise_std)));
        }
        Ok(())
    }

    pub fn superclass_of(&self) -> Vec<usize> {
        (0..self.num_classes()).map(|c| c / self.classes_per_super).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: IndexVector,
    pub num_classes: usize,
    /// Class → superclass, when the data carries a hierarchy.
    pub superclass_of: Option<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: IndexVector, num_classes: usize, superclass_of: Option<Vec<usize>>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        labels.check_bound(num_classes)?;
        if let Some(map) = &superclass_of {
            if map.len() != num_classes {
                return Err(Error::Shape(format!(
                    "superclass map covers {} classes, expected {num_classes}",
                    map.len()
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            superclass_of,
        })
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
}

/// Class means in class order (`C × D`). Superclass centers lie on a sphere of
/// radius `super_spread/√2`; each class mean is its center plus a random
/// offset of norm `sub_spread/√2`. Random directions in moderate dimension
/// are nearly orthogonal, so pairwise distances come out near the spreads.
pub fn class_means(spec: &DatasetSpec, rng: &mut RandomStream) -> Matrix {
    let (s, m, d) = (spec.superclasses, spec.classes_per_super, spec.dim);
    let center_radius = spec.super_spread / std::f64::consts::SQRT_2;
    let offset_norm = spec.sub_spread / std::f64::consts::SQRT_2;
    let mut data = Vec::with_capacity(s * m * d);
    for _ in 0..s {
        let center: Vec<f64> = rng.unit_vector(d).into_iter().map(|v| v * center_radius).collect();
        for _ in 0..m {
            let offset = rng.unit_vector(d);
            data.extend(center.iter().zip(offset).map(|(c, o)| c + o * offset_norm));
        }
    }
    Matrix::from_raw(s * m, d, data)
}

fn sample_split(means: &Matrix, per_class: usize, noise_std: f64, rng: &mut RandomStream) -> (Matrix, IndexVector) {
    let (c, d) = means.shape();
    let mut data = Vec::with_capacity(c * per_class * d);
    let mut labels = Vec::with_capacity(c * per_class);
    for class in 0..c {
        for _ in 0..per_class {
            data.extend(means.row(class).iter().map(|&mu| mu + noise_std * rng.standard_normal()));
            labels.push(class);
        }
    }
    (Matrix::from_raw(c * per_class, d, data), IndexVector::new(labels))
}

/// Draws the class means, then the training samples, then the validation
/// samples from one seeded stream. The two splits are independent draws.
pub fn generate_hierarchical(spec: &DatasetSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let means = class_means(spec, &mut rng);
    let c = spec.num_classes();
    let (xt, yt) = sample_split(&means, spec.n_train, spec.noise_std, &mut rng);
    let (xv, yv) = sample_split(&means, spec.n_val, spec.noise_std, &mut rng);
    let map = Some(spec.superclass_of());
    Ok((
        LabeledDataset::new(xt, yt, c, map.clone())?,
        LabeledDataset::new(xv, yv, c, map)?,
    ))
}

/// Writes `f0,…,f{D−1},label` then one row per sample.
pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_io)?;
    for (row, &y) in ds.features.row_iter().zip(ds.labels.iter()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Reads a dataset with `dim` features; the class count is `max label + 1`.
pub fn load_csv(path: &Path, dim: usize) -> Result<LabeledDataset> {
    read_csv(path, dim, None)
}

/// Like [`load_csv`] but rejects any label `>= num_classes`.
pub fn load_csv_with_classes(path: &Path, dim: usize, num_classes: usize) -> Result<LabeledDataset> {
    read_csv(path, dim, Some(num_classes))
}

fn read_csv(path: &Path, dim: usize, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_io)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut saw_header = false;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if !saw_header {
            let expected: Vec<String> = (0..dim).map(|j| format!("f{j}")).chain(["label".to_string()]).collect();
            if rec.iter().ne(expected.iter().map(String::as_str)) {
                return Err(Error::Parse {
                    line,
                    msg: format!("header must be {}", expected.join(",")),
                });
            }
            saw_header = true;
            continue;
        }
        if rec.len() != dim + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} columns, found {}", dim + 1, rec.len()),
            });
        }
        for (j, field) in rec.iter().take(dim).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column f{j}: `{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column f{j}: non-finite value"),
                });
            }
            data.push(v);
        }
        let label_field = &rec[dim];
        let label: usize = label_field.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("label `{label_field}` is not a non-negative integer"),
        })?;
        if let Some(c) = num_classes {
            if label >= c {
                return Err(Error::Parse {
                    line,
                    msg: format!("label {label} >= number of classes {c}"),
                });
            }
        }
        labels.push(label);
    }
    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        });
    }
    let c = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let n = labels.len();
    LabeledDataset::new(Matrix::new(n, dim, data)?, IndexVector::new(labels), c, None)
}

/// Seeded shuffle of `0..n` cut into consecutive batches; the last batch may
/// be short.
pub fn batch_indices(n: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    seeded_rng(epoch_seed).shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn batches(ds: &LabeledDataset, batch_size: usize, epoch_seed: u64) -> Vec<(Matrix, IndexVector)> {
    batch_indices(ds.len(), batch_size, epoch_seed)
        .into_iter()
        .map(|idx| {
            let labels = idx.iter().map(|&i| ds.labels[i]).collect();
            (ds.features.select_rows(&idx), labels)
        })
        .collect()
}
