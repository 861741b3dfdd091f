//! CSV ingestion and synthetic label-shift data.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use kdey_core::protocol::largest_remainder;
use kdey_core::{Dataset, Prevalence};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

/// A dataset read from disk with the original label strings.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub feature_names: Vec<String>,
    /// `label_names[i]` is the label mapped to class `i`.
    pub label_names: Vec<String>,
}

/// Reads a comma-separated file with a header row. Every column other than
/// `label_column` must be numeric. Labels are numbered in order of first
/// appearance. Rows in errors are counted from 1, excluding the header.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_csv(file, label_column)
}

pub fn read_csv(reader: impl std::io::Read, label_column: &str) -> Result<LoadedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let csv_err = |row: usize, e: csv::Error| CliError::Parse {
        row,
        column: String::new(),
        message: e.to_string(),
    };
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(0, e))?.iter().map(str::to_string).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| CliError::MissingLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut label_ids: HashMap<String, usize> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(row, e))?;
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                let next = label_names.len();
                let id = *label_ids.entry(cell.to_string()).or_insert_with(|| {
                    label_names.push(cell.to_string());
                    next
                });
                labels.push(id);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| CliError::Parse {
                    row,
                    column: header[j].clone(),
                    message: format!("`{cell}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(CliError::Parse {
                        row,
                        column: header[j].clone(),
                        message: format!("`{cell}` is not finite"),
                    });
                }
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(CliError::Parse {
            row: 0,
            column: String::new(),
            message: "no data rows".into(),
        });
    }
    let features = Array2::from_shape_vec((labels.len(), feature_names.len()), values)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let dataset = Dataset::new(features, labels, label_names.len())?;
    Ok(LoadedDataset {
        dataset,
        feature_names,
        label_names,
    })
}

/// The rows of `test` with labels renumbered to match `train`.
pub fn align_labels(train: &LoadedDataset, test: &LoadedDataset) -> Result<Dataset> {
    let labels = test
        .dataset
        .labels()
        .iter()
        .map(|&y| {
            let name = &test.label_names[y];
            train
                .label_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| CliError::Config(format!("test label `{name}` does not occur in training data")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(
        test.dataset.features().to_owned(),
        labels,
        train.dataset.n_classes(),
    )?)
}

/// Writes features as `f1..fd` and the class index as `label`, at full
/// precision.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    let mut text = header.join(",");
    text.push('\n');
    for (row, y) in data.features().outer_iter().zip(data.labels()) {
        for v in row {
            text.push_str(&format!("{v:?},"));
        }
        text.push_str(&format!("{y}\n"));
    }
    out.write_all(text.as_bytes()).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

/// Class-conditional Gaussians with isotropic per-class scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub train_size: usize,
    pub test_pool_size: usize,
    /// Defaults to uniform.
    #[serde(default)]
    pub train_prior: Option<Vec<f64>>,
}

impl SyntheticSpec {
    /// Three unit-variance classes in the plane with centres 5 apart.
    pub fn three_class() -> Self {
        let r = 5.0 / 3f64.sqrt();
        let means = (0..3)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                vec![r * a.cos(), r * a.sin()]
            })
            .collect();
        Self {
            n_classes: 3,
            dim: 2,
            means,
            scales: vec![1.0; 3],
            train_size: 1_000,
            test_pool_size: 3_000,
            train_prior: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n_classes < 2 {
            return bad("synthetic data needs at least 2 classes".into());
        }
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.train_size < self.n_classes || self.test_pool_size < self.n_classes {
            return bad("train_size and test_pool_size must be at least n_classes".into());
        }
        if self.means.len() != self.n_classes || self.means.iter().any(|m| m.len() != self.dim) {
            return bad(format!("means must be {} vectors of length {}", self.n_classes, self.dim));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return bad("means must be finite".into());
        }
        if self.scales.len() != self.n_classes || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad(format!("scales must be {} positive numbers", self.n_classes));
        }
        if let Some(p) = &self.train_prior {
            if p.len() != self.n_classes {
                return bad("train_prior length must equal n_classes".into());
            }
            Prevalence::new(p.clone())?;
        }
        Ok(())
    }

    fn draw(&self, counts: &[usize], rng: &mut ChaCha8Rng) -> Result<Dataset> {
        let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| vec![c; k]).collect();
        labels.shuffle(rng);
        let mut x = Array2::zeros((labels.len(), self.dim));
        for (i, &y) in labels.iter().enumerate() {
            for d in 0..self.dim {
                let z: f64 = StandardNormal.sample(rng);
                x[[i, d]] = self.means[y][d] + self.scales[y] * z;
            }
        }
        Ok(Dataset::new(x, labels, self.n_classes)?)
    }
}

/// Training set with class counts following the training prior, and a
/// class-balanced test pool.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let prior = match &spec.train_prior {
        Some(p) => Prevalence::new(p.clone())?,
        None => Prevalence::uniform(spec.n_classes),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = spec.draw(&largest_remainder(&prior, spec.train_size), &mut rng)?;
    let pool = spec.draw(
        &largest_remainder(&Prevalence::uniform(spec.n_classes), spec.test_pool_size),
        &mut rng,
    )?;
    Ok((train, pool))
}

/// Stratified split into (kept, held out) with `fraction` of every class
/// held out.
pub fn stratified_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Config(format!("validation fraction must be in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut kept, mut held) = (Vec::new(), Vec::new());
    for mut rows in data.class_split() {
        rows.shuffle(&mut rng);
        let k = (rows.len() as f64 * fraction).round() as usize;
        held.extend_from_slice(&rows[..k]);
        kept.extend_from_slice(&rows[k..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    Ok((data.select(&kept), data.select(&held)))
}
