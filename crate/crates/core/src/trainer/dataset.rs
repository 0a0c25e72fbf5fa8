// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Feature matrix `[N x d]` (row-major) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub width: usize,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        width: usize,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self, TrainError> {
        if width == 0 || features.len() != width * labels.len() {
            return Err(TrainError::Data(format!(
                "{} feature values do not form {} rows of width {width}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(TrainError::Data(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Data("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            width,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.width);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            width: self.width,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Deterministic shuffled split into `(first, rest)`, `first` holding
    /// `round(fraction * N)` rows.
    pub fn split(&self, fraction: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.len() as f64) * fraction).round() as usize;
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }

    /// Header row, feature columns, then an integer `label` column.
    pub fn from_csv(path: &Path) -> Result<Self, TrainError> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| TrainError::Data(e.to_string()))?
            .clone();
        let label_col = headers
            .iter()
            .position(|h| h.trim() == "label")
            .ok_or_else(|| TrainError::Data("missing `label` column".into()))?;
        if label_col + 1 != headers.len() {
            return Err(TrainError::Data("`label` must be the last column".into()));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| TrainError::Data(e.to_string()))?;
            for (col, field) in record.iter().enumerate() {
                let field = field.trim();
                if col == label_col {
                    labels.push(field.parse::<usize>().map_err(|_| {
                        TrainError::Data(format!("row {}: bad label `{field}`", line + 2))
                    })?);
                } else {
                    features.push(field.parse::<f64>().map_err(|_| {
                        TrainError::Data(format!("row {}: bad value `{field}`", line + 2))
                    })?);
                }
            }
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(features, label_col, labels, classes)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| TrainError::Data(e.to_string()))?;
        let mut header: Vec<String> = (0..self.width).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| TrainError::Data(e.to_string()))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(|e| TrainError::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| TrainError::Data(e.to_string()))
    }
}

/// Gaussian-mixture stand-in for a jet-tagging task: every class is a
/// mixture of `modes_per_class` isotropic blobs in `features` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    pub modes_per_class: usize,
    /// Standard deviation of the blob centres.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            features: 16,
            classes: 5,
            modes_per_class: 2,
            separation: 0.7,
            seed: 9,
        }
    }
}

pub fn synthetic_jet(cfg: &SyntheticConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let centres: Vec<Vec<f64>> = (0..cfg.classes * cfg.modes_per_class)
        .map(|_| (0..cfg.features).map(|_| cfg.separation * normal()).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut features = Vec::with_capacity(cfg.samples * cfg.features);
    let mut labels = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let label = i % cfg.classes;
        let mode = rng.gen_range(0..cfg.modes_per_class);
        let centre = &centres[label * cfg.modes_per_class + mode];
        for c in centre {
            let z: f64 = rng.sample(StandardNormal);
            features.push(c + z);
        }
        labels.push(label);
    }
    Dataset::new(features, cfg.features, labels, cfg.classes).expect("synthetic data is well formed")
}
