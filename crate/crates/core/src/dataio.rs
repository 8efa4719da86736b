//! LIBSVM text datasets and their distribution over simulated workers.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::rng::{StreamKey, StreamRole};

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: malformed feature pair `{token}`")]
    MalformedPair { line: usize, token: String },
    #[error("line {line}: feature index {index} is not 1-based positive")]
    ZeroIndex { line: usize, index: usize },
    #[error("line {line}: feature indices not strictly increasing ({prev} then {next})")]
    NonMonotone {
        line: usize,
        prev: usize,
        next: usize,
    },
    #[error("line {line}: cannot parse number `{token}`")]
    BadNumber { line: usize, token: String },
    #[error("input is not valid UTF-8")]
    Encoding,
}

/// One parsed sample: sorted 0-based feature indices and their values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| v * dense[i])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub rows: Vec<SparseRow>,
    /// Labels exactly as written in the file.
    pub labels: Vec<String>,
    pub d_features: usize,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(parse_libsvm(&bytes)?)
    }

    /// Widen the feature space, e.g. so several splits share one dimension.
    pub fn with_min_features(mut self, d: usize) -> Self {
        self.d_features = self.d_features.max(d);
        self
    }

    /// Distinct labels in sorted order; class id = position in this list.
    /// Labels that parse as numbers sort numerically.
    pub fn label_classes(&self) -> Vec<String> {
        let mut distinct: Vec<String> = self.labels.clone();
        distinct.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => x.total_cmp(&y),
            _ => a.cmp(b),
        });
        distinct.dedup_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => x == y,
            _ => a == b,
        });
        distinct
    }

    /// Contiguous class ids for every sample.
    pub fn class_ids(&self) -> (Vec<usize>, usize) {
        let classes = self.label_classes();
        let ids = self
            .labels
            .iter()
            .map(|l| {
                classes
                    .iter()
                    .position(|c| match (c.parse::<f64>(), l.parse::<f64>()) {
                        (Ok(x), Ok(y)) => x == y,
                        _ => c == l,
                    })
                    .expect("label drawn from the same list")
            })
            .collect();
        (ids, classes.len())
    }

    /// Divide every feature by its maximum absolute value over the dataset.
    pub fn max_abs_scaled(mut self) -> Self {
        let mut max_abs = vec![0.0f64; self.d_features];
        for row in &self.rows {
            for (&i, &v) in row.indices.iter().zip(&row.values) {
                max_abs[i] = max_abs[i].max(v.abs());
            }
        }
        for row in &mut self.rows {
            for (&i, v) in row.indices.iter().zip(row.values.iter_mut()) {
                if max_abs[i] > 0.0 {
                    *v /= max_abs[i];
                }
            }
        }
        self
    }

    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for (row, label) in self.rows.iter().zip(&self.labels) {
            out.push_str(label);
            for (&i, &v) in row.indices.iter().zip(&row.values) {
                // `{:?}` on f64 prints the shortest round-tripping form
                let _ = write!(out, " {}:{:?}", i + 1, v);
            }
            out.push('\n');
        }
        out
    }
}

/// Parse LIBSVM text. Accepts `\n` and `\r\n`, skips blank lines and
/// `#` comments, converts 1-based indices to 0-based.
pub fn parse_libsvm(bytes: &[u8]) -> Result<Dataset, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ParseError::Encoding)?;
    let mut ds = Dataset::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let mut tokens = line.split_ascii_whitespace();
        let Some(label) = tokens.next() else { continue };
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for tok in tokens {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| ParseError::MalformedPair {
                    line: line_no,
                    token: tok.to_string(),
                })?;
            let idx: usize = idx_s.parse().map_err(|_| ParseError::BadNumber {
                line: line_no,
                token: idx_s.to_string(),
            })?;
            let val: f64 = val_s.parse().map_err(|_| ParseError::BadNumber {
                line: line_no,
                token: val_s.to_string(),
            })?;
            if idx == 0 {
                return Err(ParseError::ZeroIndex {
                    line: line_no,
                    index: idx,
                });
            }
            let idx = idx - 1;
            if let Some(&prev) = indices.last() {
                if idx <= prev {
                    return Err(ParseError::NonMonotone {
                        line: line_no,
                        prev: prev + 1,
                        next: idx + 1,
                    });
                }
            }
            ds.d_features = ds.d_features.max(idx + 1);
            indices.push(idx);
            values.push(val);
        }
        ds.rows.push(SparseRow { indices, values });
        ds.labels.push(label.to_string());
    }
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    #[default]
    Contiguous,
    RoundRobin,
    /// Homogeneous regime: every worker sees the whole dataset.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    #[serde(default)]
    pub strategy: PartitionStrategy,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            strategy: PartitionStrategy::Contiguous,
            seed: 0,
        }
    }
}

/// Sample indices held by each worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub strategy: PartitionStrategy,
    pub workers: Vec<Vec<usize>>,
}

impl Partition {
    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.workers.iter().map(Vec::len).collect()
    }

    /// Worker id per sample; `None` for the shared strategy.
    pub fn assignment(&self, n_samples: usize) -> Option<Vec<usize>> {
        if self.strategy == PartitionStrategy::Shared {
            return None;
        }
        let mut out = vec![usize::MAX; n_samples];
        for (w, samples) in self.workers.iter().enumerate() {
            for &s in samples {
                out[s] = w;
            }
        }
        Some(out)
    }
}

pub fn partition(
    n_samples: usize,
    n_workers: usize,
    strategy: PartitionStrategy,
    seed: u64,
) -> Result<Partition> {
    if n_workers == 0 {
        return Err(Error::InvalidPartition("need at least one worker".into()));
    }
    let workers = match strategy {
        PartitionStrategy::Shared => {
            if n_samples == 0 {
                return Err(Error::InvalidPartition(
                    "shared partition of an empty dataset".into(),
                ));
            }
            vec![(0..n_samples).collect(); n_workers]
        }
        _ if n_samples < n_workers => {
            return Err(Error::InvalidPartition(format!(
                "{n_workers} workers but only {n_samples} samples"
            )))
        }
        PartitionStrategy::RoundRobin => {
            let mut w = vec![Vec::new(); n_workers];
            for j in 0..n_samples {
                w[j % n_workers].push(j);
            }
            w
        }
        PartitionStrategy::Contiguous => {
            let mut order: Vec<usize> = (0..n_samples).collect();
            order.shuffle(&mut StreamKey::new(seed, StreamRole::Setup, 0, 0).rng());
            let base = n_samples / n_workers;
            let extra = n_samples % n_workers;
            let mut start = 0;
            (0..n_workers)
                .map(|w| {
                    let len = base + usize::from(w < extra);
                    let mut chunk = order[start..start + len].to_vec();
                    chunk.sort_unstable();
                    start += len;
                    chunk
                })
                .collect()
        }
    };
    Ok(Partition { strategy, workers })
}
