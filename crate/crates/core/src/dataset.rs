//! Core domain types for crowdsourced classification data.
//!
//! A [`CrowdDataset`] bundles task features with a sparse vote table:
//! for each task `i`, the set of workers `A(x_i)` that labeled it and the
//! class each one answered. The inverse view `T(w_j)` (tasks answered by
//! worker `j`) is derived on demand. Ground truth, when present, is held
//! out for evaluation only: aggregation and identification never read it.
//!
//! All indices (task, worker, class) are 0-based, both in the API and in
//! the on-disk formats.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simplex tolerance used when validating probability vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A probability distribution over the `K` classes of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    probs: Vec<f64>,
}

impl SoftLabel {
    /// Validates that `probs` is a point on the probability simplex:
    /// non-negative entries summing to 1 within `1e-9`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("soft label must have at least one class".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Config(format!("soft label has negative or non-finite entry: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Config(format!("soft label sums to {sum}, expected 1")));
        }
        Ok(Self { probs })
    }

    /// One-hot distribution with mass 1 at `class`.
    pub fn one_hot(class: usize, n_class: usize) -> Self {
        let mut probs = vec![0.0; n_class];
        probs[class] = 1.0;
        Self { probs }
    }

    /// Uniform distribution over `n_class` classes.
    pub fn uniform(n_class: usize) -> Self {
        Self { probs: vec![1.0 / n_class as f64; n_class] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_class(&self) -> usize {
        self.probs.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// A single class index in `[0, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardLabel(pub usize);

impl HardLabel {
    pub fn class(self) -> usize {
        self.0
    }
}

/// Sparse vote table: task index -> (worker index -> class index).
pub type VoteTable = BTreeMap<usize, BTreeMap<usize, usize>>;

/// A crowdsourced training set: features per task plus the sparse votes.
///
/// Invariants enforced at construction:
/// - every vote's class index is in `[0, n_class)`,
/// - every task index is `< n_task` and every worker index is `< n_worker`,
/// - every task has a non-empty annotator set (tasks without votes are
///   rejected rather than silently dropped).
#[derive(Debug, Clone)]
pub struct CrowdDataset {
    n_task: usize,
    n_worker: usize,
    n_class: usize,
    features: Array2<f64>,
    /// Indexed by task; inner map is worker -> class.
    votes: Vec<BTreeMap<usize, usize>>,
    ground_truth: Option<Vec<usize>>,
}

impl CrowdDataset {
    /// Builds a dataset, inferring `n_worker` as the largest worker index
    /// plus one.
    pub fn new(features: Array2<f64>, votes: VoteTable, n_class: usize) -> Result<Self> {
        let max_worker = votes
            .values()
            .flat_map(|m| m.keys())
            .max()
            .copied()
            .map(|w| w + 1)
            .unwrap_or(0);
        Self::with_workers(features, votes, n_class, max_worker)
    }

    /// Builds a dataset with an explicit worker count (simulated crowds may
    /// contain workers that never got sampled for any task).
    pub fn with_workers(
        features: Array2<f64>,
        votes: VoteTable,
        n_class: usize,
        n_worker: usize,
    ) -> Result<Self> {
        if votes.is_empty() {
            return Err(Error::NoTasks);
        }
        let n_task = features.nrows();
        let mut table: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); n_task];
        for (&task, worker_votes) in &votes {
            if task >= n_task {
                return Err(Error::TaskOutOfRange { task, n_task });
            }
            for (&worker, &class) in worker_votes {
                if worker >= n_worker {
                    return Err(Error::Dimension {
                        what: format!("worker index for task {task}"),
                        expected: n_worker,
                        actual: worker + 1,
                    });
                }
                if class >= n_class {
                    return Err(Error::ClassOutOfRange { task, worker, class, n_class });
                }
                table[task].insert(worker, class);
            }
        }
        for (task, worker_votes) in table.iter().enumerate() {
            if worker_votes.is_empty() {
                return Err(Error::EmptyAnnotatorSet { task });
            }
        }
        Ok(Self {
            n_task,
            n_worker,
            n_class,
            features,
            votes: table,
            ground_truth: None,
        })
    }

    /// Attaches held-out ground truth. Evaluation-only: nothing in the
    /// aggregation or identification paths reads this field.
    pub fn with_ground_truth(mut self, truth: Vec<usize>) -> Result<Self> {
        if truth.len() != self.n_task {
            return Err(Error::Dimension {
                what: "ground truth length".into(),
                expected: self.n_task,
                actual: truth.len(),
            });
        }
        if let Some(&bad) = truth.iter().find(|&&c| c >= self.n_class) {
            return Err(Error::Config(format!(
                "ground-truth class {bad} out of range [0, {})",
                self.n_class
            )));
        }
        self.ground_truth = Some(truth);
        Ok(self)
    }

    pub fn n_task(&self) -> usize {
        self.n_task
    }

    pub fn n_worker(&self) -> usize {
        self.n_worker
    }

    pub fn n_class(&self) -> usize {
        self.n_class
    }

    pub fn n_feature(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_row(&self, task: usize) -> Array1<f64> {
        self.features.row(task).to_owned()
    }

    /// Votes for one task: worker -> class.
    pub fn votes_for(&self, task: usize) -> &BTreeMap<usize, usize> {
        &self.votes[task]
    }

    /// Iterates all `(task, worker, class)` triples in (task, worker) order.
    pub fn iter_votes(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.votes
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.iter().map(move |(&j, &k)| (i, j, k)))
    }

    pub fn total_votes(&self) -> usize {
        self.votes.iter().map(|m| m.len()).sum()
    }

    pub fn ground_truth(&self) -> Option<&[usize]> {
        self.ground_truth.as_deref()
    }

    /// Annotator set per task: `A(x_i)` as a sorted worker list.
    pub fn annotator_sets(&self) -> Vec<Vec<usize>> {
        self.votes.iter().map(|m| m.keys().copied().collect()).collect()
    }

    /// Task set per worker: `T(w_j)` as a sorted task list.
    pub fn tasks_sets(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); self.n_worker];
        for (i, m) in self.votes.iter().enumerate() {
            for &j in m.keys() {
                sets[j].push(i);
            }
        }
        sets
    }

    /// Restricts the dataset to tasks where `keep[i]` is true, reindexing
    /// tasks contiguously. Worker indices are left untouched, so workers may
    /// end up with an empty task set.
    pub fn subset(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.n_task {
            return Err(Error::Dimension {
                what: "subset mask length".into(),
                expected: self.n_task,
                actual: keep.len(),
            });
        }
        let kept: Vec<usize> = (0..self.n_task).filter(|&i| keep[i]).collect();
        if kept.is_empty() {
            return Err(Error::NoTasks);
        }
        let mut features = Array2::zeros((kept.len(), self.features.ncols()));
        let mut votes: VoteTable = BTreeMap::new();
        for (new_i, &old_i) in kept.iter().enumerate() {
            features.row_mut(new_i).assign(&self.features.row(old_i));
            votes.insert(new_i, self.votes[old_i].clone());
        }
        let mut out = Self::with_workers(features, votes, self.n_class, self.n_worker)?;
        if let Some(truth) = &self.ground_truth {
            out = out.with_ground_truth(kept.iter().map(|&i| truth[i]).collect())?;
        }
        Ok(out)
    }

    /// Canonical votes JSON: integer-sorted keys, compact separators.
    /// Loading a canonical file and saving it again is byte-identical.
    pub fn votes_json(&self) -> String {
        let map: VoteTable = self
            .votes
            .iter()
            .enumerate()
            .map(|(i, m)| (i, m.clone()))
            .collect();
        serde_json::to_string(&map).expect("vote table serialization cannot fail")
    }

    pub fn save_votes(&self, path: &Path) -> Result<()> {
        fs::write(path, self.votes_json())?;
        Ok(())
    }

    pub fn save_features(&self, path: &Path) -> Result<()> {
        write_features_csv(path, &self.features)
    }

    pub fn save_ground_truth(&self, path: &Path) -> Result<()> {
        match &self.ground_truth {
            Some(truth) => write_class_csv(path, truth),
            None => Err(Error::Config("dataset has no ground truth to save".into())),
        }
    }
}

/// Loads a dataset from a votes JSON file and a features CSV file.
///
/// The votes file is a JSON object `{"<task>": {"<worker>": <class>}}`;
/// the features file has one unlabeled CSV row of floats per task, in task
/// order. The feature file must cover every voted task, and every feature
/// row must receive at least one vote.
pub fn load_dataset(votes_path: &Path, features_path: &Path, n_class: usize) -> Result<CrowdDataset> {
    let votes = load_votes(votes_path)?;
    let features = read_features_csv(features_path)?;
    let max_task = votes.keys().max().copied().unwrap_or(0);
    if !votes.is_empty() && features.nrows() < max_task + 1 {
        return Err(Error::Dimension {
            what: format!("feature rows in {}", features_path.display()),
            expected: max_task + 1,
            actual: features.nrows(),
        });
    }
    CrowdDataset::new(features, votes, n_class)
}

/// Parses the votes JSON object; keys are decimal task/worker indices.
pub fn load_votes(path: &Path) -> Result<VoteTable> {
    let text = fs::read_to_string(path)?;
    let table: VoteTable = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    Ok(table)
}

/// Reads a headerless CSV of f64 feature rows.
pub fn read_features_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.display().to_string(),
            row: 0,
            message: e.to_string(),
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.display().to_string(),
            row: idx,
            message: e.to_string(),
        })?;
        let row: Vec<f64> = record
            .iter()
            .map(|field| {
                field.trim().parse::<f64>().map_err(|e| Error::Csv {
                    path: path.display().to_string(),
                    row: idx,
                    message: format!("bad float {field:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Csv {
                    path: path.display().to_string(),
                    row: idx,
                    message: format!("expected {} columns, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Csv {
            path: path.display().to_string(),
            row: 0,
            message: "empty feature file".into(),
        });
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.concat();
    Ok(Array2::from_shape_vec((flat.len() / d, d), flat).expect("row-major reshape"))
}

pub fn write_features_csv(path: &Path, features: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in features.rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a one-class-index-per-line CSV (the ground-truth format).
pub fn read_class_csv(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(idx, line)| {
            line.trim().parse::<usize>().map_err(|e| Error::Csv {
                path: path.display().to_string(),
                row: idx,
                message: format!("bad class index {line:?}: {e}"),
            })
        })
        .collect()
}

pub fn write_class_csv(path: &Path, classes: &[usize]) -> Result<()> {
    let mut out = String::new();
    for c in classes {
        out.push_str(&c.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
