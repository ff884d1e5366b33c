//! Synthetic tasks and simulated crowds for end-to-end experiments.
//!
//! Three seeded generators (concentric circles, interleaved moons, Gaussian
//! blobs) produce labeled 2-D point clouds with a deterministic train/test
//! split. Crowds are simulated either from explicit confusion matrices
//! (votes sampled from the error model) or from deliberately weak
//! feature-aware learners fit on the ground truth: a capped-iteration
//! linear separator and a small gradient-boosted stump ensemble.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aggregation::ConfusionMatrix;
use crate::dataset::{CrowdDataset, VoteTable};
use crate::error::{Error, Result};
use crate::trainer::{train_with_trace, Mlp, MlpSpec, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Three concentric annuli (K = 3) with a high-noise northeast sector
    /// where the rings blur into each other.
    Circles,
    /// Two interleaved half-moons (K = 2).
    Moons,
    /// K Gaussian blobs around centers spread on a circle.
    Blobs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: Generator,
    /// Total points before the split.
    pub n_task: usize,
    pub noise: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub n_class: usize,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_task < self.n_class {
            return Err(Error::Config("n_task must be at least n_class".into()));
        }
        if !(0.0 < self.test_fraction && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if self.noise < 0.0 {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        let expected = match self.generator {
            Generator::Circles => Some(3),
            Generator::Moons => Some(2),
            Generator::Blobs => None,
        };
        if let Some(k) = expected {
            if self.n_class != k {
                return Err(Error::Config(format!(
                    "{:?} generator fixes n_class = {k}",
                    self.generator
                )));
            }
        }
        if self.n_class == 0 {
            return Err(Error::Config("n_class must be at least 1".into()));
        }
        Ok(())
    }
}

/// Labeled feature matrix; the dataset skeleton before votes exist.
#[derive(Debug, Clone)]
pub struct TaskSet {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_class: usize,
    /// Planted-ambiguity intensity per task in [0, 1]; zero outside the
    /// circles generator. A worker answering a task scrambles its vote
    /// with probability `hard_region_noise * intensity`, so votes conflict
    /// most in the middle of the region and taper off toward its edges.
    pub hard_region: Vec<f64>,
}

impl TaskSet {
    pub fn n_task(&self) -> usize {
        self.labels.len()
    }
}

/// Planted-ambiguity intensity at a point: a triangular bump over a
/// 90-degree northeast wedge, peaking at the 45-degree diagonal.
pub fn sector_intensity(x: f64, y: f64) -> f64 {
    let angle = y.atan2(x);
    let center = std::f64::consts::FRAC_PI_4;
    let half_width = std::f64::consts::FRAC_PI_4;
    let delta = (angle - center).abs();
    (1.0 - delta / half_width).max(0.0)
}

/// The core of the planted region: where votes are mostly scrambled.
pub fn in_disagreement_sector(x: f64, y: f64) -> bool {
    sector_intensity(x, y) > 0.5
}

const CIRCLE_RADII: [f64; 3] = [1.0, 1.9, 2.8];

/// Generates the seeded point cloud and splits it into train and test.
pub fn generate_tasks(spec: &SyntheticSpec) -> Result<(TaskSet, TaskSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (features, labels) = match spec.generator {
        Generator::Circles => gen_circles(spec.n_task, spec.noise, &mut rng),
        Generator::Moons => gen_moons(spec.n_task, spec.noise, &mut rng),
        Generator::Blobs => gen_blobs(spec.n_task, spec.n_class, spec.noise, &mut rng),
    };
    let hard: Vec<f64> = match spec.generator {
        Generator::Circles => (0..spec.n_task)
            .map(|i| sector_intensity(features[[i, 0]], features[[i, 1]]))
            .collect(),
        _ => vec![0.0; spec.n_task],
    };

    let n = spec.n_task;
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let n_test = n_test.clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut test_idx: Vec<usize> = order[..n_test].to_vec();
    let mut train_idx: Vec<usize> = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let take = |idx: &[usize]| -> TaskSet {
        let mut f = Array2::zeros((idx.len(), features.ncols()));
        let mut l = Vec::with_capacity(idx.len());
        let mut h = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            f.row_mut(row).assign(&features.row(i));
            l.push(labels[i]);
            h.push(hard[i]);
        }
        TaskSet { features: f, labels: l, n_class: spec.n_class, hard_region: h }
    };
    Ok((take(&train_idx), take(&test_idx)))
}

fn gen_circles(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>) {
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    for i in 0..n {
        let class = i % 3;
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let radius = CIRCLE_RADII[class] + noise * unit.sample(rng);
        features[[i, 0]] = radius * theta.cos();
        features[[i, 1]] = radius * theta.sin();
        labels.push(class);
    }
    (features, labels)
}

fn gen_moons(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>) {
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    for i in 0..n {
        let class = i % 2;
        let t = rng.random_range(0.0..std::f64::consts::PI);
        let (x, y) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        features[[i, 0]] = x + noise * unit.sample(rng);
        features[[i, 1]] = y + noise * unit.sample(rng);
        labels.push(class);
    }
    (features, labels)
}

fn gen_blobs(n: usize, k: usize, noise: f64, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>) {
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let radius = 4.0;
    for i in 0..n {
        let class = i % k;
        let angle = std::f64::consts::TAU * class as f64 / k as f64;
        features[[i, 0]] = radius * angle.cos() + noise * unit.sample(rng);
        features[[i, 1]] = radius * angle.sin() + noise * unit.sample(rng);
        labels.push(class);
    }
    (features, labels)
}

/// How a simulated worker produces answers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerKind {
    /// Sample answers from the rows of an explicit confusion matrix.
    Confusion(ConfusionMatrix),
    /// Linear separator fit with a capped iteration budget.
    WeakLinear { max_iter: usize },
    /// Gradient-boosted one-split stumps.
    WeakBoosted { n_stumps: usize, learning_rate: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub kind: WorkerKind,
    pub seed: u64,
    /// Probability of answering a planted hard-region task with a uniform
    /// random class instead of the worker's own output. Zero everywhere
    /// except protocols that plant a disagreement region.
    #[serde(default)]
    pub hard_region_noise: f64,
    /// Minimum region intensity before this worker starts scrambling;
    /// raising it confines the worker's confusion to the region's core.
    #[serde(default)]
    pub hard_region_onset: f64,
}

impl WorkerSpec {
    pub fn new(kind: WorkerKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            hard_region_noise: 0.0,
            hard_region_onset: 0.0,
        }
    }
}

/// Annotator effort per task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteEffort {
    /// Every worker votes on every task.
    Full,
    /// Exactly this many workers, drawn uniformly per task.
    Exactly(usize),
    /// Uniformly 1..=this many workers per task.
    UpTo(usize),
}

enum FittedWorker {
    Confusion { matrix: ConfusionMatrix, rng: ChaCha8Rng },
    /// Deterministic predictions for every train task, precomputed.
    Predictions(Vec<usize>),
}

impl FittedWorker {
    fn answer(&mut self, task: usize, truth: usize) -> usize {
        match self {
            FittedWorker::Confusion { matrix, rng } => {
                let row = &matrix.rows()[truth];
                let draw: f64 = rng.random_range(0.0..1.0);
                let mut acc = 0.0;
                for (k, &p) in row.iter().enumerate() {
                    acc += p;
                    if draw < acc {
                        return k;
                    }
                }
                row.len() - 1
            }
            FittedWorker::Predictions(preds) => preds[task],
        }
    }
}

fn fit_worker(worker: &WorkerSpec, tasks: &TaskSet) -> Result<FittedWorker> {
    match &worker.kind {
        WorkerKind::Confusion(matrix) => {
            if matrix.n_class() != tasks.n_class {
                return Err(Error::Dimension {
                    what: "confusion worker classes".into(),
                    expected: tasks.n_class,
                    actual: matrix.n_class(),
                });
            }
            Ok(FittedWorker::Confusion {
                matrix: matrix.clone(),
                rng: ChaCha8Rng::seed_from_u64(worker.seed),
            })
        }
        WorkerKind::WeakLinear { max_iter } => {
            let model = fit_weak_linear(tasks, *max_iter, worker.seed)?;
            let probs = model.predict_proba(&tasks.features)?;
            let preds = probs
                .rows()
                .into_iter()
                .map(|row| argmax_first(&row))
                .collect();
            Ok(FittedWorker::Predictions(preds))
        }
        WorkerKind::WeakBoosted { n_stumps, learning_rate } => {
            let model = BoostedStumps::fit(tasks, *n_stumps, *learning_rate)?;
            let preds = (0..tasks.n_task())
                .map(|i| model.predict(&tasks.features.row(i)))
                .collect();
            Ok(FittedWorker::Predictions(preds))
        }
    }
}

fn fit_weak_linear(tasks: &TaskSet, max_iter: usize, seed: u64) -> Result<Mlp> {
    if max_iter == 0 {
        return Err(Error::Config("weak linear worker needs max_iter >= 1".into()));
    }
    let spec = MlpSpec {
        input_dim: tasks.features.ncols(),
        hidden_sizes: Vec::new(),
        n_class: tasks.n_class,
        seed,
    };
    let mut cfg = TrainConfig::new(max_iter, seed.wrapping_add(1));
    cfg.batch_size = tasks.n_task().min(64);
    let mut targets = Array2::zeros((tasks.n_task(), tasks.n_class));
    for (i, &label) in tasks.labels.iter().enumerate() {
        targets[[i, label]] = 1.0;
    }
    let (model, _) = train_with_trace(&spec, &cfg, &tasks.features, &targets, &tasks.features)?;
    Ok(model)
}

fn argmax_first(row: &ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Depth-one regression tree.
#[derive(Debug, Clone)]
struct Stump {
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
}

impl Stump {
    fn eval(&self, x: &ArrayView1<f64>) -> f64 {
        if x[self.feature] <= self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

/// Multiclass gradient boosting with stump base learners: each round fits
/// one stump per class to the softmax residual.
#[derive(Debug, Clone)]
struct BoostedStumps {
    n_class: usize,
    learning_rate: f64,
    rounds: Vec<Vec<Stump>>,
}

impl BoostedStumps {
    fn fit(tasks: &TaskSet, n_stumps: usize, learning_rate: f64) -> Result<Self> {
        if n_stumps == 0 || learning_rate <= 0.0 {
            return Err(Error::Config("boosted worker needs n_stumps >= 1 and a positive rate".into()));
        }
        let n = tasks.n_task();
        let k = tasks.n_class;
        let mut scores = Array2::zeros((n, k));
        let mut rounds = Vec::with_capacity(n_stumps);
        for _ in 0..n_stumps {
            let probs = softmax_rows(&scores);
            let mut round = Vec::with_capacity(k);
            for class in 0..k {
                let residuals: Vec<f64> = (0..n)
                    .map(|i| {
                        let y = if tasks.labels[i] == class { 1.0 } else { 0.0 };
                        y - probs[[i, class]]
                    })
                    .collect();
                let stump = fit_stump(&tasks.features, &residuals);
                for i in 0..n {
                    scores[[i, class]] += learning_rate * stump.eval(&tasks.features.row(i));
                }
                round.push(stump);
            }
            rounds.push(round);
        }
        Ok(Self { n_class: k, learning_rate, rounds })
    }

    fn predict(&self, x: &ArrayView1<f64>) -> usize {
        let mut scores = vec![0.0; self.n_class];
        for round in &self.rounds {
            for (class, stump) in round.iter().enumerate() {
                scores[class] += self.learning_rate * stump.eval(x);
            }
        }
        let mut best = 0;
        for (c, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = c;
            }
        }
        best
    }
}

/// Least-squares stump over all features and split points; degenerates to
/// a single leaf at the residual mean when no split improves.
fn fit_stump(features: &Array2<f64>, residuals: &[f64]) -> Stump {
    let n = residuals.len();
    let total: f64 = residuals.iter().sum();
    let mean = total / n as f64;
    let mut best = Stump {
        feature: 0,
        threshold: f64::INFINITY,
        left: mean,
        right: mean,
    };
    // Baseline objective for the single-leaf stump.
    let mut best_gain = total * total / n as f64;
    for feature in 0..features.ncols() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| features[[a, feature]].total_cmp(&features[[b, feature]]));
        let mut left_sum = 0.0;
        for split in 0..n - 1 {
            left_sum += residuals[order[split]];
            let a = features[[order[split], feature]];
            let b = features[[order[split + 1], feature]];
            if a == b {
                continue;
            }
            let n_left = (split + 1) as f64;
            let n_right = (n - split - 1) as f64;
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / n_left + right_sum * right_sum / n_right;
            if gain > best_gain + 1e-12 {
                best_gain = gain;
                best = Stump {
                    feature,
                    threshold: 0.5 * (a + b),
                    left: left_sum / n_left,
                    right: right_sum / n_right,
                };
            }
        }
    }
    best
}

fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Simulates a crowd over the given tasks: weak workers are fit on the
/// ground truth and answer their own predictions, confusion workers sample
/// from their error model, and annotator subsets are drawn uniformly per
/// task according to the effort model.
pub fn simulate_votes(
    tasks: &TaskSet,
    workers: &[WorkerSpec],
    effort: VoteEffort,
    seed: u64,
) -> Result<CrowdDataset> {
    let n_worker = workers.len();
    if n_worker == 0 {
        return Err(Error::Config("need at least one worker".into()));
    }
    let per_task_max = match effort {
        VoteEffort::Full => n_worker,
        VoteEffort::Exactly(m) | VoteEffort::UpTo(m) => m,
    };
    if per_task_max == 0 || per_task_max > n_worker {
        return Err(Error::Config(format!(
            "votes per task must lie in [1, {n_worker}]"
        )));
    }

    let mut fitted: Vec<FittedWorker> = workers
        .iter()
        .map(|w| fit_worker(w, tasks))
        .collect::<Result<_>>()?;
    let mut sector_rngs: Vec<ChaCha8Rng> = workers
        .iter()
        .map(|w| ChaCha8Rng::seed_from_u64(w.seed.wrapping_add(0xD15A)))
        .collect();

    let mut assign_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = VoteTable::new();
    for task in 0..tasks.n_task() {
        let chosen: Vec<usize> = match effort {
            VoteEffort::Full => (0..n_worker).collect(),
            VoteEffort::Exactly(m) => sample_workers(n_worker, m, &mut assign_rng),
            VoteEffort::UpTo(m) => {
                let count = assign_rng.random_range(1..=m);
                sample_workers(n_worker, count, &mut assign_rng)
            }
        };
        let truth = tasks.labels[task];
        let entry = table.entry(task).or_default();
        for j in chosen {
            let intensity = tasks.hard_region[task];
            let scramble_prob = if intensity > workers[j].hard_region_onset && intensity > 0.0 {
                workers[j].hard_region_noise
            } else {
                0.0
            };
            let scrambled =
                scramble_prob > 0.0 && sector_rngs[j].random_range(0.0..1.0) < scramble_prob;
            let answer = if scrambled {
                sector_rngs[j].random_range(0..tasks.n_class)
            } else {
                fitted[j].answer(task, truth)
            };
            entry.insert(j, answer);
        }
    }
    CrowdDataset::with_workers(tasks.features.clone(), table, tasks.n_class, n_worker)?
        .with_ground_truth(tasks.labels.clone())
}

fn sample_workers(n_worker: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n_worker).collect();
    for i in 0..count {
        let j = rng.random_range(i..n_worker);
        pool.swap(i, j);
    }
    let mut chosen = pool[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

/// The desk-scale three-circles protocol: 750 points split 70/30, three
/// heterogeneous workers (a capped linear separator, a tiny stump ensemble,
/// a larger stump ensemble) each voting on every train task.
pub fn three_circles_protocol(seed: u64) -> Result<(CrowdDataset, TaskSet)> {
    let spec = three_circles_spec(seed);
    let (train, test) = generate_tasks(&spec)?;
    let workers = three_circles_workers(seed);
    let dataset = simulate_votes(&train, &workers, VoteEffort::Full, seed.wrapping_add(0x5EED))?;
    Ok((dataset, test))
}

/// Generator settings for the three-circles protocol: 750 points on three
/// annuli, 70/30 split.
pub fn three_circles_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        generator: Generator::Circles,
        n_task: 750,
        noise: 0.25,
        test_fraction: 0.3,
        seed,
        n_class: 3,
    }
}

/// The worker zoo used by [`three_circles_protocol`]: heterogeneous
/// learners, each unreliable inside the planted sector.
pub fn three_circles_workers(seed: u64) -> Vec<WorkerSpec> {
    let mut workers = vec![
        WorkerSpec::new(
            WorkerKind::WeakLinear { max_iter: 25 },
            seed.wrapping_add(1_000),
        ),
        WorkerSpec::new(
            WorkerKind::WeakBoosted { n_stumps: 3, learning_rate: 0.5 },
            seed.wrapping_add(2_000),
        ),
        WorkerSpec::new(
            WorkerKind::WeakBoosted { n_stumps: 50, learning_rate: 0.3 },
            seed.wrapping_add(3_000),
        ),
    ];
    for w in &mut workers {
        w.hard_region_noise = 1.0;
    }
    workers
}

/// Many-workers protocol: K = 4 blobs with overlap, a pool of mixed weak
/// workers, and at most `max_votes` votes per task.
pub fn many_workers_protocol(
    n_task: usize,
    n_worker: usize,
    max_votes: usize,
    seed: u64,
) -> Result<(CrowdDataset, TaskSet)> {
    let spec = SyntheticSpec {
        generator: Generator::Blobs,
        n_task,
        noise: 1.6,
        test_fraction: 0.3,
        seed,
        n_class: 4,
    };
    let (train, test) = generate_tasks(&spec)?;
    let mut zoo_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(77));
    let workers: Vec<WorkerSpec> = (0..n_worker)
        .map(|w| {
            let kind = match zoo_rng.random_range(0..3) {
                0 => WorkerKind::WeakLinear { max_iter: zoo_rng.random_range(1..40) },
                1 => WorkerKind::WeakBoosted {
                    n_stumps: zoo_rng.random_range(1..10),
                    learning_rate: 0.5,
                },
                _ => WorkerKind::WeakBoosted {
                    n_stumps: zoo_rng.random_range(10..40),
                    learning_rate: 0.3,
                },
            };
            WorkerSpec::new(kind, seed.wrapping_add(10_000 + w as u64))
        })
        .collect();
    let dataset = simulate_votes(&train, &workers, VoteEffort::UpTo(max_votes), seed.wrapping_add(0xA55))?;
    Ok((dataset, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{dawid_skene, EmConfig};

    fn spec(generator: Generator, n_task: usize, n_class: usize, noise: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            generator,
            n_task,
            noise,
            test_fraction: 0.3,
            seed,
            n_class,
        }
    }

    #[test]
    fn circles_split_counts() {
        let (train, test) = generate_tasks(&spec(Generator::Circles, 750, 3, 0.2, 0)).unwrap();
        assert_eq!(train.n_task(), 525);
        assert_eq!(test.n_task(), 225);
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(Generator::Moons, 200, 2, 0.2, 5);
        let (a_train, a_test) = generate_tasks(&s).unwrap();
        let (b_train, b_test) = generate_tasks(&s).unwrap();
        assert_eq!(a_train.features, b_train.features);
        assert_eq!(a_train.labels, b_train.labels);
        assert_eq!(a_test.features, b_test.features);
        assert_eq!(a_test.labels, b_test.labels);
    }

    #[test]
    fn weak_linear_separates_far_blobs() {
        let (train, test) = generate_tasks(&spec(Generator::Blobs, 400, 3, 0.4, 2)).unwrap();
        let worker = WorkerSpec::new(WorkerKind::WeakLinear { max_iter: 60 }, 3);
        let fitted = fit_worker(&worker, &train).unwrap();
        let preds = match fitted {
            FittedWorker::Predictions(p) => p,
            _ => unreachable!(),
        };
        let correct = preds.iter().zip(&train.labels).filter(|(a, b)| a == b).count();
        let acc = correct as f64 / train.n_task() as f64;
        assert!(acc >= 0.95, "weak linear accuracy {acc}");
        let _ = test;
    }

    #[test]
    fn identity_confusion_worker_echoes_truth() {
        let (train, _) = generate_tasks(&spec(Generator::Blobs, 120, 4, 0.5, 7)).unwrap();
        let workers = vec![WorkerSpec::new(
            WorkerKind::Confusion(ConfusionMatrix::identity(4)),
            11,
        )];
        let d = simulate_votes(&train, &workers, VoteEffort::Full, 1).unwrap();
        for i in 0..d.n_task() {
            assert_eq!(d.votes_for(i)[&0], train.labels[i]);
        }
    }

    #[test]
    fn uniform_confusion_worker_votes_uniformly() {
        let k = 4;
        let (train, _) = generate_tasks(&spec(Generator::Blobs, 10_000, k, 0.5, 9)).unwrap();
        let workers = vec![WorkerSpec::new(
            WorkerKind::Confusion(ConfusionMatrix::uniform(k)),
            13,
        )];
        let d = simulate_votes(&train, &workers, VoteEffort::Full, 2).unwrap();
        let mut counts = vec![0usize; k];
        for i in 0..d.n_task() {
            counts[d.votes_for(i)[&0]] += 1;
        }
        let n = d.n_task() as f64;
        for c in 0..k {
            let freq = counts[c] as f64 / n;
            assert!((freq - 1.0 / k as f64).abs() <= 0.05, "class {c} freq {freq}");
        }
    }

    #[test]
    fn full_effort_gives_everyone_a_vote() {
        let (train, _) = generate_tasks(&spec(Generator::Circles, 300, 3, 0.2, 1)).unwrap();
        let workers = three_circles_workers(1);
        let d = simulate_votes(&train, &workers, VoteEffort::Full, 3).unwrap();
        assert!(d.annotator_sets().iter().all(|a| a.len() == 3));
    }

    #[test]
    fn effort_models_control_vote_counts() {
        let (train, _) = generate_tasks(&spec(Generator::Blobs, 200, 4, 1.0, 3)).unwrap();
        let workers: Vec<WorkerSpec> = (0..8)
            .map(|w| WorkerSpec::new(
                WorkerKind::Confusion(ConfusionMatrix::diagonal(4, 0.7).unwrap()),
                w,
            ))
            .collect();
        let exact = simulate_votes(&train, &workers, VoteEffort::Exactly(3), 4).unwrap();
        assert!(exact.annotator_sets().iter().all(|a| a.len() == 3));
        let up_to = simulate_votes(&train, &workers, VoteEffort::UpTo(5), 5).unwrap();
        assert!(up_to
            .annotator_sets()
            .iter()
            .all(|a| (1..=5).contains(&a.len())));
    }

    #[test]
    fn confusion_crowd_feeds_dawid_skene_recovery() {
        // Generative-model consistency: diagonal-0.8 confusion workers,
        // full annotation, EM recovers the diagonal within 0.1.
        let (train, _) = generate_tasks(&spec(Generator::Blobs, 715, 3, 0.8, 21)).unwrap();
        assert_eq!(train.n_task(), 500);
        let workers: Vec<WorkerSpec> = (0..10)
            .map(|w| WorkerSpec::new(
                WorkerKind::Confusion(ConfusionMatrix::diagonal(3, 0.8).unwrap()),
                100 + w,
            ))
            .collect();
        let d = simulate_votes(&train, &workers, VoteEffort::Full, 6).unwrap();
        let state = dawid_skene(&d, &EmConfig::default()).unwrap();
        for pi in &state.confusions {
            for c in 0..3 {
                assert!((pi.get(c, c) - 0.8).abs() <= 0.1, "diag {}", pi.get(c, c));
            }
        }
    }

    #[test]
    fn disagreement_sector_is_the_northeast_wedge() {
        assert!(in_disagreement_sector(1.0, 1.0));
        assert!(!in_disagreement_sector(-1.0, 1.0));
        assert!(!in_disagreement_sector(1.0, -1.0));
        assert!(!in_disagreement_sector(1.0, 0.1));
    }
}
