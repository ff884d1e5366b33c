//! Small feed-forward classifier trained by mini-batch SGD on soft targets,
//! recording the per-task softmax output after every epoch.
//!
//! The network is deliberately plain: dense layers with rectified-linear
//! hidden activations, softmax output, cross-entropy against simplex-row
//! targets, SGD with momentum and weight decay, and an optional step-wise
//! learning-rate decay schedule. Everything is seeded and single-threaded,
//! so identical inputs produce bit-identical traces.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

/// Architecture plus init seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub n_class: usize,
    pub seed: u64,
}

impl MlpSpec {
    /// Default three-hidden-layer shape (30, 20, 20).
    pub fn new(input_dim: usize, n_class: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_sizes: vec![30, 20, 20],
            n_class,
            seed,
        }
    }

    pub fn with_hidden(mut self, hidden_sizes: Vec<usize>) -> Self {
        self.hidden_sizes = hidden_sizes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_class == 0 || self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::Config("network dimensions must be at least 1".into()));
        }
        Ok(())
    }
}

/// SGD hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// After passing each listed epoch, the learning rate is multiplied by
    /// `lr_decay_factor` exactly once.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, shuffle_seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_epochs: Vec::new(),
            lr_decay_factor: 0.1,
            shuffle_seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.learning_rate < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("learning_rate and weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.lr_decay_factor <= 0.0 {
            return Err(Error::Config("lr_decay_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch` (1-based): the base rate times
/// one decay factor per listed epoch already passed.
pub fn effective_learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    let passed = cfg.lr_decay_epochs.iter().filter(|&&e| e < epoch).count();
    cfg.learning_rate * cfg.lr_decay_factor.powi(passed as i32)
}

/// Dense feed-forward network with rectified-linear hidden layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Seeded uniform fan-in initialization; biases start at zero.
    pub fn init(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut dims = vec![spec.input_dim];
        dims.extend_from_slice(&spec.hidden_sizes);
        dims.push(spec.n_class);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut w = Array2::zeros((fan_in, fan_out));
            for i in 0..fan_in {
                for j in 0..fan_out {
                    w[[i, j]] = rng.random_range(-bound..bound);
                }
            }
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self { weights, biases })
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn n_class(&self) -> usize {
        self.biases.last().expect("at least one layer").len()
    }

    /// Forward pass returning every layer's activation (index 0 is the
    /// input) and the softmax output.
    fn forward(&self, x: &ArrayView2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let n_layers = self.weights.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(x.to_owned());
        for l in 0..n_layers {
            let z = activations[l].dot(&self.weights[l]) + &self.biases[l];
            if l + 1 < n_layers {
                activations.push(z.mapv(|v| v.max(0.0)));
            } else {
                activations.push(z);
            }
        }
        let logits = activations.last().expect("network has layers");
        let probs = softmax_rows(logits);
        (activations, probs)
    }

    /// Softmax probabilities for each feature row.
    pub fn predict_proba(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                what: "feature columns".into(),
                expected: self.input_dim(),
                actual: features.ncols(),
            });
        }
        Ok(self.forward(&features.view()).1)
    }

    /// Mean soft-target cross-entropy over the batch, probabilities floored
    /// at 1e-12 inside the log.
    pub fn loss_on_batch(&self, x: &ArrayView2<f64>, targets: &ArrayView2<f64>) -> f64 {
        let (_, probs) = self.forward(x);
        let n = x.nrows() as f64;
        let mut loss = 0.0;
        for (p_row, q_row) in probs.rows().into_iter().zip(targets.rows()) {
            for (&p, &q) in p_row.iter().zip(q_row) {
                if q != 0.0 {
                    loss -= q * p.max(PROB_FLOOR).ln();
                }
            }
        }
        loss / n
    }

    /// Loss plus gradients of the mean cross-entropy (no weight decay term).
    fn loss_and_grad(
        &self,
        x: &ArrayView2<f64>,
        targets: &ArrayView2<f64>,
    ) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
        let n_layers = self.weights.len();
        let (activations, probs) = self.forward(x);
        let n = x.nrows() as f64;

        let mut loss = 0.0;
        for (p_row, q_row) in probs.rows().into_iter().zip(targets.rows()) {
            for (&p, &q) in p_row.iter().zip(q_row) {
                if q != 0.0 {
                    loss -= q * p.max(PROB_FLOOR).ln();
                }
            }
        }
        loss /= n;

        let mut grad_w = vec![Array2::zeros((0, 0)); n_layers];
        let mut grad_b = vec![Array1::zeros(0); n_layers];
        // d loss / d logits for mean cross-entropy with softmax.
        let mut delta = (&probs - targets) / n;
        for l in (0..n_layers).rev() {
            grad_w[l] = activations[l].t().dot(&delta);
            grad_b[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l].t());
                upstream
                    .iter_mut()
                    .zip(activations[l].iter())
                    .for_each(|(u, &a)| {
                        if a <= 0.0 {
                            *u = 0.0;
                        }
                    });
                delta = upstream;
            }
        }
        (loss, grad_w, grad_b)
    }

    /// All parameters flattened layer by layer (weights row-major, then
    /// bias), for the finite-difference checks.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        let expected: usize = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum();
        if params.len() != expected {
            return Err(Error::Dimension {
                what: "flat parameter vector".into(),
                expected,
                actual: params.len(),
            });
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut() {
                *v = params[offset];
                offset += 1;
            }
            for v in b.iter_mut() {
                *v = params[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    /// Gradient of the mean cross-entropy in the `params_flat` layout.
    pub fn grad_flat(&self, x: &ArrayView2<f64>, targets: &ArrayView2<f64>) -> Vec<f64> {
        let (_, grad_w, grad_b) = self.loss_and_grad(x, targets);
        let mut out = Vec::new();
        for (w, b) in grad_w.iter().zip(&grad_b) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Per-epoch softmax outputs for a fixed set of evaluation tasks, indexed
/// `(epoch, task, class)` with 0-based epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginTrace {
    data: Array3<f64>,
}

impl MarginTrace {
    pub fn new(data: Array3<f64>) -> Self {
        Self { data }
    }

    pub fn epochs(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_task(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_class(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn softmax_at(&self, epoch: usize, task: usize) -> ArrayView1<'_, f64> {
        self.data.slice(s![epoch, task, ..])
    }

    /// Softmax of the final epoch for one task.
    pub fn final_softmax(&self, task: usize) -> ArrayView1<'_, f64> {
        self.data.slice(s![self.epochs() - 1, task, ..])
    }

    /// Final-epoch softmax matrix, one row per task.
    pub fn final_softmax_matrix(&self) -> Array2<f64> {
        self.data.slice(s![self.epochs() - 1, .., ..]).to_owned()
    }

    pub fn to_json_string(&self) -> String {
        let softmaxes: Vec<Vec<Vec<f64>>> = (0..self.epochs())
            .map(|t| {
                (0..self.n_task())
                    .map(|i| self.softmax_at(t, i).to_vec())
                    .collect()
            })
            .collect();
        let file = TraceJson {
            epochs: self.epochs(),
            n_task: self.n_task(),
            n_class: self.n_class(),
            softmaxes,
        };
        serde_json::to_string(&file).expect("trace serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: TraceJson = serde_json::from_str(text).map_err(|source| Error::Parse {
            path: "<trace>".into(),
            source,
        })?;
        let mut data = Array3::zeros((file.epochs, file.n_task, file.n_class));
        if file.softmaxes.len() != file.epochs {
            return Err(Error::Dimension {
                what: "trace epochs".into(),
                expected: file.epochs,
                actual: file.softmaxes.len(),
            });
        }
        for (t, per_task) in file.softmaxes.iter().enumerate() {
            if per_task.len() != file.n_task {
                return Err(Error::Dimension {
                    what: format!("trace tasks at epoch {t}"),
                    expected: file.n_task,
                    actual: per_task.len(),
                });
            }
            for (i, probs) in per_task.iter().enumerate() {
                if probs.len() != file.n_class {
                    return Err(Error::Dimension {
                        what: format!("trace classes at epoch {t}, task {i}"),
                        expected: file.n_class,
                        actual: probs.len(),
                    });
                }
                for (k, &p) in probs.iter().enumerate() {
                    data[[t, i, k]] = p;
                }
            }
        }
        Ok(Self { data })
    }
}

#[derive(Serialize, Deserialize)]
struct TraceJson {
    epochs: usize,
    n_task: usize,
    n_class: usize,
    softmaxes: Vec<Vec<Vec<f64>>>,
}

/// Trains a fresh network and records the softmax of every `eval_tasks` row
/// after each epoch's updates (a separate full-batch inference pass).
pub fn train_with_trace(
    spec: &MlpSpec,
    cfg: &TrainConfig,
    features: &Array2<f64>,
    targets: &Array2<f64>,
    eval_tasks: &Array2<f64>,
) -> Result<(Mlp, MarginTrace)> {
    let (mlp, trace) = train_inner(spec, cfg, features, targets, Some(eval_tasks))?;
    Ok((mlp, trace.expect("trace requested")))
}

/// Trains without recording a trace.
pub fn train(
    spec: &MlpSpec,
    cfg: &TrainConfig,
    features: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<Mlp> {
    let (mlp, _) = train_inner(spec, cfg, features, targets, None)?;
    Ok(mlp)
}

fn train_inner(
    spec: &MlpSpec,
    cfg: &TrainConfig,
    features: &Array2<f64>,
    targets: &Array2<f64>,
    eval_tasks: Option<&Array2<f64>>,
) -> Result<(Mlp, Option<MarginTrace>)> {
    spec.validate()?;
    cfg.validate()?;
    if features.ncols() != spec.input_dim {
        return Err(Error::Dimension {
            what: "training feature columns".into(),
            expected: spec.input_dim,
            actual: features.ncols(),
        });
    }
    if let Some(eval) = eval_tasks {
        if eval.ncols() != spec.input_dim {
            return Err(Error::Dimension {
                what: "eval feature columns".into(),
                expected: spec.input_dim,
                actual: eval.ncols(),
            });
        }
    }
    if targets.nrows() != features.nrows() {
        return Err(Error::Dimension {
            what: "target rows".into(),
            expected: features.nrows(),
            actual: targets.nrows(),
        });
    }
    if targets.ncols() != spec.n_class {
        return Err(Error::Dimension {
            what: "target columns".into(),
            expected: spec.n_class,
            actual: targets.ncols(),
        });
    }
    for (i, row) in targets.rows().into_iter().enumerate() {
        let sum = row.sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&q| q < -1e-12) {
            return Err(Error::Config(format!("target row {i} is not on the simplex (sum {sum})")));
        }
    }

    let mut mlp = Mlp::init(spec)?;
    let mut vel_w: Vec<Array2<f64>> = mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
    let mut vel_b: Vec<Array1<f64>> = mlp.biases.iter().map(|b| Array1::zeros(b.len())).collect();

    let n = features.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut trace = eval_tasks.map(|eval| Array3::zeros((cfg.epochs, eval.nrows(), spec.n_class)));

    for epoch in 1..=cfg.epochs {
        let lr = effective_learning_rate(cfg, epoch);
        shuffle(&mut order, &mut rng);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = select_rows(features, chunk);
            let q = select_rows(targets, chunk);
            let (loss, grad_w, grad_b) = mlp.loss_and_grad(&x.view(), &q.view());
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_idx });
            }
            for l in 0..mlp.weights.len() {
                let g = &grad_w[l] + &(cfg.weight_decay * &mlp.weights[l]);
                vel_w[l] = cfg.momentum * &vel_w[l] + &g;
                mlp.weights[l] = &mlp.weights[l] - &(lr * &vel_w[l]);

                let gb = &grad_b[l] + &(cfg.weight_decay * &mlp.biases[l]);
                vel_b[l] = cfg.momentum * &vel_b[l] + &gb;
                mlp.biases[l] = &mlp.biases[l] - &(lr * &vel_b[l]);
            }
        }
        if let (Some(trace), Some(eval)) = (trace.as_mut(), eval_tasks) {
            let probs = mlp.predict_proba(eval)?;
            trace.slice_mut(s![epoch - 1, .., ..]).assign(&probs);
        }
    }

    Ok((mlp, trace.map(MarginTrace::new)))
}

fn select_rows(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (dst, &src) in rows.iter().enumerate() {
        out.row_mut(dst).assign(&m.row(src));
    }
    out
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Margin of a softmax vector toward an assigned class: the assigned
/// probability minus the second-largest probability of the whole vector.
/// Non-negative exactly when the assigned class is ranked first.
pub fn margin(softmax: &[f64], assigned_class: usize) -> f64 {
    if softmax.len() < 2 {
        return 0.0;
    }
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in softmax {
        if v > top {
            second = top;
            top = v;
        } else if v > second {
            second = v;
        }
    }
    softmax[assigned_class] - second
}
