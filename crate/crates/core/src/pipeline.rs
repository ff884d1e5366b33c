//! End-to-end pipeline: (simulate | load) -> optional identification and
//! pruning -> aggregation -> retraining -> evaluation, repeated over seeded
//! repetitions with mean/std reporting.

use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{
    aggregate_to_targets, dawid_skene, majority_vote, naive_soft, weighted_ds, EmConfig, Label,
};
use crate::dataset::{
    load_dataset, read_class_csv, read_features_csv, CrowdDataset,
};
use crate::error::{Error, Result};
use crate::glad::{glad, GladConfig};
use crate::identification::{identify, IdentifyMethod};
use crate::metrics::{accuracy, ece, EceConfig};
use crate::simulation::{generate_tasks, simulate_votes, SyntheticSpec, VoteEffort, WorkerSpec};
use crate::trainer::{train, MlpSpec, TrainConfig};

/// Aggregation strategy applied to the (possibly pruned) train set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Mv,
    Ns,
    Ds,
    Wds,
    Glad,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mv => "mv",
            Strategy::Ns => "ns",
            Strategy::Ds => "ds",
            Strategy::Wds => "wds",
            Strategy::Glad => "glad",
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![30, 20, 20]
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_factor() -> f64 {
    0.1
}

/// Network architecture and optimizer settings, minus the seeds (those are
/// derived from the master seed per stage and repetition).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetParams {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub lr_decay_epochs: Vec<usize>,
    #[serde(default = "default_factor")]
    pub lr_decay_factor: f64,
}

impl NetParams {
    pub fn new(epochs: usize) -> Self {
        Self {
            hidden: default_hidden(),
            epochs,
            batch_size: default_batch(),
            learning_rate: default_lr(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            lr_decay_epochs: Vec::new(),
            lr_decay_factor: default_factor(),
        }
    }

    pub fn to_spec(&self, input_dim: usize, n_class: usize, seed: u64) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_sizes: self.hidden.clone(),
            n_class,
            seed,
        }
    }

    pub fn to_train_config(&self, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_decay_epochs: self.lr_decay_epochs.clone(),
            lr_decay_factor: self.lr_decay_factor,
            shuffle_seed,
        }
    }
}

/// Fresh synthetic data per repetition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub spec: SyntheticSpec,
    pub workers: Vec<WorkerSpec>,
    pub effort: VoteEffort,
}

/// Where each repetition's train/test data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Simulate(SimulationPlan),
    Files {
        votes: PathBuf,
        features: PathBuf,
        n_class: usize,
        test_features: PathBuf,
        test_ground_truth: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub data: DataSource,
    pub strategy: Strategy,
    /// Identification method; `None` disables pruning entirely.
    #[serde(default)]
    pub method: Option<IdentifyMethod>,
    #[serde(default)]
    pub alpha: f64,
    pub identify_net: NetParams,
    pub train_net: NetParams,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub glad: GladConfig,
    pub repeat: usize,
    pub master_seed: u64,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    15
}

/// One repetition's evaluation numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepetitionOutcome {
    pub accuracy: f64,
    pub ece: f64,
    pub n_pruned: usize,
}

/// One strategy/alpha row, aggregated over repetitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    pub alpha: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub ece_mean: f64,
    pub ece_std: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub row: ResultRow,
    pub repetitions: Vec<RepetitionOutcome>,
}

/// Stable per-stage seed derivation: the first eight little-endian bytes
/// of SHA-256(master || stage || repetition).
pub fn stage_seed(master_seed: u64, stage: &str, repetition: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(stage.as_bytes());
    hasher.update((repetition as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Runs the full pipeline for every repetition and aggregates the metrics.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    if cfg.repeat == 0 {
        return Err(Error::Config("repeat must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", cfg.alpha)));
    }
    let file_data = match &cfg.data {
        DataSource::Files {
            votes,
            features,
            n_class,
            test_features,
            test_ground_truth,
        } => {
            let train = load_dataset(votes, features, *n_class)?;
            let test_x = read_features_csv(test_features)?;
            let test_y = read_class_csv(test_ground_truth)?;
            if test_x.nrows() != test_y.len() {
                return Err(Error::Dimension {
                    what: "test ground-truth rows".into(),
                    expected: test_x.nrows(),
                    actual: test_y.len(),
                });
            }
            Some((train, test_x, test_y))
        }
        DataSource::Simulate(_) => None,
    };

    let mut repetitions = Vec::with_capacity(cfg.repeat);
    for rep in 0..cfg.repeat {
        let (train_set, test_x, test_y) = match (&cfg.data, &file_data) {
            (DataSource::Simulate(plan), _) => {
                let sim_seed = stage_seed(cfg.master_seed, "simulate", rep);
                let mut spec = plan.spec.clone();
                spec.seed = spec.seed.wrapping_add(sim_seed);
                let (train_tasks, test_tasks) = generate_tasks(&spec)?;
                let workers: Vec<WorkerSpec> = plan
                    .workers
                    .iter()
                    .map(|w| WorkerSpec {
                        kind: w.kind.clone(),
                        seed: w.seed.wrapping_add(sim_seed),
                        hard_region_noise: w.hard_region_noise,
                    })
                    .collect();
                let d = simulate_votes(
                    &train_tasks,
                    &workers,
                    plan.effort,
                    sim_seed.wrapping_add(1),
                )?;
                (d, test_tasks.features.clone(), test_tasks.labels.clone())
            }
            (DataSource::Files { .. }, Some((train, test_x, test_y))) => {
                (train.clone(), test_x.clone(), test_y.clone())
            }
            (DataSource::Files { .. }, None) => unreachable!("file data preloaded"),
        };
        repetitions.push(run_repetition(cfg, rep, train_set, &test_x, &test_y)?);
    }

    let accs: Vec<f64> = repetitions.iter().map(|r| r.accuracy).collect();
    let eces: Vec<f64> = repetitions.iter().map(|r| r.ece).collect();
    let (acc_mean, acc_std) = mean_std(&accs);
    let (ece_mean, ece_std) = mean_std(&eces);
    let strategy = match cfg.method {
        Some(m) => format!("{}+{}", cfg.strategy.name(), m.name()),
        None => cfg.strategy.name().to_string(),
    };
    Ok(PipelineOutcome {
        row: ResultRow {
            strategy,
            alpha: cfg.alpha,
            acc_mean,
            acc_std,
            ece_mean,
            ece_std,
        },
        repetitions,
    })
}

fn run_repetition(
    cfg: &PipelineConfig,
    rep: usize,
    train_set: CrowdDataset,
    test_x: &Array2<f64>,
    test_y: &[usize],
) -> Result<RepetitionOutcome> {
    let master = cfg.master_seed;

    let (kept, n_pruned) = match cfg.method {
        Some(method) => {
            let spec = cfg.identify_net.to_spec(
                train_set.n_feature(),
                train_set.n_class(),
                stage_seed(master, "identify-init", rep),
            );
            let tcfg = cfg
                .identify_net
                .to_train_config(stage_seed(master, "identify-shuffle", rep));
            let report = identify(
                &train_set,
                method,
                cfg.alpha,
                &spec,
                &tcfg,
                &cfg.em,
                stage_seed(master, "identify-mv", rep),
            )?;
            let keep: Vec<bool> = report.pruned_mask.iter().map(|&p| !p).collect();
            let n_pruned = report.pruned_indices.len();
            let kept = if n_pruned > 0 { train_set.subset(&keep)? } else { train_set };
            (kept, n_pruned)
        }
        None => (train_set, 0),
    };

    let targets = aggregate_targets(cfg, &kept, rep)?;
    let spec = cfg.train_net.to_spec(
        kept.n_feature(),
        kept.n_class(),
        stage_seed(master, "train-init", rep),
    );
    let tcfg = cfg
        .train_net
        .to_train_config(stage_seed(master, "train-shuffle", rep));
    let model = train(&spec, &tcfg, kept.features(), &targets)?;

    let pred = model.predict_proba(test_x)?;
    let eval_seed = stage_seed(master, "evaluate", rep);
    let acc = accuracy(&pred, test_y, eval_seed)?;
    let e = ece(&pred, test_y, &EceConfig { n_bins: cfg.bins }, eval_seed)?;
    Ok(RepetitionOutcome {
        accuracy: acc,
        ece: e,
        n_pruned,
    })
}

fn aggregate_targets(cfg: &PipelineConfig, d: &CrowdDataset, rep: usize) -> Result<Array2<f64>> {
    let k = d.n_class();
    match cfg.strategy {
        Strategy::Mv => {
            let seed = stage_seed(cfg.master_seed, "aggregate-mv", rep);
            let labels: Vec<Label> = majority_vote(d, seed).into_iter().map(Label::Hard).collect();
            aggregate_to_targets(&labels, k)
        }
        Strategy::Ns => {
            let labels: Vec<Label> = naive_soft(d).into_iter().map(Label::Soft).collect();
            aggregate_to_targets(&labels, k)
        }
        Strategy::Ds => Ok(dawid_skene(d, &cfg.em)?.posteriors),
        Strategy::Wds => {
            let ds = dawid_skene(d, &cfg.em)?;
            let labels: Vec<Label> = weighted_ds(d, &ds.confusions)?
                .into_iter()
                .map(Label::Soft)
                .collect();
            aggregate_to_targets(&labels, k)
        }
        Strategy::Glad => Ok(glad(d, &cfg.glad)?.posteriors),
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Stable results serialization: sorted keys, fixed four-decimal floats.
/// Identical rows always produce identical bytes.
pub fn results_json(rows: &[ResultRow]) -> String {
    let body: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{{\"acc_mean\":{:.4},\"acc_std\":{:.4},\"alpha\":{:.4},\"ece_mean\":{:.4},\"ece_std\":{:.4},\"strategy\":\"{}\"}}",
                r.acc_mean, r.acc_std, r.alpha, r.ece_mean, r.ece_std, r.strategy
            )
        })
        .collect();
    format!("[{}]\n", body.join(","))
}

/// Desk-scale three-circles pipeline configuration shared by the
/// reproduction command and the acceptance suite.
pub fn three_circles_config(
    strategy: Strategy,
    method: Option<IdentifyMethod>,
    alpha: f64,
    repeat: usize,
    master_seed: u64,
) -> PipelineConfig {
    let spec = crate::simulation::three_circles_spec(0);
    let mut train_net = NetParams::new(150);
    train_net.lr_decay_epochs = vec![50, 100];
    PipelineConfig {
        data: DataSource::Simulate(SimulationPlan {
            spec,
            workers: crate::simulation::three_circles_workers(0),
            effort: VoteEffort::Full,
        }),
        strategy,
        method,
        alpha,
        identify_net: NetParams::new(50),
        train_net,
        em: EmConfig::default(),
        glad: GladConfig::default(),
        repeat,
        master_seed,
        bins: 15,
    }
}
