//! Feature-blind label aggregation: majority vote, naive soft labels,
//! Dawid–Skene EM, and diagonal-weighted Dawid–Skene voting.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{CrowdDataset, HardLabel, SoftLabel, SIMPLEX_TOL};
use crate::error::{Error, Result};

/// Row-stochastic K×K worker error model. Entry `(l, k)` is the probability
/// that the worker answers class `k` when the true class is `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    entries: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let k = entries.len();
        for (l, row) in entries.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Dimension {
                    what: format!("confusion matrix row {l}"),
                    expected: k,
                    actual: row.len(),
                });
            }
            if row.iter().any(|&p| !(0.0..=1.0 + SIMPLEX_TOL).contains(&p)) {
                return Err(Error::Config(format!("confusion row {l} has entry outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Config(format!("confusion row {l} sums to {sum}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn identity(n_class: usize) -> Self {
        let entries = (0..n_class)
            .map(|l| (0..n_class).map(|k| if l == k { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { entries }
    }

    pub fn uniform(n_class: usize) -> Self {
        Self {
            entries: vec![vec![1.0 / n_class as f64; n_class]; n_class],
        }
    }

    /// Diagonal 0.8-style matrix: `diag` on the diagonal, the rest spread
    /// uniformly over the other classes.
    pub fn diagonal(n_class: usize, diag: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&diag) || n_class == 0 {
            return Err(Error::Config(format!("invalid diagonal confusion: diag={diag}")));
        }
        let off = if n_class > 1 { (1.0 - diag) / (n_class - 1) as f64 } else { 0.0 };
        let entries = (0..n_class)
            .map(|l| {
                (0..n_class)
                    .map(|k| if l == k { if n_class == 1 { 1.0 } else { diag } } else { off })
                    .collect()
            })
            .collect();
        Self::new(entries)
    }

    pub fn n_class(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, truth: usize, answer: usize) -> f64 {
        self.entries[truth][answer]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n_class()).map(|k| self.entries[k][k]).collect()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }
}

/// Convergence outcome of an EM-style fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceStatus {
    /// Successive log-likelihoods moved less than epsilon.
    Converged,
    /// Iteration budget exhausted before the criterion fired.
    MaxIterations,
    /// The optimizer produced non-finite values and gave up.
    NumericalFailure,
}

/// EM stopping/smoothing parameters shared by the Dawid–Skene fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmConfig {
    /// Stop when |Δ log-likelihood| falls below this.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Additive constant inside logs, keeping hard posteriors finite.
    pub smoothing: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iter: 200,
            smoothing: 1e-12,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.smoothing < 0.0 {
            return Err(Error::Config("smoothing must be non-negative".into()));
        }
        Ok(())
    }
}

/// Fitted Dawid–Skene model state.
#[derive(Debug, Clone)]
pub struct DsState {
    /// One row-stochastic confusion matrix per worker.
    pub confusions: Vec<ConfusionMatrix>,
    /// Class prevalence estimate.
    pub prevalence: Vec<f64>,
    /// Posterior class distribution per task (rows on the simplex).
    pub posteriors: Array2<f64>,
    /// Observed-vote log-likelihood after the final iteration.
    pub log_likelihood: f64,
    /// Log-likelihood after each EM iteration, in order.
    pub log_likelihood_history: Vec<f64>,
    pub status: ConvergenceStatus,
}

impl DsState {
    pub fn posterior_labels(&self) -> Vec<SoftLabel> {
        rows_to_soft(&self.posteriors)
    }
}

/// One aggregated label, hard or soft.
#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Hard(HardLabel),
    Soft(SoftLabel),
}

/// Majority vote with seeded uniform tie-breaking.
pub fn majority_vote(d: &CrowdDataset, seed: u64) -> Vec<HardLabel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = d.n_class();
    (0..d.n_task())
        .map(|i| {
            let mut counts = vec![0usize; k];
            for &class in d.votes_for(i).values() {
                counts[class] += 1;
            }
            let best = *counts.iter().max().expect("non-empty class counts");
            let tied: Vec<usize> = (0..k).filter(|&c| counts[c] == best).collect();
            let winner = if tied.len() == 1 {
                tied[0]
            } else {
                tied[rng.random_range(0..tied.len())]
            };
            HardLabel(winner)
        })
        .collect()
}

/// Empirical distribution of the answered votes per task.
pub fn naive_soft(d: &CrowdDataset) -> Vec<SoftLabel> {
    let k = d.n_class();
    (0..d.n_task())
        .map(|i| {
            let votes = d.votes_for(i);
            let mut probs = vec![0.0; k];
            for &class in votes.values() {
                probs[class] += 1.0;
            }
            let total = votes.len() as f64;
            for p in &mut probs {
                *p /= total;
            }
            SoftLabel::new(probs).expect("vote frequencies lie on the simplex")
        })
        .collect()
}

/// Dawid–Skene EM fit.
///
/// Initializes posteriors from the naive-soft frequencies, then alternates
/// the closed-form M-step (confusions, prevalence) with the E-step until
/// the observed-vote log-likelihood moves less than `cfg.epsilon` or the
/// iteration budget runs out. Non-convergence is reported in the returned
/// state's status, not as an error.
pub fn dawid_skene(d: &CrowdDataset, cfg: &EmConfig) -> Result<DsState> {
    cfg.validate()?;
    let n = d.n_task();
    let k = d.n_class();
    let n_worker = d.n_worker();
    let tasks_per_worker = d.tasks_sets();

    // posteriors T: n × k, initialized to vote frequencies
    let mut posteriors = Array2::zeros((n, k));
    for (i, soft) in naive_soft(d).iter().enumerate() {
        for (l, &p) in soft.probs().iter().enumerate() {
            posteriors[[i, l]] = p;
        }
    }

    let mut confusions: Vec<ConfusionMatrix> = Vec::new();
    let mut prevalence = vec![0.0; k];
    let mut history: Vec<f64> = Vec::new();
    let mut status = ConvergenceStatus::MaxIterations;

    for _iter in 0..cfg.max_iter {
        // M-step: confusion matrices and prevalence from current posteriors.
        confusions = (0..n_worker)
            .map(|j| m_step_confusion(d, &posteriors, j, &tasks_per_worker[j], k))
            .collect();
        for l in 0..k {
            prevalence[l] = posteriors.column(l).sum() / n as f64;
        }

        // E-step in log space; the per-task logits double as the terms of
        // the observed-vote log-likelihood.
        let mut log_likelihood = 0.0;
        for i in 0..n {
            let mut logits = vec![0.0; k];
            for l in 0..k {
                let mut acc = (prevalence[l] + cfg.smoothing).ln();
                for (&j, &vote) in d.votes_for(i) {
                    acc += (confusions[j].get(l, vote) + cfg.smoothing).ln();
                }
                logits[l] = acc;
            }
            let lse = log_sum_exp(&logits);
            log_likelihood += lse;
            for l in 0..k {
                posteriors[[i, l]] = (logits[l] - lse).exp();
            }
        }

        let converged = history
            .last()
            .is_some_and(|prev| (log_likelihood - prev).abs() < cfg.epsilon);
        history.push(log_likelihood);
        if converged {
            status = ConvergenceStatus::Converged;
            break;
        }
    }

    let log_likelihood = *history.last().expect("at least one EM iteration ran");
    if !log_likelihood.is_finite() {
        return Err(Error::Numerical(format!(
            "Dawid-Skene log-likelihood became non-finite: {log_likelihood}"
        )));
    }
    Ok(DsState {
        confusions,
        prevalence,
        posteriors,
        log_likelihood,
        log_likelihood_history: history,
        status,
    })
}

fn m_step_confusion(
    d: &CrowdDataset,
    posteriors: &Array2<f64>,
    worker: usize,
    worker_tasks: &[usize],
    k: usize,
) -> ConfusionMatrix {
    let mut entries = vec![vec![0.0; k]; k];
    for l in 0..k {
        let mut denom = 0.0;
        for &i in worker_tasks {
            let weight = posteriors[[i, l]];
            denom += weight;
            let vote = d.votes_for(i)[&worker];
            entries[l][vote] += weight;
        }
        if denom > 0.0 {
            for e in &mut entries[l] {
                *e /= denom;
            }
        } else {
            // Worker never carries posterior mass on this class: uniform
            // row keeps the matrix stochastic without biasing any class.
            entries[l] = vec![1.0 / k as f64; k];
        }
    }
    ConfusionMatrix { entries }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Diagonal-weighted vote: each answer counts with its voter's estimated
/// probability of recognizing the voted class. Tasks where every voter has
/// zero diagonal trust fall back to the naive-soft distribution.
pub fn weighted_ds(d: &CrowdDataset, confusions: &[ConfusionMatrix]) -> Result<Vec<SoftLabel>> {
    if confusions.len() != d.n_worker() {
        return Err(Error::Dimension {
            what: "confusion matrices".into(),
            expected: d.n_worker(),
            actual: confusions.len(),
        });
    }
    let k = d.n_class();
    let ns = naive_soft(d);
    Ok((0..d.n_task())
        .map(|i| {
            let mut scores = vec![0.0; k];
            for (&j, &vote) in d.votes_for(i) {
                scores[vote] += confusions[j].get(vote, vote);
            }
            let total: f64 = scores.iter().sum();
            if total > 0.0 {
                for s in &mut scores {
                    *s /= total;
                }
                SoftLabel::new(scores).expect("normalized scores lie on the simplex")
            } else {
                ns[i].clone()
            }
        })
        .collect())
}

/// Stacks hard and soft labels into a training-target matrix, one simplex
/// row per label (hard labels become one-hot rows).
pub fn aggregate_to_targets(labels: &[Label], n_class: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), n_class));
    for (i, label) in labels.iter().enumerate() {
        match label {
            Label::Hard(h) => {
                if h.class() >= n_class {
                    return Err(Error::Config(format!(
                        "hard label {} out of range [0, {n_class})",
                        h.class()
                    )));
                }
                out[[i, h.class()]] = 1.0;
            }
            Label::Soft(s) => {
                if s.n_class() != n_class {
                    return Err(Error::Dimension {
                        what: format!("soft label {i}"),
                        expected: n_class,
                        actual: s.n_class(),
                    });
                }
                for (c, &p) in s.probs().iter().enumerate() {
                    out[[i, c]] = p;
                }
            }
        }
    }
    Ok(out)
}

fn rows_to_soft(rows: &Array2<f64>) -> Vec<SoftLabel> {
    rows.rows()
        .into_iter()
        .map(|r| SoftLabel::new(r.to_vec()).expect("posterior rows lie on the simplex"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::VoteTable;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn dataset_from(entries: &[(usize, usize, usize)], n_class: usize) -> CrowdDataset {
        let mut table = VoteTable::new();
        let mut max_task = 0;
        for &(task, worker, class) in entries {
            table.entry(task).or_default().insert(worker, class);
            max_task = max_task.max(task);
        }
        let features = Array2::zeros((max_task + 1, 2));
        CrowdDataset::new(features, table, n_class).unwrap()
    }

    /// Seeded random dataset: every task gets 2..=n_worker votes with
    /// uniformly random classes.
    fn random_dataset(seed: u64, n_task: usize, n_worker: usize, n_class: usize) -> CrowdDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for task in 0..n_task {
            let n_votes = rng.random_range(2..=n_worker);
            let mut workers: Vec<usize> = (0..n_worker).collect();
            for v in 0..n_votes {
                let pick = rng.random_range(v..n_worker);
                workers.swap(v, pick);
            }
            for &worker in &workers[..n_votes] {
                entries.push((task, worker, rng.random_range(0..n_class)));
            }
        }
        dataset_from(&entries, n_class)
    }

    #[test]
    fn majority_vote_unique_mode() {
        let d = dataset_from(&[(0, 0, 2), (0, 1, 2), (0, 2, 1)], 3);
        assert_eq!(majority_vote(&d, 0), vec![HardLabel(2)]);
        assert_eq!(majority_vote(&d, 99), vec![HardLabel(2)]);
    }

    #[test]
    fn majority_vote_unanimous_any_seed() {
        let d = dataset_from(&[(0, 0, 1), (0, 1, 1), (0, 2, 1)], 2);
        for seed in 0..20 {
            assert_eq!(majority_vote(&d, seed), vec![HardLabel(1)]);
        }
    }

    #[test]
    fn majority_vote_tie_break_is_seeded_and_uniform() {
        let d = dataset_from(&[(0, 0, 0), (0, 1, 1)], 2);
        // Same seed, same output.
        assert_eq!(majority_vote(&d, 7), majority_vote(&d, 7));
        // Frequency oracle: over 10000 seeds each class wins ~uniformly.
        let mut zero_wins = 0;
        for seed in 0..10_000 {
            if majority_vote(&d, seed)[0] == HardLabel(0) {
                zero_wins += 1;
            }
        }
        assert!((4700..=5300).contains(&zero_wins), "zero_wins = {zero_wins}");
    }

    #[test]
    fn naive_soft_counts() {
        let d = dataset_from(&[(0, 0, 0), (0, 1, 0), (0, 2, 1)], 3);
        let labels = naive_soft(&d);
        assert_abs_diff_eq!(labels[0].probs()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(labels[0].probs()[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(labels[0].probs()[2], 0.0);
    }

    #[test]
    fn naive_soft_single_vote_is_one_hot() {
        let d = dataset_from(&[(0, 0, 2)], 4);
        assert_eq!(naive_soft(&d)[0].probs(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn naive_soft_unanimous_is_one_hot() {
        let mut entries = Vec::new();
        for worker in 0..5 {
            entries.push((0, worker, 3));
        }
        let d = dataset_from(&entries, 10);
        assert_eq!(naive_soft(&d)[0].probs()[3], 1.0);
    }

    #[test]
    fn naive_argmax_matches_majority_vote_on_unique_modes() {
        let d = random_dataset(11, 60, 6, 3);
        let soft = naive_soft(&d);
        let hard = majority_vote(&d, 0);
        for i in 0..d.n_task() {
            let probs = soft[i].probs();
            let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let modes: Vec<usize> = (0..3).filter(|&c| probs[c] == max).collect();
            if modes.len() == 1 {
                assert_eq!(hard[i].class(), modes[0], "task {i}");
            }
        }
    }

    #[test]
    fn ds_perfect_workers_reach_identity_confusions() {
        // 3 workers always answering a planted truth over 6 tasks, K=2.
        let truth = [0, 0, 1, 0, 1, 0];
        let mut entries = Vec::new();
        for (task, &t) in truth.iter().enumerate() {
            for worker in 0..3 {
                entries.push((task, worker, t));
            }
        }
        let d = dataset_from(&entries, 2);
        let state = dawid_skene(&d, &EmConfig::default()).unwrap();
        assert_eq!(state.status, ConvergenceStatus::Converged);
        for pi in &state.confusions {
            for l in 0..2 {
                assert_abs_diff_eq!(pi.get(l, l), 1.0, epsilon = 1e-9);
            }
        }
        assert_abs_diff_eq!(state.prevalence[0], 4.0 / 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(state.prevalence[1], 2.0 / 6.0, epsilon = 1e-9);
    }

    #[test]
    fn ds_recovers_planted_confusion_diagonal() {
        // Monte-Carlo oracle: sample votes from a known diagonal-0.8 model
        // and check the EM estimate lands near it.
        let n_task = 500;
        let n_worker = 10;
        let k = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut entries = Vec::new();
        for task in 0..n_task {
            let truth = rng.random_range(0..k);
            for worker in 0..n_worker {
                let answer = if rng.random_range(0.0..1.0) < 0.8 {
                    truth
                } else {
                    let mut other = rng.random_range(0..k - 1);
                    if other >= truth {
                        other += 1;
                    }
                    other
                };
                entries.push((task, worker, answer));
            }
        }
        let d = dataset_from(&entries, k);
        let state = dawid_skene(&d, &EmConfig::default()).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for pi in &state.confusions {
            for c in 0..k {
                total += (pi.get(c, c) - 0.8).abs();
                count += 1;
            }
        }
        assert!(total / count as f64 <= 0.1, "mean diag error {}", total / count as f64);
    }

    #[test]
    fn ds_log_likelihood_is_monotone() {
        for seed in 0..5 {
            let d = random_dataset(seed, 40, 5, 3);
            let state = dawid_skene(&d, &EmConfig::default()).unwrap();
            for w in state.log_likelihood_history.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn ds_rows_stay_on_simplex() {
        let d = random_dataset(3, 50, 4, 4);
        let state = dawid_skene(&d, &EmConfig::default()).unwrap();
        for pi in &state.confusions {
            for row in pi.rows() {
                let sum: f64 = row.iter().sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
                assert!(row.iter().all(|&p| p >= -1e-12));
            }
        }
        assert_abs_diff_eq!(state.prevalence.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        for row in state.posteriors.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn ds_worker_permutation_equivariance() {
        let d = random_dataset(17, 30, 4, 3);
        // Permute worker indices by a fixed cycle.
        let perm = [2usize, 0, 3, 1];
        let mut table = VoteTable::new();
        for (i, j, k) in d.iter_votes() {
            table.entry(i).or_default().insert(perm[j], k);
        }
        let permuted =
            CrowdDataset::with_workers(d.features().clone(), table, d.n_class(), d.n_worker())
                .unwrap();
        let a = dawid_skene(&d, &EmConfig::default()).unwrap();
        let b = dawid_skene(&permuted, &EmConfig::default()).unwrap();
        for j in 0..d.n_worker() {
            for l in 0..3 {
                for c in 0..3 {
                    assert_abs_diff_eq!(
                        a.confusions[j].get(l, c),
                        b.confusions[perm[j]].get(l, c),
                        epsilon = 1e-9
                    );
                }
            }
        }
        for l in 0..3 {
            assert_abs_diff_eq!(a.prevalence[l], b.prevalence[l], epsilon = 1e-9);
        }
        for i in 0..d.n_task() {
            for l in 0..3 {
                assert_abs_diff_eq!(a.posteriors[[i, l]], b.posteriors[[i, l]], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn wds_hand_example() {
        // Workers 0 and 1 vote classes 0 and 1 with diagonal trusts 0.9, 0.3.
        let d = dataset_from(&[(0, 0, 0), (0, 1, 1)], 2);
        let pi0 = ConfusionMatrix::new(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let pi1 = ConfusionMatrix::new(vec![vec![0.5, 0.5], vec![0.7, 0.3]]).unwrap();
        let labels = weighted_ds(&d, &[pi0, pi1]).unwrap();
        assert_abs_diff_eq!(labels[0].probs()[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(labels[0].probs()[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn wds_identity_confusions_equal_naive_soft() {
        let d = random_dataset(5, 40, 5, 3);
        let confusions = vec![ConfusionMatrix::identity(3); 5];
        let wds = weighted_ds(&d, &confusions).unwrap();
        let ns = naive_soft(&d);
        for (a, b) in wds.iter().zip(&ns) {
            for (x, y) in a.probs().iter().zip(b.probs()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn wds_single_voter_is_one_hot() {
        let d = dataset_from(&[(0, 0, 1)], 3);
        let pi = ConfusionMatrix::new(vec![
            vec![0.6, 0.2, 0.2],
            vec![0.3, 0.4, 0.3],
            vec![0.1, 0.1, 0.8],
        ])
        .unwrap();
        let labels = weighted_ds(&d, &[pi]).unwrap();
        assert_eq!(labels[0].probs(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn wds_zero_trust_falls_back_to_naive_soft() {
        let d = dataset_from(&[(0, 0, 0), (0, 1, 1)], 2);
        // Both voters have zero diagonal trust on their voted class.
        let pi0 = ConfusionMatrix::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let pi1 = ConfusionMatrix::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let labels = weighted_ds(&d, &[pi0, pi1]).unwrap();
        assert_eq!(labels[0].probs(), naive_soft(&d)[0].probs());
    }

    #[test]
    fn targets_stack_hard_and_soft() {
        let labels = vec![
            Label::Hard(HardLabel(2)),
            Label::Soft(SoftLabel::new(vec![0.5, 0.25, 0.25, 0.0]).unwrap()),
        ];
        let m = aggregate_to_targets(&labels, 4).unwrap();
        assert_eq!(m.row(0).to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(m.row(1).to_vec(), vec![0.5, 0.25, 0.25, 0.0]);
    }
}
