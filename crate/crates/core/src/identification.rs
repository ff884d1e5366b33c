//! Ambiguous-task identification: per-vote area under the margin, the
//! majority-vote variant (AUMC), trust-weighted combination (WAUM) with a
//! single stacked network or one network per worker, and quantile pruning.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::aggregation::{dawid_skene, majority_vote, ConfusionMatrix, EmConfig};
use crate::dataset::{CrowdDataset, SoftLabel};
use crate::error::{Error, Result};
use crate::trainer::{margin, train_with_trace, MarginTrace, MlpSpec, TrainConfig};

/// Per-vote real values keyed task -> worker, mirroring the vote table.
pub type VoteValues = BTreeMap<usize, BTreeMap<usize, f64>>;

/// Trust factor per (task, voter) pair: the inner product between the
/// voter's confusion-matrix diagonal and the task's final softmax. Always
/// in [0, 1].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrustScores(pub VoteValues);

impl TrustScores {
    pub fn get(&self, task: usize, worker: usize) -> Option<f64> {
        self.0.get(&task).and_then(|m| m.get(&worker)).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which identification score to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifyMethod {
    Aumc,
    Waum,
    WaumWorkerWise,
}

impl IdentifyMethod {
    pub fn name(self) -> &'static str {
        match self {
            IdentifyMethod::Aumc => "aumc",
            IdentifyMethod::Waum => "waum",
            IdentifyMethod::WaumWorkerWise => "waum_worker_wise",
        }
    }
}

/// Identification output: per-task scores plus the pruning decision at the
/// requested quantile level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub method: IdentifyMethod,
    /// Per-task score; lower means more ambiguous.
    pub scores: Vec<f64>,
    /// AUM per (task, vote); empty for AUMC.
    pub per_vote_aum: VoteValues,
    /// Trust per (task, vote); empty for AUMC.
    pub trust: TrustScores,
    pub alpha: f64,
    /// Nearest-rank alpha-quantile of the scores.
    pub threshold: f64,
    /// True where the task is removed (score strictly below the threshold).
    pub pruned_mask: Vec<bool>,
    pub pruned_indices: Vec<usize>,
}

/// Averages the per-epoch margin of each vote's class: for `j` in `A(x_i)`,
/// `AUM(x_i, y_i^(j)) = mean_t margin(softmax_t(x_i), y_i^(j))`.
pub fn aum_per_vote(trace: &MarginTrace, d: &CrowdDataset) -> Result<VoteValues> {
    if trace.n_task() != d.n_task() {
        return Err(Error::Dimension {
            what: "trace tasks".into(),
            expected: d.n_task(),
            actual: trace.n_task(),
        });
    }
    if trace.n_class() != d.n_class() {
        return Err(Error::Dimension {
            what: "trace classes".into(),
            expected: d.n_class(),
            actual: trace.n_class(),
        });
    }
    let epochs = trace.epochs();
    let mut out = VoteValues::new();
    for i in 0..d.n_task() {
        let per_worker: BTreeMap<usize, f64> = d
            .votes_for(i)
            .iter()
            .map(|(&j, &vote)| {
                let total: f64 = (0..epochs)
                    .map(|t| margin(trace.softmax_at(t, i).as_slice().expect("contiguous"), vote))
                    .sum();
                (j, total / epochs as f64)
            })
            .collect();
        out.insert(i, per_worker);
    }
    Ok(out)
}

/// AUM against the majority-vote label: trains one network on one-hot MV
/// targets (one row per task) and averages each task's margin toward its
/// MV class.
pub fn aumc(
    d: &CrowdDataset,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    mv_seed: u64,
) -> Result<Vec<f64>> {
    let mv = majority_vote(d, mv_seed);
    let mut targets = Array2::zeros((d.n_task(), d.n_class()));
    for (i, label) in mv.iter().enumerate() {
        targets[[i, label.class()]] = 1.0;
    }
    let (_, trace) = train_with_trace(spec, cfg, d.features(), &targets, d.features())?;
    let epochs = trace.epochs();
    Ok((0..d.n_task())
        .map(|i| {
            let class = mv[i].class();
            let total: f64 = (0..epochs)
                .map(|t| margin(trace.softmax_at(t, i).as_slice().expect("contiguous"), class))
                .sum();
            total / epochs as f64
        })
        .collect())
}

/// Trust factor of each vote: `s_ij = <diag(pi_j), softmax_T(x_i)>`,
/// computed only for `j` in `A(x_i)`.
pub fn trust_scores(
    confusions: &[ConfusionMatrix],
    final_softmax: &Array2<f64>,
    d: &CrowdDataset,
) -> Result<TrustScores> {
    if confusions.len() != d.n_worker() {
        return Err(Error::Dimension {
            what: "confusion matrices".into(),
            expected: d.n_worker(),
            actual: confusions.len(),
        });
    }
    if final_softmax.nrows() != d.n_task() || final_softmax.ncols() != d.n_class() {
        return Err(Error::Dimension {
            what: "final softmax matrix rows".into(),
            expected: d.n_task(),
            actual: final_softmax.nrows(),
        });
    }
    let mut out = VoteValues::new();
    for i in 0..d.n_task() {
        let probs = final_softmax.row(i);
        let per_worker: BTreeMap<usize, f64> = d
            .votes_for(i)
            .keys()
            .map(|&j| {
                let s: f64 = confusions[j]
                    .diag()
                    .iter()
                    .zip(probs.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                (j, s.clamp(0.0, 1.0))
            })
            .collect();
        out.insert(i, per_worker);
    }
    Ok(TrustScores(out))
}

/// Trust-weighted mean of per-vote AUMs per task. A task whose trust
/// weights sum to zero falls back to the unweighted mean (the equal-weights
/// limit) with a warning.
pub fn combine_waum(
    per_vote_aum: &VoteValues,
    trust: &TrustScores,
    n_task: usize,
) -> Result<Vec<f64>> {
    let mut scores = vec![0.0; n_task];
    for i in 0..n_task {
        let aums = per_vote_aum
            .get(&i)
            .ok_or_else(|| Error::Config(format!("missing per-vote scores for task {i}")))?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (&j, &aum) in aums {
            let s = trust.get(i, j).ok_or_else(|| {
                Error::Config(format!("missing trust score for task {i}, worker {j}"))
            })?;
            num += s * aum;
            den += s;
        }
        scores[i] = if den > 0.0 {
            num / den
        } else {
            log::warn!("task {i}: all trust scores are zero, using the unweighted mean");
            aums.values().sum::<f64>() / aums.len() as f64
        };
    }
    Ok(scores)
}

/// WAUM intermediate products, useful for diagnostics beyond the scores.
#[derive(Debug, Clone)]
pub struct WaumOutput {
    pub scores: Vec<f64>,
    pub trust: TrustScores,
    pub per_vote_aum: VoteValues,
    pub confusions: Vec<ConfusionMatrix>,
}

/// Single-network WAUM: estimates confusions with Dawid–Skene, trains one
/// network on the stacked dataset (one row per vote, ordered by task then
/// worker), derives per-vote AUMs and trust scores from its trace, and
/// combines them into per-task scores.
pub fn waum(
    d: &CrowdDataset,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    em: &EmConfig,
) -> Result<WaumOutput> {
    let ds = dawid_skene(d, em)?;
    let (stacked_x, stacked_y) = stack_votes(d);
    let (_, trace) = train_with_trace(spec, cfg, &stacked_x, &stacked_y, d.features())?;
    let per_vote_aum = aum_per_vote(&trace, d)?;
    let trust = trust_scores(&ds.confusions, &trace.final_softmax_matrix(), d)?;
    let scores = combine_waum(&per_vote_aum, &trust, d.n_task())?;
    Ok(WaumOutput {
        scores,
        trust,
        per_vote_aum,
        confusions: ds.confusions,
    })
}

/// Worker-wise WAUM: same confusion estimate, but one fresh network per
/// worker, each trained only on that worker's answers. Each worker's AUMs
/// and trust scores come from its own network's trace; the combination is
/// identical to the single-network variant. Costs one training run per
/// worker instead of one overall.
pub fn waum_worker_wise(
    d: &CrowdDataset,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    em: &EmConfig,
) -> Result<WaumOutput> {
    let ds = dawid_skene(d, em)?;
    let tasks_per_worker = d.tasks_sets();
    let mut per_vote_aum = VoteValues::new();
    let mut trust_values = VoteValues::new();
    for i in 0..d.n_task() {
        per_vote_aum.insert(i, BTreeMap::new());
        trust_values.insert(i, BTreeMap::new());
    }

    for j in 0..d.n_worker() {
        let tasks = &tasks_per_worker[j];
        if tasks.is_empty() {
            continue;
        }
        let mut features = Array2::zeros((tasks.len(), d.n_feature()));
        let mut targets = Array2::zeros((tasks.len(), d.n_class()));
        for (row, &i) in tasks.iter().enumerate() {
            features.row_mut(row).assign(&d.features().row(i));
            targets[[row, d.votes_for(i)[&j]]] = 1.0;
        }
        let worker_spec = spec.clone().with_seed(spec.seed.wrapping_add(j as u64));
        let mut worker_cfg = cfg.clone();
        worker_cfg.shuffle_seed = cfg.shuffle_seed.wrapping_add(j as u64);
        worker_cfg.batch_size = cfg.batch_size.min(tasks.len());
        let (_, trace) = train_with_trace(&worker_spec, &worker_cfg, &features, &targets, &features)?;

        let diag = ds.confusions[j].diag();
        let epochs = trace.epochs();
        for (row, &i) in tasks.iter().enumerate() {
            let vote = d.votes_for(i)[&j];
            let total: f64 = (0..epochs)
                .map(|t| margin(trace.softmax_at(t, row).as_slice().expect("contiguous"), vote))
                .sum();
            per_vote_aum.get_mut(&i).expect("prefilled").insert(j, total / epochs as f64);
            let final_probs = trace.final_softmax(row);
            let s: f64 = diag.iter().zip(final_probs.iter()).map(|(a, b)| a * b).sum();
            trust_values.get_mut(&i).expect("prefilled").insert(j, s.clamp(0.0, 1.0));
        }
    }

    let trust = TrustScores(trust_values);
    let scores = combine_waum(&per_vote_aum, &trust, d.n_task())?;
    Ok(WaumOutput {
        scores,
        trust,
        per_vote_aum,
        confusions: ds.confusions,
    })
}

/// One training row per vote, ordered by (task, worker): the task's
/// features paired with the one-hot of that worker's answer.
pub fn stack_votes(d: &CrowdDataset) -> (Array2<f64>, Array2<f64>) {
    let total = d.total_votes();
    let mut features = Array2::zeros((total, d.n_feature()));
    let mut targets = Array2::zeros((total, d.n_class()));
    for (row, (i, _, vote)) in d.iter_votes().enumerate() {
        features.row_mut(row).assign(&d.features().row(i));
        targets[[row, vote]] = 1.0;
    }
    (features, targets)
}

/// Nearest-rank quantile pruning: the threshold is the k-th smallest score
/// with `k = ceil(alpha * n)` (k = 1 when alpha = 0), and tasks strictly
/// below it are pruned.
pub fn prune(scores: &[f64], alpha: f64) -> Result<(f64, Vec<bool>)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if scores.is_empty() {
        return Err(Error::Config("cannot prune an empty score vector".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numerical(format!("non-finite identification score {bad}")));
    }
    let n = scores.len();
    let k = ((alpha * n as f64).ceil() as usize).max(1).min(n);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let threshold = sorted[k - 1];
    let mask: Vec<bool> = scores.iter().map(|&s| s < threshold).collect();
    Ok((threshold, mask))
}

/// Shannon entropy (natural log) of each soft label, with 0 log 0 = 0.
pub fn entropy_per_task(labels: &[SoftLabel]) -> Vec<f64> {
    labels
        .iter()
        .map(|l| {
            -l.probs()
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .collect()
}

/// Runs one identification method end to end and assembles the report.
pub fn identify(
    d: &CrowdDataset,
    method: IdentifyMethod,
    alpha: f64,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    em: &EmConfig,
    mv_seed: u64,
) -> Result<IdentificationReport> {
    let (scores, trust, per_vote_aum) = match method {
        IdentifyMethod::Aumc => (aumc(d, spec, cfg, mv_seed)?, TrustScores::default(), VoteValues::new()),
        IdentifyMethod::Waum => {
            let out = waum(d, spec, cfg, em)?;
            (out.scores, out.trust, out.per_vote_aum)
        }
        IdentifyMethod::WaumWorkerWise => {
            let out = waum_worker_wise(d, spec, cfg, em)?;
            (out.scores, out.trust, out.per_vote_aum)
        }
    };
    let (threshold, pruned_mask) = prune(&scores, alpha)?;
    let pruned_indices = pruned_mask
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| p.then_some(i))
        .collect();
    Ok(IdentificationReport {
        method,
        scores,
        per_vote_aum,
        trust,
        alpha,
        threshold,
        pruned_mask,
        pruned_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::VoteTable;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array3, array};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset_from(entries: &[(usize, usize, usize)], n_class: usize, features: Array2<f64>) -> CrowdDataset {
        let mut table = VoteTable::new();
        for &(task, worker, class) in entries {
            table.entry(task).or_default().insert(worker, class);
        }
        CrowdDataset::new(features, table, n_class).unwrap()
    }

    fn trace_from(epochs: Vec<Vec<Vec<f64>>>) -> MarginTrace {
        let t = epochs.len();
        let n = epochs[0].len();
        let k = epochs[0][0].len();
        let mut data = Array3::zeros((t, n, k));
        for (ti, per_task) in epochs.iter().enumerate() {
            for (i, probs) in per_task.iter().enumerate() {
                for (c, &p) in probs.iter().enumerate() {
                    data[[ti, i, c]] = p;
                }
            }
        }
        MarginTrace::new(data)
    }

    #[test]
    fn single_epoch_aum_is_the_margin() {
        let d = dataset_from(&[(0, 0, 0)], 3, Array2::zeros((1, 2)));
        let trace = trace_from(vec![vec![vec![0.7, 0.2, 0.1]]]);
        let aums = aum_per_vote(&trace, &d).unwrap();
        assert_abs_diff_eq!(aums[&0][&0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn aum_is_the_mean_over_epochs() {
        // Margins 0.5 then -0.1 average to 0.2.
        let d = dataset_from(&[(0, 0, 0)], 3, Array2::zeros((1, 2)));
        let trace = trace_from(vec![
            vec![vec![0.7, 0.2, 0.1]],
            vec![vec![0.2, 0.3, 0.5]],
        ]);
        let aums = aum_per_vote(&trace, &d).unwrap();
        assert_abs_diff_eq!(aums[&0][&0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn constant_trace_aum_is_epoch_count_free() {
        let d = dataset_from(&[(0, 0, 1)], 3, Array2::zeros((1, 2)));
        let row = vec![0.1, 0.6, 0.3];
        for epochs in [1usize, 3, 7] {
            let trace = trace_from(vec![vec![row.clone()]; epochs]);
            let aums = aum_per_vote(&trace, &d).unwrap();
            assert_abs_diff_eq!(aums[&0][&0], 0.3, epsilon = 1e-15);
        }
    }

    #[test]
    fn trust_score_examples() {
        let d = dataset_from(&[(0, 0, 0), (0, 1, 1)], 2, Array2::zeros((1, 2)));
        let identity = ConfusionMatrix::identity(2);
        let half = ConfusionMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let softmax = array![[0.8, 0.2]];
        let trust = trust_scores(&[identity, half], &softmax, &d).unwrap();
        assert_abs_diff_eq!(trust.get(0, 0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(trust.get(0, 1).unwrap(), 0.5, epsilon = 1e-15);

        let skew = ConfusionMatrix::new(vec![vec![0.9, 0.1], vec![0.9, 0.1]]).unwrap();
        let trust = trust_scores(&[skew.clone(), skew], &softmax, &d).unwrap();
        assert_abs_diff_eq!(trust.get(0, 0).unwrap(), 0.74, epsilon = 1e-12);
    }

    #[test]
    fn equal_trust_reduces_to_unweighted_mean() {
        let mut aums = VoteValues::new();
        aums.insert(0, [(0, 0.5), (1, -0.1), (2, 0.3)].into_iter().collect());
        let mut trust = VoteValues::new();
        trust.insert(0, [(0, 0.4), (1, 0.4), (2, 0.4)].into_iter().collect());
        let scores = combine_waum(&aums, &TrustScores(trust), 1).unwrap();
        assert_abs_diff_eq!(scores[0], (0.5 - 0.1 + 0.3) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn single_annotator_ignores_trust_magnitude() {
        for s in [0.01, 0.5, 1.0] {
            let mut aums = VoteValues::new();
            aums.insert(0, [(3, -0.25)].into_iter().collect());
            let mut trust = VoteValues::new();
            trust.insert(0, [(3, s)].into_iter().collect());
            let scores = combine_waum(&aums, &TrustScores(trust), 1).unwrap();
            assert_abs_diff_eq!(scores[0], -0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_trust_falls_back_to_mean() {
        let mut aums = VoteValues::new();
        aums.insert(0, [(0, 0.2), (1, 0.6)].into_iter().collect());
        let mut trust = VoteValues::new();
        trust.insert(0, [(0, 0.0), (1, 0.0)].into_iter().collect());
        let scores = combine_waum(&aums, &TrustScores(trust), 1).unwrap();
        assert_abs_diff_eq!(scores[0], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn waum_is_scale_invariant_and_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let n_votes = rng.random_range(1..6);
            let mut aums_map = BTreeMap::new();
            let mut trust_map = BTreeMap::new();
            let mut scaled_trust_map = BTreeMap::new();
            let scale = rng.random_range(0.1..10.0);
            for j in 0..n_votes {
                let aum = rng.random_range(-1.0..1.0);
                let s = rng.random_range(0.05..1.0);
                aums_map.insert(j, aum);
                trust_map.insert(j, s);
                scaled_trust_map.insert(j, s * scale);
            }
            let mut aums = VoteValues::new();
            aums.insert(0, aums_map.clone());
            let mut trust = VoteValues::new();
            trust.insert(0, trust_map);
            let mut scaled = VoteValues::new();
            scaled.insert(0, scaled_trust_map);

            let base = combine_waum(&aums, &TrustScores(trust), 1).unwrap()[0];
            let rescaled = combine_waum(&aums, &TrustScores(scaled), 1).unwrap()[0];
            assert_abs_diff_eq!(base, rescaled, epsilon = 1e-12);

            let min = aums_map.values().cloned().fold(f64::INFINITY, f64::min);
            let max = aums_map.values().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(base >= min - 1e-12 && base <= max + 1e-12);
        }
    }

    #[test]
    fn prune_examples() {
        let scores: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let (q, mask) = prune(&scores, 0.1).unwrap();
        assert_eq!(q, 1.0);
        assert!(mask.iter().all(|&m| !m));

        let (_, mask) = prune(&scores, 0.0).unwrap();
        assert!(mask.iter().all(|&m| !m));

        let equal = vec![2.5; 8];
        for alpha in [0.0, 0.3, 0.9, 1.0] {
            let (_, mask) = prune(&equal, alpha).unwrap();
            assert!(mask.iter().all(|&m| !m), "alpha {alpha}");
        }

        let (q, mask) = prune(&scores, 0.3).unwrap();
        assert_eq!(q, 3.0);
        let pruned: Vec<usize> = mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
        assert_eq!(pruned, vec![0, 1]);
    }

    #[test]
    fn prune_matches_brute_force_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for case in 0..300 {
            let n = rng.random_range(1..40);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(-5..5) as f64) / 2.0)
                .collect();
            let alphas: Vec<f64> = (0..=10).map(|a| a as f64 / 10.0).collect();
            let mut previous: Option<Vec<usize>> = None;
            for &alpha in &alphas {
                let (q, mask) = prune(&scores, alpha).unwrap();
                // Brute-force oracle: sort, take the ceil(alpha*n)-th order
                // statistic (at least the first), prune strictly below.
                let mut sorted = scores.clone();
                sorted.sort_by(|a, b| a.total_cmp(b));
                let k = ((alpha * n as f64).ceil() as usize).max(1);
                let expected_q = sorted[k - 1];
                assert_eq!(q, expected_q, "case {case} alpha {alpha}");
                let expected: Vec<bool> = scores.iter().map(|&s| s < expected_q).collect();
                assert_eq!(mask, expected);
                let pruned: Vec<usize> =
                    mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
                assert_eq!(pruned.len(), scores.iter().filter(|&&s| s < q).count());
                if let Some(prev) = &previous {
                    assert!(prev.iter().all(|i| pruned.contains(i)), "monotonicity");
                }
                previous = Some(pruned);
            }
        }
    }

    #[test]
    fn entropy_examples() {
        let labels = vec![
            SoftLabel::one_hot(1, 3),
            SoftLabel::uniform(4),
            SoftLabel::new(vec![2.0 / 3.0, 1.0 / 3.0, 0.0]).unwrap(),
        ];
        let ent = entropy_per_task(&labels);
        assert_abs_diff_eq!(ent[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ent[1], 4.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ent[2], 0.6365, epsilon = 1e-4);
    }

    fn blob_features(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.4).unwrap();
        let mut features = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            features[[i, 0]] = (class as f64) * 4.0 - 2.0 + normal.sample(&mut rng);
            features[[i, 1]] = normal.sample(&mut rng);
            labels.push(class);
        }
        (features, labels)
    }

    #[test]
    fn aumc_equals_per_vote_aum_for_single_annotators() {
        // One annotator per task: the MV label is the single vote and the
        // stacked training set is exactly the per-task set, so the AUMC
        // scores coincide with the per-vote AUMs of the stacked network.
        let (features, labels) = blob_features(24, 5);
        let entries: Vec<(usize, usize, usize)> =
            labels.iter().enumerate().map(|(i, &c)| (i, 0, c)).collect();
        let d = dataset_from(&entries, 2, features);
        let spec = MlpSpec::new(2, 2, 77).with_hidden(vec![6]);
        let mut cfg = TrainConfig::new(8, 99);
        cfg.batch_size = 8;

        let aumc_scores = aumc(&d, &spec, &cfg, 0).unwrap();
        let (stacked_x, stacked_y) = stack_votes(&d);
        let (_, trace) = train_with_trace(&spec, &cfg, &stacked_x, &stacked_y, d.features()).unwrap();
        let aums = aum_per_vote(&trace, &d).unwrap();
        for i in 0..d.n_task() {
            assert_abs_diff_eq!(aumc_scores[i], aums[&i][&0], epsilon = 1e-12);
        }
    }

    #[test]
    fn single_worker_waum_matches_worker_wise() {
        let (features, labels) = blob_features(20, 6);
        let entries: Vec<(usize, usize, usize)> =
            labels.iter().enumerate().map(|(i, &c)| (i, 0, c)).collect();
        let d = dataset_from(&entries, 2, features);
        let spec = MlpSpec::new(2, 2, 13).with_hidden(vec![6]);
        let cfg = TrainConfig::new(6, 21);
        let em = EmConfig::default();
        let single = waum(&d, &spec, &cfg, &em).unwrap();
        let worker_wise = waum_worker_wise(&d, &spec, &cfg, &em).unwrap();
        for i in 0..d.n_task() {
            assert_abs_diff_eq!(single.scores[i], worker_wise.scores[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn planted_wrong_mv_label_ranks_near_the_bottom() {
        // 200 clean tasks; all workers flip task 0, so its MV label is
        // planted wrong. Across 5 network seeds its AUMC rank must fall in
        // the bottom 5%.
        let (features, labels) = blob_features(200, 7);
        let mut entries = Vec::new();
        for (i, &c) in labels.iter().enumerate() {
            let vote = if i == 0 { 1 - c } else { c };
            for w in 0..3 {
                entries.push((i, w, vote));
            }
        }
        let d = dataset_from(&entries, 2, features);
        for seed in 0..5 {
            let spec = MlpSpec::new(2, 2, seed);
            let cfg = TrainConfig::new(15, seed.wrapping_add(100));
            let scores = aumc(&d, &spec, &cfg, 0).unwrap();
            let rank = scores.iter().filter(|&&s| s < scores[0]).count();
            assert!(rank < 10, "seed {seed}: rank {rank}, score {}", scores[0]);
        }
    }

    #[test]
    fn identify_builds_a_consistent_report() {
        let (features, labels) = blob_features(30, 8);
        let mut entries = Vec::new();
        for (i, &c) in labels.iter().enumerate() {
            for w in 0..2 {
                entries.push((i, w, c));
            }
        }
        let d = dataset_from(&entries, 2, features);
        let spec = MlpSpec::new(2, 2, 3).with_hidden(vec![6]);
        let cfg = TrainConfig::new(5, 4);
        let report = identify(&d, IdentifyMethod::Waum, 0.2, &spec, &cfg, &EmConfig::default(), 0).unwrap();
        assert_eq!(report.scores.len(), 30);
        assert_eq!(report.pruned_mask.len(), 30);
        for (i, &pruned) in report.pruned_mask.iter().enumerate() {
            assert_eq!(pruned, report.scores[i] < report.threshold);
            assert_eq!(pruned, report.pruned_indices.contains(&i));
        }
        // Trust scores live in [0, 1]; WAUM scores in [-1, 1].
        for per_task in report.trust.0.values() {
            for &s in per_task.values() {
                assert!((0.0..=1.0).contains(&s));
            }
        }
        for &s in &report.scores {
            assert!((-1.0..=1.0).contains(&s));
        }
        let text = serde_json::to_string(&report).unwrap();
        let back: IdentificationReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.scores, report.scores);
        assert_eq!(back.pruned_indices, report.pruned_indices);
    }
}
