//! GLAD aggregation: per-worker ability and per-task difficulty fit by EM.
//!
//! Each worker `j` answers task `i` correctly with probability
//! `sigmoid(alpha_j * beta_i)`; wrong answers are spread uniformly over the
//! `K - 1` remaining classes. Abilities `alpha_j` are unconstrained reals,
//! difficulties `beta_i` stay positive through the `beta = exp(b)`
//! parameterization. The class prior is uniform.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::aggregation::ConvergenceStatus;
use crate::dataset::{CrowdDataset, SoftLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GladConfig {
    /// Stop when |Δ marginal log-likelihood| falls below this.
    pub epsilon: f64,
    pub max_em_iter: usize,
    /// Gradient-ascent step size for the M-step.
    pub m_step_learning_rate: f64,
    /// Gradient steps per M-step.
    pub m_step_iters: usize,
}

impl Default for GladConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_em_iter: 100,
            m_step_learning_rate: 0.1,
            m_step_iters: 50,
        }
    }
}

impl GladConfig {
    fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0
            || self.max_em_iter == 0
            || self.m_step_learning_rate <= 0.0
            || self.m_step_iters == 0
        {
            return Err(Error::Config("all GLAD parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted GLAD state.
#[derive(Debug, Clone)]
pub struct GladState {
    /// Worker abilities; negative values mean systematic misunderstanding.
    pub abilities: Vec<f64>,
    /// Task difficulties; strictly positive, larger means easier.
    pub difficulties: Vec<f64>,
    /// Posterior class distribution per task.
    pub posteriors: Array2<f64>,
    /// Marginal log-likelihood after the final EM iteration.
    pub log_likelihood: f64,
    /// Marginal log-likelihood after each EM iteration, in order.
    pub log_likelihood_history: Vec<f64>,
    pub status: ConvergenceStatus,
}

impl GladState {
    pub fn posterior_labels(&self) -> Vec<SoftLabel> {
        self.posteriors
            .rows()
            .into_iter()
            .map(|r| SoftLabel::new(r.to_vec()).expect("posterior rows lie on the simplex"))
            .collect()
    }
}

/// log(sigmoid(x)) without overflow.
fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// log(1 - sigmoid(x)) without overflow.
fn log_one_minus_sigmoid(x: f64) -> f64 {
    -softplus(x)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Posterior class probabilities given abilities and difficulties
/// (the E-step), with a uniform class prior.
pub fn e_step(d: &CrowdDataset, abilities: &[f64], difficulties: &[f64]) -> Array2<f64> {
    let n = d.n_task();
    let k = d.n_class();
    let log_wrong_share = if k > 1 { ((k - 1) as f64).ln() } else { 0.0 };
    let mut posteriors = Array2::zeros((n, k));
    for i in 0..n {
        let mut logits = vec![-(k as f64).ln(); k];
        for (&j, &vote) in d.votes_for(i) {
            let c = abilities[j] * difficulties[i];
            let log_correct = log_sigmoid(c);
            let log_wrong = log_one_minus_sigmoid(c) - log_wrong_share;
            for (l, logit) in logits.iter_mut().enumerate() {
                *logit += if vote == l { log_correct } else { log_wrong };
            }
        }
        let lse = log_sum_exp(&logits);
        for l in 0..k {
            posteriors[[i, l]] = (logits[l] - lse).exp();
        }
    }
    posteriors
}

/// Marginal log-likelihood of the observed votes under (abilities,
/// difficulties), classes marginalized against the uniform prior.
pub fn marginal_log_likelihood(d: &CrowdDataset, abilities: &[f64], difficulties: &[f64]) -> f64 {
    let k = d.n_class();
    let log_wrong_share = if k > 1 { ((k - 1) as f64).ln() } else { 0.0 };
    let mut total = 0.0;
    for i in 0..d.n_task() {
        let mut logits = vec![-(k as f64).ln(); k];
        for (&j, &vote) in d.votes_for(i) {
            let c = abilities[j] * difficulties[i];
            let log_correct = log_sigmoid(c);
            let log_wrong = log_one_minus_sigmoid(c) - log_wrong_share;
            for (l, logit) in logits.iter_mut().enumerate() {
                *logit += if vote == l { log_correct } else { log_wrong };
            }
        }
        total += log_sum_exp(&logits);
    }
    total
}

/// The EM auxiliary function Q: expected complete-data log-likelihood under
/// the given posteriors.
pub fn q_value(
    d: &CrowdDataset,
    posteriors: &Array2<f64>,
    abilities: &[f64],
    difficulties: &[f64],
) -> f64 {
    let k = d.n_class();
    let log_wrong_share = if k > 1 { ((k - 1) as f64).ln() } else { 0.0 };
    let mut q = -(k as f64).ln() * d.n_task() as f64;
    for (i, j, vote) in d.iter_votes() {
        let c = abilities[j] * difficulties[i];
        let t_voted = posteriors[[i, vote]];
        q += t_voted * log_sigmoid(c)
            + (1.0 - t_voted) * (log_one_minus_sigmoid(c) - log_wrong_share);
    }
    q
}

/// Gradient of Q with respect to abilities and to `b = ln(difficulty)`.
pub fn q_gradient(
    d: &CrowdDataset,
    posteriors: &Array2<f64>,
    abilities: &[f64],
    difficulties: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut grad_alpha = vec![0.0; d.n_worker()];
    let mut grad_b = vec![0.0; d.n_task()];
    for (i, j, vote) in d.iter_votes() {
        let c = abilities[j] * difficulties[i];
        let residual = posteriors[[i, vote]] - sigmoid(c);
        grad_alpha[j] += difficulties[i] * residual;
        grad_b[i] += abilities[j] * difficulties[i] * residual;
    }
    (grad_alpha, grad_b)
}

/// GLAD EM fit. Abilities and difficulties start at 1; the M-step runs
/// plain gradient ascent on Q in `(alpha, ln beta)`, halving the step size
/// whenever a move would decrease Q so monotonicity of the marginal
/// log-likelihood is preserved.
pub fn glad(d: &CrowdDataset, cfg: &GladConfig) -> Result<GladState> {
    cfg.validate()?;
    let mut abilities: Vec<f64> = vec![1.0; d.n_worker()];
    let mut log_difficulties: Vec<f64> = vec![0.0; d.n_task()];
    let mut history: Vec<f64> = Vec::new();
    let mut status = ConvergenceStatus::MaxIterations;

    for _em_iter in 0..cfg.max_em_iter {
        let difficulties: Vec<f64> = log_difficulties.iter().map(|b| b.exp()).collect();
        let posteriors = e_step(d, &abilities, &difficulties);

        match maximize_q(d, &posteriors, &mut abilities, &mut log_difficulties, cfg) {
            MStepOutcome::Ok => {}
            MStepOutcome::NonFinite => {
                status = ConvergenceStatus::NumericalFailure;
                break;
            }
        }

        let difficulties: Vec<f64> = log_difficulties.iter().map(|b| b.exp()).collect();
        let ll = marginal_log_likelihood(d, &abilities, &difficulties);
        let converged = history.last().is_some_and(|prev| (ll - prev).abs() < cfg.epsilon);
        history.push(ll);
        if converged {
            status = ConvergenceStatus::Converged;
            break;
        }
    }

    let difficulties: Vec<f64> = log_difficulties.iter().map(|b| b.exp()).collect();
    let posteriors = e_step(d, &abilities, &difficulties);
    let log_likelihood = history.last().copied().unwrap_or(f64::NEG_INFINITY);
    Ok(GladState {
        abilities,
        difficulties,
        posteriors,
        log_likelihood,
        log_likelihood_history: history,
        status,
    })
}

enum MStepOutcome {
    Ok,
    NonFinite,
}

/// Gradient ascent on Q. Each step proposes `theta + lr * grad`; if Q at the
/// proposal is non-finite the step is retried once at half the rate (then
/// the whole fit is flagged); if Q merely decreases, the rate is halved
/// until the step improves or becomes negligible.
fn maximize_q(
    d: &CrowdDataset,
    posteriors: &Array2<f64>,
    abilities: &mut Vec<f64>,
    log_difficulties: &mut Vec<f64>,
    cfg: &GladConfig,
) -> MStepOutcome {
    let difficulties: Vec<f64> = log_difficulties.iter().map(|b| b.exp()).collect();
    let mut q_current = q_value(d, posteriors, abilities, &difficulties);
    if !q_current.is_finite() {
        return MStepOutcome::NonFinite;
    }

    for _step in 0..cfg.m_step_iters {
        let difficulties: Vec<f64> = log_difficulties.iter().map(|b| b.exp()).collect();
        let (grad_alpha, grad_b) = q_gradient(d, posteriors, abilities, &difficulties);
        let mut lr = cfg.m_step_learning_rate;
        let mut accepted = false;
        let mut halvings = 0;
        while halvings <= 60 {
            let cand_alpha: Vec<f64> = abilities
                .iter()
                .zip(&grad_alpha)
                .map(|(a, g)| a + lr * g)
                .collect();
            let cand_log_diff: Vec<f64> = log_difficulties
                .iter()
                .zip(&grad_b)
                .map(|(b, g)| b + lr * g)
                .collect();
            let cand_diff: Vec<f64> = cand_log_diff.iter().map(|b| b.exp()).collect();
            let q_new = q_value(d, posteriors, &cand_alpha, &cand_diff);
            if !q_new.is_finite() {
                lr /= 2.0;
                halvings += 1;
                if halvings > 1 {
                    return MStepOutcome::NonFinite;
                }
                continue;
            }
            if q_new >= q_current {
                *abilities = cand_alpha;
                *log_difficulties = cand_log_diff;
                q_current = q_new;
                accepted = true;
                break;
            }
            lr /= 2.0;
            halvings += 1;
        }
        if !accepted {
            // No improving step at any rate: Q is locally maximal here.
            break;
        }
    }
    MStepOutcome::Ok
}
