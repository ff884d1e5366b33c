//! Evaluation metrics: top-1 accuracy and expected calibration error.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binning configuration for the calibration error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EceConfig {
    pub n_bins: usize,
}

impl Default for EceConfig {
    fn default() -> Self {
        Self { n_bins: 15 }
    }
}

/// Row-wise argmax with ties broken by a seeded uniform draw, shared by
/// accuracy and the calibration binning so both agree on predictions.
pub fn seeded_argmax(pred: &Array2<f64>, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pred.rows()
        .into_iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = row
                .iter()
                .enumerate()
                .filter_map(|(c, &p)| (p == max).then_some(c))
                .collect();
            if tied.len() == 1 {
                tied[0]
            } else {
                tied[rng.random_range(0..tied.len())]
            }
        })
        .collect()
}

/// Fraction of rows whose (tie-broken) argmax matches the truth.
pub fn accuracy(pred: &Array2<f64>, truth: &[usize], seed: u64) -> Result<f64> {
    check_shapes(pred, truth)?;
    let labels = seeded_argmax(pred, seed);
    let correct = labels.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Expected calibration error with right-closed bins `((m-1)/M, m/M]`.
/// Top confidences at or below `1/M` land in the first bin so every sample
/// is binned; empty bins contribute zero.
pub fn ece(pred: &Array2<f64>, truth: &[usize], cfg: &EceConfig, seed: u64) -> Result<f64> {
    check_shapes(pred, truth)?;
    if cfg.n_bins == 0 {
        return Err(Error::Config("ece needs at least one bin".into()));
    }
    let m = cfg.n_bins;
    let labels = seeded_argmax(pred, seed);
    let mut count = vec![0usize; m];
    let mut correct = vec![0usize; m];
    let mut confidence = vec![0.0f64; m];
    for (i, row) in pred.rows().into_iter().enumerate() {
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Right-closed bins: the smallest b with top <= b/M.
        let mut bin = ((top * m as f64).ceil() as usize).clamp(1, m);
        while bin > 1 && top <= (bin - 1) as f64 / m as f64 {
            bin -= 1;
        }
        let bin = bin - 1;
        count[bin] += 1;
        confidence[bin] += top;
        if labels[i] == truth[i] {
            correct[bin] += 1;
        }
    }
    let n = truth.len() as f64;
    let mut total = 0.0;
    for bin in 0..m {
        if count[bin] == 0 {
            continue;
        }
        let acc = correct[bin] as f64 / count[bin] as f64;
        let conf = confidence[bin] / count[bin] as f64;
        total += (count[bin] as f64 / n) * (acc - conf).abs();
    }
    Ok(total)
}

fn check_shapes(pred: &Array2<f64>, truth: &[usize]) -> Result<()> {
    if pred.nrows() != truth.len() {
        return Err(Error::Dimension {
            what: "prediction rows".into(),
            expected: truth.len(),
            actual: pred.nrows(),
        });
    }
    if truth.iter().any(|&t| t >= pred.ncols()) {
        return Err(Error::Config("truth label out of range for prediction columns".into()));
    }
    Ok(())
}
