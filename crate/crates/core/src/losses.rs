//! Loss functions and evaluation metrics.

use crate::error::{Error, Result};

/// Predictions are clipped into `[PROB_CLIP, 1 - PROB_CLIP]` before any log.
pub const PROB_CLIP: f64 = 1e-7;

/// Binary labels with matching predicted probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    labels: Vec<u8>,
    predictions: Vec<f64>,
}

impl PredictionBatch {
    pub fn new(labels: Vec<u8>, predictions: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::contract("prediction batch must be non-empty"));
        }
        if labels.len() != predictions.len() {
            return Err(Error::dims("PredictionBatch::new", labels.len(), predictions.len()));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::contract(format!("label must be 0 or 1, got {l}")));
        }
        if let Some(p) = predictions.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::contract(format!("prediction {p} outside [0, 1]")));
        }
        Ok(PredictionBatch { labels, predictions })
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of positive labels.
    pub fn base_rate(&self) -> f64 {
        self.labels.iter().map(|&l| f64::from(l)).sum::<f64>() / self.len() as f64
    }
}

/// Clean and perturbed hidden representations of the same input.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenPair {
    pub clean: Vec<f64>,
    pub perturbed: Vec<f64>,
}

impl HiddenPair {
    pub fn new(clean: Vec<f64>, perturbed: Vec<f64>) -> Result<Self> {
        if clean.len() != perturbed.len() {
            return Err(Error::dims("HiddenPair::new", clean.len(), perturbed.len()));
        }
        Ok(HiddenPair { clean, perturbed })
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy over the batch.
pub fn bce(batch: &PredictionBatch) -> f64 {
    let total: f64 = batch
        .labels
        .iter()
        .zip(&batch.predictions)
        .map(|(&y, &p)| {
            let p = clip(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / batch.len() as f64
}

/// Mean squared componentwise difference.
pub fn mse(pair: &HiddenPair) -> f64 {
    if pair.clean.is_empty() {
        return 0.0;
    }
    let sum: f64 = pair
        .clean
        .iter()
        .zip(&pair.perturbed)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    sum / pair.clean.len() as f64
}

/// Supervised loss plus a λ-weighted consistency penalty.
pub fn scr_loss(batch: &PredictionBatch, pair: &HiddenPair, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(bce(batch) + lambda * mse(pair))
}

/// Supervised loss on clean predictions plus λ times the supervised loss on
/// perturbed predictions scored against the same labels.
pub fn lspr_loss(clean: &PredictionBatch, perturbed: &PredictionBatch, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if clean.labels != perturbed.labels {
        return Err(Error::contract("perturbed batch must carry the clean batch's labels"));
    }
    Ok(bce(clean) + lambda * bce(perturbed))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::contract(format!("loss weight {lambda} must be finite and >= 0")));
    }
    Ok(())
}

/// Entropy (nats) of a Bernoulli(p) variable.
pub fn binary_entropy(p: f64) -> f64 {
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// Log loss normalized by the entropy of the constant base-rate predictor.
/// 1.0 means no better than predicting the average rate; lower is better.
pub fn normalized_entropy(batch: &PredictionBatch) -> Result<f64> {
    let p = batch.base_rate();
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::UndefinedBaseRate);
    }
    Ok(bce(batch) / binary_entropy(p))
}

/// `(baseline - treatment) / baseline`; positive is an improvement.
pub fn relative_ne_gain(ne_baseline: f64, ne_treatment: f64) -> Result<f64> {
    if ne_baseline.is_nan() || ne_baseline <= 0.0 {
        return Err(Error::contract(format!(
            "baseline NE must be positive, got {ne_baseline}"
        )));
    }
    Ok((ne_baseline - ne_treatment) / ne_baseline)
}
