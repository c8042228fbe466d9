//! Synthetic click data drawn from a logistic teacher over dense,
//! embedding and sparse features, plus the newline-delimited snapshot format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::augment::{Example, Slot};
use crate::error::{Error, Result};
use crate::losses::sigmoid;
use crate::numerics::{derive_seed, Rng, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_examples: usize,
    pub dense_dim: usize,
    pub n_embeddings: usize,
    pub embed_dim: usize,
    pub n_sparse_slots: usize,
    /// Distinct values per sparse slot.
    pub vocab_size: u32,
    /// Probability of flipping each teacher label.
    pub label_noise: f64,
    /// Teacher positive rate before label noise, in `[0.05, 0.5]`.
    pub base_rate: f64,
    /// Multiplier on the unit-variance teacher score; `inf` makes labels
    /// deterministic.
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_examples: 4_000,
            dense_dim: 16,
            n_embeddings: 2,
            embed_dim: 8,
            n_sparse_slots: 6,
            vocab_size: 20,
            label_noise: 0.1,
            base_rate: 0.25,
            sharpness: 3.0,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_examples == 0
            || self.dense_dim == 0
            || self.n_embeddings == 0
            || self.embed_dim == 0
            || self.n_sparse_slots == 0
            || self.vocab_size == 0
        {
            return Err(Error::contract("dataset dimensions must be >= 1"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::contract(format!(
                "label_noise {} outside [0, 0.5)",
                self.label_noise
            )));
        }
        if !(0.05..=0.5).contains(&self.base_rate) {
            return Err(Error::contract(format!(
                "base_rate {} outside [0.05, 0.5]",
                self.base_rate
            )));
        }
        if self.sharpness.is_nan() || self.sharpness <= 0.0 {
            return Err(Error::contract("sharpness must be positive"));
        }
        Ok(())
    }
}

/// Ground-truth logistic model that labels the synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub dense_weights: Vector,
    pub embedding_weights: Vec<Vector>,
    /// `slot_effects[slot][value]`.
    pub slot_effects: Vec<Vec<f64>>,
    pub bias: f64,
    pub sharpness: f64,
    pub label_noise: f64,
}

impl Teacher {
    fn sample(cfg: &DatasetConfig, rng: &mut Rng) -> Self {
        // Each of the three feature groups contributes a third of the unit
        // score variance when features are standard normal.
        let group_var = 1.0 / 3.0;
        let gauss =
            |rng: &mut Rng, n: usize, var: f64| Vector((0..n).map(|_| var.sqrt() * rng.standard_normal()).collect());
        let dense_weights = gauss(rng, cfg.dense_dim, group_var / cfg.dense_dim as f64);
        let per_emb = group_var / (cfg.n_embeddings * cfg.embed_dim) as f64;
        let embedding_weights = (0..cfg.n_embeddings)
            .map(|_| gauss(rng, cfg.embed_dim, per_emb))
            .collect();
        let per_slot = group_var / cfg.n_sparse_slots as f64;
        let slot_effects = (0..cfg.n_sparse_slots)
            .map(|_| gauss(rng, cfg.vocab_size as usize, per_slot).0)
            .collect();
        Teacher {
            dense_weights,
            embedding_weights,
            slot_effects,
            bias: 0.0,
            sharpness: cfg.sharpness,
            label_noise: cfg.label_noise,
        }
    }

    /// Bias-free teacher score.
    pub fn score(&self, ex: &Example) -> f64 {
        let mut s = self.dense_weights.dot(&ex.dense);
        for (w, e) in self.embedding_weights.iter().zip(&ex.embeddings) {
            s += w.dot(e);
        }
        for (effects, slot) in self.slot_effects.iter().zip(&ex.sparse) {
            if let Some(v) = slot {
                s += effects[*v as usize];
            }
        }
        s
    }

    fn clean_probability(&self, score: f64, bias: f64) -> f64 {
        let z = score + bias;
        if self.sharpness.is_infinite() {
            match z.partial_cmp(&0.0) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Less) => 0.0,
                _ => 0.5,
            }
        } else {
            sigmoid(self.sharpness * z)
        }
    }

    /// Click probability before label noise.
    pub fn probability(&self, ex: &Example) -> f64 {
        self.clean_probability(self.score(ex), self.bias)
    }

    /// Click probability after label noise.
    pub fn observed_probability(&self, ex: &Example) -> f64 {
        let p = self.probability(ex);
        p + self.label_noise * (1.0 - 2.0 * p)
    }
}

/// Generated examples together with the teacher that labelled them.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub examples: Vec<Example>,
    pub teacher: Teacher,
}

fn features(cfg: &DatasetConfig, rng: &mut Rng) -> Example {
    let normal = |rng: &mut Rng, n: usize| Vector((0..n).map(|_| rng.standard_normal()).collect());
    let dense = normal(rng, cfg.dense_dim);
    let embeddings = (0..cfg.n_embeddings).map(|_| normal(rng, cfg.embed_dim)).collect();
    let sparse: Vec<Slot> = (0..cfg.n_sparse_slots)
        .map(|_| Some(rng.below(cfg.vocab_size)))
        .collect();
    Example {
        dense,
        embeddings,
        sparse,
        label: 0,
    }
}

/// Bias placing the mean teacher probability over `scores` at `rate`.
fn calibrate_bias(teacher: &Teacher, scores: &[f64], rate: f64) -> f64 {
    let mean_p = |b: f64| scores.iter().map(|&s| teacher.clean_probability(s, b)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generates a dataset and returns its teacher. Deterministic in `cfg.seed`.
pub fn generate_with_teacher(cfg: &DatasetConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut teacher_rng = Rng::new(derive_seed(cfg.seed, &[0]));
    let mut feature_rng = Rng::new(derive_seed(cfg.seed, &[1]));
    let mut label_rng = Rng::new(derive_seed(cfg.seed, &[2]));

    let mut teacher = Teacher::sample(cfg, &mut teacher_rng);
    let mut examples: Vec<Example> = (0..cfg.n_examples).map(|_| features(cfg, &mut feature_rng)).collect();
    let scores: Vec<f64> = examples.iter().map(|e| teacher.score(e)).collect();
    teacher.bias = calibrate_bias(&teacher, &scores, cfg.base_rate);

    for (ex, &s) in examples.iter_mut().zip(&scores) {
        let clicked = label_rng.bernoulli(teacher.clean_probability(s, teacher.bias));
        let flipped = label_rng.bernoulli(cfg.label_noise);
        ex.label = u8::from(clicked != flipped);
    }
    Ok(SyntheticData { examples, teacher })
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Example>> {
    Ok(generate_with_teacher(cfg)?.examples)
}

/// Splits off the trailing `eval_fraction` of the data as a held-out set.
pub fn split_holdout(data: &[Example], eval_fraction: f64) -> Result<(&[Example], &[Example])> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::contract("eval_fraction must lie in (0, 1)"));
    }
    let n_eval = ((data.len() as f64) * eval_fraction).round() as usize;
    let cut = data.len() - n_eval.clamp(1, data.len().saturating_sub(1));
    Ok(data.split_at(cut))
}

/// Writes one JSON object per line: `dense`, `embeddings`, `sparse`, `label`.
pub fn write_snapshot<W: Write>(mut out: W, data: &[Example]) -> Result<()> {
    for ex in data {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`] (or any producer of the
/// same line format). Blank lines are skipped.
pub fn read_snapshot<R: BufRead>(input: R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line)?;
        ex.validate()
            .map_err(|e| Error::contract(format!("snapshot line {}: {e}", i + 1)))?;
        out.push(ex);
    }
    Ok(out)
}
