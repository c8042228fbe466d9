//! Data augmentation: Gaussian noise for continuous features, slot dropout
//! for categorical ones, and the combined per-example perturbation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Vector};

/// One sparse feature slot; `None` is an absent or dropped value and reads
/// as a zero vector downstream.
pub type Slot = Option<u32>;

/// One training point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub dense: Vector,
    pub embeddings: Vec<Vector>,
    pub sparse: Vec<Slot>,
    pub label: u8,
}

impl Example {
    pub fn new(dense: Vector, embeddings: Vec<Vector>, sparse: Vec<Slot>, label: u8) -> Result<Self> {
        let ex = Example {
            dense,
            embeddings,
            sparse,
            label,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::contract(format!("label must be 0 or 1, got {}", self.label)));
        }
        if !self.dense.is_finite() || self.embeddings.iter().any(|e| !e.is_finite()) {
            return Err(Error::contract("example features must be finite"));
        }
        Ok(())
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Perturbation configuration shared by the dense block and every embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// ω: multiplier on the sampled noise vector.
    pub noise_scale: f64,
    /// σ of the per-entry normal.
    pub noise_std: f64,
    /// μ of the per-entry normal.
    #[serde(default)]
    pub noise_mean: f64,
    /// Probability that each sparse slot is dropped.
    pub dropout_rate: f64,
}

impl Default for PerturbationSpec {
    /// Unit-variance noise at ω = 0.1 matches standardized dense features;
    /// the dropout rate of 0.1 is a working choice for a "small" rate.
    fn default() -> Self {
        PerturbationSpec {
            noise_scale: 0.1,
            noise_std: 1.0,
            noise_mean: 0.0,
            dropout_rate: 0.1,
        }
    }
}

impl PerturbationSpec {
    /// The identity perturbation.
    pub fn zero() -> Self {
        PerturbationSpec {
            noise_scale: 0.0,
            noise_std: 0.0,
            noise_mean: 0.0,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_scale < 0.0 || !self.noise_scale.is_finite() {
            return Err(Error::contract("noise_scale must be finite and >= 0"));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::contract("noise_std must be finite and >= 0"));
        }
        if !self.noise_mean.is_finite() {
            return Err(Error::contract("noise_mean must be finite"));
        }
        check_rate(self.dropout_rate)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::contract(format!("dropout rate {rate} outside [0, 1]")));
    }
    Ok(())
}

/// `v + ω·ψ` with ψ drawn i.i.d. from N(μ, σ²). Always consumes `v.dim()`
/// normal deviates so downstream streams do not depend on the spec.
pub fn inject_gaussian_noise(v: &Vector, spec: &PerturbationSpec, rng: &mut Rng) -> Vector {
    Vector(
        v.iter()
            .map(|&x| {
                let psi = spec.noise_mean + spec.noise_std * rng.standard_normal();
                x + spec.noise_scale * psi
            })
            .collect(),
    )
}

/// Drops each slot independently with probability `rate`. Consumes one
/// uniform per slot.
pub fn dropout_sparse(slots: &[Slot], rate: f64, rng: &mut Rng) -> Result<Vec<Slot>> {
    check_rate(rate)?;
    Ok(slots
        .iter()
        .map(|&s| if rng.bernoulli(rate) { None } else { s })
        .collect())
}

/// Perturbs every feature group of an example with the perturbation class of
/// that group; the label is carried over unchanged.
///
/// Draw order: dense block, then each embedding in order, then the slots.
pub fn perturb_example(ex: &Example, spec: &PerturbationSpec, rng: &mut Rng) -> Result<Example> {
    spec.validate()?;
    let dense = inject_gaussian_noise(&ex.dense, spec, rng);
    let embeddings = ex
        .embeddings
        .iter()
        .map(|e| inject_gaussian_noise(e, spec, rng))
        .collect();
    let sparse = dropout_sparse(&ex.sparse, spec.dropout_rate, rng)?;
    Ok(Example {
        dense,
        embeddings,
        sparse,
        label: ex.label,
    })
}
