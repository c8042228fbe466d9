//! A small click model: slot embeddings, one ReLU interaction layer and a
//! logistic head, with hand-written backpropagation and Adagrad.
//!
//! All trainable parameters live in one flat buffer so the optimizer,
//! gradient audits and weight hashing can treat them uniformly.

use serde::{Deserialize, Serialize};

use crate::augment::Example;
use crate::error::{Error, Result};
use crate::losses::sigmoid;
use crate::numerics::{Rng, Vector};

pub const ADAGRAD_EPS: f64 = 1e-10;

/// Architecture of a [`CtrModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub dense_dim: usize,
    pub n_embeddings: usize,
    pub embed_dim: usize,
    pub n_slots: usize,
    pub vocab_size: u32,
    pub slot_dim: usize,
    pub hidden_dim: usize,
}

impl ModelShape {
    pub fn input_dim(&self) -> usize {
        self.dense_dim + self.n_embeddings * self.embed_dim + self.n_slots * self.slot_dim
    }

    fn layout(&self) -> Layout {
        let tables = 0;
        let w_hidden = tables + self.n_slots * self.vocab_size as usize * self.slot_dim;
        let b_hidden = w_hidden + self.hidden_dim * self.input_dim();
        let w_out = b_hidden + self.hidden_dim;
        let b_out = w_out + self.hidden_dim;
        Layout {
            tables,
            w_hidden,
            b_hidden,
            w_out,
            b_out,
            len: b_out + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    tables: usize,
    w_hidden: usize,
    b_hidden: usize,
    w_out: usize,
    b_out: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtrModel {
    shape: ModelShape,
    layout: Layout,
    params: Vec<f64>,
    accumulators: Vec<f64>,
}

/// Result of a forward pass, with the activations backpropagation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub prediction: f64,
    /// Interaction-layer output rₙ.
    pub hidden: Vector,
    pub logit: f64,
    input: Vector,
    slots: Vec<Option<u32>>,
}

impl CtrModel {
    pub fn zeros(shape: ModelShape) -> Self {
        let layout = shape.layout();
        CtrModel {
            shape,
            layout,
            params: vec![0.0; layout.len],
            accumulators: vec![0.0; layout.len],
        }
    }

    /// He-initialized interaction layer, small slot embeddings, zero biases.
    pub fn init(shape: ModelShape, rng: &mut Rng) -> Self {
        let mut m = CtrModel::zeros(shape);
        let l = m.layout;
        let table_std = 0.1;
        let hidden_std = (2.0 / shape.input_dim() as f64).sqrt();
        let out_std = (1.0 / shape.hidden_dim as f64).sqrt();
        for p in &mut m.params[l.tables..l.w_hidden] {
            *p = table_std * rng.standard_normal();
        }
        for p in &mut m.params[l.w_hidden..l.b_hidden] {
            *p = hidden_std * rng.standard_normal();
        }
        for p in &mut m.params[l.w_out..l.b_out] {
            *p = out_std * rng.standard_normal();
        }
        m
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn slot_row(&self, slot: usize, value: u32) -> usize {
        self.layout.tables + (slot * self.shape.vocab_size as usize + value as usize) * self.shape.slot_dim
    }

    fn check(&self, ex: &Example) -> Result<()> {
        let s = &self.shape;
        if ex.dense.dim() != s.dense_dim {
            return Err(Error::dims("forward dense", s.dense_dim, ex.dense.dim()));
        }
        if ex.embeddings.len() != s.n_embeddings {
            return Err(Error::dims("forward embeddings", s.n_embeddings, ex.embeddings.len()));
        }
        if let Some(e) = ex.embeddings.iter().find(|e| e.dim() != s.embed_dim) {
            return Err(Error::dims("forward embedding dim", s.embed_dim, e.dim()));
        }
        if ex.sparse.len() != s.n_slots {
            return Err(Error::dims("forward slots", s.n_slots, ex.sparse.len()));
        }
        if let Some(v) = ex.sparse.iter().flatten().find(|&&v| v >= s.vocab_size) {
            return Err(Error::dims("forward slot value", format!("< {}", s.vocab_size), v));
        }
        Ok(())
    }

    pub fn forward(&self, ex: &Example) -> Result<ForwardPass> {
        self.check(ex)?;
        let s = &self.shape;
        let l = &self.layout;
        let mut input = Vec::with_capacity(s.input_dim());
        input.extend_from_slice(&ex.dense);
        for e in &ex.embeddings {
            input.extend_from_slice(e);
        }
        for (slot, value) in ex.sparse.iter().enumerate() {
            match value {
                Some(v) => {
                    let row = self.slot_row(slot, *v);
                    input.extend_from_slice(&self.params[row..row + s.slot_dim]);
                }
                None => input.extend(std::iter::repeat_n(0.0, s.slot_dim)),
            }
        }

        let d = s.input_dim();
        let w = &self.params[l.w_hidden..l.b_hidden];
        let hidden: Vec<f64> = (0..s.hidden_dim)
            .map(|k| {
                let pre = self.params[l.b_hidden + k]
                    + w[k * d..(k + 1) * d]
                        .iter()
                        .zip(&input)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                pre.max(0.0)
            })
            .collect();
        let logit = self.params[l.b_out]
            + self.params[l.w_out..l.b_out]
                .iter()
                .zip(&hidden)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        Ok(ForwardPass {
            prediction: sigmoid(logit),
            hidden: Vector(hidden),
            logit,
            input: Vector(input),
            slots: ex.sparse.clone(),
        })
    }

    /// Accumulates into `grad` the parameter gradient of a scalar loss whose
    /// derivatives w.r.t. this pass's logit and hidden vector are given.
    pub fn backward(&self, pass: &ForwardPass, d_logit: f64, d_hidden: Option<&[f64]>, grad: &mut [f64]) {
        let s = &self.shape;
        let l = &self.layout;
        let d = s.input_dim();

        grad[l.b_out] += d_logit;
        for (g, h) in grad[l.w_out..l.b_out].iter_mut().zip(pass.hidden.iter()) {
            *g += d_logit * h;
        }

        let mut d_input = vec![0.0; d];
        for k in 0..s.hidden_dim {
            // ReLU passes gradient only where the unit is active.
            if pass.hidden[k] <= 0.0 {
                continue;
            }
            let mut dk = d_logit * self.params[l.w_out + k];
            if let Some(dh) = d_hidden {
                dk += dh[k];
            }
            grad[l.b_hidden + k] += dk;
            let row = l.w_hidden + k * d;
            for j in 0..d {
                grad[row + j] += dk * pass.input[j];
                d_input[j] += dk * self.params[row + j];
            }
        }

        let slot_base = s.dense_dim + s.n_embeddings * s.embed_dim;
        for (slot, value) in pass.slots.iter().enumerate() {
            if let Some(v) = value {
                let row = self.slot_row(slot, *v);
                let from = slot_base + slot * s.slot_dim;
                for j in 0..s.slot_dim {
                    grad[row + j] += d_input[from + j];
                }
            }
        }
    }

    /// Applies one Adagrad step to every parameter.
    pub fn adagrad_step(&mut self, grad: &[f64], learning_rate: f64) {
        for ((w, a), &g) in self.params.iter_mut().zip(&mut self.accumulators).zip(grad) {
            let (nw, na) = adagrad_update(*w, g, *a, learning_rate);
            *w = nw;
            *a = na;
        }
    }

    /// Order-sensitive digest of the parameters, for purity checks.
    pub fn weight_digest(&self) -> u64 {
        self.params.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, p| {
            (h ^ p.to_bits()).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

/// One Adagrad step on a scalar weight; returns `(weight, accumulator)`.
pub fn adagrad_update(weight: f64, grad: f64, accumulator: f64, learning_rate: f64) -> (f64, f64) {
    let acc = accumulator + grad * grad;
    (weight - learning_rate * grad / (acc + ADAGRAD_EPS).sqrt(), acc)
}
