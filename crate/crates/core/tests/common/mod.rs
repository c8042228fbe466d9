#![allow(dead_code)]

use perturb_lab::augment::Example;
use perturb_lab::ctr::{self, CtrModel, DatasetConfig, ModelShape};
use perturb_lab::numerics::Rng;

/// Tiny feature layout: 2 dense, one 2-d embedding, two slots over 3 values.
pub fn tiny_dataset(n: usize, seed: u64) -> (DatasetConfig, Vec<Example>) {
    let cfg = DatasetConfig {
        n_examples: n,
        dense_dim: 2,
        n_embeddings: 1,
        embed_dim: 2,
        n_sparse_slots: 2,
        vocab_size: 3,
        seed,
        ..DatasetConfig::default()
    };
    let data = ctr::generate_dataset(&cfg).unwrap();
    (cfg, data)
}

/// 53-weight model over [`tiny_dataset`] features.
pub fn tiny_model(cfg: &DatasetConfig, seed: u64) -> CtrModel {
    let model = CtrModel::init(ModelShape::for_dataset(cfg, 2, 4), &mut Rng::new(seed));
    assert!(model.params().len() <= 100);
    model
}

pub fn bce_one(p: f64, y: u8) -> f64 {
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Largest relative gap between `grad` and central differences of `loss`
/// (step `h`), with gradients below `floor` compared absolutely.
#[allow(clippy::needless_range_loop)]
pub fn fd_gap(model: &mut CtrModel, grad: &[f64], h: f64, floor: f64, loss: impl Fn(&CtrModel) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..model.params().len() {
        let orig = model.params()[k];
        model.params_mut()[k] = orig + h;
        let up = loss(model);
        model.params_mut()[k] = orig - h;
        let down = loss(model);
        model.params_mut()[k] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[k]).abs() / fd.abs().max(floor));
    }
    worst
}
