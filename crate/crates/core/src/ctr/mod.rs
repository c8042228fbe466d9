//! Toy click-through-rate pipeline: synthetic data, a small model, and the
//! baseline, SCR and LSPR trainers evaluated by normalized entropy.

mod data;
mod model;
mod train;

pub use data::{
    generate_dataset, generate_with_teacher, read_snapshot, split_holdout, write_snapshot, DatasetConfig,
    SyntheticData, Teacher,
};
pub use model::{adagrad_update, CtrModel, ForwardPass, ModelShape, ADAGRAD_EPS};
pub use train::{
    batch_objective, evaluate, plan_batch, train, train_baseline, train_lspr, train_scr, BatchOutcome, BatchPlan,
    CtrMethod, EpochRecord, Evaluation, ScrTarget, TrainConfig, TrainOutcome,
};

impl ModelShape {
    /// Shape matching a dataset's feature layout.
    pub fn for_dataset(cfg: &DatasetConfig, slot_dim: usize, hidden_dim: usize) -> Self {
        ModelShape {
            dense_dim: cfg.dense_dim,
            n_embeddings: cfg.n_embeddings,
            embed_dim: cfg.embed_dim,
            n_slots: cfg.n_sparse_slots,
            vocab_size: cfg.vocab_size,
            slot_dim,
            hidden_dim,
        }
    }
}
