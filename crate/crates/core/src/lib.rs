//! Perturbation-based regularization laboratory.
//!
//! * [`numerics`]: dense linear algebra and seeded sampling.
//! * [`augment`]: Gaussian noise injection, sparse-slot dropout.
//! * [`losses`]: BCE, consistency MSE, SCR and LSPR objectives, normalized entropy.
//! * [`lindyn`]: teacher/student linear-network dynamics under SGD, SCR and LSPR.
//! * [`ctr`]: synthetic click data and the three trainers.
//! * [`experiment`]: grid specs, runner, CSV and plot output.
//!
//! The `parallel` feature (on by default) spreads grid cells, evaluation and
//! large matrix kernels over a rayon pool; results are bit-identical with the
//! feature off.

pub mod augment;
pub mod ctr;
pub mod error;
pub mod experiment;
pub mod lindyn;
pub mod losses;
pub mod numerics;
pub mod par;

pub use error::{Error, Result};
