//! Learning dynamics of a two-layer linear student `W2·W1` trained online
//! against a fixed linear teacher `W*`.
//!
//! Three update rules are available:
//!
//! * plain SGD on `½‖y − W2W1x‖²`;
//! * LSPR, which adds `λ·½‖y − W2W1(x + ωσz)‖²`, scoring the perturbed input
//!   against the true label;
//! * SCR, which adds `λ·½‖W2W1(x + ωσz) − c‖²` where `c = W2W1x` is the clean
//!   output held fixed (no gradient flows through the clean branch).
//!
//! Both weight matrices are always updated from their pre-step values. Every
//! update is a short sum of outer products, kept in factored form until it is
//! applied so that a step costs two matrix-vector products per branch.
//!
//! Inputs `x` are i.i.d. `N(0, input_std²)` per entry and the perturbation
//! direction `z` is drawn from that same law, so `ω` is the noise amplitude
//! relative to the signal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, frobenius_inner, matmul, Matrix, Rng, Vector};

/// Update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Lspr,
    Scr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Lspr => "lspr",
            Method::Scr => "scr",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Sgd => "SGD",
            Method::Lspr => "LSPR",
            Method::Scr => "SCR",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Full-scale defaults.
pub const DEFAULT_LX: usize = 100;
pub const DEFAULT_LH: usize = 10_000;
pub const DEFAULT_LY: usize = 10;
pub const DEFAULT_ETA: f64 = 1.4;
pub const DEFAULT_STEPS: u64 = 100_000;
/// Input variance times `lx + lh`; see [`scaled_input_std`].
pub const INPUT_GAIN: f64 = 0.11;

/// Per-entry input standard deviation `sqrt(INPUT_GAIN / (lx + lh))`.
///
/// At small init the step on the product `W2 W1` scales like
/// `η ‖x‖² (1 + lh / lx)`, so this keeps it width-independent and, with
/// η = 1.4, inside the stable region for every cell of the default
/// (ω, λ) grid. Equals 0.01 at `lx = 100, lh = 1000`.
pub fn scaled_input_std(lx: usize, lh: usize) -> f64 {
    (INPUT_GAIN / (lx + lh) as f64).sqrt()
}

/// Hyper-parameters shared by the regularized rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams {
    pub eta: f64,
    pub lambda: f64,
    pub omega: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynConfig {
    pub lx: usize,
    pub lh: usize,
    pub ly: usize,
    pub eta: f64,
    pub lambda: f64,
    pub omega: f64,
    pub sigma: f64,
    pub input_std: f64,
    pub steps: u64,
    pub method: Method,
    pub seed: u64,
    pub record_every: u64,
}

impl Default for DynConfig {
    fn default() -> Self {
        DynConfig {
            lx: DEFAULT_LX,
            lh: DEFAULT_LH,
            ly: DEFAULT_LY,
            eta: DEFAULT_ETA,
            lambda: 0.001,
            omega: 0.1,
            sigma: 1.0,
            input_std: scaled_input_std(DEFAULT_LX, DEFAULT_LH),
            steps: DEFAULT_STEPS,
            method: Method::Sgd,
            seed: 0,
            record_every: 100,
        }
    }
}

impl DynConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lx == 0 || self.lh == 0 || self.ly == 0 {
            return Err(Error::contract("layer widths must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(Error::contract("record_every must be >= 1"));
        }
        for (name, v) in [
            ("eta", self.eta),
            ("lambda", self.lambda),
            ("omega", self.omega),
            ("sigma", self.sigma),
            ("input_std", self.input_std),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::contract(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.eta == 0.0 {
            return Err(Error::contract("eta must be positive"));
        }
        Ok(())
    }

    pub fn reg_params(&self) -> RegParams {
        RegParams {
            eta: self.eta,
            lambda: self.lambda,
            omega: self.omega,
            sigma: self.sigma,
        }
    }
}

/// Teacher and student weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DynState {
    pub w_star: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub step: u64,
}

impl DynState {
    /// Builds a state from explicit weights, checking shape compatibility.
    pub fn new(w_star: Matrix, w1: Matrix, w2: Matrix) -> Result<Self> {
        if w2.cols() != w1.rows() || w2.rows() != w_star.rows() || w1.cols() != w_star.cols() {
            return Err(Error::dims(
                "DynState::new",
                format!("W2·W1 shaped like W* {:?}", w_star.shape()),
                format!("W2 {:?}, W1 {:?}", w2.shape(), w1.shape()),
            ));
        }
        Ok(DynState {
            w_star,
            w1,
            w2,
            step: 0,
        })
    }

    pub fn lx(&self) -> usize {
        self.w1.cols()
    }

    pub fn ly(&self) -> usize {
        self.w2.rows()
    }

    /// The student's end-to-end map `W2·W1`.
    pub fn product(&self) -> Matrix {
        matmul(&self.w2, &self.w1).expect("state shapes are checked on construction")
    }

    /// `W2·W1·x`.
    pub fn student_output(&self, x: &[f64]) -> Result<Vector> {
        let h = self.w1.matvec(x)?;
        self.w2.matvec(&h)
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w2.is_finite()
    }
}

/// Teacher `W* ~ N(0, 1)`, student layers `N(0, 1/fan_in)`.
pub fn init_state(config: &DynConfig, rng: &mut Rng) -> Result<DynState> {
    config.validate()?;
    let w_star = Matrix::random_normal(config.ly, config.lx, 1.0, rng);
    let w1 = Matrix::random_normal(config.lh, config.lx, (1.0 / config.lx as f64).sqrt(), rng);
    let w2 = Matrix::random_normal(config.ly, config.lh, (1.0 / config.lh as f64).sqrt(), rng);
    DynState::new(w_star, w1, w2)
}

/// Ground-truth label `W*·x`.
pub fn teacher_label(state: &DynState, x: &[f64]) -> Result<Vector> {
    state.w_star.matvec(x)
}

/// A single outer-product term `alpha · (u ⊗ v)`.
#[derive(Debug, Clone)]
struct RankOne {
    alpha: f64,
    u: Vector,
    v: Vector,
}

/// A weight update in factored form: `δW1 = Σ w1 terms`, `δW2 = Σ w2 terms`.
#[derive(Debug, Clone, Default)]
pub struct WeightUpdate {
    w1: Vec<RankOne>,
    w2: Vec<RankOne>,
}

impl WeightUpdate {
    /// Adds the update to the state's weights and advances the step counter.
    pub fn apply(&self, state: &mut DynState) -> Result<()> {
        for t in &self.w1 {
            state.w1.add_outer(t.alpha, &t.u, &t.v)?;
        }
        for t in &self.w2 {
            state.w2.add_outer(t.alpha, &t.u, &t.v)?;
        }
        state.step += 1;
        Ok(())
    }

    /// Materializes `(δW1, δW2)` for a state of the given shape.
    pub fn dense(&self, state: &DynState) -> Result<(Matrix, Matrix)> {
        let mut d1 = Matrix::zeros(state.w1.rows(), state.w1.cols());
        let mut d2 = Matrix::zeros(state.w2.rows(), state.w2.cols());
        for t in &self.w1 {
            d1.add_outer(t.alpha, &t.u, &t.v)?;
        }
        for t in &self.w2 {
            d2.add_outer(t.alpha, &t.u, &t.v)?;
        }
        Ok((d1, d2))
    }

    /// Pushes `−scale·∇` of `½‖W2W1·input − target‖²` evaluated at the
    /// current weights, given `hidden = W1·input` and `residual = W2·hidden − target`.
    fn push_branch(
        &mut self,
        state: &DynState,
        scale: f64,
        input: Vector,
        hidden: Vector,
        residual: Vector,
    ) -> Result<()> {
        let back = state.w2.matvec_transposed(&residual)?;
        self.w1.push(RankOne {
            alpha: -scale,
            u: back,
            v: input,
        });
        self.w2.push(RankOne {
            alpha: -scale,
            u: residual,
            v: hidden,
        });
        Ok(())
    }
}

fn check_input(state: &DynState, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != state.lx() {
        return Err(Error::dims("input x", state.lx(), x.len()));
    }
    if y.len() != state.ly() {
        return Err(Error::dims("label y", state.ly(), y.len()));
    }
    Ok(())
}

/// Forward pass of the clean branch: `(W1x, W2W1x)`.
fn clean_forward(state: &DynState, x: &[f64]) -> Result<(Vector, Vector)> {
    let h = state.w1.matvec(x)?;
    let out = state.w2.matvec(&h)?;
    Ok((h, out))
}

/// Plain SGD update.
pub fn sgd_update(state: &DynState, x: &[f64], y: &[f64], eta: f64) -> Result<WeightUpdate> {
    check_input(state, x, y)?;
    let (h, out) = clean_forward(state, x)?;
    let r = out.sub(&Vector(y.to_vec()));
    let mut upd = WeightUpdate::default();
    upd.push_branch(state, eta, Vector(x.to_vec()), h, r)?;
    Ok(upd)
}

#[derive(Clone, Copy, PartialEq)]
enum RegTarget {
    Label,
    CleanOutput,
}

fn regularized_update(
    state: &DynState,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    p: &RegParams,
    target: RegTarget,
) -> Result<WeightUpdate> {
    check_input(state, x, y)?;
    if z.len() != state.lx() {
        return Err(Error::dims("perturbation z", state.lx(), z.len()));
    }
    let x_vec = Vector(x.to_vec());
    let y_vec = Vector(y.to_vec());
    let (h, out) = clean_forward(state, x)?;
    let r = out.sub(&y_vec);

    let xp = x_vec.axpy(p.omega * p.sigma, &Vector(z.to_vec()));
    let (hp, outp) = clean_forward(state, &xp)?;
    let rp = match target {
        RegTarget::Label => outp.sub(&y_vec),
        RegTarget::CleanOutput => outp.sub(&out),
    };

    let mut upd = WeightUpdate::default();
    upd.push_branch(state, p.eta, x_vec, h, r)?;
    upd.push_branch(state, p.lambda * p.eta, xp, hp, rp)?;
    Ok(upd)
}

/// LSPR update: SGD plus a λ-weighted supervised gradient at the perturbed
/// input `x + ωσz` against the true label.
pub fn lspr_update(state: &DynState, x: &[f64], y: &[f64], z: &[f64], p: &RegParams) -> Result<WeightUpdate> {
    regularized_update(state, x, y, z, p, RegTarget::Label)
}

/// SCR update: SGD plus a λ-weighted pull of the perturbed output toward the
/// frozen clean output.
pub fn scr_update(state: &DynState, x: &[f64], y: &[f64], z: &[f64], p: &RegParams) -> Result<WeightUpdate> {
    regularized_update(state, x, y, z, p, RegTarget::CleanOutput)
}

pub fn sgd_step(state: &DynState, x: &[f64], y: &[f64], eta: f64) -> Result<DynState> {
    let mut next = state.clone();
    sgd_update(state, x, y, eta)?.apply(&mut next)?;
    Ok(next)
}

pub fn lspr_step(state: &DynState, x: &[f64], y: &[f64], z: &[f64], p: &RegParams) -> Result<DynState> {
    let mut next = state.clone();
    lspr_update(state, x, y, z, p)?.apply(&mut next)?;
    Ok(next)
}

pub fn scr_step(state: &DynState, x: &[f64], y: &[f64], z: &[f64], p: &RegParams) -> Result<DynState> {
    let mut next = state.clone();
    scr_update(state, x, y, z, p)?.apply(&mut next)?;
    Ok(next)
}

/// Update for `method`; `z` is ignored by SGD.
pub fn method_update(
    method: Method,
    state: &DynState,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    p: &RegParams,
) -> Result<WeightUpdate> {
    match method {
        Method::Sgd => sgd_update(state, x, y, p.eta),
        Method::Lspr => lspr_update(state, x, y, z, p),
        Method::Scr => scr_update(state, x, y, z, p),
    }
}

/// Weight-space error: mean squared entry of `W2W1 − W*`.
pub fn epsilon(state: &DynState) -> f64 {
    let e = state
        .product()
        .sub(&state.w_star)
        .expect("state shapes are checked on construction");
    let n = (state.lx() * state.ly()) as f64;
    e.as_slice().iter().map(|v| v * v).sum::<f64>() / n
}

/// Frobenius cosine between `W2W1` and `W*`.
pub fn gamma(state: &DynState) -> Result<f64> {
    gamma_of(&state.product(), &state.w_star)
}

pub(crate) fn gamma_of(product: &Matrix, w_star: &Matrix) -> Result<f64> {
    let (np, ns) = (product.frobenius_norm(), w_star.frobenius_norm());
    if np == 0.0 || ns == 0.0 {
        return Err(Error::Degenerate("alignment of a zero matrix is undefined".into()));
    }
    Ok((frobenius_inner(product, w_star)? / (np * ns)).clamp(-1.0, 1.0))
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: u64,
    pub epsilon: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config: DynConfig,
    pub records: Vec<Record>,
    /// Step at which weights stopped being finite, if they did.
    pub divergence: Option<u64>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }
}

/// Seed streams used by a trajectory. Inputs and perturbations come from
/// separate streams so every method sees the same input sequence for a
/// given seed.
fn streams(seed: u64) -> (Rng, Rng, Rng) {
    (
        Rng::new(derive_seed(seed, &[0])),
        Rng::new(derive_seed(seed, &[1])),
        Rng::new(derive_seed(seed, &[2])),
    )
}

fn record(state: &DynState) -> Option<Record> {
    let eps = epsilon(state);
    let gam = gamma(state).ok()?;
    eps.is_finite().then_some(Record {
        step: state.step,
        epsilon: eps,
        gamma: gam,
    })
}

/// Simulates a trajectory, stopping early (and marking it) on divergence.
pub fn trace_trajectory(config: &DynConfig) -> Result<Trajectory> {
    config.validate()?;
    let (mut init_rng, mut data_rng, mut noise_rng) = streams(config.seed);
    let mut state = init_state(config, &mut init_rng)?;
    let params = config.reg_params();
    let mut traj = Trajectory {
        config: config.clone(),
        records: Vec::new(),
        divergence: None,
    };
    let init = record(&state).ok_or_else(|| Error::Degenerate("initial state".into()))?;
    traj.records.push(init);

    for t in 1..=config.steps {
        let x: Vec<f64> = (0..config.lx)
            .map(|_| config.input_std * data_rng.standard_normal())
            .collect();
        let z: Vec<f64> = (0..config.lx)
            .map(|_| config.input_std * noise_rng.standard_normal())
            .collect();
        let y = teacher_label(&state, &x)?;
        let upd = method_update(config.method, &state, &x, &y, &z, &params)?;
        upd.apply(&mut state)?;

        let due = t % config.record_every == 0 || t == config.steps;
        if due {
            match record(&state) {
                Some(r) if state.is_finite() => traj.records.push(r),
                _ => {
                    traj.divergence = Some(t);
                    break;
                }
            }
        } else if !upd_is_finite(&upd) {
            traj.divergence = Some(t);
            break;
        }
    }
    Ok(traj)
}

fn upd_is_finite(upd: &WeightUpdate) -> bool {
    upd.w2.iter().all(|t| t.u.is_finite() && t.v.is_finite())
}

/// Simulates a trajectory; divergence is an error carrying the step index.
pub fn run_trajectory(config: &DynConfig) -> Result<Trajectory> {
    let traj = trace_trajectory(config)?;
    match traj.divergence {
        Some(step) => Err(Error::Divergence { step }),
        None => Ok(traj),
    }
}
