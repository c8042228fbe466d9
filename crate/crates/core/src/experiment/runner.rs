//! Grid expansion, execution and on-disk reporting.
//!
//! Every (cell, replica) pair writes one CSV. Seeds depend on the replica
//! index only, so all cells of a replica share initial weights, inputs and
//! data (common random numbers) and removing a cell leaves the others
//! untouched.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{Example, PerturbationSpec};
use crate::ctr::{self, CtrMethod, CtrModel, EpochRecord, ModelShape, TrainConfig};
use crate::error::{Error, Result};
use crate::experiment::spec::{CtrGrid, ExperimentSpec, LindynGrid, Mode};
use crate::lindyn::{self, DynConfig, Method, Record};
use crate::losses;
use crate::numerics::{derive_seed, Rng};
use crate::par;

pub const SUMMARY_FILE: &str = "summary.json";
pub const SPEC_FILE: &str = "spec.json";

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    /// Non-finite weights; `at` is the step (lindyn) or epoch (ctr).
    Diverged {
        at: u64,
    },
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub replica: usize,
    pub seed: u64,
    /// CSV file name relative to the report directory.
    pub file: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_eval_ne: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub id: String,
    pub label: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
    pub runs: Vec<RunEntry>,
    /// Number of completed runs entering the means below.
    pub seed_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_final_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_final_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_eval_ne: Option<f64>,
    /// Relative NE gain over the baseline cell; positive is better.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_ne_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub base_seed: u64,
    pub replicas: usize,
    pub cells: Vec<CellReport>,
}

impl RunReport {
    pub fn has_failures(&self) -> bool {
        self.runs().any(|r| r.status == RunStatus::Failed)
    }

    pub fn runs(&self) -> impl Iterator<Item = &RunEntry> {
        self.cells.iter().flat_map(|c| c.runs.iter())
    }

    pub fn cell(&self, id: &str) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.id == id)
    }

    pub fn load(dir: &Path) -> Result<RunReport> {
        let text = fs::read_to_string(dir.join(SUMMARY_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Plain-text table of mean held-out NE and relative gain per cell.
    pub fn ne_table(&self) -> String {
        let mut out = format!("{:<40} {:>8} {:>12} {:>10}\n", "model", "seeds", "NE", "gain");
        for c in &self.cells {
            let ne = c.mean_eval_ne.map_or("-".to_owned(), |v| format!("{v:.6}"));
            let gain = match (c.method.as_str(), c.relative_ne_gain) {
                ("baseline", _) => "0 %".to_owned(),
                (_, Some(g)) => format!("{:.3} %", 100.0 * g),
                (_, None) => "-".to_owned(),
            };
            out.push_str(&format!(
                "{:<40} {:>8} {:>12} {:>10}\n",
                c.label, c.seed_count, ne, gain
            ));
        }
        out
    }
}

fn num_tag(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LindynCell {
    pub method: Method,
    pub omega: Option<f64>,
    pub lambda: Option<f64>,
    pub eta: f64,
    pub sigma: f64,
}

impl LindynCell {
    pub fn id(&self) -> String {
        let mut id = self.method.name().to_owned();
        if let (Some(w), Some(l)) = (self.omega, self.lambda) {
            id.push_str(&format!("_omega{}_lambda{}", num_tag(w), num_tag(l)));
        }
        id.push_str(&format!("_eta{}_sigma{}", num_tag(self.eta), num_tag(self.sigma)));
        id
    }

    pub fn label(&self, grid: &LindynGrid) -> String {
        let mut label = self.method.label().to_owned();
        if let (Some(w), Some(l)) = (self.omega, self.lambda) {
            label.push_str(&format!(" ω={w} λ={l}"));
        }
        if grid.eta.len() > 1 {
            label.push_str(&format!(" η={}", self.eta));
        }
        if grid.sigma.len() > 1 {
            label.push_str(&format!(" σ={}", self.sigma));
        }
        label
    }

    pub fn config(&self, grid: &LindynGrid, seed: u64) -> DynConfig {
        DynConfig {
            lx: grid.lx,
            lh: grid.lh(),
            ly: grid.ly,
            eta: self.eta,
            lambda: self.lambda.unwrap_or(0.0),
            omega: self.omega.unwrap_or(0.0),
            sigma: self.sigma,
            input_std: grid.input_std(),
            steps: grid.steps(),
            method: self.method,
            seed,
            record_every: grid.record_every,
        }
    }
}

/// Expands a grid into cells. SGD ignores ω and λ, so it gets one cell per
/// (η, σ).
pub fn lindyn_cells(grid: &LindynGrid) -> Vec<LindynCell> {
    let mut cells = Vec::new();
    for &method in &grid.methods {
        let reg: Vec<(Option<f64>, Option<f64>)> = if method == Method::Sgd {
            vec![(None, None)]
        } else {
            grid.omega
                .iter()
                .flat_map(|&w| grid.lambda.iter().map(move |&l| (Some(w), Some(l))))
                .collect()
        };
        for (omega, lambda) in reg {
            for &eta in &grid.eta {
                for &sigma in &grid.sigma {
                    cells.push(LindynCell {
                        method,
                        omega,
                        lambda,
                        eta,
                        sigma,
                    });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtrCell {
    pub method: CtrMethod,
    pub lambda: Option<f64>,
    pub perturbation: Option<PerturbationSpec>,
}

impl CtrCell {
    pub fn id(&self) -> String {
        let mut id = self.method.name().to_owned();
        if let Some(l) = self.lambda {
            id.push_str(&format!("_lambda{}", num_tag(l)));
        }
        if let Some(p) = &self.perturbation {
            id.push_str(&format!(
                "_scale{}_std{}_mean{}_drop{}",
                num_tag(p.noise_scale),
                num_tag(p.noise_std),
                num_tag(p.noise_mean),
                num_tag(p.dropout_rate)
            ));
        }
        id
    }

    pub fn label(&self, grid: &CtrGrid) -> String {
        let mut label = match self.method {
            CtrMethod::Baseline => "Baseline".to_owned(),
            CtrMethod::Scr => "SCR".to_owned(),
            CtrMethod::Lspr => "LSPR".to_owned(),
        };
        if let Some(l) = self.lambda {
            label.push_str(&format!(" λ={l}"));
        }
        if let (Some(p), true) = (&self.perturbation, grid.perturbation.len() > 1) {
            label.push_str(&format!(" ω={} p={}", p.noise_scale, p.dropout_rate));
        }
        label
    }

    pub fn train_config(&self, grid: &CtrGrid, seed: u64) -> TrainConfig {
        TrainConfig {
            method: self.method,
            lambda: self.lambda.unwrap_or(0.0),
            perturbation: self.perturbation.unwrap_or_else(PerturbationSpec::zero),
            scr_target: grid.scr_target,
            scr_perturb_fraction: grid.scr_perturb_fraction,
            batch_size: grid.batch_size,
            epochs: grid.epochs,
            learning_rate: grid.learning_rate,
            seed,
        }
    }
}

/// The baseline runs once; regularized methods run per (λ, perturbation).
pub fn ctr_cells(grid: &CtrGrid) -> Vec<CtrCell> {
    let mut cells = Vec::new();
    for &method in &grid.methods {
        if method == CtrMethod::Baseline {
            cells.push(CtrCell {
                method,
                lambda: None,
                perturbation: None,
            });
            continue;
        }
        for &lambda in &grid.lambda {
            for p in &grid.perturbation {
                cells.push(CtrCell {
                    method,
                    lambda: Some(lambda),
                    perturbation: Some(*p),
                });
            }
        }
    }
    cells
}

/// Seed of replica `r`, shared by every cell.
pub fn replica_seed(base_seed: u64, replica: usize) -> u64 {
    derive_seed(base_seed, &[replica as u64])
}

fn run_file(id: &str, replica: usize) -> String {
    format!("{id}_r{replica}.csv")
}

pub fn write_lindyn_csv<W: Write>(mut out: W, records: &[Record]) -> Result<()> {
    writeln!(out, "step,epsilon,gamma")?;
    for r in records {
        writeln!(out, "{},{},{}", r.step, fmt_f64(r.epsilon), fmt_f64(r.gamma))?;
    }
    Ok(())
}

pub fn write_ctr_csv<W: Write>(mut out: W, history: &[EpochRecord]) -> Result<()> {
    writeln!(out, "epoch,train_ne,eval_ne")?;
    for r in history {
        writeln!(out, "{},{},{}", r.epoch, fmt_f64(r.train_ne), fmt_f64(r.eval_ne))?;
    }
    Ok(())
}

/// Reads a trajectory CSV written by [`write_lindyn_csv`].
pub fn read_lindyn_csv(path: &Path) -> Result<Vec<Record>> {
    let file = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::contract(format!("{}: malformed line {}", path.display(), n + 1));
        let mut parts = line.split(',');
        let mut next = || parts.next().ok_or_else(bad);
        let step = next()?.parse().map_err(|_| bad())?;
        let epsilon = next()?.parse().map_err(|_| bad())?;
        let gamma = next()?.parse().map_err(|_| bad())?;
        records.push(Record { step, epsilon, gamma });
    }
    Ok(records)
}

fn write_file(dir: &Path, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    fs::write(dir.join(name), buf)?;
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(cell: &mut CellReport) {
    let done = || cell.runs.iter().filter(|r| r.status == RunStatus::Completed);
    cell.seed_count = done().count();
    cell.mean_final_epsilon = mean(done().filter_map(|r| r.final_epsilon));
    cell.mean_final_gamma = mean(done().filter_map(|r| r.final_gamma));
    cell.mean_eval_ne = mean(done().filter_map(|r| r.final_eval_ne));
}

fn empty_cell(id: String, label: String, method: &str) -> CellReport {
    CellReport {
        id,
        label,
        method: method.to_owned(),
        omega: None,
        lambda: None,
        eta: None,
        sigma: None,
        perturbation: None,
        runs: Vec::new(),
        seed_count: 0,
        mean_final_epsilon: None,
        mean_final_gamma: None,
        mean_eval_ne: None,
        relative_ne_gain: None,
    }
}

fn run_lindyn(spec: &ExperimentSpec, grid: &LindynGrid, out_dir: &Path) -> Result<Vec<CellReport>> {
    let cells = lindyn_cells(grid);
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.replicas).map(move |r| (c, r)))
        .collect();
    let results = par::map(&jobs, |&(c, r)| {
        let cell = &cells[c];
        let seed = replica_seed(spec.base_seed, r);
        let file = run_file(&cell.id(), r);
        let mut entry = RunEntry {
            replica: r,
            seed,
            file: file.clone(),
            status: RunStatus::Completed,
            error: None,
            records: 0,
            final_epsilon: None,
            final_gamma: None,
            final_eval_ne: None,
        };
        match lindyn::trace_trajectory(&cell.config(grid, seed)) {
            Ok(traj) => {
                write_file(out_dir, &file, |b| write_lindyn_csv(b, &traj.records))?;
                entry.records = traj.records.len();
                if let Some(step) = traj.divergence {
                    entry.status = RunStatus::Diverged { at: step };
                } else if let Some(last) = traj.last() {
                    entry.final_epsilon = Some(last.epsilon);
                    entry.final_gamma = Some(last.gamma);
                }
            }
            Err(e) => {
                entry.status = RunStatus::Failed;
                entry.error = Some(e.to_string());
                write_file(out_dir, &file, |b| write_lindyn_csv(b, &[]))?;
            }
        }
        Ok::<_, Error>(entry)
    });

    let mut reports: Vec<CellReport> = cells
        .iter()
        .map(|cell| {
            let mut rep = empty_cell(cell.id(), cell.label(grid), cell.method.name());
            rep.omega = cell.omega;
            rep.lambda = cell.lambda;
            rep.eta = Some(cell.eta);
            rep.sigma = Some(cell.sigma);
            rep
        })
        .collect();
    for (&(c, _), entry) in jobs.iter().zip(results) {
        reports[c].runs.push(entry?);
    }
    reports.iter_mut().for_each(summarize);
    Ok(reports)
}

struct Replica {
    seed: u64,
    examples: Vec<Example>,
    split: usize,
}

impl Replica {
    fn train(&self) -> &[Example] {
        &self.examples[..self.split]
    }

    fn eval(&self) -> &[Example] {
        &self.examples[self.split..]
    }
}

fn run_ctr(spec: &ExperimentSpec, grid: &CtrGrid, out_dir: &Path) -> Result<Vec<CellReport>> {
    let cells = ctr_cells(grid);
    let replicas: Vec<Replica> = (0..spec.replicas)
        .map(|r| {
            let seed = replica_seed(spec.base_seed, r);
            let cfg = ctr::DatasetConfig {
                seed: derive_seed(seed, &[0]),
                ..grid.dataset.clone()
            };
            let examples = ctr::generate_dataset(&cfg)?;
            let (train, _) = ctr::split_holdout(&examples, grid.eval_fraction)?;
            let split = train.len();
            Ok(Replica { seed, examples, split })
        })
        .collect::<Result<_>>()?;
    let shape = ModelShape::for_dataset(&grid.dataset, grid.slot_dim, grid.hidden_dim);

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.replicas).map(move |r| (c, r)))
        .collect();
    let results = par::map(&jobs, |&(c, r)| {
        let cell = &cells[c];
        let rep = &replicas[r];
        let file = run_file(&cell.id(), r);
        let mut entry = RunEntry {
            replica: r,
            seed: rep.seed,
            file: file.clone(),
            status: RunStatus::Completed,
            error: None,
            records: 0,
            final_epsilon: None,
            final_gamma: None,
            final_eval_ne: None,
        };
        let model = CtrModel::init(shape, &mut Rng::new(derive_seed(rep.seed, &[2])));
        let cfg = cell.train_config(grid, derive_seed(rep.seed, &[1]));
        let history = match ctr::train(model, rep.train(), rep.eval(), &cfg) {
            Ok(outcome) => {
                entry.final_eval_ne = outcome.history.last().map(|h| h.eval_ne);
                outcome.history
            }
            Err(Error::TrainingDivergence { epoch }) => {
                entry.status = RunStatus::Diverged { at: epoch as u64 };
                Vec::new()
            }
            Err(e) => {
                entry.status = RunStatus::Failed;
                entry.error = Some(e.to_string());
                Vec::new()
            }
        };
        entry.records = history.len();
        write_file(out_dir, &file, |b| write_ctr_csv(b, &history))?;
        Ok::<_, Error>(entry)
    });

    let mut reports: Vec<CellReport> = cells
        .iter()
        .map(|cell| {
            let mut rep = empty_cell(cell.id(), cell.label(grid), cell.method.name());
            rep.lambda = cell.lambda;
            rep.perturbation = cell.perturbation;
            rep
        })
        .collect();
    for (&(c, _), entry) in jobs.iter().zip(results) {
        reports[c].runs.push(entry?);
    }
    reports.iter_mut().for_each(summarize);

    let baseline = reports
        .iter()
        .find(|c| c.method == CtrMethod::Baseline.name())
        .and_then(|c| c.mean_eval_ne);
    if let Some(base) = baseline {
        for rep in &mut reports {
            rep.relative_ne_gain = match rep.mean_eval_ne {
                Some(ne) => Some(losses::relative_ne_gain(base, ne)?),
                None => None,
            };
        }
    }
    Ok(reports)
}

/// Runs every (cell, replica) of a normalized spec, writing one CSV per run
/// plus `summary.json` and the resolved `spec.json` into `out_dir`.
///
/// Divergent runs are recorded in the report; only I/O and contract errors
/// abort the sweep.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path, jobs: usize) -> Result<RunReport> {
    let spec = spec.clone().normalize()?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(SPEC_FILE), spec.to_json()?)?;
    let cells = par::with_jobs(jobs, || match spec.mode {
        Mode::Lindyn => run_lindyn(&spec, spec.lindyn_grid().expect("normalized"), out_dir),
        Mode::Ctr => run_ctr(&spec, spec.ctr_grid().expect("normalized"), out_dir),
    })?;
    let report = RunReport {
        mode: spec.mode,
        base_seed: spec.base_seed,
        replicas: spec.replicas,
        cells,
    };
    fs::write(out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_nine_cells() {
        let cells = lindyn_cells(&LindynGrid::default());
        assert_eq!(cells.len(), 1 + 4 + 4);
        let ids: std::collections::HashSet<_> = cells.iter().map(|c| c.id()).collect();
        assert_eq!(ids.len(), cells.len());
    }

    #[test]
    fn ctr_grid_cells() {
        let grid = CtrGrid::default();
        let cells = ctr_cells(&grid);
        assert_eq!(cells.len(), 1 + 2 * grid.lambda.len());
        assert_eq!(cells[0].label(&grid), "Baseline");
        assert_eq!(cells[0].train_config(&grid, 0).lambda, 0.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let recs = vec![
            Record {
                step: 0,
                epsilon: 1.0 / 3.0,
                gamma: -0.1,
            },
            Record {
                step: 100,
                epsilon: 1.234e-300,
                gamma: 0.999_999_999_999_999_9,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_file(dir.path(), "t.csv", |b| write_lindyn_csv(b, &recs)).unwrap();
        assert_eq!(read_lindyn_csv(&path).unwrap(), recs);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,epsilon,gamma\n0,3.3333333333333331e-1,"));
    }

    #[test]
    fn ne_table_marks_baseline() {
        let mut base = empty_cell("baseline".into(), "Baseline".into(), "baseline");
        base.mean_eval_ne = Some(0.8);
        let mut lspr = empty_cell("lspr".into(), "LSPR λ=0.1".into(), "lspr");
        lspr.mean_eval_ne = Some(0.79);
        lspr.relative_ne_gain = Some(0.0125);
        let report = RunReport {
            mode: Mode::Ctr,
            base_seed: 0,
            replicas: 1,
            cells: vec![base, lspr],
        };
        let table = report.ne_table();
        assert!(table.lines().nth(1).unwrap().ends_with("0 %"));
        assert!(table.lines().nth(2).unwrap().ends_with("1.250 %"));
    }
}
