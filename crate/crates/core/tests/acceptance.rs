//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so each criterion reports its
//! measured values even when an earlier one fails. Exits non-zero if any
//! criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::{bce_one, fd_gap, tiny_dataset, tiny_model};
use perturb_lab::augment::Example;
use perturb_lab::ctr::{self, batch_objective, plan_batch, CtrMethod, CtrModel, ScrTarget, TrainConfig};
use perturb_lab::experiment::{self, parse_spec, CellReport, RunReport, RunStatus};
use perturb_lab::lindyn::{self, DynConfig, DynState, Method, RegParams};
use perturb_lab::losses::{self, PredictionBatch};
use perturb_lab::numerics::{matmul, Matrix, Rng};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_spec(text: &str) -> RunReport {
    let spec = parse_spec(text).expect("valid spec");
    let dir = tempfile::tempdir().unwrap();
    experiment::run_experiment(&spec, dir.path(), 0).expect("experiment runs")
}

fn cell<'a>(report: &'a RunReport, id: &str) -> &'a CellReport {
    report.cell(id).unwrap_or_else(|| panic!("missing cell {id}"))
}

fn all_completed(report: &RunReport) -> bool {
    report.runs().all(|r| r.status == RunStatus::Completed)
}

const DESK_SEEDS: usize = 5;
const SMALL_NOISE: &str = "omega0.1_lambda0.001_eta1.4_sigma1";
const LARGE_NOISE: &str = "omega0.9_lambda1_eta1.4_sigma1";

fn desk_spec(methods: &str, omega: f64, lambda: f64) -> String {
    format!(
        r#"{{"mode":"lindyn","base_seed":2024,"replicas":{DESK_SEEDS},
            "lindyn":{{"methods":[{methods}],"omega":[{omega}],"lambda":[{lambda}],"eta":[1.4],
                       "lx":100,"lh":1000,"ly":10,"steps":20000}}}}"#
    )
}

fn criterion_1(small: &RunReport) -> Outcome {
    let scr = cell(small, &format!("scr_{SMALL_NOISE}"));
    let lspr = cell(small, &format!("lspr_{SMALL_NOISE}"));
    let (ge, gg) = (scr.mean_final_epsilon.unwrap(), scr.mean_final_gamma.unwrap());
    let (le, lg) = (lspr.mean_final_epsilon.unwrap(), lspr.mean_final_gamma.unwrap());
    check(
        all_completed(small) && lspr.seed_count >= DESK_SEEDS && lg >= gg && le <= ge,
        format!(
            "seeds={} gamma LSPR {lg:.15} vs SCR {gg:.15}; epsilon LSPR {le:.6e} vs SCR {ge:.6e}",
            lspr.seed_count
        ),
    )
}

fn criterion_2(small: &RunReport, large: &RunReport) -> Outcome {
    let mut ok = all_completed(large);
    let mut parts = Vec::new();
    for m in ["scr", "lspr"] {
        let s = cell(small, &format!("{m}_{SMALL_NOISE}"));
        let l = cell(large, &format!("{m}_{LARGE_NOISE}"));
        let (se, sg) = (s.mean_final_epsilon.unwrap(), s.mean_final_gamma.unwrap());
        let (le, lg) = (l.mean_final_epsilon.unwrap(), l.mean_final_gamma.unwrap());
        ok &= l.seed_count >= DESK_SEEDS && le > se && lg < sg;
        parts.push(format!("{m}: epsilon {se:.3e} -> {le:.3e}, gamma {sg:.6} -> {lg:.6}"));
    }
    check(ok, parts.join("; "))
}

fn random_state(lx: usize, lh: usize, ly: usize, seed: u64) -> DynState {
    let mut rng = Rng::new(seed);
    DynState::new(
        Matrix::random_normal(ly, lx, 1.0, &mut rng),
        Matrix::random_normal(lh, lx, 0.5, &mut rng),
        Matrix::random_normal(ly, lh, 0.5, &mut rng),
    )
    .unwrap()
}

fn randn(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.standard_normal()).collect()
}

fn half_sq(w1: &Matrix, w2: &Matrix, input: &[f64], target: &[f64]) -> f64 {
    let out = w2.matvec(&w1.matvec(input).unwrap()).unwrap();
    0.5 * out.iter().zip(target).map(|(o, t)| (o - t).powi(2)).sum::<f64>()
}

/// Largest relative gap between `−δ/η` and central differences of `loss`.
fn lindyn_fd_gap(state: &DynState, delta: (Matrix, Matrix), eta: f64, loss: impl Fn(&Matrix, &Matrix) -> f64) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let (d1, d2) = delta;
    for (which, d) in [(0, &d1), (1, &d2)] {
        let base = if which == 0 { &state.w1 } else { &state.w2 };
        for i in 0..base.rows() {
            for j in 0..base.cols() {
                let eval = |dv: f64| {
                    let mut w = base.clone();
                    w.set(i, j, w.get(i, j) + dv);
                    if which == 0 {
                        loss(&w, &state.w2)
                    } else {
                        loss(&state.w1, &w)
                    }
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = -d.get(i, j) / eta;
                worst = worst.max((fd - analytic).abs() / fd.abs().max(1e-3));
            }
        }
    }
    worst
}

fn criterion_3() -> Outcome {
    let (lx, lh, ly) = (4, 5, 2);
    let state = random_state(lx, lh, ly, 31);
    assert!(lx * lh + lh * ly <= 100);
    let mut rng = Rng::new(32);
    let (x, z) = (randn(lx, &mut rng), randn(lx, &mut rng));
    let y = lindyn::teacher_label(&state, &x).unwrap();
    let p = RegParams {
        eta: 0.7,
        lambda: 0.6,
        omega: 0.3,
        sigma: 1.5,
    };
    let xp: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + p.omega * p.sigma * b).collect();
    let clean_out = state.student_output(&x).unwrap();

    let sgd = lindyn::sgd_update(&state, &x, &y, p.eta)
        .unwrap()
        .dense(&state)
        .unwrap();
    let g_sgd = lindyn_fd_gap(&state, sgd, p.eta, |w1, w2| half_sq(w1, w2, &x, &y));
    let lspr = lindyn::lspr_update(&state, &x, &y, &z, &p)
        .unwrap()
        .dense(&state)
        .unwrap();
    let g_lspr = lindyn_fd_gap(&state, lspr, p.eta, |w1, w2| {
        half_sq(w1, w2, &x, &y) + p.lambda * half_sq(w1, w2, &xp, &y)
    });
    let scr = lindyn::scr_update(&state, &x, &y, &z, &p)
        .unwrap()
        .dense(&state)
        .unwrap();
    let g_scr = lindyn_fd_gap(&state, scr, p.eta, |w1, w2| {
        half_sq(w1, w2, &x, &y) + p.lambda * half_sq(w1, w2, &xp, &clean_out)
    });

    let (data_cfg, data) = tiny_dataset(12, 2);
    let batch: Vec<&Example> = data.iter().collect();
    let mut g_ctr = 0.0f64;
    let mut weights = 0;
    for method in [CtrMethod::Baseline, CtrMethod::Lspr, CtrMethod::Scr] {
        let c = TrainConfig {
            method,
            lambda: 0.6,
            scr_target: ScrTarget::Both,
            scr_perturb_fraction: 0.5,
            ..TrainConfig::default()
        };
        let mut model = tiny_model(&data_cfg, 3);
        weights = model.params().len();
        let plan = plan_batch(&batch, &c, &mut Rng::new(9)).unwrap();
        let out = batch_objective(&model, &plan, &c).unwrap();
        let frozen: Vec<_> = batch.iter().map(|ex| model.forward(ex).unwrap()).collect();
        let (n, m) = (batch.len() as f64, plan.perturbed.len() as f64);
        let loss = |md: &CtrModel| {
            let clean = batch
                .iter()
                .map(|ex| bce_one(md.forward(ex).unwrap().prediction, ex.label))
                .sum::<f64>()
                / n;
            let reg: f64 = match method {
                CtrMethod::Baseline => 0.0,
                CtrMethod::Lspr => {
                    plan.perturbed
                        .iter()
                        .map(|(_, ex)| bce_one(md.forward(ex).unwrap().prediction, ex.label))
                        .sum::<f64>()
                        / m
                }
                CtrMethod::Scr => plan
                    .perturbed
                    .iter()
                    .map(|(i, ex)| {
                        let p = md.forward(ex).unwrap();
                        let t = &frozen[*i];
                        (p.logit - t.logit).powi(2) / m
                            + p.hidden
                                .iter()
                                .zip(t.hidden.iter())
                                .map(|(a, b)| (a - b).powi(2))
                                .sum::<f64>()
                                / (m * p.hidden.len() as f64)
                    })
                    .sum(),
            };
            clean + 0.6 * reg
        };
        g_ctr = g_ctr.max(fd_gap(&mut model, &out.grad, 1e-5, 1e-3, loss));
    }
    check(
        g_sgd <= 1e-5 && g_lspr <= 1e-5 && g_scr <= 1e-5 && g_ctr <= 1e-4 && weights <= 100,
        format!(
            "lindyn ({} weights) sgd {g_sgd:.2e} lspr {g_lspr:.2e} scr {g_scr:.2e}; ctr ({weights} weights) {g_ctr:.2e}",
            lx * lh + lh * ly
        ),
    )
}

fn criterion_4() -> Outcome {
    let state = random_state(6, 7, 3, 41);
    let mut rng = Rng::new(42);
    let (x, z) = (randn(6, &mut rng), randn(6, &mut rng));
    let y = randn(3, &mut rng);
    let eta = 0.3;
    let sgd = lindyn::sgd_step(&state, &x, &y, eta).unwrap();
    let p = |lambda: f64, omega: f64| RegParams {
        eta,
        lambda,
        omega,
        sigma: 1.0,
    };

    let mut fails = Vec::new();
    if lindyn::lspr_step(&state, &x, &y, &z, &p(0.0, 0.4)).unwrap() != sgd {
        fails.push("lspr(λ=0)");
    }
    if lindyn::scr_step(&state, &x, &y, &z, &p(0.0, 0.4)).unwrap() != sgd {
        fails.push("scr(λ=0)");
    }
    if lindyn::scr_step(&state, &x, &y, &z, &p(0.8, 0.0)).unwrap() != sgd {
        fails.push("scr(ω=0)");
    }
    let (s1, s2) = lindyn::sgd_update(&state, &x, &y, eta).unwrap().dense(&state).unwrap();
    let (l1, l2) = lindyn::lspr_update(&state, &x, &y, &z, &p(0.8, 0.0))
        .unwrap()
        .dense(&state)
        .unwrap();
    let gap = l1
        .sub(&s1.scaled(1.8))
        .unwrap()
        .as_slice()
        .iter()
        .chain(l2.sub(&s2.scaled(1.8)).unwrap().as_slice())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    if gap > 1e-12 {
        fails.push("lspr(ω=0) scaling");
    }

    let data_cfg = ctr::DatasetConfig {
        n_examples: 500,
        seed: 43,
        ..ctr::DatasetConfig::default()
    };
    let data = ctr::generate_dataset(&data_cfg).unwrap();
    let (train, eval) = ctr::split_holdout(&data, 0.2).unwrap();
    let model = CtrModel::init(ctr::ModelShape::for_dataset(&data_cfg, 4, 16), &mut Rng::new(44));
    let tc = |method| TrainConfig {
        method,
        lambda: 0.0,
        epochs: 3,
        seed: 45,
        ..TrainConfig::default()
    };
    let base = ctr::train_baseline(model.clone(), train, eval, &tc(CtrMethod::Baseline)).unwrap();
    let scr = ctr::train_scr(model.clone(), train, eval, &tc(CtrMethod::Scr)).unwrap();
    let lspr = ctr::train_lspr(model, train, eval, &tc(CtrMethod::Lspr)).unwrap();
    for (name, other) in [("train_scr(λ=0)", &scr), ("train_lspr(λ=0)", &lspr)] {
        if other.model.params() != base.model.params() || other.history != base.history {
            fails.push(name);
        }
    }
    check(
        fails.is_empty(),
        if fails.is_empty() {
            format!("all five laws hold; lspr(ω=0) max gap {gap:.1e}")
        } else {
            format!("violated: {}", fails.join(", "))
        },
    )
}

fn criterion_5() -> Outcome {
    let mut rng = Rng::new(51);
    let w_star = Matrix::random_normal(4, 6, 1.0, &mut rng);
    let eye = Matrix::identity(4);
    let state = |w1: Matrix, w2: Matrix| DynState::new(w_star.clone(), w1, w2).unwrap();

    let eps_exact = lindyn::epsilon(&state(w_star.clone(), eye.clone()));
    let c = 0.37;
    let shifted = Matrix::from_vec(4, 6, w_star.as_slice().iter().map(|v| v + c).collect()).unwrap();
    let eps_const = lindyn::epsilon(&state(shifted, eye.clone()));
    let g_double = lindyn::gamma(&state(w_star.clone(), eye.scaled(2.0))).unwrap();
    let g_neg = lindyn::gamma(&state(w_star.clone(), eye.scaled(-1.0))).unwrap();
    assert_eq!(matmul(&eye, &w_star).unwrap(), w_star);

    let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 4 == 0)).collect();
    let rate = 10.0 / 40.0;
    let ne = losses::normalized_entropy(&PredictionBatch::new(labels.clone(), vec![rate; 40]).unwrap()).unwrap();

    let preds: Vec<f64> = (0..40).map(|i| 0.05 + 0.9 * (i as f64 / 39.0)).collect();
    let clean = PredictionBatch::new(labels, preds).unwrap();
    let lspr = losses::lspr_loss(&clean, &clean, 0.3).unwrap();
    let lspr_gap = (lspr - 1.3 * losses::bce(&clean)).abs();

    let ok = eps_exact == 0.0
        && (eps_const - c * c).abs() <= 1e-12
        && (g_double - 1.0).abs() <= 1e-12
        && (g_neg + 1.0).abs() <= 1e-12
        && (ne - 1.0).abs() <= 1e-12
        && lspr_gap <= 1e-12;
    check(
        ok,
        format!(
            "eps(exact)={eps_exact:e} eps(c)-c²={:.1e} gamma(2W*)={g_double} gamma(-W*)={g_neg} NE(base rate)={ne} lspr gap {lspr_gap:.1e}",
            eps_const - c * c
        ),
    )
}

fn criterion_6() -> Outcome {
    let half = losses::bce(&PredictionBatch::new(vec![1], vec![0.5]).unwrap());
    let pair = losses::bce(&PredictionBatch::new(vec![1, 0], vec![0.9, 0.1]).unwrap());
    check(
        (half - std::f64::consts::LN_2).abs() <= 1e-12 && (pair - 0.105361).abs() <= 1e-6,
        format!("bce(1, 0.5)={half:.15} bce([1,0],[0.9,0.1])={pair:.9}"),
    )
}

fn criterion_7() -> Outcome {
    let report = run_spec(
        r#"{"mode":"ctr","base_seed":7,"replicas":10,
            "ctr":{"methods":["baseline","lspr"],"lambda":[0.5],"dataset":{"label_noise":0.1}}}"#,
    );
    let base = report.cells.iter().find(|c| c.method == "baseline").unwrap();
    let lspr = report.cells.iter().find(|c| c.method == "lspr").unwrap();
    let (b, l) = (base.mean_eval_ne.unwrap(), lspr.mean_eval_ne.unwrap());
    let table = report.ne_table();
    let base_row = table.lines().find(|r| r.starts_with("Baseline")).unwrap_or("");
    let lspr_row = table.lines().find(|r| r.starts_with("LSPR")).unwrap_or("");
    let wins = base
        .runs
        .iter()
        .zip(&lspr.runs)
        .filter(|(b, l)| l.final_eval_ne.unwrap() <= b.final_eval_ne.unwrap())
        .count();
    check(
        all_completed(&report)
            && base.seed_count >= 10
            && l <= b
            && base_row.ends_with(" 0 %")
            && lspr_row.ends_with(" %"),
        format!(
            "seeds={} NE baseline {b:.6} LSPR {l:.6} (gain {:.3} %, LSPR better on {wins}/10 seeds); table row `{}`",
            base.seed_count,
            100.0 * lspr.relative_ne_gain.unwrap(),
            base_row.split_whitespace().collect::<Vec<_>>().join(" ")
        ),
    )
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".csv"))
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect()
}

fn criterion_8() -> Outcome {
    let specs = [
        r#"{"mode":"lindyn","base_seed":81,"replicas":2,"lindyn":{"lh":200,"steps":3000}}"#,
        r#"{"mode":"ctr","base_seed":82,"replicas":2,"ctr":{"dataset":{"n_examples":1000},"epochs":3}}"#,
    ];
    let mut files = 0;
    let mut ok = true;
    for text in specs {
        let spec = parse_spec(text).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        experiment::run_experiment(&spec, a.path(), 0).unwrap();
        experiment::run_experiment(&spec, b.path(), 1).unwrap();
        let (fa, fb) = (csv_bytes(a.path()), csv_bytes(b.path()));
        files += fa.len();
        ok &= !fa.is_empty() && fa == fb;
    }
    check(ok, format!("{files} CSVs compared byte for byte across reruns"))
}

fn criterion_9() -> Outcome {
    let spec = parse_spec(r#"{"mode":"lindyn"}"#).unwrap();
    let g = spec.lindyn.as_ref().unwrap();
    let defaults_ok = g.omega == [0.1, 0.9]
        && g.lambda == [0.001, 1.0]
        && g.eta == [1.4]
        && (g.lx, g.lh(), g.ly, g.steps()) == (100, 10_000, 10, 100_000);
    let cells = experiment::lindyn_cells(g);

    // Project the full sweep from a timed segment of the costliest rule,
    // net of the one-off initialization.
    let probe_steps = 400;
    let probe = |steps| DynConfig {
        method: Method::Lspr,
        omega: 0.9,
        lambda: 1.0,
        steps,
        input_std: g.input_std(),
        ..DynConfig::default()
    };
    let start = Instant::now();
    lindyn::trace_trajectory(&probe(0)).unwrap();
    let init = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let traj = lindyn::trace_trajectory(&probe(probe_steps)).unwrap();
    let per_step = (start.elapsed().as_secs_f64() - init).max(0.0) / probe_steps as f64;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()) as f64;
    let jobs = cells.len() as f64;
    let minutes = per_step * g.steps() as f64 * (jobs / workers).ceil() / 60.0;
    check(
        defaults_ok && traj.divergence.is_none() && minutes <= 60.0,
        format!(
            "defaults exact={defaults_ok}; {} cells, {:.2} ms/step at full width, projected {minutes:.1} min on {workers} worker(s)",
            cells.len(),
            1e3 * per_step
        ),
    )
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} criterion {id} {name} [{secs:.1}s]: {detail}");
    outcome.is_ok()
}

fn main() {
    panic::set_hook(Box::new(|_| {}));
    let mut ok = true;
    ok &= run(5, "metric identities", criterion_5);
    ok &= run(6, "loss spot values", criterion_6);
    ok &= run(3, "gradient oracles", criterion_3);
    ok &= run(4, "reduction laws", criterion_4);
    ok &= run(8, "determinism", criterion_8);
    ok &= run(9, "full-scale defaults", criterion_9);
    ok &= run(7, "ctr NE direction", criterion_7);

    let small = panic::catch_unwind(|| run_spec(&desk_spec(r#""sgd","scr","lspr""#, 0.1, 0.001)));
    let large = panic::catch_unwind(|| run_spec(&desk_spec(r#""scr","lspr""#, 0.9, 1.0)));
    ok &= run(1, "LSPR vs SCR alignment", || {
        criterion_1(small.as_ref().map_err(|_| "desk sweep failed")?)
    });
    ok &= run(2, "large-noise degradation", || {
        let s = small.as_ref().map_err(|_| "desk sweep failed")?;
        let l = large.as_ref().map_err(|_| "large-noise sweep failed")?;
        criterion_2(s, l)
    });
    if !ok {
        std::process::exit(1);
    }
}
