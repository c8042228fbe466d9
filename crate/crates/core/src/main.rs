use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use perturb_lab::experiment::{self, ExperimentSpec, Mode, Panel, RunReport, RunStatus, DESK_LH, DESK_STEPS};
use perturb_lab::lindyn;
use perturb_lab::Result;

/// Output directory override, consulted when `--out` is absent and before
/// the spec's `output_dir`.
const OUT_ENV: &str = "PERTURB_LAB_OUT";

#[derive(Parser)]
#[command(name = "perturb-lab", version, about = "Perturbation-regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the linear teacher/student dynamics.
    Lindyn {
        #[arg(long)]
        spec: PathBuf,
        /// Hidden width (overrides the spec).
        #[arg(long)]
        lh: Option<usize>,
        /// Number of online steps (overrides the spec).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use full-scale width and step count where the spec leaves them unset.
        #[arg(long)]
        full: bool,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Sweep the CTR harness and print the NE table.
    Ctr {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Render a trajectory panel from a lindyn report directory.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_parser = ["gamma", "epsilon"])]
        panel: String,
    },
}

fn load_spec(path: &Path, mode: Mode) -> Result<ExperimentSpec> {
    let spec = experiment::parse_spec(&std::fs::read_to_string(path)?)?;
    if spec.mode != mode {
        return Err(perturb_lab::Error::Spec {
            field: "mode".into(),
            reason: format!("expected `{}`, found `{}`", mode.name(), spec.mode.name()),
        });
    }
    Ok(spec)
}

fn out_dir(flag: Option<PathBuf>, spec: &ExperimentSpec) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(spec.mode.name()))
}

fn summarize(report: &RunReport, dir: &Path) {
    for cell in &report.cells {
        for run in &cell.runs {
            match run.status {
                RunStatus::Completed => {}
                RunStatus::Diverged { at } => eprintln!("{} replica {}: diverged at {at}", cell.label, run.replica),
                RunStatus::Failed => eprintln!(
                    "{} replica {}: failed: {}",
                    cell.label,
                    run.replica,
                    run.error.as_deref().unwrap_or("unknown error")
                ),
            }
        }
    }
    println!("wrote {} runs to {}", report.runs().count(), dir.display());
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Lindyn {
            spec,
            lh,
            steps,
            out,
            full,
            jobs,
        } => {
            let mut spec = load_spec(&spec, Mode::Lindyn)?;
            let grid = spec.lindyn.as_mut().expect("normalized lindyn spec");
            let (full_lh, full_steps) = if full {
                (lindyn::DEFAULT_LH, lindyn::DEFAULT_STEPS)
            } else {
                (DESK_LH, DESK_STEPS)
            };
            grid.lh = Some(lh.or(grid.lh).unwrap_or(full_lh));
            grid.steps = Some(steps.or(grid.steps).unwrap_or(full_steps));
            let dir = out_dir(out, &spec);
            let report = experiment::run_experiment(&spec, &dir, jobs)?;
            for cell in &report.cells {
                if let (Some(e), Some(g)) = (cell.mean_final_epsilon, cell.mean_final_gamma) {
                    println!("{:<32} epsilon {e:.6e}  gamma {g:.6}", cell.label);
                }
            }
            summarize(&report, &dir);
            Ok(!report.has_failures())
        }
        Command::Ctr { spec, out, jobs } => {
            let spec = load_spec(&spec, Mode::Ctr)?;
            let dir = out_dir(out, &spec);
            let report = experiment::run_experiment(&spec, &dir, jobs)?;
            print!("{}", report.ne_table());
            summarize(&report, &dir);
            Ok(!report.has_failures())
        }
        Command::Plot { report, panel } => {
            let panel: Panel = panel.parse()?;
            let out = experiment::emit_plot(&report, panel)?;
            println!("wrote {} and {}", out.svg.display(), out.csv.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
