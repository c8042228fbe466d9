//! Declarative experiment sweeps: spec files, grid runner and plots.

mod plot;
mod runner;
mod spec;

pub use plot::{collect_series, emit_plot, render_csv, render_svg, Panel, PlotOutput, Series};
pub use runner::{
    ctr_cells, fmt_f64, lindyn_cells, read_lindyn_csv, replica_seed, run_experiment, write_ctr_csv, write_lindyn_csv,
    CellReport, CtrCell, LindynCell, RunEntry, RunReport, RunStatus, SPEC_FILE, SUMMARY_FILE,
};
pub use spec::{parse_spec, CtrGrid, ExperimentSpec, LindynGrid, Mode, DESK_LH, DESK_STEPS};
