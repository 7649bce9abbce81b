//! Convergence studies over seeds, cell sizes and gradients, with rate fits,
//! sandwich checks and CSV/JSON persistence.

mod config;
mod io;
mod rate;
mod study;

pub use config::{
    parse_point, point_label, EtaMode, ModelConfig, Outputs, ReferenceMethod, StudyConfig,
};
pub use io::{
    emit_csv, emit_json, load_csv, load_json, read_csv, write_csv, write_json, write_outputs,
};
pub use rate::{
    check_sandwich, fit_rate, median, median_error_by_l, BranchRates, RateFit, SandwichReport,
};
pub use study::{
    periodized_constant, reference_constant, resume_convergence_study, run_convergence_study,
    Reference, StudyResult, StudyRow,
};
