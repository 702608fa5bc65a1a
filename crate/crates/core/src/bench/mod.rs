//! Data generators, the experiment runner and result output.

mod data;
mod output;
mod runner;

pub use data::{draw_dataset, gen_spike, gen_uniform, gen_zipf, Distribution};
pub use output::{emit_csv, emit_svg, read_csv, render_svg, write_csv, ChartSpec, Field, GroupBy, CSV_HEADER};
pub use runner::{parse_eps_grid, run_experiment, ExperimentConfig, ExperimentRecord, LambdaPolicy};
